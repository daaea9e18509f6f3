//! The CH-Logit dynamic: softmax route choice, the Logit-operator Jacobian,
//! the assembled one-day Jacobian, and the analytic SUE stability criteria
//! built on the cubic `psi`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feasible_set::FeasibleSetSpec;
use crate::framework::{
    predict, ClassFlowState, ClassProfile, Prediction, TargetOperator,
};
use crate::network::Network;
use crate::stability;

/// Parameters of the CH-Logit dynamic. `theta` is the dispersal parameter of
/// the choice model; inertia coefficients are strictly inside (0, 1) so the
/// asymptotic-stability statements apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitParams {
    pub alpha: f64,
    pub theta: f64,
    pub alpha_hat: f64,
    pub theta_hat: f64,
}

impl LogitParams {
    pub fn new(alpha: f64, theta: f64, alpha_hat: f64, theta_hat: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("alpha_hat", alpha_hat)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        for (name, v) in [("theta", theta), ("theta_hat", theta_hat)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(LogitParams { alpha, theta, alpha_hat, theta_hat })
    }

    /// Perfect prediction: hatted parameters equal the acting ones.
    pub fn perfect(alpha: f64, theta: f64) -> Result<Self> {
        LogitParams::new(alpha, theta, alpha, theta)
    }
}

/// Per-OD choice probabilities `softmax(-theta c)`, computed with a max
/// shift so large `theta |c|` cannot overflow.
fn choice_probabilities(costs: &[f64], theta: f64) -> Vec<f64> {
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut probs: Vec<f64> = costs.iter().map(|&c| (-theta * (c - min)).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// The Logit route-choice pattern: per OD, `eta d_w softmax(-theta c_w)`.
/// Every entry is strictly positive and each block sums to its scaled demand.
pub fn logit_choice(network: &Network, costs: &[f64], theta: f64, eta: f64) -> Result<Vec<f64>> {
    if costs.len() != network.num_routes() {
        return Err(Error::DimensionMismatch {
            expected: network.num_routes(),
            got: costs.len(),
        });
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("non-finite cost".into()));
    }
    let mut out = vec![0.0; costs.len()];
    for od in network.od_pairs() {
        let range = od.route_range();
        let target = eta * od.demand;
        let probs = choice_probabilities(&costs[range.clone()], theta);
        let mut sum = 0.0;
        for (i, p) in range.clone().zip(&probs) {
            out[i] = target * p;
            sum += out[i];
        }
        // pin the block sum to the scaled demand exactly
        let imax = range.clone().max_by(|&a, &b| out[a].partial_cmp(&out[b]).unwrap()).unwrap();
        out[imax] += target - sum;
    }
    Ok(out)
}

/// Jacobian of the Logit choice map with respect to costs: block diagonal
/// with blocks `-theta eta d_w (diag(phi) - phi phiᵀ)`. Negative semidefinite
/// with zero row sums per block.
pub fn logit_operator_jacobian(
    network: &Network,
    costs: &[f64],
    theta: f64,
    eta: f64,
) -> Result<DMatrix<f64>> {
    if costs.len() != network.num_routes() {
        return Err(Error::DimensionMismatch {
            expected: network.num_routes(),
            got: costs.len(),
        });
    }
    let n = network.num_routes();
    let mut ups = DMatrix::zeros(n, n);
    for od in network.od_pairs() {
        let range = od.route_range();
        let probs = choice_probabilities(&costs[range.clone()], theta);
        let scale = theta * eta * od.demand;
        for (bi, i) in range.clone().enumerate() {
            for (bj, j) in range.clone().enumerate() {
                let kron = if bi == bj { probs[bi] } else { 0.0 };
                ups[(i, j)] = -scale * (kron - probs[bi] * probs[bj]);
            }
        }
    }
    Ok(ups)
}

/// Target operator of the Logit dynamic: the scaled choice pattern. The
/// incumbent flow enters only through the inertia term outside the operator.
#[derive(Debug, Clone, Copy)]
pub struct LogitOperator {
    pub theta: f64,
}

impl TargetOperator for LogitOperator {
    fn target(&self, set: &FeasibleSetSpec, _flow: &[f64], costs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; costs.len()];
        for (range, &target) in set.od_ranges().iter().zip(set.scaled_demands()) {
            if target <= 0.0 {
                continue;
            }
            let probs = choice_probabilities(&costs[range.clone()], self.theta);
            let mut sum = 0.0;
            for (i, p) in range.clone().zip(&probs) {
                out[i] = target * p;
                sum += out[i];
            }
            let imax = range.clone().max_by(|&a, &b| out[a].partial_cmp(&out[b]).unwrap()).unwrap();
            out[imax] += target - sum;
        }
        Ok(out)
    }
}

/// Predicted patterns of every class under the CH-Logit dynamic.
pub fn logit_predictions(
    network: &Network,
    aggregate: &[f64],
    profile: &ClassProfile,
    params: &LogitParams,
) -> Result<Prediction> {
    predict(
        network,
        &LogitOperator { theta: params.theta_hat },
        params.alpha_hat,
        profile,
        aggregate,
    )
}

/// One day of the CH-Logit dynamic. The next state is strictly interior.
pub fn logit_step(
    network: &Network,
    state: &ClassFlowState,
    profile: &ClassProfile,
    params: &LogitParams,
) -> Result<ClassFlowState> {
    crate::framework::step(
        network,
        &LogitOperator { theta: params.theta },
        params.alpha,
        &LogitOperator { theta: params.theta_hat },
        params.alpha_hat,
        profile,
        state,
    )
}

/// Assemble the CH-Logit Jacobian at `state` by the chain rule over the
/// prediction recursion.
pub fn logit_jacobian(
    network: &Network,
    state: &ClassFlowState,
    profile: &ClassProfile,
    params: &LogitParams,
) -> Result<DMatrix<f64>> {
    let n = network.num_routes();
    let kk = profile.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let aggregate = state.aggregate();

    let mut pred_costs: Vec<Vec<f64>> = Vec::with_capacity(kk);
    let mut d_mats: Vec<DMatrix<f64>> = Vec::with_capacity(kk);
    let mut m_mats: Vec<DMatrix<f64>> = Vec::with_capacity(kk);

    pred_costs.push(network.route_costs(aggregate)?);
    d_mats.push(network.cost_jacobian(aggregate)?);
    m_mats.push(eye.clone());

    for k in 1..kk {
        let beliefs = profile.belief_proportions(k)?;
        let ah = params.alpha_hat;
        let mut pi: Vec<f64> = aggregate.iter().map(|&x| (1.0 - ah) * x).collect();
        let mut m = &eye * (1.0 - ah);
        for (h, &q) in beliefs.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let choice = logit_choice(network, &pred_costs[h], params.theta_hat, 1.0)?;
            for i in 0..n {
                pi[i] += ah * q * choice[i];
            }
            let ups = logit_operator_jacobian(network, &pred_costs[h], params.theta_hat, 1.0)?;
            m += ((&ups * (&d_mats[h] * &m_mats[h])) * (ah * q)).clone_owned();
        }
        pred_costs.push(network.route_costs(&pi)?);
        d_mats.push(network.cost_jacobian(&pi)?);
        m_mats.push(m);
    }

    let mut jphi = DMatrix::zeros(kk * n, kk * n);
    for k in 0..kk {
        let ups_k = logit_operator_jacobian(network, &pred_costs[k], params.theta, 1.0)?;
        let coupling =
            (&ups_k * (&d_mats[k] * &m_mats[k])) * (params.alpha * profile.share(k));
        for j in 0..kk {
            let mut block = coupling.clone();
            if j == k {
                block += &eye * (1.0 - params.alpha);
            }
            jphi.view_mut((k * n, j * n), (n, n)).copy_from(&block);
        }
    }
    Ok(jphi)
}

/// Parameters of the stability cubic `psi`.
#[derive(Debug, Clone, Copy)]
pub struct PsiCoefficients {
    pub alpha: f64,
    pub alpha_hat: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

impl PsiCoefficients {
    pub fn new(alpha: f64, alpha_hat: f64, p0: f64, p1: f64, p2: f64) -> Result<Self> {
        if (p0 + p1 + p2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(
                "class shares must sum to 1".into(),
            ));
        }
        if p0 + p1 <= 0.0 {
            return Err(Error::InvalidParameter(
                "p0 + p1 must be positive (2-step beliefs renormalize over them)".into(),
            ));
        }
        Ok(PsiCoefficients { alpha, alpha_hat, p0, p1, p2 })
    }

    pub fn from_profile(profile: &ClassProfile, params: &LogitParams) -> Result<Self> {
        let p = profile.shares();
        let p0 = p[0];
        let p1 = if p.len() > 1 { p[1] } else { 0.0 };
        let p2 = if p.len() > 2 { p[2] } else { 0.0 };
        // One-class dynamics have alpha_hat pinned to alpha in the reduction.
        let ah = if p.len() == 1 { params.alpha } else { params.alpha_hat };
        PsiCoefficients::new(params.alpha, ah, p0, p1, p2)
    }
}

/// The stability cubic: maps an eigenvalue `rho` of `Upsilon D` at the SUE to
/// the corresponding Jacobian eigenvalue. The SUE is locally asymptotically
/// stable when every value lies strictly inside (-1, 1).
pub fn psi(rho: f64, c: &PsiCoefficients) -> f64 {
    let a = c.alpha;
    let ah = c.alpha_hat;
    let q21 = c.p1 / (c.p0 + c.p1);
    let c3 = a * ah * ah * c.p2 * q21;
    let c2 = a * ah - a * ah * c.p0 - a * ah * ah * c.p2 * q21;
    let c1 = a * ah * c.p0 - a * ah + a;
    let c0 = 1.0 - a;
    ((c3 * rho + c2) * rho + c1) * rho + c0
}

/// Analytic SUE stability report.
#[derive(Debug, Clone)]
pub struct SueStabilityReport {
    pub stable: bool,
    /// Eigenvalues of `Upsilon^theta[c(x*)] D[x*]`, all real and nonpositive.
    pub rho: Vec<f64>,
    /// `psi(rho_i)` per eigenvalue (empty on the numeric fallback path).
    pub psi_values: Vec<f64>,
    /// True when the full-Jacobian spectrum was used (`theta_hat != theta`).
    pub used_fallback: bool,
    pub max_modulus: Option<f64>,
}

/// Local asymptotic stability of the SUE.
///
/// With `theta_hat == theta` the analytic route maps each eigenvalue of
/// `Upsilon D` through `psi`; otherwise the full Jacobian spectrum at the
/// proportional SUE state decides.
pub fn sue_stability(
    network: &Network,
    sue_flow: &[f64],
    profile: &ClassProfile,
    params: &LogitParams,
) -> Result<SueStabilityReport> {
    if params.theta_hat == params.theta {
        let costs = network.route_costs(sue_flow)?;
        let ups = logit_operator_jacobian(network, &costs, params.theta, 1.0)?;
        let d = network.cost_jacobian(sue_flow)?;
        let eigs = stability::eigenvalues(&(&ups * &d))?;
        let scale = eigs.iter().map(|e| e.norm()).fold(1.0, f64::max);
        let mut rho = Vec::with_capacity(eigs.len());
        for e in &eigs {
            if e.im.abs() > 1e-8 * scale {
                return Err(Error::DegenerateSpectrum(format!(
                    "markedly complex eigenvalue {e} of Upsilon D"
                )));
            }
            rho.push(e.re);
        }
        rho.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let coeffs = PsiCoefficients::from_profile(profile, params)?;
        let psi_values: Vec<f64> = rho.iter().map(|&r| psi(r, &coeffs)).collect();
        let stable = psi_values.iter().all(|&v| v > -1.0 && v < 1.0);
        let max_modulus = psi_values
            .iter()
            .map(|v| v.abs())
            .fold(Some(1.0 - params.alpha), |m, v| m.map(|m| m.max(v)));
        Ok(SueStabilityReport { stable, rho, psi_values, used_fallback: false, max_modulus })
    } else {
        let state =
            ClassFlowState::from_aggregate_proportional(0, sue_flow, network, profile)?;
        let jphi = logit_jacobian(network, &state, profile, params)?;
        let report = stability::classify(&jphi, stability::DEFAULT_UNIT_TOL)?;
        Ok(SueStabilityReport {
            stable: report.classification == stability::Classification::AsymptoticallyStable,
            rho: Vec::new(),
            psi_values: Vec::new(),
            used_fallback: true,
            max_modulus: Some(report.max_modulus),
        })
    }
}

/// Threshold quantities of the two-class analytic criterion.
#[derive(Debug, Clone, Copy)]
pub struct K2Regions {
    /// Minimum of the quadratic `psi` restricted to `p2 = 0`.
    pub f_min: f64,
    /// Left root of `psi = 1`: the lower stability edge `1 / ((p0 - 1) alpha_hat)`.
    pub rho_lower: f64,
    /// Roots of `psi = -1` when the minimum dips below -1 (split region).
    pub f0: Option<f64>,
    pub f1: Option<f64>,
    /// Share threshold separating the one-piece and split regimes.
    pub h: f64,
    /// Share threshold comparing the two-class edge with the one-class edge.
    pub g: f64,
}

impl K2Regions {
    /// Membership of an eigenvalue `rho <= 0` in the stable region.
    pub fn stable_for(&self, rho: f64) -> bool {
        match (self.f0, self.f1) {
            (Some(f0), Some(f1)) => {
                (rho >= self.rho_lower && rho <= f0) || (f1 <= rho && rho < 0.0)
            }
            _ => rho > self.rho_lower,
        }
    }
}

/// Closed-form region functions of the two-class CH-Logit criterion.
pub fn k2_region_functions(alpha: f64, alpha_hat: f64, p0: f64) -> Result<K2Regions> {
    if !(alpha > 0.0 && alpha < 1.0) || !(alpha_hat > 0.0 && alpha_hat < 1.0) {
        return Err(Error::InvalidParameter(
            "alpha and alpha_hat must lie in (0, 1)".into(),
        ));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::InvalidParameter("p0 must lie in (0, 1)".into()));
    }
    let f_min =
        1.0 - alpha + alpha * (1.0 - alpha_hat + alpha_hat * p0).powi(2) / (4.0 * alpha_hat * (p0 - 1.0));
    let rho_lower = 1.0 / ((p0 - 1.0) * alpha_hat);
    let (f0, f1) = if f_min < -1.0 {
        let arg = (alpha * (1.0 + alpha_hat - alpha_hat * p0).powi(2)
            + 8.0 * alpha_hat * (p0 - 1.0))
            / (alpha * alpha_hat * alpha_hat * (p0 - 1.0).powi(2));
        let root = arg.sqrt();
        let base = 1.0 / (alpha_hat * (p0 - 1.0)) + 1.0;
        (Some(0.5 * (base - root)), Some(0.5 * (base + root)))
    } else {
        (None, None)
    };
    let h = 2.0 * 2f64.sqrt() * ((2.0 - alpha) / (alpha * alpha * alpha_hat * alpha_hat)).sqrt()
        + (alpha * alpha_hat + alpha - 4.0) / (alpha * alpha_hat);
    let g = (alpha * alpha_hat + alpha - 2.0 * alpha_hat) / (alpha * alpha_hat - 2.0 * alpha_hat);
    Ok(K2Regions { f_min, rho_lower, f0, f1, h, g })
}
