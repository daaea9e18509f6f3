//! The CH-NTP dynamic: projection-based daily targets, its analytic Jacobian,
//! and the closed-form local-stability criteria near an interior DUE.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feasible_set::FeasibleSetSpec;
use crate::framework::{
    predict, ClassFlowState, ClassProfile, Prediction, TargetOperator,
};
use crate::network::Network;
use crate::stability;

/// Eigenvalues of `Q D` with modulus below this value are treated as zero;
/// they do not contribute to the stability criteria.
pub const SPECTRUM_ZERO_TOL: f64 = 1e-10;

/// Parameters of the CH-NTP dynamic.
///
/// `gamma` scales the cost term inside the projection target and captures the
/// cost of deviating from incumbent routes; hatted values are the ones
/// higher-step travelers attribute to everyone below them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtpParams {
    pub alpha: f64,
    pub gamma: f64,
    pub alpha_hat: f64,
    pub gamma_hat: f64,
}

impl NtpParams {
    pub fn new(alpha: f64, gamma: f64, alpha_hat: f64, gamma_hat: f64) -> Result<Self> {
        for (name, v, max) in [
            ("alpha", alpha, 1.0),
            ("alpha_hat", alpha_hat, 1.0),
        ] {
            if !(v > 0.0 && v <= max) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        for (name, v) in [("gamma", gamma), ("gamma_hat", gamma_hat)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(NtpParams { alpha, gamma, alpha_hat, gamma_hat })
    }

    /// Perfect prediction: hatted parameters equal the acting ones.
    pub fn perfect(alpha: f64, gamma: f64) -> Result<Self> {
        NtpParams::new(alpha, gamma, alpha, gamma)
    }
}

/// Projection target operator: `y = P[x - gamma c]` onto the scaled set.
#[derive(Debug, Clone, Copy)]
pub struct NtpOperator {
    pub gamma: f64,
}

impl TargetOperator for NtpOperator {
    fn target(&self, set: &FeasibleSetSpec, flow: &[f64], costs: &[f64]) -> Result<Vec<f64>> {
        let z: Vec<f64> = flow
            .iter()
            .zip(costs)
            .map(|(&x, &c)| x - self.gamma * c)
            .collect();
        Ok(set.project(&z)?.0)
    }
}

/// The NTP daily target `P[x - gamma c]` on the set scaled by `eta`.
pub fn ntp_target(
    network: &Network,
    x: &[f64],
    costs: &[f64],
    gamma: f64,
    eta: f64,
) -> Result<Vec<f64>> {
    let set = FeasibleSetSpec::new(network, eta)?;
    if !set.contains(x, 1e-6 * (1.0 + network.total_demand())) {
        return Err(Error::InfeasibleFlow(
            "ntp_target requires a flow in the scaled feasible set".into(),
        ));
    }
    NtpOperator { gamma }.target(&set, x, costs)
}

/// Predicted patterns of every class under the CH-NTP dynamic.
pub fn ntp_predictions(
    network: &Network,
    aggregate: &[f64],
    profile: &ClassProfile,
    params: &NtpParams,
) -> Result<Prediction> {
    predict(
        network,
        &NtpOperator { gamma: params.gamma_hat },
        params.alpha_hat,
        profile,
        aggregate,
    )
}

/// One day of the CH-NTP dynamic.
pub fn ntp_step(
    network: &Network,
    state: &ClassFlowState,
    profile: &ClassProfile,
    params: &NtpParams,
) -> Result<ClassFlowState> {
    crate::framework::step(
        network,
        &NtpOperator { gamma: params.gamma },
        params.alpha,
        &NtpOperator { gamma: params.gamma_hat },
        params.alpha_hat,
        profile,
        state,
    )
}

/// The assembled Jacobian of the CH-NTP one-day map together with the blocks
/// it was built from.
#[derive(Debug, Clone)]
pub struct NtpJacobianBlocks {
    /// Full Jacobian, `|K| R x |K| R`, class-major block layout.
    pub jp: DMatrix<f64>,
    /// Projection Jacobians of the class updates, `Q_k`.
    pub class_q: Vec<DMatrix<f64>>,
    /// Projection Jacobians inside the predictions: entry `k` holds the
    /// blocks for steps `h < k` in order.
    pub prediction_q: Vec<Vec<DMatrix<f64>>>,
    /// Route-cost Jacobians at the predicted patterns, `D_k = D[pi^k]`.
    pub cost_jacobians: Vec<DMatrix<f64>>,
    /// Sensitivities of the predictions to the aggregate, `M_k`.
    pub prediction_jacobians: Vec<DMatrix<f64>>,
}

/// Assemble the CH-NTP Jacobian at `state` by the chain rule over the
/// prediction recursion. Boundary states are handled through the one-sided
/// generalized projection Jacobians evaluated at the current active sets.
pub fn ntp_jacobian(
    network: &Network,
    state: &ClassFlowState,
    profile: &ClassProfile,
    params: &NtpParams,
) -> Result<NtpJacobianBlocks> {
    let n = network.num_routes();
    let kk = profile.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let aggregate = state.aggregate();

    // Prediction chain: pi^k, c(pi^k), D_k, and M_k = d pi^k / d aggregate.
    let mut pred_flows: Vec<Vec<f64>> = Vec::with_capacity(kk);
    let mut pred_costs: Vec<Vec<f64>> = Vec::with_capacity(kk);
    let mut d_mats: Vec<DMatrix<f64>> = Vec::with_capacity(kk);
    let mut m_mats: Vec<DMatrix<f64>> = Vec::with_capacity(kk);
    let mut prediction_q: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(kk);

    pred_flows.push(aggregate.to_vec());
    pred_costs.push(network.route_costs(aggregate)?);
    d_mats.push(network.cost_jacobian(aggregate)?);
    m_mats.push(eye.clone());
    prediction_q.push(Vec::new());

    for k in 1..kk {
        let beliefs = profile.belief_proportions(k)?;
        let ah = params.alpha_hat;
        let mut pi: Vec<f64> = aggregate.iter().map(|&x| (1.0 - ah) * x).collect();
        let mut m = &eye * (1.0 - ah);
        let mut q_blocks = Vec::with_capacity(k);
        for (h, &q) in beliefs.iter().enumerate() {
            let set = FeasibleSetSpec::new(network, q)?;
            let z: Vec<f64> = aggregate
                .iter()
                .zip(&pred_costs[h])
                .map(|(&x, &c)| q * x - params.gamma_hat * c)
                .collect();
            let (proj, active) = set.project(&z)?;
            let q_hat = set.jacobian_from_active(&active);
            for i in 0..n {
                pi[i] += ah * proj[i];
            }
            // d z / d aggregate = q I - gamma_hat D_h M_h
            let dz = &eye * q - (&d_mats[h] * &m_mats[h]) * params.gamma_hat;
            m += (&q_hat * dz) * ah;
            q_blocks.push(q_hat);
        }
        pred_costs.push(network.route_costs(&pi)?);
        d_mats.push(network.cost_jacobian(&pi)?);
        pred_flows.push(pi);
        m_mats.push(m);
        prediction_q.push(q_blocks);
    }

    // Class rows: JP_{k,j} = alpha Q_k (delta_{kj} I - gamma D_k M_k) + (1-alpha) delta_{kj} I.
    let mut jp = DMatrix::zeros(kk * n, kk * n);
    let mut class_q = Vec::with_capacity(kk);
    for k in 0..kk {
        let set = FeasibleSetSpec::new(network, profile.share(k))?;
        let z: Vec<f64> = state
            .class_flow(k)
            .iter()
            .zip(&pred_costs[k])
            .map(|(&x, &c)| x - params.gamma * c)
            .collect();
        let (_, active) = set.project(&z)?;
        let q_k = set.jacobian_from_active(&active);
        let coupling = (&q_k * (&d_mats[k] * &m_mats[k])) * (params.alpha * params.gamma);
        for j in 0..kk {
            let mut block = -&coupling;
            if j == k {
                block += &q_k * params.alpha;
                block += &eye * (1.0 - params.alpha);
            }
            jp.view_mut((k * n, j * n), (n, n)).copy_from(&block);
        }
        class_q.push(q_k);
    }

    Ok(NtpJacobianBlocks {
        jp,
        class_q,
        prediction_q,
        cost_jacobians: d_mats,
        prediction_jacobians: m_mats,
    })
}

/// The interior projection Jacobian of the whole network (every route active).
pub fn q_bar(network: &Network) -> Result<DMatrix<f64>> {
    Ok(FeasibleSetSpec::new(network, 1.0)?.interior_jacobian())
}

fn require_interior(network: &Network, flow: &[f64]) -> Result<()> {
    for od in network.od_pairs() {
        for r in od.route_range() {
            if flow[r] <= 1e-7 * od.demand {
                return Err(Error::BoundaryEquilibrium(format!(
                    "route {} carries (near-)zero flow; use the assembled Jacobian instead",
                    network.routes()[r].id
                )));
            }
        }
    }
    Ok(())
}

/// The interior stability matrix `A = Q_bar (I - gamma D*)` at an aggregate
/// DUE pattern.
pub fn matrix_a(network: &Network, due_flow: &[f64], gamma: f64) -> Result<DMatrix<f64>> {
    let qb = q_bar(network)?;
    let d = network.cost_jacobian(due_flow)?;
    let n = network.num_routes();
    Ok(&qb * (DMatrix::identity(n, n) - d * gamma))
}

/// Real nonnegative eigenvalues of `Q_bar D*` above the zero threshold,
/// descending.
pub fn qbar_d_eigenvalues(network: &Network, due_flow: &[f64]) -> Result<Vec<f64>> {
    let qb = q_bar(network)?;
    let d = network.cost_jacobian(due_flow)?;
    let eigs = stability::eigenvalues(&(&qb * &d))?;
    let scale = eigs.iter().map(|e| e.norm()).fold(1.0, f64::max);
    let mut mu = Vec::new();
    for e in eigs {
        if e.im.abs() > 1e-8 * scale {
            return Err(Error::DegenerateSpectrum(format!(
                "markedly complex eigenvalue {e} of Q_bar D"
            )));
        }
        if e.re.abs() > SPECTRUM_ZERO_TOL {
            mu.push(e.re);
        }
    }
    mu.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(mu)
}

/// Critical switching-cost threshold `gamma_bar = 2 / max_i mu_i` over the
/// nonzero eigenvalues of `Q_bar D*`. Scaling the cost Jacobian by `s`
/// scales the threshold by `1/s`.
pub fn gamma_bar(network: &Network, due_flow: &[f64]) -> Result<f64> {
    let mu = qbar_d_eigenvalues(network, due_flow)?;
    match mu.first() {
        Some(&max) if max > 0.0 => Ok(2.0 / max),
        _ => Err(Error::DegenerateSpectrum(
            "Q_bar D* has no positive eigenvalue; no finite threshold".into(),
        )),
    }
}

/// Verdict of the perfect-prediction interior criterion.
#[derive(Debug, Clone)]
pub struct EqGammaReport {
    pub stable: bool,
    /// Nonzero eigenvalues of `Q_bar D*`.
    pub mu: Vec<f64>,
    /// `|1 - gamma mu_i|` per eigenvalue; all must be below 1.
    pub criterion_values: Vec<f64>,
    pub gamma_bar: f64,
}

/// Interior local stability of the DUE for perfect prediction
/// (`gamma_hat = gamma`, unit inertia). Independent of the class count and
/// class shares; valid only when every route carries positive DUE flow.
pub fn stability_eq_gamma(
    network: &Network,
    due_flow: &[f64],
    gamma: f64,
) -> Result<EqGammaReport> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("gamma must be positive".into()));
    }
    require_interior(network, due_flow)?;
    let mu = qbar_d_eigenvalues(network, due_flow)?;
    let criterion_values: Vec<f64> = mu.iter().map(|&m| (1.0 - gamma * m).abs()).collect();
    let stable = criterion_values.iter().all(|&v| v < 1.0);
    let gb = mu.first().map(|&m| 2.0 / m).unwrap_or(f64::INFINITY);
    Ok(EqGammaReport { stable, mu, criterion_values, gamma_bar: gb })
}

/// Verdict of the imperfect-prediction interior criterion for two classes.
#[derive(Debug, Clone)]
pub struct NeqGammaReport {
    pub stable: bool,
    /// `(beta_i, gamma gamma_hat beta_i^2 - 2 gamma beta_i + 1)` per nonzero
    /// eigenvalue of `Q_bar D*`; stability needs every value in (-1, 1).
    pub entries: Vec<(f64, f64)>,
}

/// Interior local stability of the DUE for two classes with unit inertia and
/// `gamma_hat != gamma` allowed.
pub fn stability_neq_gamma(
    network: &Network,
    due_flow: &[f64],
    gamma: f64,
    gamma_hat: f64,
) -> Result<NeqGammaReport> {
    if !(gamma > 0.0 && gamma_hat > 0.0) {
        return Err(Error::InvalidParameter(
            "gamma and gamma_hat must be positive".into(),
        ));
    }
    require_interior(network, due_flow)?;
    let mu = qbar_d_eigenvalues(network, due_flow)?;
    let entries: Vec<(f64, f64)> = mu
        .iter()
        .map(|&b| (b, gamma * gamma_hat * b * b - 2.0 * gamma * b + 1.0))
        .collect();
    let stable = entries.iter().all(|&(_, v)| v.abs() < 1.0);
    Ok(NeqGammaReport { stable, entries })
}
