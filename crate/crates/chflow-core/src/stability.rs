//! Eigenvalue computation, local-stability classification of one-day maps,
//! empirical perturbation experiments, and parameter-region sweeps.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::equilibrium::{detect_fixed_point, solve_due, solve_sue};
use crate::error::{Error, Result};
use crate::feasible_set::FeasibleSetSpec;
use crate::framework::{ClassFlowState, ClassProfile, Dynamic};
use crate::logit::sue_stability;
use crate::network::Network;
use crate::ntp::{stability_eq_gamma, stability_neq_gamma};

/// Default half-width of the band around the unit circle inside which an
/// eigenvalue is treated as unit-modulus.
pub const DEFAULT_UNIT_TOL: f64 = 1e-6;
/// Numerical-rank cutoff, relative to the largest singular value.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Eigenvalues closer than this are clustered into one algebraic multiplicity.
pub const CLUSTER_TOL: f64 = 1e-6;

/// Eigenvalues of a real square matrix via Schur decomposition.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    // high-multiplicity spectra can stall the QR sweep at the tightest
    // tolerance; relax in steps, all far below the downstream tolerances
    for eps in [1e-13, 1e-12, 1e-10, 1e-8] {
        if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), eps, 200_000) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::EigenNonConvergence)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|e| e.norm()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    AsymptoticallyStable,
    Stable,
    Unstable,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::AsymptoticallyStable => "asymptotically_stable",
            Classification::Stable => "stable",
            Classification::Unstable => "unstable",
        }
    }

    pub fn is_stable(&self) -> bool {
        !matches!(self, Classification::Unstable)
    }
}

/// Diagnostics for one cluster of (near-)unit-modulus eigenvalues.
#[derive(Debug, Clone)]
pub struct UnitEigenDiagnostic {
    pub value: Complex<f64>,
    /// Estimated algebraic multiplicity (cluster size).
    pub multiplicity: usize,
    /// Numerical rank of `J - lambda I`.
    pub rank: usize,
    /// Rank required for a Jordan block of order 1: `n - multiplicity`.
    pub required_rank: usize,
    pub order_one: bool,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_modulus: f64,
    pub classification: Classification,
    pub unit_diagnostics: Vec<UnitEigenDiagnostic>,
}

fn complex_rank(j: &DMatrix<f64>, lambda: Complex<f64>, rank_tol: f64) -> usize {
    let n = j.nrows();
    let mut shifted: DMatrix<Complex<f64>> = j.map(|v| Complex::new(v, 0.0));
    for i in 0..n {
        shifted[(i, i)] -= lambda;
    }
    let svd = shifted.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > rank_tol * smax).count()
}

/// Classify the local stability of the fixed point whose Jacobian is `j`.
///
/// Asymptotically stable when every modulus is below `1 - tol`; stable when
/// no modulus exceeds `1 + tol` and every cluster on the unit band carries
/// Jordan blocks of order 1 (checked through the numerical rank of
/// `J - lambda I`); unstable otherwise.
pub fn classify(j: &DMatrix<f64>, tol: f64) -> Result<StabilityReport> {
    let eigs = eigenvalues(j)?;
    let n = j.nrows();
    let max_modulus = eigs.iter().map(|e| e.norm()).fold(0.0, f64::max);

    let mut unit_diagnostics = Vec::new();
    let mut classification = if max_modulus < 1.0 - tol {
        Classification::AsymptoticallyStable
    } else if max_modulus <= 1.0 + tol {
        Classification::Stable
    } else {
        Classification::Unstable
    };

    if classification == Classification::Stable {
        // Cluster the unit-band eigenvalues to estimate multiplicities.
        let mut unit: Vec<Complex<f64>> = eigs
            .iter()
            .copied()
            .filter(|e| (e.norm() - 1.0).abs() <= tol)
            .collect();
        while let Some(seed) = unit.first().copied() {
            let (cluster, rest): (Vec<_>, Vec<_>) =
                unit.into_iter().partition(|e| (e - seed).norm() <= CLUSTER_TOL);
            unit = rest;
            let center = cluster.iter().sum::<Complex<f64>>() / cluster.len() as f64;
            let rank = complex_rank(j, center, DEFAULT_RANK_TOL);
            let required_rank = n - cluster.len();
            let order_one = rank == required_rank;
            if !order_one {
                classification = Classification::Unstable;
            }
            unit_diagnostics.push(UnitEigenDiagnostic {
                value: center,
                multiplicity: cluster.len(),
                rank,
                required_rank,
                order_one,
            });
        }
    }

    Ok(StabilityReport { eigenvalues: eigs, max_modulus, classification, unit_diagnostics })
}

/// Outcome of a perturbation experiment near an equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalVerdict {
    /// Final aggregate returned within a tenth of the perturbation size.
    ReturnedToEquilibrium,
    /// The trajectory settled at a fixed point away from the equilibrium.
    SettledElsewhere { day: usize },
    /// No fixed point within the horizon; `crossings` counts how often the
    /// deviation flipped sides of the equilibrium hyperplane.
    Oscillating { crossings: usize },
}

impl EmpiricalVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmpiricalVerdict::ReturnedToEquilibrium => "returned_to_equilibrium",
            EmpiricalVerdict::SettledElsewhere { .. } => "settled_elsewhere",
            EmpiricalVerdict::Oscillating { .. } => "oscillating",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationOutcome {
    pub verdict: EmpiricalVerdict,
    pub final_distance: f64,
    pub epsilon: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct PerturbationConfig {
    pub epsilon: f64,
    pub horizon: usize,
    pub seed: u64,
    pub fp_tol: f64,
    pub fp_window: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig { epsilon: 1.0, horizon: 500, seed: 0, fp_tol: 1e-7, fp_window: 10 }
    }
}

/// Perturb the aggregate equilibrium along a random demand-preserving
/// direction, simulate, and report whether the dynamic returns, settles
/// elsewhere, or keeps oscillating.
pub fn perturb_and_simulate(
    network: &Network,
    dynamic: &Dynamic,
    profile: &ClassProfile,
    equilibrium: &[f64],
    cfg: &PerturbationConfig,
) -> Result<PerturbationOutcome> {
    let n = network.num_routes();
    if equilibrium.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: equilibrium.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // demand-preserving direction: zero-sum within each OD block
    let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    for range in network.od_route_ranges() {
        let mean = u[range.clone()].iter().sum::<f64>() / range.len() as f64;
        for i in range {
            u[i] -= mean;
        }
    }
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut u {
            *v /= norm;
        }
    }
    let set = FeasibleSetSpec::new(network, 1.0)?;
    let z: Vec<f64> = equilibrium.iter().zip(&u).map(|(&x, &d)| x + cfg.epsilon * d).collect();
    let (x0, _) = set.project(&z)?;
    let state = ClassFlowState::from_aggregate_proportional(0, &x0, network, profile)?;
    let traj = dynamic.simulate(network, profile, state, cfg.horizon)?;

    let final_agg = traj.last_state().aggregate();
    let final_distance = final_agg
        .iter()
        .zip(equilibrium)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    let verdict = if final_distance < cfg.epsilon / 10.0 {
        EmpiricalVerdict::ReturnedToEquilibrium
    } else if let Some(day) = detect_fixed_point(&traj, cfg.fp_tol, cfg.fp_window) {
        EmpiricalVerdict::SettledElsewhere { day }
    } else {
        // side of the equilibrium hyperplane normal to the initial deviation
        let mut crossings = 0usize;
        let mut prev = 0.0f64;
        for agg in traj.aggregates() {
            let s: f64 = agg.iter().zip(equilibrium).zip(&u).map(|((&a, &b), &d)| (a - b) * d).sum();
            if prev != 0.0 && s != 0.0 && s.signum() != prev.signum() {
                crossings += 1;
            }
            if s != 0.0 {
                prev = s;
            }
        }
        EmpiricalVerdict::Oscillating { crossings }
    };

    Ok(PerturbationOutcome { verdict, final_distance, epsilon: cfg.epsilon, horizon: cfg.horizon })
}

/// Parameter swept along one axis of a region map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    GammaHat,
    Theta,
    ThetaHat,
    Alpha,
    AlphaHat,
    P0,
    P1,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::GammaHat => "gamma_hat",
            SweepParam::Theta => "theta",
            SweepParam::ThetaHat => "theta_hat",
            SweepParam::Alpha => "alpha",
            SweepParam::AlphaHat => "alpha_hat",
            SweepParam::P0 => "p0",
            SweepParam::P1 => "p1",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AxisSpec {
    pub param: SweepParam,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if !(self.step > 0.0) || self.max < self.min {
            return out;
        }
        let mut k = 0usize;
        loop {
            let v = self.min + self.step * k as f64;
            if v > self.max + 1e-12 * self.step.max(1.0) {
                break;
            }
            out.push(v);
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Analytic,
    Jacobian,
    Empirical,
}

/// Verdict for one grid point; failures are recorded so the sweep continues.
#[derive(Debug, Clone)]
pub enum CellOutcome {
    Stable { max_modulus: Option<f64> },
    Unstable { max_modulus: Option<f64> },
    Failed { message: String },
}

impl CellOutcome {
    pub fn verdict_str(&self) -> &'static str {
        match self {
            CellOutcome::Stable { .. } => "stable",
            CellOutcome::Unstable { .. } => "unstable",
            CellOutcome::Failed { .. } => "error",
        }
    }

    pub fn max_modulus(&self) -> Option<f64> {
        match self {
            CellOutcome::Stable { max_modulus } | CellOutcome::Unstable { max_modulus } => {
                *max_modulus
            }
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value1: f64,
    pub value2: f64,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone)]
pub struct RegionMap {
    pub axis1: AxisSpec,
    pub axis2: AxisSpec,
    /// Row-major over (axis1 value, axis2 value).
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig<'a> {
    pub network: &'a Network,
    pub dynamic: Dynamic,
    pub profile: ClassProfile,
    pub mode: SweepMode,
    pub unit_tol: f64,
    pub equilibrium_tol: f64,
    pub max_iter: usize,
    pub perturbation: PerturbationConfig,
}

impl<'a> SweepConfig<'a> {
    pub fn new(network: &'a Network, dynamic: Dynamic, profile: ClassProfile, mode: SweepMode) -> Self {
        SweepConfig {
            network,
            dynamic,
            profile,
            mode,
            unit_tol: DEFAULT_UNIT_TOL,
            equilibrium_tol: 1e-11,
            max_iter: 500_000,
            perturbation: PerturbationConfig::default(),
        }
    }
}

fn instantiate(
    cfg: &SweepConfig,
    overrides: &[(SweepParam, f64)],
) -> Result<(Dynamic, ClassProfile)> {
    let mut p0 = None;
    let mut p1 = None;
    let mut dynamic = cfg.dynamic.clone();
    for &(param, v) in overrides {
        match (&mut dynamic, param) {
            (Dynamic::Ntp(p), SweepParam::Gamma) => p.gamma = v,
            (Dynamic::Ntp(p), SweepParam::GammaHat) => p.gamma_hat = v,
            (Dynamic::Logit(p), SweepParam::Theta) => p.theta = v,
            (Dynamic::Logit(p), SweepParam::ThetaHat) => p.theta_hat = v,
            (Dynamic::Ntp(p), SweepParam::Alpha) => p.alpha = v,
            (Dynamic::Ntp(p), SweepParam::AlphaHat) => p.alpha_hat = v,
            (Dynamic::Logit(p), SweepParam::Alpha) => p.alpha = v,
            (Dynamic::Logit(p), SweepParam::AlphaHat) => p.alpha_hat = v,
            (_, SweepParam::P0) => p0 = Some(v),
            (_, SweepParam::P1) => p1 = Some(v),
            (_, other) => {
                return Err(Error::InvalidParameter(format!(
                    "axis {} does not apply to this dynamic",
                    other.as_str()
                )))
            }
        }
    }
    // re-validate the overridden parameters
    let dynamic = match dynamic {
        Dynamic::Ntp(p) => Dynamic::Ntp(crate::ntp::NtpParams::new(p.alpha, p.gamma, p.alpha_hat, p.gamma_hat)?),
        Dynamic::Logit(p) => {
            Dynamic::Logit(crate::logit::LogitParams::new(p.alpha, p.theta, p.alpha_hat, p.theta_hat)?)
        }
    };
    let shares = cfg.profile.shares();
    let profile = match (p0, p1) {
        (None, None) => cfg.profile.clone(),
        (Some(v0), None) => match shares.len() {
            2 => ClassProfile::two(v0)?,
            3 => ClassProfile::three(v0, shares[1])?,
            _ => {
                return Err(Error::InvalidParameter(
                    "p0 axis needs a 2- or 3-class profile".into(),
                ))
            }
        },
        (p0opt, Some(v1)) => {
            if shares.len() != 3 {
                return Err(Error::InvalidParameter("p1 axis needs a 3-class profile".into()));
            }
            ClassProfile::three(p0opt.unwrap_or(shares[0]), v1)?
        }
    };
    Ok((dynamic, profile))
}

fn equilibrium_aggregate(cfg: &SweepConfig, dynamic: &Dynamic) -> Result<Vec<f64>> {
    match dynamic {
        Dynamic::Ntp(_) => Ok(solve_due(cfg.network, cfg.equilibrium_tol, cfg.max_iter)?.aggregate),
        Dynamic::Logit(p) => {
            Ok(solve_sue(cfg.network, p.theta, cfg.equilibrium_tol, cfg.max_iter)?.aggregate)
        }
    }
}

fn evaluate_cell(
    cfg: &SweepConfig,
    cached_eq: Option<&Vec<f64>>,
    overrides: &[(SweepParam, f64)],
) -> CellOutcome {
    let run = || -> Result<CellOutcome> {
        let (dynamic, profile) = instantiate(cfg, overrides)?;
        let eq = match cached_eq {
            Some(e) => e.clone(),
            None => equilibrium_aggregate(cfg, &dynamic)?,
        };
        match cfg.mode {
            SweepMode::Analytic => analytic_verdict(cfg.network, &dynamic, &profile, &eq),
            SweepMode::Jacobian => {
                let state =
                    ClassFlowState::from_aggregate_proportional(0, &eq, cfg.network, &profile)?;
                let jac = dynamic.jacobian(cfg.network, &profile, &state)?;
                let report = classify(&jac, cfg.unit_tol)?;
                Ok(if report.classification.is_stable() {
                    CellOutcome::Stable { max_modulus: Some(report.max_modulus) }
                } else {
                    CellOutcome::Unstable { max_modulus: Some(report.max_modulus) }
                })
            }
            SweepMode::Empirical => {
                let out =
                    perturb_and_simulate(cfg.network, &dynamic, &profile, &eq, &cfg.perturbation)?;
                Ok(match out.verdict {
                    EmpiricalVerdict::ReturnedToEquilibrium => {
                        CellOutcome::Stable { max_modulus: None }
                    }
                    _ => CellOutcome::Unstable { max_modulus: None },
                })
            }
        }
    };
    match run() {
        Ok(outcome) => outcome,
        Err(e) => CellOutcome::Failed { message: e.to_string() },
    }
}

/// Analytic verdict per the closed-form criteria. NTP requires unit inertia;
/// the two-class criterion covers `gamma_hat != gamma` and the general one
/// perfect prediction. Logit uses the `psi` route (theta_hat = theta).
fn analytic_verdict(
    network: &Network,
    dynamic: &Dynamic,
    profile: &ClassProfile,
    eq: &[f64],
) -> Result<CellOutcome> {
    match dynamic {
        Dynamic::Ntp(p) => {
            if p.alpha != 1.0 || p.alpha_hat != 1.0 {
                return Err(Error::InvalidParameter(
                    "analytic NTP criteria assume unit inertia (alpha = alpha_hat = 1)".into(),
                ));
            }
            if p.gamma_hat == p.gamma {
                let report = stability_eq_gamma(network, eq, p.gamma)?;
                let max = report
                    .criterion_values
                    .iter()
                    .cloned()
                    .fold(0.0, f64::max);
                Ok(if report.stable {
                    CellOutcome::Stable { max_modulus: Some(max) }
                } else {
                    CellOutcome::Unstable { max_modulus: Some(max) }
                })
            } else {
                if profile.len() != 2 {
                    return Err(Error::InvalidParameter(
                        "the imperfect-prediction criterion applies to two classes".into(),
                    ));
                }
                let report = stability_neq_gamma(network, eq, p.gamma, p.gamma_hat)?;
                let max = report.entries.iter().map(|&(_, v)| v.abs()).fold(0.0, f64::max);
                Ok(if report.stable {
                    CellOutcome::Stable { max_modulus: Some(max) }
                } else {
                    CellOutcome::Unstable { max_modulus: Some(max) }
                })
            }
        }
        Dynamic::Logit(p) => {
            if p.theta_hat != p.theta {
                return Err(Error::InvalidParameter(
                    "analytic Logit stability assumes theta_hat = theta".into(),
                ));
            }
            if profile.len() > 3 {
                return Err(Error::InvalidParameter(
                    "the psi criterion covers at most three classes".into(),
                ));
            }
            let report = sue_stability(network, eq, profile, p)?;
            Ok(if report.stable {
                CellOutcome::Stable { max_modulus: report.max_modulus }
            } else {
                CellOutcome::Unstable { max_modulus: report.max_modulus }
            })
        }
    }
}

/// Evaluate a two-axis stability region map. Grid points are independent and
/// evaluated in parallel; the result grid is assembled by index.
pub fn sweep(cfg: &SweepConfig, axis1: AxisSpec, axis2: AxisSpec) -> Result<RegionMap> {
    let v1 = axis1.values();
    let v2 = axis2.values();
    if v1.is_empty() || v2.is_empty() {
        return Err(Error::InvalidParameter("sweep axes produce no grid points".into()));
    }
    // The reference equilibrium is shared across the grid unless an axis
    // moves it (only theta does, through the SUE).
    let moves_equilibrium = [axis1.param, axis2.param]
        .iter()
        .any(|p| matches!(p, SweepParam::Theta));
    let cached = if moves_equilibrium {
        None
    } else {
        Some(equilibrium_aggregate(cfg, &cfg.dynamic)?)
    };

    let grid: Vec<(f64, f64)> = v1
        .iter()
        .flat_map(|&a| v2.iter().map(move |&b| (a, b)))
        .collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(a, b)| {
            let overrides = [(axis1.param, a), (axis2.param, b)];
            let outcome = evaluate_cell(cfg, cached.as_ref(), &overrides);
            SweepCell { value1: a, value2: b, outcome }
        })
        .collect();
    Ok(RegionMap { axis1, axis2, cells })
}

/// Property checks behind the block-matrix determinant identities used by the
/// stability derivations. Each function returns the relative gap between the
/// two determinant routes on one random instance.
pub mod block_checks {
    use super::*;

    fn random_matrix(rng: &mut impl Rng, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel_gap(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    fn assemble_2x2(
        s11: &DMatrix<f64>,
        s12: &DMatrix<f64>,
        s21: &DMatrix<f64>,
        s22: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let m = s11.nrows();
        let mut s = DMatrix::zeros(2 * m, 2 * m);
        s.view_mut((0, 0), (m, m)).copy_from(s11);
        s.view_mut((0, m), (m, m)).copy_from(s12);
        s.view_mut((m, 0), (m, m)).copy_from(s21);
        s.view_mut((m, m), (m, m)).copy_from(s22);
        s
    }

    /// Block-diagonal case: `|S| = |S11| |S22|`.
    pub fn block_diagonal_gap(rng: &mut impl Rng, m: usize) -> f64 {
        let s11 = random_matrix(rng, m);
        let s22 = random_matrix(rng, m);
        let zero = DMatrix::zeros(m, m);
        let s = assemble_2x2(&s11, &zero, &zero, &s22);
        rel_gap(s.determinant(), s11.determinant() * s22.determinant())
    }

    /// `S11` a polynomial in `S21` (hence commuting):
    /// `|S| = |S11 S22 - S21 S12|`.
    pub fn commuting_gap(rng: &mut impl Rng, m: usize) -> f64 {
        let s21 = random_matrix(rng, m);
        let (a0, a1, a2) = (
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let s11 = DMatrix::identity(m, m) * a0 + &s21 * a1 + (&s21 * &s21) * a2;
        let s12 = random_matrix(rng, m);
        let s22 = random_matrix(rng, m);
        let s = assemble_2x2(&s11, &s12, &s21, &s22);
        rel_gap(s.determinant(), (&s11 * &s22 - &s21 * &s12).determinant())
    }

    /// Upper block-triangular 3x3-of-mxm: `|S| = |S11| |S22| |S33|`.
    pub fn upper_triangular_gap(rng: &mut impl Rng, m: usize) -> f64 {
        let blocks: Vec<DMatrix<f64>> = (0..3).map(|_| random_matrix(rng, m)).collect();
        let mut s = DMatrix::zeros(3 * m, 3 * m);
        for (i, b) in blocks.iter().enumerate() {
            s.view_mut((i * m, i * m), (m, m)).copy_from(b);
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                s.view_mut((i * m, j * m), (m, m)).copy_from(&random_matrix(rng, m));
            }
        }
        rel_gap(
            s.determinant(),
            blocks.iter().map(|b| b.determinant()).product(),
        )
    }

    /// Run all identity checks on `trials` random instances of block size `m`.
    pub fn run_suite(seed: u64, trials: usize, m: usize, tol: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in 0..trials {
            for (name, gap) in [
                ("block_diagonal", block_diagonal_gap(&mut rng, m)),
                ("commuting", commuting_gap(&mut rng, m)),
                ("upper_triangular", upper_triangular_gap(&mut rng, m)),
            ] {
                if gap > tol {
                    return Err(Error::DegenerateSpectrum(format!(
                        "determinant identity {name} violated on trial {t}: gap {gap:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }
}
