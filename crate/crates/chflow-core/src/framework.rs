//! Generic cognitive-hierarchy machinery: class profiles and beliefs, the
//! k-step prediction recursion, and the one-day update, parameterized by an
//! abstract target operator supplied by the NTP or Logit dynamic.

use crate::error::{Error, Result};
use crate::feasible_set::FeasibleSetSpec;
use crate::logit::{logit_jacobian, logit_step, LogitOperator, LogitParams};
use crate::network::Network;
use crate::ntp::{ntp_jacobian, ntp_step, NtpOperator, NtpParams};
use nalgebra::DMatrix;

/// Tolerance used when validating per-class demand feasibility of states.
pub const STATE_FEASIBILITY_TOL: f64 = 1e-9;

/// Population shares of the cognitive classes (steps).
///
/// `p[0]` is the share of 0-step travelers and must be positive: beliefs of
/// every higher step renormalize over the steps below it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    p: Vec<f64>,
}

impl ClassProfile {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidParameter("empty class profile".into()));
        }
        if !(p[0] > 0.0) {
            return Err(Error::InvalidParameter(
                "0-step share must be positive".into(),
            ));
        }
        if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "class shares must be nonnegative".into(),
            ));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "class shares must sum to 1, got {sum}"
            )));
        }
        Ok(ClassProfile { p })
    }

    /// The one-class profile of a conventional (non-hierarchical) dynamic.
    pub fn single() -> Self {
        ClassProfile { p: vec![1.0] }
    }

    /// Shares (p0, 1 - p0).
    pub fn two(p0: f64) -> Result<Self> {
        ClassProfile::new(vec![p0, 1.0 - p0])
    }

    /// Shares (p0, p1, 1 - p0 - p1).
    pub fn three(p0: f64, p1: f64) -> Result<Self> {
        ClassProfile::new(vec![p0, p1, 1.0 - p0 - p1])
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shares(&self) -> &[f64] {
        &self.p
    }

    pub fn share(&self, k: usize) -> f64 {
        self.p[k]
    }

    /// A k-step traveler's belief about the distribution of lower steps:
    /// `q_k^h = p^h / sum_{i<k} p^i` for `h < k`.
    ///
    /// Errors for `k = 0` (0-step travelers hold no beliefs) and `k` out of
    /// range.
    pub fn belief_proportions(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::InvalidParameter(
                "0-step travelers hold no beliefs".into(),
            ));
        }
        if k >= self.p.len() {
            return Err(Error::InvalidParameter(format!(
                "class index {k} out of range for {} classes",
                self.p.len()
            )));
        }
        let denom: f64 = self.p[..k].iter().sum();
        Ok(self.p[..k].iter().map(|&v| v / denom).collect())
    }
}

/// Per-class route flows on one day, with the cached aggregate.
#[derive(Debug, Clone)]
pub struct ClassFlowState {
    pub day: usize,
    class_flows: Vec<Vec<f64>>,
    aggregate: Vec<f64>,
}

impl ClassFlowState {
    /// Validating constructor: each class flow must lie in its scaled set.
    pub fn new(
        day: usize,
        class_flows: Vec<Vec<f64>>,
        network: &Network,
        profile: &ClassProfile,
    ) -> Result<Self> {
        if class_flows.len() != profile.len() {
            return Err(Error::DimensionMismatch {
                expected: profile.len(),
                got: class_flows.len(),
            });
        }
        for (k, flow) in class_flows.iter().enumerate() {
            let spec = FeasibleSetSpec::new(network, profile.share(k))?;
            if !spec.contains(flow, STATE_FEASIBILITY_TOL * network.total_demand().max(1.0)) {
                return Err(Error::InfeasibleFlow(format!(
                    "class {k} flow violates its scaled demand constraints"
                )));
            }
        }
        Ok(Self::new_unchecked(day, class_flows))
    }

    pub(crate) fn new_unchecked(day: usize, class_flows: Vec<Vec<f64>>) -> Self {
        let n = class_flows[0].len();
        let mut aggregate = vec![0.0; n];
        for flow in &class_flows {
            for (a, &f) in aggregate.iter_mut().zip(flow) {
                *a += f;
            }
        }
        ClassFlowState { day, class_flows, aggregate }
    }

    /// Build a state from per-class flows that may carry rounding slop:
    /// each class-OD block is rescaled multiplicatively onto its exact
    /// demand constraint. Zeros stay zero, so boundary patterns survive.
    pub fn new_rescaled(
        day: usize,
        mut class_flows: Vec<Vec<f64>>,
        network: &Network,
        profile: &ClassProfile,
    ) -> Result<Self> {
        if class_flows.len() != profile.len() {
            return Err(Error::DimensionMismatch {
                expected: profile.len(),
                got: class_flows.len(),
            });
        }
        for (k, flow) in class_flows.iter_mut().enumerate() {
            if flow.len() != network.num_routes() {
                return Err(Error::DimensionMismatch {
                    expected: network.num_routes(),
                    got: flow.len(),
                });
            }
            if flow.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InfeasibleFlow(format!(
                    "class {k} has negative entries"
                )));
            }
            for od in network.od_pairs() {
                let target = profile.share(k) * od.demand;
                let sum: f64 = od.route_range().map(|i| flow[i]).sum();
                if target == 0.0 {
                    for i in od.route_range() {
                        flow[i] = 0.0;
                    }
                    continue;
                }
                if sum <= 0.0 {
                    return Err(Error::InfeasibleFlow(format!(
                        "class {k} carries no flow on OD {} but its share is positive",
                        od.id
                    )));
                }
                let scale = target / sum;
                for i in od.route_range() {
                    flow[i] *= scale;
                }
            }
        }
        Ok(Self::new_unchecked(day, class_flows))
    }

    /// Split an aggregate pattern proportionally: `x^k = p^k * aggregate`.
    pub fn from_aggregate_proportional(
        day: usize,
        aggregate: &[f64],
        network: &Network,
        profile: &ClassProfile,
    ) -> Result<Self> {
        let spec = FeasibleSetSpec::new(network, 1.0)?;
        if !spec.contains(aggregate, STATE_FEASIBILITY_TOL * network.total_demand().max(1.0)) {
            return Err(Error::InfeasibleFlow(
                "aggregate flow is not demand-feasible".into(),
            ));
        }
        let class_flows = profile
            .shares()
            .iter()
            .map(|&p| aggregate.iter().map(|&x| p * x).collect())
            .collect();
        Ok(Self::new_unchecked(day, class_flows))
    }

    pub fn num_classes(&self) -> usize {
        self.class_flows.len()
    }

    pub fn class_flow(&self, k: usize) -> &[f64] {
        &self.class_flows[k]
    }

    pub fn class_flows(&self) -> &[Vec<f64>] {
        &self.class_flows
    }

    pub fn aggregate(&self) -> &[f64] {
        &self.aggregate
    }

    /// All class flows concatenated, class-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.class_flows.iter().flatten().copied().collect()
    }

    /// Max-norm distance between the class flows of two states.
    pub fn max_abs_diff(&self, other: &ClassFlowState) -> f64 {
        self.class_flows
            .iter()
            .flatten()
            .zip(other.class_flows.iter().flatten())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-class predicted aggregate patterns and their route costs.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Predicted pattern per class; entry `k` is the class-k prediction.
    pub flows: Vec<Vec<f64>>,
    /// Route costs at each predicted pattern.
    pub costs: Vec<Vec<f64>>,
}

/// One-step target operator of a specific day-to-day dynamic: maps the
/// current flow (in the scaled set described by `set`) and a predicted cost
/// pattern to the target flow in the same set.
pub trait TargetOperator {
    fn target(&self, set: &FeasibleSetSpec, flow: &[f64], costs: &[f64]) -> Result<Vec<f64>>;
}

/// The k-step prediction recursion. Class 0 predicts the observed aggregate
/// unchanged; class k composes the believed updates of all lower steps at
/// their renormalized shares, memoizing lower predictions.
pub fn predict<O: TargetOperator>(
    network: &Network,
    op_hat: &O,
    alpha_hat: f64,
    profile: &ClassProfile,
    aggregate: &[f64],
) -> Result<Prediction> {
    let spec1 = FeasibleSetSpec::new(network, 1.0)?;
    if !spec1.contains(aggregate, STATE_FEASIBILITY_TOL * network.total_demand().max(1.0)) {
        return Err(Error::InfeasibleFlow(
            "prediction requires a feasible aggregate".into(),
        ));
    }
    predict_unchecked(network, op_hat, alpha_hat, profile, aggregate)
}

pub(crate) fn predict_unchecked<O: TargetOperator>(
    network: &Network,
    op_hat: &O,
    alpha_hat: f64,
    profile: &ClassProfile,
    aggregate: &[f64],
) -> Result<Prediction> {
    let n = network.num_routes();
    let mut flows: Vec<Vec<f64>> = Vec::with_capacity(profile.len());
    let mut costs: Vec<Vec<f64>> = Vec::with_capacity(profile.len());

    flows.push(aggregate.to_vec());
    costs.push(network.route_costs(aggregate)?);

    for k in 1..profile.len() {
        let beliefs = profile.belief_proportions(k)?;
        let mut pi: Vec<f64> = aggregate.iter().map(|&x| (1.0 - alpha_hat) * x).collect();
        for (h, &q) in beliefs.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let set = FeasibleSetSpec::new(network, q)?;
            let scaled: Vec<f64> = aggregate.iter().map(|&x| q * x).collect();
            let y = op_hat.target(&set, &scaled, &costs[h])?;
            for i in 0..n {
                pi[i] += alpha_hat * y[i];
            }
        }
        costs.push(network.route_costs(&pi)?);
        flows.push(pi);
    }
    Ok(Prediction { flows, costs })
}

/// One-day update of raw class-flow vectors. This is the map whose Jacobian
/// the stability analysis differentiates; it is defined for any input
/// vectors, feasible or not.
pub fn step_flows<A: TargetOperator, P: TargetOperator>(
    network: &Network,
    op: &A,
    alpha: f64,
    op_hat: &P,
    alpha_hat: f64,
    profile: &ClassProfile,
    class_flows: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if class_flows.len() != profile.len() {
        return Err(Error::DimensionMismatch {
            expected: profile.len(),
            got: class_flows.len(),
        });
    }
    let n = network.num_routes();
    let mut aggregate = vec![0.0; n];
    for flow in class_flows {
        if flow.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: flow.len() });
        }
        for (a, &f) in aggregate.iter_mut().zip(flow) {
            *a += f;
        }
    }
    let prediction = predict_unchecked(network, op_hat, alpha_hat, profile, &aggregate)?;
    let mut next = Vec::with_capacity(profile.len());
    for (k, flow) in class_flows.iter().enumerate() {
        let set = FeasibleSetSpec::new(network, profile.share(k))?;
        let y = op.target(&set, flow, &prediction.costs[k])?;
        next.push(
            flow.iter()
                .zip(&y)
                .map(|(&x, &t)| alpha * t + (1.0 - alpha) * x)
                .collect(),
        );
    }
    Ok(next)
}

/// One day of the dynamic from a validated state.
pub fn step<A: TargetOperator, P: TargetOperator>(
    network: &Network,
    op: &A,
    alpha: f64,
    op_hat: &P,
    alpha_hat: f64,
    profile: &ClassProfile,
    state: &ClassFlowState,
) -> Result<ClassFlowState> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let next = step_flows(network, op, alpha, op_hat, alpha_hat, profile, state.class_flows())?;
    Ok(ClassFlowState::new_unchecked(state.day + 1, next))
}

/// A simulated day-to-day run: states for days `0..=horizon` plus the route
/// costs experienced under each day's aggregate.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<ClassFlowState>,
    pub aggregate_costs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &[f64]> {
        self.states.iter().map(|s| s.aggregate())
    }

    pub fn last_state(&self) -> &ClassFlowState {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Which day-to-day dynamic drives the hierarchy, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamic {
    Ntp(NtpParams),
    Logit(LogitParams),
}

impl Dynamic {
    pub fn alpha(&self) -> f64 {
        match self {
            Dynamic::Ntp(p) => p.alpha,
            Dynamic::Logit(p) => p.alpha,
        }
    }

    pub fn alpha_hat(&self) -> f64 {
        match self {
            Dynamic::Ntp(p) => p.alpha_hat,
            Dynamic::Logit(p) => p.alpha_hat,
        }
    }

    pub fn predict(
        &self,
        network: &Network,
        profile: &ClassProfile,
        aggregate: &[f64],
    ) -> Result<Prediction> {
        match self {
            Dynamic::Ntp(p) => predict(
                network,
                &NtpOperator { gamma: p.gamma_hat },
                p.alpha_hat,
                profile,
                aggregate,
            ),
            Dynamic::Logit(p) => predict(
                network,
                &LogitOperator { theta: p.theta_hat },
                p.alpha_hat,
                profile,
                aggregate,
            ),
        }
    }

    pub fn step(
        &self,
        network: &Network,
        profile: &ClassProfile,
        state: &ClassFlowState,
    ) -> Result<ClassFlowState> {
        match self {
            Dynamic::Ntp(p) => ntp_step(network, state, profile, p),
            Dynamic::Logit(p) => logit_step(network, state, profile, p),
        }
    }

    /// Jacobian of the one-day map at `state`, size `|K| R x |K| R`.
    pub fn jacobian(
        &self,
        network: &Network,
        profile: &ClassProfile,
        state: &ClassFlowState,
    ) -> Result<DMatrix<f64>> {
        match self {
            Dynamic::Ntp(p) => Ok(ntp_jacobian(network, state, profile, p)?.jp),
            Dynamic::Logit(p) => logit_jacobian(network, state, profile, p),
        }
    }

    /// Iterate the dynamic for `horizon` days, recording every state.
    pub fn simulate(
        &self,
        network: &Network,
        profile: &ClassProfile,
        initial: ClassFlowState,
        horizon: usize,
    ) -> Result<Trajectory> {
        if horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        let mut states = Vec::with_capacity(horizon + 1);
        let mut costs = Vec::with_capacity(horizon + 1);
        costs.push(network.route_costs(initial.aggregate())?);
        states.push(initial);
        for day in 0..horizon {
            let next = self.step(network, profile, states.last().unwrap())?;
            if next.aggregate().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    day: day + 1,
                    detail: "non-finite flow".into(),
                });
            }
            costs.push(network.route_costs(next.aggregate())?);
            states.push(next);
        }
        Ok(Trajectory { states, aggregate_costs: costs })
    }
}
