//! Reference equilibria (DUE and SUE), fixed-point residuals of the
//! hierarchical dynamics, and convergence detection along trajectories.

use crate::error::{Error, Result};
use crate::feasible_set::FeasibleSetSpec;
use nalgebra::{DMatrix, DVector};
use crate::framework::{ClassFlowState, ClassProfile, Dynamic, Trajectory};
use crate::logit::logit_choice;
use crate::network::Network;

pub const DEFAULT_DUE_TOL: f64 = 1e-8;
pub const DEFAULT_SUE_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumKind {
    Due,
    Sue,
    Mpe,
    Mpse,
}

impl EquilibriumKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EquilibriumKind::Due => "due",
            EquilibriumKind::Sue => "sue",
            EquilibriumKind::Mpe => "mpe",
            EquilibriumKind::Mpse => "mpse",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub kind: EquilibriumKind,
    pub aggregate: Vec<f64>,
    /// Proportional per-class split of the aggregate.
    pub class_flows: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EquilibriumResult {
    pub fn state(&self, day: usize) -> ClassFlowState {
        ClassFlowState::new_unchecked(day, self.class_flows.clone())
    }
}

/// Row-sum bound on the largest eigenvalue of the (entrywise nonnegative)
/// cost Jacobian.
fn cost_jacobian_bound(network: &Network, x: &[f64]) -> Result<f64> {
    let d = network.cost_jacobian(x)?;
    let mut bound = 0.0f64;
    for i in 0..d.nrows() {
        bound = bound.max(d.row(i).iter().sum());
    }
    Ok(bound)
}

/// One Newton solve of the equal-cost system on a fixed active face: costs
/// equal within each OD over the face, face flows summing to the demands.
/// Returns `None` when the face is wrong (Newton leaves the nonnegative
/// orthant or stalls).
fn face_newton(network: &Network, start: &[f64], active_tol: f64) -> Result<Option<Vec<f64>>> {
    let ranges = network.od_route_ranges();
    let demands = network.demands();
    let active: Vec<usize> = (0..start.len())
        .filter(|&r| start[r] > active_tol)
        .collect();
    if active.is_empty() {
        return Ok(None);
    }
    for (range, _) in ranges.iter().zip(&demands) {
        if !active.iter().any(|r| range.contains(r)) {
            return Ok(None);
        }
    }
    let na = active.len();
    let nw = ranges.len();
    let od_of = |r: usize| ranges.iter().position(|rng| rng.contains(&r)).unwrap();

    let mut x = start.to_vec();
    for r in 0..x.len() {
        if !active.contains(&r) {
            x[r] = 0.0;
        }
    }
    let mut u = vec![0.0; nw];
    for w in 0..nw {
        let c = network.route_costs(&x)?;
        let members: Vec<usize> = active.iter().copied().filter(|&r| ranges[w].contains(&r)).collect();
        u[w] = members.iter().map(|&r| c[r]).sum::<f64>() / members.len() as f64;
    }

    let cost_scale = 1.0 + u.iter().cloned().fold(0.0, f64::max).abs();
    for _ in 0..40 {
        let c = network.route_costs(&x)?;
        let d = network.cost_jacobian(&x)?;
        let mut f = DVector::zeros(na + nw);
        for (i, &r) in active.iter().enumerate() {
            f[i] = c[r] - u[od_of(r)];
        }
        for (w, range) in ranges.iter().enumerate() {
            let sum: f64 = active
                .iter()
                .filter(|&&r| range.contains(&r))
                .map(|&r| x[r])
                .sum();
            f[na + w] = sum - demands[w];
        }
        if f.amax() < 1e-14 * cost_scale {
            break;
        }
        let mut jac = DMatrix::zeros(na + nw, na + nw);
        for (i, &r) in active.iter().enumerate() {
            for (j, &s) in active.iter().enumerate() {
                jac[(i, j)] = d[(r, s)];
            }
            jac[(i, na + od_of(r))] = -1.0;
        }
        for (j, &s) in active.iter().enumerate() {
            jac[(na + od_of(s), j)] = 1.0;
        }
        let Some(delta) = jac.lu().solve(&(-f)) else {
            return Ok(None);
        };
        for (j, &r) in active.iter().enumerate() {
            x[r] += delta[j];
        }
        for w in 0..nw {
            u[w] += delta[na + w];
        }
        if x.iter().any(|&v| !v.is_finite() || v < -0.5) {
            return Ok(None);
        }
    }
    if x.iter().any(|&v| v < 0.0) {
        return Ok(None);
    }
    Ok(Some(x))
}

/// Solve the deterministic user equilibrium.
///
/// Averaged projection iteration on the fixed-point map `x -> P[x - g c(x)]`
/// with the step `g` refreshed from a spectral bound of the cost Jacobian so
/// the inner map stays nonexpansive, plus a periodic Newton polish on the
/// currently active face. Convergence is measured by the canonical VI
/// residual `||x - P[x - c(x)]||`.
pub fn solve_due(network: &Network, tol: f64, max_iter: usize) -> Result<EquilibriumResult> {
    solve_due_with_profile(network, &ClassProfile::single(), tol, max_iter)
}

pub fn solve_due_with_profile(
    network: &Network,
    profile: &ClassProfile,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult> {
    let set = FeasibleSetSpec::new(network, 1.0)?;
    let active_tol = 1e-9 * network.total_demand();
    let mut x = network.uniform_flow();
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let c = network.route_costs(&x)?;
        residual = set.vi_residual(&x, &c, 1.0)?;
        if residual < tol {
            return Ok(finish(network, profile, x, residual, it, true, EquilibriumKind::Due));
        }
        if it % 10 == 5 {
            if let Some(candidate) = face_newton(network, &x, active_tol)? {
                let cc = network.route_costs(&candidate)?;
                if set.contains(&candidate, 1e-9 * network.total_demand()) {
                    let res = set.vi_residual(&candidate, &cc, 1.0)?;
                    if res < residual {
                        x = candidate;
                        residual = res;
                        if residual < tol {
                            return Ok(finish(
                                network,
                                profile,
                                x,
                                residual,
                                it,
                                true,
                                EquilibriumKind::Due,
                            ));
                        }
                        continue;
                    }
                }
            }
        }
        let bound = cost_jacobian_bound(network, &x)?;
        let g = (1.0 / bound.max(1e-12)).min(1e6);
        let z: Vec<f64> = x.iter().zip(&c).map(|(&xi, &ci)| xi - g * ci).collect();
        let (t, _) = set.project(&z)?;
        for (xi, ti) in x.iter_mut().zip(&t) {
            *xi = 0.5 * (*xi + ti);
        }
    }
    Err(Error::MaxIterExceeded { max_iter, residual })
}

/// Solve the Logit stochastic user equilibrium at dispersal `theta`.
///
/// Damped fixed-point iteration on `x -> Phi[c(x)]`, with the damping chosen
/// each round from a row-sum bound of `Upsilon D` so the damped map contracts.
pub fn solve_sue(
    network: &Network,
    theta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult> {
    solve_sue_with_profile(network, &ClassProfile::single(), theta, tol, max_iter)
}

pub fn solve_sue_with_profile(
    network: &Network,
    profile: &ClassProfile,
    theta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult> {
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter("theta must be positive".into()));
    }
    let n = network.num_routes();
    let mut x = network.uniform_flow();
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let c = network.route_costs(&x)?;
        let target = logit_choice(network, &c, theta, 1.0)?;
        residual = x
            .iter()
            .zip(&target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if residual < tol {
            return Ok(finish(network, profile, x, residual, it, true, EquilibriumKind::Sue));
        }
        let ups = crate::logit::logit_operator_jacobian(network, &c, theta, 1.0)?;
        let d = network.cost_jacobian(&x)?;
        let prod = &ups * &d;
        // Newton on F(x) = x - Phi[c(x)], damped to keep flows positive.
        let jac = DMatrix::identity(n, n) - &prod;
        let f = DVector::from_iterator(n, x.iter().zip(&target).map(|(&a, &b)| a - b));
        let newton = jac.lu().solve(&(-f));
        if let Some(delta) = newton {
            let mut t = 1.0;
            let mut applied = false;
            for _ in 0..20 {
                let cand: Vec<f64> = x.iter().zip(delta.iter()).map(|(&xi, &di)| xi + t * di).collect();
                if cand.iter().all(|&v| v > 0.0) {
                    let cc = network.route_costs(&cand)?;
                    let tt = logit_choice(network, &cc, theta, 1.0)?;
                    let res: f64 = cand
                        .iter()
                        .zip(&tt)
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    if res < residual {
                        x = cand;
                        applied = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if applied {
                continue;
            }
        }
        // fall back to the damped fixed-point step
        let mut bound = 0.0f64;
        for i in 0..prod.nrows() {
            bound = bound.max(prod.row(i).iter().map(|v| v.abs()).sum());
        }
        let a = (1.8 / (1.0 + bound)).min(1.0);
        for (xi, ti) in x.iter_mut().zip(&target) {
            *xi = (1.0 - a) * *xi + a * ti;
        }
    }
    Err(Error::MaxIterExceeded { max_iter, residual })
}

fn finish(
    network: &Network,
    profile: &ClassProfile,
    aggregate: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
    kind: EquilibriumKind,
) -> EquilibriumResult {
    let _ = network;
    let class_flows = profile
        .shares()
        .iter()
        .map(|&p| aggregate.iter().map(|&x| p * x).collect())
        .collect();
    EquilibriumResult { kind, aggregate, class_flows, residual, iterations, converged }
}

/// Fixed-point residual of the hierarchical dynamic at `state`:
/// `|| state - step(state) ||_inf` over all class flows. Zero exactly at a
/// mixed prediction-based (stochastic) equilibrium.
pub fn mpe_residual(
    network: &Network,
    state: &ClassFlowState,
    profile: &ClassProfile,
    dynamic: &Dynamic,
) -> Result<f64> {
    let next = dynamic.step(network, profile, state)?;
    Ok(state.max_abs_diff(&next))
}

/// First day at which the trajectory has settled: the earliest `t` whose
/// following `window` day-to-day changes (truncated at the horizon) all stay
/// below `tol`. Returns `None` when no such day exists; a day with no
/// subsequent change to confirm never qualifies.
pub fn detect_fixed_point(trajectory: &Trajectory, tol: f64, window: usize) -> Option<usize> {
    let states = &trajectory.states;
    if states.len() < 2 {
        return None;
    }
    let changes: Vec<f64> = states
        .windows(2)
        .map(|w| w[0].max_abs_diff(&w[1]))
        .collect();
    let window = window.max(1);
    for t in 0..states.len() - 1 {
        let end = (t + window).min(changes.len());
        if changes[t..end].iter().all(|&c| c < tol) {
            return Some(t);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::Dynamic;
    use crate::network::{BprParams, Link, Network, OdSpec};
    use crate::ntp::NtpParams;

    fn two_route_toy() -> Network {
        // c1 = 1 + 0.15 x1^4 is not linear; the linear toy cost c = t0 + x is
        // emulated with BPR via exponent 1 and coefficient 1 on unit capacity.
        Network::new(
            vec![
                Link { id: 1, free_flow_time: 1.0, capacity: 1.0 },
                Link { id: 2, free_flow_time: 2.0, capacity: 2.0 },
            ],
            vec![OdSpec { id: 1, demand: 3.0, routes: vec![vec![1], vec![2]] }],
            BprParams { coefficient: 1.0, exponent: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn linear_two_route_due_has_equal_costs() {
        // c1 = 1 + x1, c2 = 2 + x2, d = 3 -> x = (2, 1), costs (3, 3)
        let net = two_route_toy();
        let eq = solve_due(&net, 1e-12, 100_000).unwrap();
        assert!((eq.aggregate[0] - 2.0).abs() < 1e-9);
        assert!((eq.aggregate[1] - 1.0).abs() < 1e-9);
        let c = net.route_costs(&eq.aggregate).unwrap();
        assert!((c[0] - c[1]).abs() < 1e-8);
    }

    #[test]
    fn symmetric_sue_splits_demand_in_half() {
        let net = Network::new(
            vec![
                Link { id: 1, free_flow_time: 1.0, capacity: 1.0 },
                Link { id: 2, free_flow_time: 1.0, capacity: 1.0 },
            ],
            vec![OdSpec { id: 1, demand: 4.0, routes: vec![vec![1], vec![2]] }],
            BprParams::default(),
        )
        .unwrap();
        for theta in [0.3, 1.0, 7.0] {
            let eq = solve_sue(&net, theta, 1e-12, 100_000).unwrap();
            assert!((eq.aggregate[0] - 2.0).abs() < 1e-9);
            assert!((eq.aggregate[1] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_theta_splits_nearly_uniformly() {
        let net = two_route_toy();
        let eq = solve_sue(&net, 1e-6, 1e-12, 100_000).unwrap();
        assert!((eq.aggregate[0] - 1.5).abs() < 1e-4);
    }

    #[test]
    fn two_route_sue_matches_bisection_oracle() {
        // fixed point of x1 = 3 sigma(theta (c2 - c1)), theta = 1
        let net = two_route_toy();
        let eq = solve_sue(&net, 1.0, 1e-12, 100_000).unwrap();
        let (mut lo, mut hi) = (0.0f64, 3.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let c1 = 1.0 + mid;
            let c2 = 2.0 + (3.0 - mid);
            let target = 3.0 / (1.0 + (-(c2 - c1)).exp());
            if target > mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((eq.aggregate[0] - lo).abs() < 1e-8);
    }

    #[test]
    fn constant_trajectory_detects_day_zero_and_two_cycle_none() {
        let net = two_route_toy();
        let profile = ClassProfile::single();
        let eq = solve_due(&net, 1e-12, 100_000).unwrap();
        let params = NtpParams::perfect(1.0, 0.4).unwrap();
        let traj = Dynamic::Ntp(params)
            .simulate(&net, &profile, eq.state(0), 10)
            .unwrap();
        assert_eq!(detect_fixed_point(&traj, 1e-9, 3), Some(0));

        // artificial two-cycle
        let a = ClassFlowState::new_unchecked(0, vec![vec![2.0, 1.0]]);
        let b = ClassFlowState::new_unchecked(1, vec![vec![1.0, 2.0]]);
        let cyc = Trajectory {
            states: vec![a.clone(), b.clone(), a.clone(), b.clone(), a],
            aggregate_costs: vec![vec![0.0; 2]; 5],
        };
        assert_eq!(detect_fixed_point(&cyc, 1e-9, 2), None);
    }
}
