//! Projection onto the scaled feasible route-flow set and its generalized
//! Jacobian.
//!
//! The feasible set is a product of per-OD simplices scaled by `eta * d_w`.
//! Projection is computed per OD with the sort-based active-set method: sort
//! the block descending and keep the largest prefix whose water-filled values
//! stay positive. The result coincides with the KKT closed form
//! `x = max(z - tau, 0)` with `tau = (sum_E z - eta d) / |E|`.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::Network;

/// Active-set membership threshold: a projected coordinate counts as positive
/// only when strictly above this value. A coordinate exactly at the threshold
/// is treated as inactive, matching the one-sided derivative of the
/// `max(z - tau, 0)` closed form. This is the single tie-breaking knob.
pub const POSITIVE_TOL: f64 = 1e-12;

/// Per-OD sets of route indices with strictly positive projected flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    /// Global route indices, ascending, one list per OD pair.
    pub per_od: Vec<Vec<usize>>,
}

impl ActiveSet {
    /// True when every route of every OD is active.
    pub fn is_full(&self, ranges: &[Range<usize>]) -> bool {
        self.per_od
            .iter()
            .zip(ranges)
            .all(|(e, r)| e.len() == r.len())
    }
}

/// The scaled feasible set `{ x >= 0 : sum of x over each OD's routes = eta * d_w }`.
#[derive(Debug, Clone)]
pub struct FeasibleSetSpec {
    od_ranges: Vec<Range<usize>>,
    scaled_demands: Vec<f64>,
    eta: f64,
    num_routes: usize,
}

impl FeasibleSetSpec {
    /// Build the set for a network at demand scale `eta`.
    ///
    /// `eta = 0` is allowed and yields the degenerate set `{0}`; it backs
    /// classes with zero population share.
    pub fn new(network: &Network, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "demand scale eta must be a finite nonnegative number, got {eta}"
            )));
        }
        Ok(FeasibleSetSpec {
            od_ranges: network.od_route_ranges(),
            scaled_demands: network.demands().iter().map(|d| eta * d).collect(),
            eta,
            num_routes: network.num_routes(),
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn num_routes(&self) -> usize {
        self.num_routes
    }

    pub fn od_ranges(&self) -> &[Range<usize>] {
        &self.od_ranges
    }

    pub fn scaled_demands(&self) -> &[f64] {
        &self.scaled_demands
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.num_routes {
            return Err(Error::DimensionMismatch {
                expected: self.num_routes,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Euclidean projection of `z` onto the set, with the per-OD active sets
    /// of the projected point.
    pub fn project(&self, z: &[f64]) -> Result<(Vec<f64>, ActiveSet)> {
        self.check_len(z)?;
        let mut x = vec![0.0; z.len()];
        let mut per_od = Vec::with_capacity(self.od_ranges.len());
        for (range, &target) in self.od_ranges.iter().zip(&self.scaled_demands) {
            let active = project_block(&z[range.clone()], target, &mut x[range.clone()]);
            per_od.push(active.into_iter().map(|i| i + range.start).collect());
        }
        Ok((x, ActiveSet { per_od }))
    }

    /// Generalized Jacobian `Q[z]` of the projection at `z`: block diagonal
    /// with per-OD blocks `Diag(1_E) - 1_E 1_Eᵀ / |E|`.
    pub fn projection_jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let (_, active) = self.project(z)?;
        Ok(self.jacobian_from_active(&active))
    }

    /// Assemble `Q` from an already-computed active set.
    pub fn jacobian_from_active(&self, active: &ActiveSet) -> DMatrix<f64> {
        let n = self.num_routes;
        let mut q = DMatrix::zeros(n, n);
        for routes in &active.per_od {
            if routes.is_empty() {
                continue;
            }
            let inv = 1.0 / routes.len() as f64;
            for &i in routes {
                for &j in routes {
                    q[(i, j)] -= inv;
                }
                q[(i, i)] += 1.0;
            }
        }
        q
    }

    /// Interior form of the projection Jacobian: every route active.
    pub fn interior_jacobian(&self) -> DMatrix<f64> {
        let n = self.num_routes;
        let mut q = DMatrix::zeros(n, n);
        for range in &self.od_ranges {
            let inv = 1.0 / range.len() as f64;
            for i in range.clone() {
                for j in range.clone() {
                    q[(i, j)] -= inv;
                }
                q[(i, i)] += 1.0;
            }
        }
        q
    }

    /// Membership check with an absolute tolerance on the demand constraints
    /// and nonnegativity.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.num_routes {
            return false;
        }
        for (range, &target) in self.od_ranges.iter().zip(&self.scaled_demands) {
            let mut sum = 0.0;
            for i in range.clone() {
                if x[i] < -tol {
                    return false;
                }
                sum += x[i];
            }
            if (sum - target).abs() > tol * (1.0 + target.abs()) {
                return false;
            }
        }
        true
    }

    /// Fixed-point residual of the variational inequality with cost vector
    /// `c` and step `gamma`: `|| x - P[x - gamma c] ||_2`.
    ///
    /// Zero exactly at VI solutions.
    pub fn vi_residual(&self, x: &[f64], c: &[f64], gamma: f64) -> Result<f64> {
        self.check_len(x)?;
        self.check_len(c)?;
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if !self.contains(x, 1e-6) {
            return Err(Error::InfeasibleFlow(
                "vi_residual requires a feasible flow".into(),
            ));
        }
        let z: Vec<f64> = x.iter().zip(c).map(|(&xi, &ci)| xi - gamma * ci).collect();
        let (p, _) = self.project(&z)?;
        Ok(x.iter()
            .zip(&p)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Projection of a single block onto `{x >= 0, sum x = target}`, exposed for
/// per-OD work that does not need a full network-sized spec.
pub fn project_scaled_simplex(z: &[f64], target: f64) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![0.0; z.len()];
    let active = project_block(z, target, &mut out);
    (out, active)
}

/// Project one OD block of `z` onto the simplex `{x >= 0, sum x = target}`.
/// Writes the projection into `out` and returns the local active indices.
fn project_block(z: &[f64], target: f64, out: &mut [f64]) -> Vec<usize> {
    let n = z.len();
    if target <= 0.0 {
        out.fill(0.0);
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| z[j].partial_cmp(&z[i]).expect("non-finite projection input"));

    // Largest prefix whose water level keeps the smallest member positive.
    let mut prefix_sum = 0.0;
    let mut best_m = 0;
    let mut best_tau = 0.0;
    for (m, &i) in order.iter().enumerate() {
        prefix_sum += z[i];
        let tau = (prefix_sum - target) / (m as f64 + 1.0);
        if z[i] - tau > POSITIVE_TOL {
            best_m = m + 1;
            best_tau = tau;
        }
    }
    // target > 0 guarantees the first prefix qualifies.
    debug_assert!(best_m >= 1);

    out.fill(0.0);
    let mut active: Vec<usize> = order[..best_m].to_vec();
    let mut sum = 0.0;
    for &i in &active {
        out[i] = z[i] - best_tau;
        sum += out[i];
    }
    // One additive correction keeps the block sum exact.
    if best_m > 0 {
        let delta = (target - sum) / best_m as f64;
        for &i in &active {
            out[i] += delta;
        }
    }
    active.sort_unstable();
    active
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{BprParams, Link, Network, OdSpec};

    fn single_od(n: usize, demand: f64) -> Network {
        let links = (1..=n as u32)
            .map(|id| Link { id, free_flow_time: 1.0, capacity: 1.0 })
            .collect();
        let routes = (1..=n as u32).map(|id| vec![id]).collect();
        Network::new(links, vec![OdSpec { id: 1, demand, routes }], BprParams::default()).unwrap()
    }

    #[test]
    fn feasible_point_is_unchanged() {
        let net = single_od(3, 1.0);
        let spec = FeasibleSetSpec::new(&net, 1.0).unwrap();
        let z = [0.2, 0.5, 0.3];
        let (x, active) = spec.project(&z).unwrap();
        for (a, b) in x.iter().zip(&z) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(active.per_od[0], vec![0, 1, 2]);
    }

    #[test]
    fn one_corner_projection() {
        let net = single_od(3, 1.0);
        let spec = FeasibleSetSpec::new(&net, 1.0).unwrap();
        let (x, active) = spec.project(&[3.0, 0.0, 0.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && x[1] == 0.0 && x[2] == 0.0);
        assert_eq!(active.per_od[0], vec![0]);
    }

    #[test]
    fn all_active_projection() {
        let net = single_od(3, 1.0);
        let spec = FeasibleSetSpec::new(&net, 1.0).unwrap();
        let (x, active) = spec.project(&[0.6, 0.5, 0.4]).unwrap();
        let expect = [0.6 - 1.0 / 6.0, 0.5 - 1.0 / 6.0, 0.4 - 1.0 / 6.0];
        for (a, b) in x.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(active.per_od[0].len(), 3);
    }

    #[test]
    fn interior_jacobian_block_for_three_routes() {
        let net = single_od(3, 1.0);
        let spec = FeasibleSetSpec::new(&net, 1.0).unwrap();
        let q = spec.interior_jacobian();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 - 1.0 / 3.0 } else { -1.0 / 3.0 };
                assert!((q[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_scale_projects_to_zero() {
        let net = single_od(3, 1.0);
        let spec = FeasibleSetSpec::new(&net, 0.0).unwrap();
        let (x, active) = spec.project(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 0.0]);
        assert!(active.per_od[0].is_empty());
        let q = spec.jacobian_from_active(&active);
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vi_residual_zero_cost_and_symmetry() {
        let net = single_od(2, 1.0);
        let spec = FeasibleSetSpec::new(&net, 1.0).unwrap();
        let x = [0.5, 0.5];
        assert!(spec.vi_residual(&x, &[0.0, 0.0], 1.0).unwrap() < 1e-14);
        // equal costs on both routes: uniform shift, projection restores x
        assert!(spec.vi_residual(&x, &[2.0, 2.0], 1.0).unwrap() < 1e-14);
    }

    #[test]
    fn vi_residual_rejects_infeasible_point() {
        let net = single_od(2, 1.0);
        let spec = FeasibleSetSpec::new(&net, 1.0).unwrap();
        assert!(spec.vi_residual(&[0.9, 0.9], &[0.0, 0.0], 1.0).is_err());
    }
}
