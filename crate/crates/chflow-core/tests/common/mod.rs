//! Shared oracles and generators for the integration tests. Everything here
//! is deliberately independent of the library's own algorithms: projections
//! are re-derived by exhaustive active-set enumeration, Jacobians by central
//! finite differences.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix};
use rand::Rng;

use chflow_core::network::{BprParams, Link, Network, OdSpec};
use chflow_core::{ClassFlowState, ClassProfile};

/// Exhaustive-active-set QP oracle for projection onto
/// `{x >= 0, sum x = target}`: tries every nonempty support, solves the
/// equality-constrained least squares in closed form, checks feasibility and
/// optimality by direct distance comparison.
pub fn qp_project_block_oracle(z: &[f64], target: f64) -> Vec<f64> {
    let n = z.len();
    assert!(n <= 20, "oracle enumerates 2^n supports");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let m = support.len() as f64;
        let tau = (support.iter().map(|&i| z[i]).sum::<f64>() - target) / m;
        let mut x = vec![0.0; n];
        let mut ok = true;
        for &i in &support {
            x[i] = z[i] - tau;
            if x[i] < 0.0 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let dist: f64 = x.iter().zip(z).map(|(&a, &b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.expect("some support is feasible").1
}

/// Whole-vector QP oracle over the per-OD blocks of a network.
pub fn qp_project_oracle(net: &Network, z: &[f64], eta: f64) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for od in net.od_pairs() {
        let range = od.route_range();
        let block = qp_project_block_oracle(&z[range.clone()], eta * od.demand);
        out[range].copy_from_slice(&block);
    }
    out
}

/// Central finite-difference Jacobian of a vector map.
pub fn fd_jacobian<F>(f: F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let fx = f(x);
    let (m, n) = (fx.len(), x.len());
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Random multi-OD test network. Every route gets a private link (so the
/// cost Jacobian is positive definite) plus per-OD shared links that couple
/// the routes. Capacities sit well below the balanced per-link loads, which
/// keeps the equilibria interior.
pub fn random_network(rng: &mut impl Rng, num_ods: usize, routes_per_od: usize) -> Network {
    let mut topology: Vec<(u32, f64)> = Vec::new(); // (link id, expected users)
    let mut next_link = 1u32;
    let mut ods_raw = Vec::new();
    for od in 0..num_ods {
        let demand = rng.random_range(60.0..140.0);
        let shared_a = next_link;
        let shared_b = next_link + 1;
        next_link += 2;
        let mut users_a = 0.0f64;
        let mut users_b = 0.0f64;
        let mut routes = Vec::new();
        for r in 0..routes_per_od {
            let private = next_link;
            next_link += 1;
            topology.push((private, 1.0));
            let mut route = vec![private];
            if r % 2 == 0 {
                route.push(shared_a);
                users_a += 1.0;
            }
            if r % 3 != 1 {
                route.push(shared_b);
                users_b += 1.0;
            }
            routes.push(route);
        }
        topology.push((shared_a, users_a.max(1.0)));
        topology.push((shared_b, users_b.max(1.0)));
        ods_raw.push((od as u32 + 1, demand, routes));
    }
    let mut links = Vec::new();
    for (id, users) in topology {
        let od_demand = ods_raw
            .iter()
            .find(|(_, _, routes)| routes.iter().any(|r| r.contains(&id)))
            .map(|&(_, d, _)| d)
            .unwrap_or(100.0);
        let balanced = users * od_demand / routes_per_od as f64;
        links.push(Link {
            id,
            free_flow_time: rng.random_range(3.0..8.0),
            capacity: balanced * rng.random_range(0.45..0.85),
        });
    }
    links.sort_by_key(|l| l.id);
    let ods = ods_raw
        .into_iter()
        .map(|(id, demand, routes)| OdSpec { id, demand, routes })
        .collect();
    Network::new(links, ods, BprParams::default()).unwrap()
}

/// Random aggregate flow with every route share bounded away from zero.
pub fn random_interior_aggregate(rng: &mut impl Rng, net: &Network) -> Vec<f64> {
    let mut x = vec![0.0; net.num_routes()];
    for od in net.od_pairs() {
        let range = od.route_range();
        let weights: Vec<f64> = range.clone().map(|_| rng.random_range(0.25..1.0)).collect();
        let sum: f64 = weights.iter().sum();
        for (w, i) in weights.iter().zip(range) {
            x[i] = od.demand * w / sum;
        }
    }
    x
}

/// Random per-class state with interior aggregates and proportional-ish
/// random class splits.
pub fn random_interior_state(
    rng: &mut impl Rng,
    net: &Network,
    profile: &ClassProfile,
) -> ClassFlowState {
    let flows: Vec<Vec<f64>> = profile
        .shares()
        .iter()
        .map(|&p| {
            let mut f = vec![0.0; net.num_routes()];
            for od in net.od_pairs() {
                let range = od.route_range();
                let weights: Vec<f64> =
                    range.clone().map(|_| rng.random_range(0.25..1.0)).collect();
                let sum: f64 = weights.iter().sum();
                for (w, i) in weights.iter().zip(range) {
                    f[i] = p * od.demand * w / sum;
                }
            }
            f
        })
        .collect();
    ClassFlowState::new(0, flows, net, profile).unwrap()
}

/// Greedy nearest matching between two complex multisets; returns the largest
/// pair distance, or an error when the sizes differ.
pub fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "multiset sizes differ");
    let mut remaining: Vec<Complex<f64>> = b.to_vec();
    let mut worst = 0.0f64;
    for &ea in a {
        let (idx, dist) = remaining
            .iter()
            .enumerate()
            .map(|(i, &eb)| (i, (ea - eb).norm()))
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .expect("nonempty");
        worst = worst.max(dist);
        remaining.swap_remove(idx);
    }
    worst
}

/// Max absolute entry difference of two matrices.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
