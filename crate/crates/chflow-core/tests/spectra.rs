//! Spectral structure of the assembled Jacobians at the user equilibria:
//! block factorizations, the eigenvalue correspondences behind the analytic
//! stability criteria, and the two-route closed form.

mod common;

use common::*;
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chflow_core::equilibrium::{solve_due, solve_sue};
use chflow_core::logit::{logit_jacobian, psi, sue_stability, LogitParams, PsiCoefficients};
use chflow_core::ntp::{
    gamma_bar, matrix_a, ntp_jacobian, q_bar, qbar_d_eigenvalues, stability_eq_gamma,
    stability_neq_gamma, NtpParams,
};
use chflow_core::stability::eigenvalues;
use chflow_core::{ClassFlowState, ClassProfile, Network};

fn interior_due(rng: &mut ChaCha8Rng, ods: usize, routes: usize) -> (Network, Vec<f64>) {
    loop {
        let net = random_network(rng, ods, routes);
        let eq = solve_due(&net, 1e-12, 500_000).unwrap();
        let interior = net
            .od_pairs()
            .iter()
            .all(|od| od.route_range().all(|r| eq.aggregate[r] > 0.02 * od.demand));
        if interior {
            return (net, eq.aggregate);
        }
    }
}

fn spectrum_at_due(
    net: &Network,
    due: &[f64],
    profile: &ClassProfile,
    params: &NtpParams,
) -> Vec<Complex<f64>> {
    let state = ClassFlowState::from_aggregate_proportional(0, due, net, profile).unwrap();
    let jp = ntp_jacobian(net, &state, profile, params).unwrap().jp;
    eigenvalues(&jp).unwrap()
}

#[test]
fn appendix_factorization_of_jp_at_interior_due() {
    // with unit inertia and perfect prediction, spectrum(JP) splits into
    // |K|-1 copies of spectrum(Q_bar) plus spectrum(A^|K|)
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..5 {
        let (net, due) = interior_due(&mut rng, 2, 3);
        let gamma = rng.random_range(0.1..1.5);
        let params = NtpParams::perfect(1.0, gamma).unwrap();
        let a = matrix_a(&net, &due, gamma).unwrap();
        let qb = q_bar(&net).unwrap();
        let qb_eigs = eigenvalues(&qb).unwrap();

        for kk in [2usize, 3] {
            let profile = if kk == 2 {
                ClassProfile::two(0.4).unwrap()
            } else {
                ClassProfile::three(0.3, 0.4).unwrap()
            };
            let spec = spectrum_at_due(&net, &due, &profile, &params);
            let mut expected: Vec<Complex<f64>> = Vec::new();
            for _ in 0..kk - 1 {
                expected.extend(qb_eigs.iter().copied());
            }
            let mut apow = DMatrix::identity(a.nrows(), a.ncols());
            for _ in 0..kk {
                apow = &apow * &a;
            }
            expected.extend(eigenvalues(&apow).unwrap());
            let dist = multiset_distance(&spec, &expected);
            assert!(dist < 1e-7, "factorization multiset distance {dist:.2e} (K = {kk})");
        }
    }
}

#[test]
fn lemma_correspondence_between_a_and_qbar_d() {
    // each nonzero eigenvalue mu of Q_bar D* maps to eigenvalue 1 - gamma mu of A
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..5 {
        let (net, due) = interior_due(&mut rng, 2, 3);
        let gamma = rng.random_range(0.1..1.2);
        let mu = qbar_d_eigenvalues(&net, &due).unwrap();
        let a_eigs = eigenvalues(&matrix_a(&net, &due, gamma).unwrap()).unwrap();
        for &m in &mu {
            let target = 1.0 - gamma * m;
            let found = a_eigs
                .iter()
                .any(|e| (e - Complex::new(target, 0.0)).norm() < 1e-9);
            assert!(found, "1 - gamma*mu = {target} missing from spectrum(A)");
        }
    }
}

#[test]
fn qbar_annihilates_a_and_scaling_moves_gamma_bar() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (net, due) = interior_due(&mut rng, 2, 3);
    let a = matrix_a(&net, &due, 0.7).unwrap();
    let qb = q_bar(&net).unwrap();
    assert!(max_abs_diff(&(&qb * &a), &a) < 1e-12, "Q_bar A must equal A");

    // doubling every free-flow time doubles D*, halving gamma_bar
    let gb = gamma_bar(&net, &due).unwrap();
    let scaled = Network::new(
        net.links()
            .iter()
            .map(|l| chflow_core::Link {
                id: l.id,
                free_flow_time: 2.0 * l.free_flow_time,
                capacity: l.capacity,
            })
            .collect(),
        net.od_pairs()
            .iter()
            .map(|od| chflow_core::OdSpec {
                id: od.id,
                demand: od.demand,
                routes: od
                    .route_range()
                    .map(|r| net.routes()[r].links.clone())
                    .collect(),
            })
            .collect(),
        net.bpr(),
    )
    .unwrap();
    let gb2 = gamma_bar(&scaled, &due).unwrap();
    assert!((gb2 - gb / 2.0).abs() < 1e-9 * gb);
}

#[test]
fn two_route_qbar_d_eigenvalue_is_half_trace_sum() {
    // 2x2 symbolic form: the nonzero eigenvalue of Q_bar D is (a - 2b + c)/2
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..10 {
        let (net, due) = interior_due(&mut rng, 1, 2);
        let d = net.cost_jacobian(&due).unwrap();
        let (a, b, c) = (d[(0, 0)], d[(0, 1)], d[(1, 1)]);
        let mu = qbar_d_eigenvalues(&net, &due).unwrap();
        assert_eq!(mu.len(), 1);
        assert!((mu[0] - (a - 2.0 * b + c) / 2.0).abs() < 1e-10);
        let gb = gamma_bar(&net, &due).unwrap();
        assert!((gb - 2.0 / mu[0]).abs() < 1e-10);
    }
}

#[test]
fn two_route_jp_spectrum_closed_form() {
    // K = 2, unit inertia: eigenvalues are {0, 0, 1, f} with
    // f = gamma gamma_hat u^2 / 4 - gamma u + 1, u = a - 2b + c
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..10 {
        let (net, due) = interior_due(&mut rng, 1, 2);
        let d = net.cost_jacobian(&due).unwrap();
        let u = d[(0, 0)] - 2.0 * d[(0, 1)] + d[(1, 1)];
        let gamma = rng.random_range(0.1..2.0);
        let gamma_hat = rng.random_range(0.1..2.0);
        let params = NtpParams::new(1.0, gamma, 1.0, gamma_hat).unwrap();
        let profile = ClassProfile::two(rng.random_range(0.2..0.8)).unwrap();
        let spec = spectrum_at_due(&net, &due, &profile, &params);
        let f = 0.25 * gamma * gamma_hat * u * u - gamma * u + 1.0;
        let expected = vec![
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(1.0, 0.0),
            Complex::new(f, 0.0),
        ];
        let dist = multiset_distance(&spec, &expected);
        assert!(dist < 1e-9, "closed-form spectrum distance {dist:.2e}");
    }
}

#[test]
fn imperfect_prediction_criterion_agrees_with_perfect_one_on_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let (net, due) = interior_due(&mut rng, 2, 3);
    let gb = gamma_bar(&net, &due).unwrap();
    for i in 1..=20 {
        let gamma = gb * 0.1 * i as f64;
        let eq = stability_eq_gamma(&net, &due, gamma).unwrap();
        let neq = stability_neq_gamma(&net, &due, gamma, gamma).unwrap();
        assert_eq!(eq.stable, neq.stable, "criteria disagree at gamma = {gamma}");
        assert_eq!(eq.stable, gamma < gb);
    }
}

#[test]
fn overprediction_beyond_gamma_bar_is_always_unstable() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let (net, due) = interior_due(&mut rng, 2, 3);
    let gb = gamma_bar(&net, &due).unwrap();
    let gamma_hat = gb * 1.05;
    for gamma in [0.05 * gb, 0.4 * gb, 0.9 * gb, 1.5 * gb] {
        let rep = stability_neq_gamma(&net, &due, gamma, gamma_hat).unwrap();
        assert!(!rep.stable, "gamma_hat above the threshold must destabilize");
    }
}

#[test]
fn severe_underprediction_splits_the_stable_interval() {
    // for gamma_hat < gamma/2 the set of u = a - 2b + c with |f(u)| < 1 is
    // two intervals whose combined length is at least 4/gamma
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for _ in 0..20 {
        let gamma = rng.random_range(0.5..3.0);
        let gamma_hat = rng.random_range(0.01..gamma / 2.0 * 0.95);
        let f = |u: f64| 0.25 * gamma * gamma_hat * u * u - gamma * u + 1.0;
        // closed-form interval endpoints
        let disc = (gamma * (gamma - 2.0 * gamma_hat)).sqrt();
        let lo1 = 0.0;
        let hi1 = 2.0 / gamma_hat - 2.0 * disc / (gamma * gamma_hat);
        let lo2 = 2.0 / gamma_hat + 2.0 * disc / (gamma * gamma_hat);
        let hi2 = 4.0 / gamma_hat;
        // the endpoints really are the |f| = 1 crossings
        for u in [hi1, lo2] {
            assert!((f(u) + 1.0).abs() < 1e-9);
        }
        assert!((f(hi2) - 1.0).abs() < 1e-9);
        // interior points are stable, the gap is not
        assert!(f(0.5 * (lo1 + hi1)).abs() < 1.0);
        assert!(f(0.5 * (lo2 + hi2)).abs() < 1.0);
        assert!(f(0.5 * (hi1 + lo2)) < -1.0);
        let combined = (hi1 - lo1) + (hi2 - lo2);
        assert!(combined >= 4.0 / gamma - 1e-9);
    }
}

#[test]
fn appendix_factorization_of_logit_jacobian_at_sue() {
    // at the SUE with matched dispersal, spectrum(JPhi) is 1 - alpha with
    // multiplicity (|K| - 1) R plus the psi images of the rho_i
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    for _ in 0..5 {
        let net = random_network(&mut rng, 2, 3);
        let theta = rng.random_range(0.02..0.4);
        let sue = solve_sue(&net, theta, 1e-13, 500_000).unwrap().aggregate;
        let alpha = rng.random_range(0.2..0.9);
        let alpha_hat = rng.random_range(0.2..0.9);
        let params = LogitParams::new(alpha, theta, alpha_hat, theta).unwrap();
        for profile in [
            ClassProfile::two(rng.random_range(0.2..0.8)).unwrap(),
            ClassProfile::three(0.3, 0.4).unwrap(),
        ] {
            let kk = profile.len();
            let state =
                ClassFlowState::from_aggregate_proportional(0, &sue, &net, &profile).unwrap();
            let jphi = logit_jacobian(&net, &state, &profile, &params).unwrap();
            let spec = eigenvalues(&jphi).unwrap();

            let report = sue_stability(&net, &sue, &profile, &params).unwrap();
            let coeffs = PsiCoefficients::from_profile(&profile, &params).unwrap();
            let mut expected: Vec<Complex<f64>> = report
                .rho
                .iter()
                .map(|&r| Complex::new(psi(r, &coeffs), 0.0))
                .collect();
            let r = net.num_routes();
            expected.extend(std::iter::repeat(Complex::new(1.0 - alpha, 0.0)).take((kk - 1) * r));
            let dist = multiset_distance(&spec, &expected);
            assert!(dist < 1e-7, "psi factorization distance {dist:.2e} (K = {kk})");
        }
    }
}

#[test]
fn psi_reduction_chain() {
    // p2 = 0 collapses the cubic to the two-class quadratic; further p0 = 1,
    // alpha_hat = alpha collapses to the one-class linear form
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    for _ in 0..100 {
        let alpha = rng.random_range(0.05..0.95);
        let alpha_hat = rng.random_range(0.05..0.95);
        let p0 = rng.random_range(0.05..0.95);
        let quad = PsiCoefficients::new(alpha, alpha_hat, p0, 1.0 - p0, 0.0).unwrap();
        let lin = PsiCoefficients::new(alpha, alpha, 1.0, 0.0, 0.0).unwrap();
        for i in 0..50 {
            let rho = -6.0 + 0.12 * i as f64;
            let g = alpha * alpha_hat * (1.0 - p0) * rho * rho
                + (alpha * alpha_hat * p0 - alpha * alpha_hat + alpha) * rho
                + (1.0 - alpha);
            assert!((psi(rho, &quad) - g).abs() < 1e-12);
            assert!((psi(rho, &lin) - (alpha * rho + 1.0 - alpha)).abs() < 1e-12);
        }
    }
}

#[test]
fn rho_eigenvalues_are_nonpositive() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..10 {
        let net = random_network(&mut rng, 2, 3);
        let theta = rng.random_range(0.02..0.5);
        let sue = solve_sue(&net, theta, 1e-12, 500_000).unwrap().aggregate;
        let params = LogitParams::perfect(0.5, theta).unwrap();
        let report = sue_stability(&net, &sue, &ClassProfile::two(0.5).unwrap(), &params).unwrap();
        for &r in &report.rho {
            assert!(r <= 1e-10, "rho must be nonpositive, got {r}");
        }
    }
}
