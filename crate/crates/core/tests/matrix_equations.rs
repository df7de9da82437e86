mod common;

use common::*;
use h2mm_core::matrix_equations::*;
use h2mm_core::Error;
use nalgebra::{Complex, DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn sylvester_diagonal_matches_resolvent_columns() {
    let a = mat(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
    let s = mat(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    let bl = mat(2, 1, &[1.0, 1.0]) * mat(1, 2, &[1.0, 1.0]);
    let pi = solve_sylvester(&a, &s, &bl).unwrap();
    let expected = mat(2, 2, &[1.0, 0.5, 0.5, 1.0 / 3.0]);
    assert!((pi - expected).norm() < 1e-14);
}

#[test]
fn lyapunov_matches_kronecker_oracle() {
    let a = mat(2, 2, &[-1.0, 1.0, 0.0, -2.0]);
    let q = DMatrix::identity(2, 2);
    let w = solve_lyapunov_ctrl(&a, &q).unwrap();
    assert!(rel_diff(&w, &kron_lyapunov_ctrl(&a, &q)) < 1e-12);
}

#[test]
fn observability_lyapunov_random_4x4() {
    let mut r = rng(4);
    let a = random_stable(&mut r, 4, 0.2);
    let c = random_matrix(&mut r, 2, 4);
    let q = c.transpose() * &c;
    let m = solve_lyapunov_obs(&a, &q).unwrap();
    let residual = a.transpose() * &m + &m * &a + &q;
    let scale = 2.0 * a.norm() * m.norm() + q.norm();
    assert!(residual.norm() <= 1e-10 * scale);
    let oracle = kron_sylvester(&a.transpose(), &(-&a), &q);
    assert!(rel_diff(&m, &oracle) < 1e-8);
}

#[test]
fn sylvester_kronecker_equivalence_random() {
    let mut r = rng(11);
    for trial in 0..40 {
        let n = r.random_range(1..=6);
        let nu = r.random_range(1..=6);
        let a = random_stable(&mut r, n, 0.5);
        let s = random_matrix(&mut r, nu, nu) + DMatrix::identity(nu, nu) * 2.0;
        let rhs = random_matrix(&mut r, n, nu);
        let x = solve_sylvester(&a, &s, &rhs).unwrap();
        let oracle = kron_sylvester(&a, &s, &rhs);
        assert!(rel_diff(&x, &oracle) < 1e-8, "trial {trial}");
        let res = &a * &x - &x * &s + &rhs;
        let scale = a.norm() * x.norm() + x.norm() * s.norm() + rhs.norm();
        assert!(res.norm() <= 1e-10 * scale, "trial {trial}");
    }
}

#[test]
fn lyapunov_solutions_symmetric_psd() {
    let mut r = rng(21);
    for _ in 0..20 {
        let n = r.random_range(1..=8);
        let a = random_stable(&mut r, n, 0.05);
        let b = random_matrix(&mut r, n, 2);
        let w = solve_lyapunov_ctrl(&a, &(&b * b.transpose())).unwrap();
        assert!((&w - w.transpose()).norm() <= 1e-12 * w.norm());
        let min_eig = SymmetricEigen::new(w.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-10 * w.norm());
    }
}

#[test]
fn complex_spectra_handled() {
    let a = mat(3, 3, &[-0.1, 5.0, 0.0, -5.0, -0.1, 0.0, 0.0, 0.0, -3.0]);
    let s = mat(2, 2, &[0.2, 3.0, -3.0, 0.2]);
    let rhs = mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let x = solve_sylvester(&a, &s, &rhs).unwrap();
    assert!(rel_diff(&x, &kron_sylvester(&a, &s, &rhs)) < 1e-10);
}

#[test]
fn spectrum_reports_abscissa() {
    let mut r = rng(3);
    for _ in 0..10 {
        let a = random_matrix(&mut r, 5, 5);
        let rep = spectrum(&a).unwrap();
        assert_eq!(rep.eigenvalues.len(), 5);
        let max_re = rep.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(rep.spectral_abscissa, max_re);
        assert_eq!(rep.is_stable, max_re < 0.0);
        let tr: f64 = rep.eigenvalues.iter().map(|z| z.re).sum();
        assert!((tr - a.trace()).abs() < 1e-10);
    }
    assert!(matches!(
        spectrum(&mat(1, 1, &[f64::INFINITY])),
        Err(Error::NonFinite(_))
    ));
}

fn random_targets(r: &mut rand_chacha::ChaCha8Rng, nu: usize) -> Vec<Complex<f64>> {
    let mut t = Vec::new();
    while t.len() < nu {
        if nu - t.len() >= 2 && r.random_bool(0.5) {
            let re = -r.random_range(0.5..3.0);
            let im = r.random_range(0.5..3.0);
            t.push(Complex::new(re, im));
            t.push(Complex::new(re, -im));
        } else {
            t.push(Complex::new(-r.random_range(0.5..3.0), 0.0));
        }
    }
    t
}

fn assert_multiset_close(eigs: &[Complex<f64>], targets: &[Complex<f64>], tol: f64) {
    let mut used = vec![false; eigs.len()];
    for t in targets {
        let (i, d) = eigs
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, z)| (i, (z - t).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert!(d <= tol, "target {t} missed by {d}");
        used[i] = true;
    }
}

#[test]
fn place_poles_random_observable_pairs() {
    let mut r = rng(99);
    for nu in 1..=6 {
        for m in 1..=2 {
            let s = random_matrix(&mut r, nu, nu);
            let l = random_matrix(&mut r, m, nu);
            let targets = random_targets(&mut r, nu);
            let g = place_poles(&s, &l, &targets).unwrap();
            let eigs = spectrum(&(&s - &g * &l)).unwrap().eigenvalues;
            assert_multiset_close(&eigs, &targets, 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sylvester_residual_property(seed in 0u64..10_000, n in 1usize..=6, nu in 1usize..=4) {
        let mut r = rng(seed);
        let a = random_stable(&mut r, n, 1e-3);
        let s = random_stable(&mut r, nu, 1e-3).map(|x| -x);
        let rhs = random_matrix(&mut r, n, nu);
        let x = solve_sylvester(&a, &s, &rhs).unwrap();
        let res = &a * &x - &x * &s + &rhs;
        let scale = a.norm() * x.norm() + x.norm() * s.norm() + rhs.norm();
        prop_assert!(res.norm() <= 1e-10 * scale);
    }

    #[test]
    fn placement_roundtrip_property(seed in 0u64..10_000, nu in 1usize..=4) {
        let mut r = rng(seed);
        let s = random_matrix(&mut r, nu, nu);
        let l = random_matrix(&mut r, 1, nu);
        let targets = random_targets(&mut r, nu);
        let g = place_poles(&s, &l, &targets).unwrap();
        let eigs = spectrum(&(&s - &g * &l)).unwrap().eigenvalues;
        assert_multiset_close(&eigs, &targets, 1e-6);
    }
}
