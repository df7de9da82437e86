#![allow(dead_code)]

use h2mm_core::lti::LtiSystem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

/// Cart with a double-pendulum controller, one input and one output.
pub fn cart_pendulum() -> LtiSystem<f64> {
    let a = mat(
        6,
        6,
        &[
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
            -1.0, -1.0, 19.6, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
            1.0, 1.0, -39.2, -2.0, 9.8, 1.0, //
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, 19.6, 1.0, -19.6, -2.0,
        ],
    );
    let b = mat(6, 1, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
    let c = mat(1, 6, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    LtiSystem::new(a, b, c).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random matrix shifted so that its spectral abscissa is at most `-margin`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    let abscissa = h2mm_core::matrix_equations::spectrum(&a).unwrap().spectral_abscissa;
    let shift = abscissa + margin + rng.random_range(0.0..0.5);
    a - DMatrix::identity(n, n) * shift
}

pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> LtiSystem<f64> {
    let a = random_stable(rng, n, 0.1);
    let b = random_matrix(rng, n, m);
    let c = random_matrix(rng, p, n);
    LtiSystem::new(a, b, c).unwrap()
}

/// Solves `AX − XS = −RHS` through the Kronecker form
/// `(I ⊗ A − Sᵀ ⊗ I) vec(X) = −vec(RHS)`.
pub fn kron_sylvester(a: &DMatrix<f64>, s: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, nu) = (a.nrows(), s.nrows());
    let dim = n * nu;
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..nu {
        for i in 0..n {
            for r in 0..n {
                k[(i + n * j, r + n * j)] += a[(i, r)];
            }
            for l in 0..nu {
                k[(i + n * j, i + n * l)] -= s[(l, j)];
            }
        }
    }
    let b = DVector::from_iterator(dim, rhs.iter().map(|x| -x));
    let x = k.lu().solve(&b).expect("nonsingular Kronecker system");
    DMatrix::from_column_slice(n, nu, x.as_slice())
}

/// Kronecker oracle for `AW + WAᵀ + Q = 0`.
pub fn kron_lyapunov_ctrl(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    kron_sylvester(a, &(-a.transpose()), q)
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

/// Central finite-difference derivative of `K` at a real point.
pub fn fd_derivative(sys: &LtiSystem<f64>, s: f64, h: f64) -> DMatrix<f64> {
    use h2mm_core::lti::eval_transfer;
    use nalgebra::Complex;
    let kp = eval_transfer(sys, Complex::new(s + h, 0.0)).unwrap().value;
    let km = eval_transfer(sys, Complex::new(s - h, 0.0)).unwrap().value;
    (kp - km).map(|z| z.re / (2.0 * h))
}
