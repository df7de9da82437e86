//! State-space systems, transfer evaluation, Gramians and H2 norms.

use nalgebra::{Complex, ComplexField, DMatrix};

use crate::error::{Error, Result};
use crate::matrix_equations::{check_finite, spectrum, sylvester_from_schur, symmetrize, SchurForm, StableFactor};
use crate::moments::ReducedModel;
use crate::scalar::{eps, lit, to_f64, Real};

/// Continuous-time system `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
}

impl<T: Real> LtiSystem<T> {
    /// # Errors
    /// `DimensionMismatch` for incompatible shapes, `NonFinite` for NaN/Inf.
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}×{}, B is {}×{}, C is {}×{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        check_finite(&a, "A")?;
        check_finite(&b, "B")?;
        check_finite(&c, "C")?;
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// The dual system `(Aᵀ, Cᵀ, Bᵀ)`.
    pub fn dual(&self) -> Self {
        Self {
            a: self.a.transpose(),
            b: self.c.transpose(),
            c: self.b.transpose(),
        }
    }

    pub fn is_stable(&self) -> Result<bool> {
        Ok(spectrum(&self.a)?.is_stable)
    }
}

/// `K(s)` at one complex frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSample<T: Real> {
    pub s: Complex<T>,
    pub value: DMatrix<Complex<T>>,
}

pub(crate) fn complexify<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|x| Complex::new(x, T::zero()))
}

fn one_norm<T: Real>(m: &DMatrix<Complex<T>>) -> T {
    m.column_iter()
        .map(|col| col.iter().fold(T::zero(), |acc, z| acc + z.modulus()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// `C (sI − A)⁻¹ B` by LU solve, without conditioning checks.
pub(crate) fn transfer_value<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    s: Complex<T>,
) -> Option<DMatrix<Complex<T>>> {
    let n = a.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(c.nrows(), b.ncols()));
    }
    let mut m = -complexify(a);
    for i in 0..n {
        m[(i, i)] += s;
    }
    let x = m.lu().solve(&complexify(b))?;
    let k = complexify(c) * x;
    k.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(k)
}

/// Evaluates `K(s) = C(sI − A)⁻¹B` through a linear solve.
///
/// # Errors
/// `ResolventSingular` when `sI − A` is singular or its 1-norm condition
/// number exceeds 1e14.
pub fn eval_transfer<T: Real>(sys: &LtiSystem<T>, s: Complex<T>) -> Result<TransferSample<T>> {
    let singular = || Error::ResolventSingular {
        re: to_f64(s.re),
        im: to_f64(s.im),
    };
    let n = sys.n();
    if n > 0 {
        let mut m = -complexify(&sys.a);
        for i in 0..n {
            m[(i, i)] += s;
        }
        let inv = m.clone().lu().try_inverse().ok_or_else(singular)?;
        let cond = one_norm(&m) * one_norm(&inv);
        if !cond.is_finite() || cond > lit::<T>(1e14) {
            return Err(singular());
        }
    }
    let value = transfer_value(&sys.a, &sys.b, &sys.c, s).ok_or_else(singular)?;
    Ok(TransferSample { s, value })
}

/// Controllability and observability Gramians `(W, M)`.
///
/// # Errors
/// `UnstableMatrix` when `A` is not Hurwitz.
pub fn gramians<T: Real>(sys: &LtiSystem<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let factor = StableFactor::new(&sys.a, "A")?;
    let w = factor.ctrl_raw(&(&sys.b * sys.b.transpose()))?;
    let m = factor.obs_raw(&(sys.c.transpose() * &sys.c))?;
    Ok((symmetrize(&w), symmetrize(&m)))
}

/// Scaling convention for reported H2 norms.
///
/// `Normalized` is `sqrt((1/2π)∫‖K(jω)‖_F² dω) = sqrt(tr(CWCᵀ))`.
/// `Unnormalized` drops the `1/2π` factor, i.e. it is `√(2π)` times larger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum H2Convention {
    #[default]
    Normalized,
    Unnormalized,
}

impl H2Convention {
    pub fn scale<T: Real>(self, normalized: T) -> T {
        match self {
            Self::Normalized => normalized,
            Self::Unnormalized => normalized * T::two_pi().sqrt(),
        }
    }
}

fn trace<T: Real>(m: &DMatrix<T>) -> T {
    m.trace()
}

/// Cross-checks the two Gramian traces and returns the squared norm.
fn reconcile<T: Real>(ctrl: T, obs: T, magnitude: T) -> Result<T> {
    let rel = lit::<T>(1e-8).max(lit::<T>(1e3) * eps::<T>());
    let slack = rel * ctrl.abs().max(obs.abs()) + lit::<T>(1e4) * eps::<T>() * magnitude;
    if (ctrl - obs).abs() > slack {
        return Err(Error::GramianMismatch {
            ctrl: to_f64(ctrl),
            obs: to_f64(obs),
        });
    }
    Ok(ctrl.max(T::zero()))
}

/// H2 norm `sqrt(tr(CWCᵀ))`, verified against `tr(BᵀMB)`.
///
/// # Errors
/// `UnstableMatrix`, or `GramianMismatch` if the traces disagree beyond
/// `1e-8` relative.
pub fn h2_norm<T: Real>(sys: &LtiSystem<T>) -> Result<T> {
    Ok(h2_norm_squared(sys)?.sqrt())
}

/// [`h2_norm`] in the requested convention.
pub fn h2_norm_with<T: Real>(sys: &LtiSystem<T>, convention: H2Convention) -> Result<T> {
    Ok(convention.scale(h2_norm(sys)?))
}

pub(crate) fn h2_norm_squared<T: Real>(sys: &LtiSystem<T>) -> Result<T> {
    let (w, m) = gramians(sys)?;
    let ctrl = trace(&(&sys.c * &w * sys.c.transpose()));
    let obs = trace(&(sys.b.transpose() * &m * &sys.b));
    reconcile(ctrl, obs, ctrl.abs() + obs.abs())
}

/// Default upper frequency for the quadrature oracle: `1e4·(1 + ρ(A))`.
pub fn default_omega_max<T: Real>(sys: &LtiSystem<T>) -> Result<T> {
    let rho = spectrum(&sys.a)?
        .eigenvalues
        .iter()
        .map(|z| z.modulus())
        .fold(T::zero(), |a, b| a.max(b));
    Ok(lit::<T>(1e4) * (T::one() + rho))
}

/// Independent H2 estimate by frequency-domain quadrature.
///
/// Integrates `(1/π)∫₀^{ω_max} ‖K(jω)‖_F² dω` with adaptive Simpson panels
/// on a log-spaced grid of `samples` breakpoints (refined at the imaginary
/// parts and moduli of the poles), then adds the tail `‖CB‖_F²/(π ω_max)`
/// from the `CB/(jω)` asymptote. Uses the normalized convention.
///
/// # Errors
/// `UnstableMatrix` when `A` is not Hurwitz, `InvalidArgument` when
/// `samples < 100` or `ω_max ≤ 0`.
pub fn h2_norm_quadrature<T: Real>(sys: &LtiSystem<T>, omega_max: T, samples: usize) -> Result<T> {
    if samples < 100 {
        return Err(Error::InvalidArgument(format!("samples = {samples} < 100")));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must be rejected too
    if !(omega_max > T::zero()) {
        return Err(Error::InvalidArgument("omega_max must be positive".into()));
    }
    let spec = spectrum(&sys.a)?;
    if !spec.is_stable {
        return Err(Error::UnstableMatrix {
            which: "A",
            abscissa: to_f64(spec.spectral_abscissa),
        });
    }
    if sys.n() == 0 || sys.b.norm() == T::zero() || sys.c.norm() == T::zero() {
        return Ok(T::zero());
    }
    let integrand = |w: T| -> Result<T> {
        let k = transfer_value(&sys.a, &sys.b, &sys.c, Complex::new(T::zero(), w))
            .ok_or(Error::ResolventSingular { re: 0.0, im: to_f64(w) })?;
        Ok(k.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()))
    };

    let min_mod = spec
        .eigenvalues
        .iter()
        .map(|z| z.modulus())
        .fold(lit::<T>(f64::INFINITY), |a, b| a.min(b));
    let lo = (min_mod * lit::<T>(1e-4)).min(omega_max * lit::<T>(1e-8));
    let ratio = (omega_max / lo).ln();
    let mut grid = vec![T::zero()];
    let steps = samples - 1;
    for k in 0..=steps {
        let frac = lit::<T>(k as f64 / steps as f64);
        grid.push(lo * (ratio * frac).exp());
    }
    for z in &spec.eigenvalues {
        for w in [z.im.abs(), z.modulus()] {
            if w > lo && w < omega_max {
                grid.push(w);
            }
        }
    }
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    grid.dedup();
    *grid.last_mut().expect("non-empty grid") = omega_max;

    let mut total = T::zero();
    for pair in grid.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let fa = integrand(a)?;
        let fb = integrand(b)?;
        let mid = (a + b) * lit::<T>(0.5);
        let fm = integrand(mid)?;
        let whole = (b - a) / lit::<T>(6.0) * (fa + lit::<T>(4.0) * fm + fb);
        total += adaptive_simpson(&integrand, a, b, fa, fm, fb, whole, 40)?;
    }
    let cb = (&sys.c * &sys.b).norm_squared();
    let tail = cb / omega_max;
    Ok(((total + tail) / T::pi()).sqrt())
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<T: Real, F: Fn(T) -> Result<T>>(
    f: &F,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    depth: u32,
) -> Result<T> {
    let half = lit::<T>(0.5);
    let m = (a + b) * half;
    let lm = (a + m) * half;
    let rm = (m + b) * half;
    let flm = f(lm)?;
    let frm = f(rm)?;
    let six = lit::<T>(6.0);
    let four = lit::<T>(4.0);
    let left = (m - a) / six * (fa + four * flm + fm);
    let right = (b - m) / six * (fm + four * frm + fb);
    let diff = left + right - whole;
    let tol = lit::<T>(1e-10).max(lit::<T>(1e2) * eps::<T>()) * (left + right).abs();
    if depth == 0 || diff.abs() <= lit::<T>(15.0) * tol {
        return Ok(left + right + diff / lit::<T>(15.0));
    }
    Ok(adaptive_simpson(f, a, m, fa, flm, fm, left, depth - 1)?
        + adaptive_simpson(f, m, b, fm, frm, fb, right, depth - 1)?)
}

/// State-space realization of `K − K̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRealization<T: Real> {
    /// `blkdiag(A, F)`.
    pub ae: DMatrix<T>,
    /// `[B; G]`.
    pub be: DMatrix<T>,
    /// `[C, −H]`.
    pub ce: DMatrix<T>,
    /// `(n, ν)`.
    pub split: (usize, usize),
    /// `Π` when the model carries right provenance, so that `Ce = C[I, −Π]`.
    pub pi: Option<DMatrix<T>>,
}

/// Builds `Ae = blkdiag(A, F)`, `Be = [B; G]`, `Ce = [C, −H]`.
///
/// # Errors
/// `DimensionMismatch` if the model's input/output sizes differ from `sys`.
pub fn build_error_system<T: Real>(sys: &LtiSystem<T>, model: &ReducedModel<T>) -> Result<ErrorRealization<T>> {
    let (n, nu) = (sys.n(), model.order());
    if model.g.ncols() != sys.m() || model.h.nrows() != sys.p() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}-input/{}-output, system is {}-input/{}-output",
            model.g.ncols(),
            model.h.nrows(),
            sys.m(),
            sys.p()
        )));
    }
    let mut ae = DMatrix::zeros(n + nu, n + nu);
    ae.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    ae.view_mut((n, n), (nu, nu)).copy_from(&model.f);
    let mut be = DMatrix::zeros(n + nu, sys.m());
    be.view_mut((0, 0), (n, sys.m())).copy_from(&sys.b);
    be.view_mut((n, 0), (nu, sys.m())).copy_from(&model.g);
    let mut ce = DMatrix::zeros(sys.p(), n + nu);
    ce.view_mut((0, 0), (sys.p(), n)).copy_from(&sys.c);
    ce.view_mut((0, n), (sys.p(), nu)).copy_from(&(-&model.h));
    Ok(ErrorRealization {
        ae,
        be,
        ce,
        split: (n, nu),
        pi: model.pi().cloned(),
    })
}

/// Raw (unsymmetrized) block Gramians of an error system.
///
/// Keeping the blocks raw makes the H2 error of a model that duplicates the
/// system cancel exactly, because the three blocks then come out of the
/// same floating-point computation.
#[derive(Debug, Clone)]
pub(crate) struct BlockGramians<T: Real> {
    pub(crate) w11: DMatrix<T>,
    pub(crate) w12: DMatrix<T>,
    pub(crate) w22: DMatrix<T>,
    pub(crate) m11: DMatrix<T>,
    pub(crate) m12: DMatrix<T>,
    pub(crate) m22: DMatrix<T>,
}

/// Full-order data reused across many error-system evaluations.
#[derive(Debug, Clone)]
pub(crate) struct FullOrderCache<T: Real> {
    pub(crate) factor: StableFactor<T>,
    pub(crate) w11: DMatrix<T>,
    pub(crate) m11: DMatrix<T>,
}

impl<T: Real> FullOrderCache<T> {
    pub(crate) fn new(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>) -> Result<Self> {
        let factor = StableFactor::new(a, "A")?;
        let w11 = factor.ctrl_raw(&(b * b.transpose()))?;
        let m11 = factor.obs_raw(&(c.transpose() * c))?;
        Ok(Self { factor, w11, m11 })
    }

    /// Block Gramians for the model `(F, G, H)`; fails if `F` is unstable.
    pub(crate) fn blocks(
        &self,
        b: &DMatrix<T>,
        c: &DMatrix<T>,
        f: &DMatrix<T>,
        g: &DMatrix<T>,
        h: &DMatrix<T>,
    ) -> Result<BlockGramians<T>> {
        let ff = StableFactor::new(f, "F")?;
        let w12 = sylvester_from_schur(&self.factor.a, &ff.at.negated(), &(b * g.transpose()))?;
        let w22 = ff.ctrl_raw(&(g * g.transpose()))?;
        let m12 = sylvester_from_schur(&self.factor.at, &ff.a.negated(), &(-(c.transpose() * h)))?;
        let m22 = ff.obs_raw(&(h.transpose() * h))?;
        Ok(BlockGramians {
            w11: self.w11.clone(),
            w12,
            w22,
            m11: self.m11.clone(),
            m12,
            m22,
        })
    }
}

impl<T: Real> BlockGramians<T> {
    /// `tr(Ce W Ceᵀ)` and the magnitude of its terms.
    pub(crate) fn ctrl_trace(&self, c: &DMatrix<T>, h: &DMatrix<T>) -> (T, T) {
        let t1 = trace(&(c * &self.w11 * c.transpose()));
        let t2 = trace(&(c * &self.w12 * h.transpose()));
        let t3 = trace(&(h * &self.w22 * h.transpose()));
        (t1 - t2 - t2 + t3, t1.abs() + lit::<T>(2.0) * t2.abs() + t3.abs())
    }

    /// `tr(Beᵀ M Be)` and the magnitude of its terms.
    pub(crate) fn obs_trace(&self, b: &DMatrix<T>, g: &DMatrix<T>) -> (T, T) {
        let t1 = trace(&(b.transpose() * &self.m11 * b));
        let t2 = trace(&(b.transpose() * &self.m12 * g));
        let t3 = trace(&(g.transpose() * &self.m22 * g));
        (t1 + t2 + t2 + t3, t1.abs() + lit::<T>(2.0) * t2.abs() + t3.abs())
    }
}

impl<T: Real> ErrorRealization<T> {
    fn parts(&self) -> [DMatrix<T>; 6] {
        let (n, nu) = self.split;
        let (m, p) = (self.be.ncols(), self.ce.nrows());
        [
            self.ae.view((0, 0), (n, n)).clone_owned(),
            self.be.view((0, 0), (n, m)).clone_owned(),
            self.ce.view((0, 0), (p, n)).clone_owned(),
            self.ae.view((n, n), (nu, nu)).clone_owned(),
            self.be.view((n, 0), (nu, m)).clone_owned(),
            -self.ce.view((0, n), (p, nu)).clone_owned(),
        ]
    }

    pub(crate) fn block_gramians(&self) -> Result<BlockGramians<T>> {
        let [a, b, c, f, g, h] = self.parts();
        FullOrderCache::new(&a, &b, &c)?.blocks(&b, &c, &f, &g, &h)
    }

    /// Squared H2 norm of the error, cross-checked between both Gramians.
    pub fn h2_norm_squared(&self) -> Result<T> {
        let [_, b, c, _, g, h] = self.parts();
        let blocks = self.block_gramians()?;
        let (ctrl, mc) = blocks.ctrl_trace(&c, &h);
        let (obs, mo) = blocks.obs_trace(&b, &g);
        reconcile(ctrl, obs, mc + mo)
    }

    /// Normalized H2 norm of `K − K̂`.
    pub fn h2_norm(&self) -> Result<T> {
        Ok(self.h2_norm_squared()?.sqrt())
    }

    pub fn h2_norm_with(&self, convention: H2Convention) -> Result<T> {
        Ok(convention.scale(self.h2_norm()?))
    }

    /// The realization as a plain system `(Ae, Be, Ce)`.
    pub fn to_system(&self) -> LtiSystem<T> {
        LtiSystem {
            a: self.ae.clone(),
            b: self.be.clone(),
            c: self.ce.clone(),
        }
    }
}

/// Block-partitioned Gramians `𝒲`, `ℳ` of an error system.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGramians<T: Real> {
    pub w: DMatrix<T>,
    pub m: DMatrix<T>,
    pub split: (usize, usize),
}

impl<T: Real> ErrorGramians<T> {
    fn block(x: &DMatrix<T>, split: (usize, usize), r: usize, c: usize) -> DMatrix<T> {
        let (n, nu) = split;
        let (r0, rn) = if r == 0 { (0, n) } else { (n, nu) };
        let (c0, cn) = if c == 0 { (0, n) } else { (n, nu) };
        x.view((r0, c0), (rn, cn)).clone_owned()
    }

    pub fn w11(&self) -> DMatrix<T> {
        Self::block(&self.w, self.split, 0, 0)
    }
    pub fn w12(&self) -> DMatrix<T> {
        Self::block(&self.w, self.split, 0, 1)
    }
    pub fn w22(&self) -> DMatrix<T> {
        Self::block(&self.w, self.split, 1, 1)
    }
    pub fn m11(&self) -> DMatrix<T> {
        Self::block(&self.m, self.split, 0, 0)
    }
    pub fn m12(&self) -> DMatrix<T> {
        Self::block(&self.m, self.split, 0, 1)
    }
    pub fn m22(&self) -> DMatrix<T> {
        Self::block(&self.m, self.split, 1, 1)
    }
}

pub(crate) fn assemble_sym<T: Real>(b11: &DMatrix<T>, b12: &DMatrix<T>, b22: &DMatrix<T>) -> DMatrix<T> {
    let (n, nu) = (b11.nrows(), b22.nrows());
    let mut x = DMatrix::zeros(n + nu, n + nu);
    x.view_mut((0, 0), (n, n)).copy_from(&symmetrize(b11));
    x.view_mut((0, n), (n, nu)).copy_from(b12);
    x.view_mut((n, 0), (nu, n)).copy_from(&b12.transpose());
    x.view_mut((n, n), (nu, nu)).copy_from(&symmetrize(b22));
    x
}

/// Solves both error-system Lyapunov equations block by block.
///
/// # Errors
/// `UnstableMatrix` naming `A` or `F` when a diagonal block is unstable.
pub fn error_gramians<T: Real>(err: &ErrorRealization<T>) -> Result<ErrorGramians<T>> {
    let g = err.block_gramians()?;
    Ok(ErrorGramians {
        w: assemble_sym(&g.w11, &g.w12, &g.w22),
        m: assemble_sym(&g.m11, &g.m12, &g.m22),
        split: err.split,
    })
}

/// Checks that a Schur-based spectrum of `a` is separated from `points`.
pub(crate) fn min_distance_to_spectrum<T: Real>(a: &DMatrix<T>, points: &[Complex<T>]) -> Result<T> {
    let sf = SchurForm::new(a)?;
    let mut gap = lit::<T>(f64::INFINITY);
    for z in sf.eigenvalues() {
        for p in points {
            gap = gap.min((z - p).modulus());
        }
    }
    Ok(gap)
}
