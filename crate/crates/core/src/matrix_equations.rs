//! Dense Sylvester and Lyapunov solvers, spectra and pole placement.
//!
//! Sylvester and Lyapunov equations are solved with the Bartels–Stewart
//! method: both coefficient matrices are reduced to real Schur form and the
//! transformed equation is solved by back-substitution over the 1×1 and 2×2
//! diagonal blocks.

use nalgebra::{Complex, ComplexField, DMatrix, DVector, Schur, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{eps, lit, to_f64, Real};

/// Eigenvalues of a square matrix together with its stability verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport<T: Real> {
    /// Sorted by decreasing real part, then decreasing imaginary part.
    pub eigenvalues: Vec<Complex<T>>,
    pub spectral_abscissa: T,
    pub is_stable: bool,
}

/// Real Schur factorization `A = Q T Qᵀ` with the block layout of `T`.
#[derive(Debug, Clone)]
pub(crate) struct SchurForm<T: Real> {
    q: DMatrix<T>,
    t: DMatrix<T>,
    /// `(start, size)` of every diagonal block, size 1 or 2.
    blocks: Vec<(usize, usize)>,
    eigenvalues: Vec<Complex<T>>,
    norm: T,
}

impl<T: Real> SchurForm<T> {
    pub(crate) fn new(a: &DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Ok(Self {
                q: DMatrix::zeros(0, 0),
                t: DMatrix::zeros(0, 0),
                blocks: Vec::new(),
                eigenvalues: Vec::new(),
                norm: T::zero(),
            });
        }
        let schur = Schur::try_new(a.clone(), eps::<T>(), 100 * n.max(10)).ok_or(Error::SchurFailed)?;
        let (q, mut t) = schur.unpack();
        let mut blocks = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            if i + 1 < n {
                let sub = t[(i + 1, i)].abs();
                let diag = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
                if sub > eps::<T>() * diag && sub != T::zero() {
                    if i + 2 < n && t[(i + 2, i + 1)] != T::zero() {
                        let sub2 = t[(i + 2, i + 1)].abs();
                        let diag2 = t[(i + 1, i + 1)].abs() + t[(i + 2, i + 2)].abs();
                        if sub2 > eps::<T>() * diag2 {
                            return Err(Error::SchurFailed);
                        }
                        t[(i + 2, i + 1)] = T::zero();
                    }
                    blocks.push((i, 2));
                    i += 2;
                    continue;
                }
                t[(i + 1, i)] = T::zero();
            }
            blocks.push((i, 1));
            i += 1;
        }
        for c in 0..n {
            for r in (c + 2)..n {
                t[(r, c)] = T::zero();
            }
        }
        let eigenvalues = block_eigenvalues(&t, &blocks);
        Ok(Self {
            q,
            t,
            blocks,
            eigenvalues,
            norm: a.norm(),
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub(crate) fn eigenvalues(&self) -> &[Complex<T>] {
        &self.eigenvalues
    }

    /// Schur form of `−A`.
    pub(crate) fn negated(&self) -> Self {
        Self {
            q: self.q.clone(),
            t: -&self.t,
            blocks: self.blocks.clone(),
            eigenvalues: self.eigenvalues.iter().map(|z| -z).collect(),
            norm: self.norm,
        }
    }

    pub(crate) fn abscissa(&self) -> T {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(lit::<T>(f64::NEG_INFINITY), |a, b| a.max(b))
    }
}

fn block_eigenvalues<T: Real>(t: &DMatrix<T>, blocks: &[(usize, usize)]) -> Vec<Complex<T>> {
    let mut out = Vec::with_capacity(t.nrows());
    let half = lit::<T>(0.5);
    for &(i, size) in blocks {
        if size == 1 {
            out.push(Complex::new(t[(i, i)], T::zero()));
            continue;
        }
        let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
        let mid = (a + d) * half;
        let h = (a - d) * half;
        let disc = h * h + b * c;
        if disc >= T::zero() {
            let r = disc.sqrt();
            out.push(Complex::new(mid + r, T::zero()));
            out.push(Complex::new(mid - r, T::zero()));
        } else {
            let r = (-disc).sqrt();
            out.push(Complex::new(mid, r));
            out.push(Complex::new(mid, -r));
        }
    }
    out
}

pub(crate) fn check_finite<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_square<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}×{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Smallest distance between the spectra of two Schur forms.
pub(crate) fn spectral_gap<T: Real>(a: &SchurForm<T>, s: &SchurForm<T>) -> T {
    let mut gap = lit::<T>(f64::INFINITY);
    for x in a.eigenvalues() {
        for y in s.eigenvalues() {
            gap = gap.min((x - y).modulus());
        }
    }
    gap
}

/// Solves `T1 X − X T2 = R` for blocks of order at most 2.
fn solve_small<T: Real>(t1: &DMatrix<T>, t2: &DMatrix<T>, r: &DMatrix<T>) -> Option<DMatrix<T>> {
    let (p, q) = (t1.nrows(), t2.nrows());
    if p == 1 && q == 1 {
        let d = t1[(0, 0)] - t2[(0, 0)];
        if d == T::zero() {
            return None;
        }
        return Some(DMatrix::from_element(1, 1, r[(0, 0)] / d));
    }
    let dim = p * q;
    let mut k = DMatrix::<T>::zeros(dim, dim);
    for j in 0..q {
        for i in 0..p {
            let row = i + p * j;
            for kk in 0..p {
                k[(row, kk + p * j)] += t1[(i, kk)];
            }
            for l in 0..q {
                k[(row, i + p * l)] -= t2[(l, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(dim, r.iter().copied());
    let x = k.lu().solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(DMatrix::from_column_slice(p, q, x.as_slice()))
}

/// Bartels–Stewart core: solves `A X − X S = −RHS` from precomputed Schur forms.
pub(crate) fn sylvester_from_schur<T: Real>(
    sa: &SchurForm<T>,
    ss: &SchurForm<T>,
    rhs: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let n = sa.dim();
    let nu = ss.dim();
    if rhs.nrows() != n || rhs.ncols() != nu {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side is {}×{}, expected {n}×{nu}",
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    if n == 0 || nu == 0 {
        return Ok(DMatrix::zeros(n, nu));
    }
    let c = -(sa.q.transpose() * rhs * &ss.q);
    let ta = &sa.t;
    let ts = &ss.t;
    let mut y = DMatrix::<T>::zeros(n, nu);
    for &(j0, qj) in &ss.blocks {
        let mut rj = c.columns(j0, qj).clone_owned();
        if j0 > 0 {
            rj += y.columns(0, j0) * ts.view((0, j0), (j0, qj));
        }
        let t2 = ts.view((j0, j0), (qj, qj)).clone_owned();
        for &(i0, pi) in sa.blocks.iter().rev() {
            let mut r = rj.rows(i0, pi).clone_owned();
            let below = i0 + pi;
            if below < n {
                r -= ta.view((i0, below), (pi, n - below)) * y.view((below, j0), (n - below, qj));
            }
            let t1 = ta.view((i0, i0), (pi, pi)).clone_owned();
            let x = solve_small(&t1, &t2, &r).ok_or(Error::SpectraOverlap { gap: 0.0, tol: 0.0 })?;
            y.view_mut((i0, j0), (pi, qj)).copy_from(&x);
        }
    }
    Ok(&sa.q * y * ss.q.transpose())
}

/// Validates spectral separation, then solves from Schur forms.
pub(crate) fn sylvester_checked<T: Real>(sa: &SchurForm<T>, ss: &SchurForm<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    if sa.dim() > 0 && ss.dim() > 0 {
        let gap = spectral_gap(sa, ss);
        let tol = lit::<T>(1e-8) * sa.norm.max(ss.norm);
        if gap <= tol {
            return Err(Error::SpectraOverlap {
                gap: to_f64(gap),
                tol: to_f64(tol),
            });
        }
    }
    sylvester_from_schur(sa, ss, rhs)
}

/// Solves `AΠ − ΠS = −RHS`, i.e. `AΠ + RHS = ΠS`.
///
/// With `RHS = BL` this is the moment Sylvester equation `AΠ + BL = ΠS`.
///
/// # Errors
/// `SpectraOverlap` when `σ(A)` and `σ(S)` are closer than
/// `1e-8·max(‖A‖_F, ‖S‖_F)`, `NonFinite` on NaN/Inf input and
/// `DimensionMismatch` on incompatible shapes.
pub fn solve_sylvester<T: Real>(a: &DMatrix<T>, s: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_square(a, "A")?;
    check_square(s, "S")?;
    check_finite(a, "A")?;
    check_finite(s, "S")?;
    check_finite(rhs, "RHS")?;
    let sa = SchurForm::new(a)?;
    let ss = SchurForm::new(s)?;
    sylvester_checked(&sa, &ss, rhs)
}

fn check_symmetric<T: Real>(q: &DMatrix<T>) -> Result<()> {
    let asym = (q - q.transpose()).norm();
    let tol = eps::<T>().sqrt() * lit::<T>(1e-2) * q.norm().max(T::one());
    if asym > tol {
        return Err(Error::NonSymmetricInput(to_f64(asym)));
    }
    Ok(())
}

pub(crate) fn symmetrize<T: Real>(x: &DMatrix<T>) -> DMatrix<T> {
    (x + x.transpose()) * lit::<T>(0.5)
}

fn lyapunov_prepare<T: Real>(a: &DMatrix<T>, q: &DMatrix<T>) -> Result<()> {
    check_square(a, "A")?;
    check_square(q, "Q")?;
    if a.nrows() != q.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "A is {0}×{0} but Q is {1}×{1}",
            a.nrows(),
            q.nrows()
        )));
    }
    check_finite(a, "A")?;
    check_finite(q, "Q")?;
    check_symmetric(q)
}

fn require_stable<T: Real>(sa: &SchurForm<T>, which: &'static str) -> Result<()> {
    let abscissa = sa.abscissa();
    if sa.dim() > 0 && abscissa >= T::zero() {
        return Err(Error::UnstableMatrix {
            which,
            abscissa: to_f64(abscissa),
        });
    }
    Ok(())
}

/// Solves the controllability Lyapunov equation `AW + WAᵀ + Q = 0`.
///
/// # Errors
/// `UnstableMatrix` when `A` is not Hurwitz, `NonSymmetricInput` when `Q`
/// is not symmetric.
pub fn solve_lyapunov_ctrl<T: Real>(a: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    lyapunov_prepare(a, q)?;
    let sa = SchurForm::new(a)?;
    require_stable(&sa, "A")?;
    let sat = SchurForm::new(&a.transpose())?.negated();
    Ok(symmetrize(&sylvester_from_schur(&sa, &sat, q)?))
}

/// Solves the observability Lyapunov equation `AᵀM + MA + Q = 0`.
///
/// # Errors
/// As [`solve_lyapunov_ctrl`].
pub fn solve_lyapunov_obs<T: Real>(a: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    lyapunov_prepare(a, q)?;
    let sat = SchurForm::new(&a.transpose())?;
    require_stable(&sat, "A")?;
    let sa = SchurForm::new(a)?.negated();
    Ok(symmetrize(&sylvester_from_schur(&sat, &sa, q)?))
}

/// Cached Schur forms of a fixed stable matrix, used by the optimizer loops.
#[derive(Debug, Clone)]
pub(crate) struct StableFactor<T: Real> {
    pub(crate) a: SchurForm<T>,
    pub(crate) at: SchurForm<T>,
}

impl<T: Real> StableFactor<T> {
    pub(crate) fn new(a: &DMatrix<T>, which: &'static str) -> Result<Self> {
        let sa = SchurForm::new(a)?;
        require_stable(&sa, which)?;
        let at = SchurForm::new(&a.transpose())?;
        Ok(Self { a: sa, at })
    }

    /// Unsymmetrized solution of `AW + WAᵀ + Q = 0`.
    pub(crate) fn ctrl_raw(&self, q: &DMatrix<T>) -> Result<DMatrix<T>> {
        sylvester_from_schur(&self.a, &self.at.negated(), q)
    }

    /// Unsymmetrized solution of `AᵀM + MA + Q = 0`.
    pub(crate) fn obs_raw(&self, q: &DMatrix<T>) -> Result<DMatrix<T>> {
        sylvester_from_schur(&self.at, &self.a.negated(), q)
    }
}

/// Spectrum with the strict stability margin 0.
pub fn spectrum<T: Real>(a: &DMatrix<T>) -> Result<SpectrumReport<T>> {
    spectrum_with_margin(a, T::zero())
}

/// Spectrum of `a`; stable means every real part is below `−margin`.
///
/// # Errors
/// `NonFinite` on NaN/Inf entries, `DimensionMismatch` for non-square input.
pub fn spectrum_with_margin<T: Real>(a: &DMatrix<T>, margin: T) -> Result<SpectrumReport<T>> {
    check_square(a, "A")?;
    check_finite(a, "A")?;
    let sf = SchurForm::new(a)?;
    let mut eigenvalues = sf.eigenvalues().to_vec();
    sort_eigenvalues(&mut eigenvalues);
    let spectral_abscissa = sf.abscissa();
    Ok(SpectrumReport {
        eigenvalues,
        spectral_abscissa,
        is_stable: a.nrows() == 0 || spectral_abscissa < -margin,
    })
}

pub(crate) fn sort_eigenvalues<T: Real>(z: &mut [Complex<T>]) {
    z.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Numerical rank from singular values with threshold `max(r, c)·ε·σ_max`.
pub fn numerical_rank<T: Real>(m: &DMatrix<T>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let smax = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if smax == T::zero() {
        return 0;
    }
    let thr = lit::<T>(m.nrows().max(m.ncols()) as f64) * eps::<T>() * smax;
    sv.iter().filter(|&&s| s > thr).count()
}

/// Rank of `[L; LS; …; LS^{ν−1}]`.
pub fn observability_rank<T: Real>(l: &DMatrix<T>, s: &DMatrix<T>) -> Result<usize> {
    check_square(s, "S")?;
    let nu = s.nrows();
    if l.ncols() != nu {
        return Err(Error::DimensionMismatch(format!(
            "L has {} columns, S has order {nu}",
            l.ncols()
        )));
    }
    let m = l.nrows();
    let mut stack = DMatrix::<T>::zeros(m * nu, nu);
    let mut block = l.clone();
    for k in 0..nu {
        stack.view_mut((k * m, 0), (m, nu)).copy_from(&block);
        block = &block * s;
    }
    Ok(numerical_rank(&stack))
}

/// Rank of `[R, QR, …, Q^{ν−1}R]`.
pub fn controllability_rank<T: Real>(q: &DMatrix<T>, r: &DMatrix<T>) -> Result<usize> {
    observability_rank(&r.transpose(), &q.transpose())
}

/// Monic real polynomial with the given roots, lowest degree first.
fn char_poly<T: Real>(roots: &[Complex<T>]) -> Vec<T> {
    let mut c = vec![Complex::new(T::one(), T::zero())];
    for r in roots {
        let mut next = vec![Complex::new(T::zero(), T::zero()); c.len() + 1];
        for (k, ck) in c.iter().enumerate() {
            next[k + 1] += ck;
            next[k] -= ck * r;
        }
        c = next;
    }
    c.into_iter().map(|z| z.re).collect()
}

fn poly_of_matrix<T: Real>(coeffs: &[T], a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let mut acc = DMatrix::<T>::zeros(n, n);
    for &c in coeffs.iter().rev() {
        acc = &acc * a;
        for i in 0..n {
            acc[(i, i)] += c;
        }
    }
    acc
}

fn controllability_matrix<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> DMatrix<T> {
    let n = a.nrows();
    let mut ctrb = DMatrix::<T>::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    ctrb
}

/// Single-input Ackermann gain `k` with `σ(a − b kᵀ)` the roots of `coeffs`.
fn ackermann<T: Real>(a: &DMatrix<T>, b: &DVector<T>, coeffs: &[T]) -> Option<DVector<T>> {
    let n = a.nrows();
    let ctrb = controllability_matrix(a, b);
    let mut en = DVector::<T>::zeros(n);
    en[n - 1] = T::one();
    let x = ctrb.transpose().lu().solve(&en)?;
    let k = poly_of_matrix(coeffs, a).transpose() * x;
    k.iter().all(|v| v.is_finite()).then_some(k)
}

fn target_multiplicity<T: Real>(targets: &[Complex<T>], t: &Complex<T>) -> usize {
    let tol = lit::<T>(1e-6) * (T::one() + t.modulus());
    targets.iter().filter(|u| (*u - t).modulus() <= tol).count()
}

/// Greedy nearest matching of `eigs` against `targets` with a
/// multiplicity-aware tolerance.
fn spectra_match<T: Real>(eigs: &[Complex<T>], targets: &[Complex<T>]) -> bool {
    let mut used = vec![false; eigs.len()];
    for t in targets {
        let mult = target_multiplicity(targets, t) as f64;
        let base = (lit::<T>(100.0) * eps::<T>()).powf(lit::<T>(1.0 / mult));
        let tol = base.max(lit::<T>(1e-8)) * (T::one() + t.modulus());
        let best = eigs
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, z)| (i, (z - t).modulus()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        match best {
            Some((i, d)) if d <= tol => used[i] = true,
            _ => return false,
        }
    }
    true
}

/// Computes a real `G` with `σ(S − GL)` equal to `targets`.
///
/// The problem is solved on the dual pair `(Sᵀ, Lᵀ)`. For a single output
/// row Ackermann's formula is used directly; with several rows the tangent
/// matrix is first collapsed to a single direction `q` that keeps the pair
/// controllable (after a cyclic pre-feedback when needed).
///
/// # Errors
/// `NotObservable` when `(L, S)` is unobservable, `PlacementFailed` when the
/// targets are not conjugate-closed, hit `σ(S)`, or are not reproduced.
pub fn place_poles<T: Real>(s: &DMatrix<T>, l: &DMatrix<T>, targets: &[Complex<T>]) -> Result<DMatrix<T>> {
    check_square(s, "S")?;
    check_finite(s, "S")?;
    check_finite(l, "L")?;
    let nu = s.nrows();
    let m = l.nrows();
    if l.ncols() != nu || targets.len() != nu {
        return Err(Error::DimensionMismatch(format!(
            "S is {nu}×{nu}, L is {}×{}, {} targets",
            l.nrows(),
            l.ncols(),
            targets.len()
        )));
    }
    if targets.iter().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    for t in targets {
        let tol = lit::<T>(1e-8) * (T::one() + t.modulus());
        if t.im.abs() > tol {
            let conj = t.conj();
            let count = targets.iter().filter(|u| (*u - conj).modulus() <= tol).count();
            let own = targets.iter().filter(|u| (*u - t).modulus() <= tol).count();
            if count != own {
                return Err(Error::PlacementFailed(
                    "complex targets must appear in conjugate pairs".into(),
                ));
            }
        }
    }
    let rank = observability_rank(l, s)?;
    if rank < nu {
        return Err(Error::NotObservable { rank, order: nu });
    }
    let s_eigs = spectrum(s)?.eigenvalues;
    for t in targets {
        let tol = lit::<T>(1e-8) * (T::one() + t.modulus());
        if s_eigs.iter().any(|z| (z - t).modulus() <= tol) {
            return Err(Error::PlacementFailed(
                "target coincides with an eigenvalue of S".into(),
            ));
        }
    }
    if nu == 0 {
        return Ok(DMatrix::zeros(0, m));
    }

    let a_hat = s.transpose();
    let b_hat = l.transpose();
    let coeffs = char_poly(targets);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut directions: Vec<DVector<T>> = vec![DVector::from_element(m, T::one())];
    for i in 0..m {
        let mut e = DVector::zeros(m);
        e[i] = T::one();
        directions.push(e);
    }
    for _ in 0..8 {
        directions.push(DVector::from_fn(m, |_, _| lit(rng.random_range(-1.0..1.0))));
    }
    let mut prefeedbacks = vec![DMatrix::<T>::zeros(m, nu)];
    for _ in 0..8 {
        prefeedbacks.push(DMatrix::from_fn(m, nu, |_, _| lit(rng.random_range(-1.0..1.0))));
    }

    for k0 in &prefeedbacks {
        let a_cl = &a_hat - &b_hat * k0;
        for q in &directions {
            let b = &b_hat * q;
            if numerical_rank(&controllability_matrix(&a_cl, &b)) < nu {
                continue;
            }
            let Some(k) = ackermann(&a_cl, &b, &coeffs) else {
                continue;
            };
            let gain = k0 + q * k.transpose();
            let g = gain.transpose();
            let eigs = spectrum(&(s - &g * l))?.eigenvalues;
            if spectra_match(&eigs, targets) {
                return Ok(g);
            }
        }
    }
    Err(Error::PlacementFailed(
        "closed-loop spectrum does not match the targets".into(),
    ))
}
