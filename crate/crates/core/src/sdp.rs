//! Convex SDP relaxations of Problems 1 and 2 obtained by forcing
//! `M₁₂ = 0` and linearizing with `Z₂₂ = M₂₂G`, `Θ₂₂ = M₂₂S`.
//!
//! Problems are built as named LMI blocks over a fixed variable
//! enumeration, converted to the standard form `Σ yᵢFᵢ − F₀ ⪰ 0`
//! (minimize `cᵀy`), exported as SDPA sparse files and solved internally at
//! desk scale: a log-det barrier phase I finds a strictly feasible point and a
//! primal-dual path-following phase II drives the duality gap down.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::LtiSystem;
use crate::matrix_equations::{spectrum, symmetrize};
use crate::optimizer::{objective_f, DecisionVars, FixedStructure, Problem};
use crate::scalar::{lit, to_f64, Real};

/// Maximum number of scalar variables accepted by [`solve_small`].
pub const SIZE_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// Block must be positive semidefinite.
    Psd,
    /// Block must be negative semidefinite.
    Nsd,
}

/// Values of the relaxation unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpVariables<T: Real> {
    pub m11: DMatrix<T>,
    pub m22: DMatrix<T>,
    pub x22: DMatrix<T>,
    pub y22: DMatrix<T>,
    pub z22: DMatrix<T>,
    /// Present for Problem 1 only.
    pub theta22: Option<DMatrix<T>>,
}

/// `constant + linear(vars)` with a required sign.
#[derive(Clone)]
pub struct LmiBlock<T: Real> {
    pub name: String,
    pub sign: Sign,
    /// 1×1 elementwise constraint, exported as a diagonal block.
    pub linear: bool,
    pub constant: DMatrix<T>,
    /// Coefficient matrix of every variable that enters the block.
    pub terms: Vec<(usize, DMatrix<T>)>,
}

impl<T: Real> std::fmt::Debug for LmiBlock<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LmiBlock")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("sign", &self.sign)
            .field("terms", &self.terms.len())
            .finish()
    }
}

impl<T: Real> LmiBlock<T> {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    /// Affine value at `y` (before applying the sign).
    pub fn eval(&self, y: &DVector<T>) -> DMatrix<T> {
        let mut v = self.constant.clone();
        for (i, a) in &self.terms {
            v += a * y[*i];
        }
        v
    }
}

/// One relaxation instance.
#[derive(Debug, Clone)]
pub struct SdpProblem<T: Real> {
    pub problem: Problem,
    sys: LtiSystem<T>,
    l: DMatrix<T>,
    c_v: DMatrix<T>,
    s_fixed: Option<DMatrix<T>>,
    /// Objective coefficients, minimized.
    pub c: Vec<T>,
    pub blocks: Vec<LmiBlock<T>>,
}

/// Numeric standard form: minimize `cᵀy` s.t. `Σ yᵢFᵢ − F₀ ⪰ 0` per block.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardSdp<T: Real> {
    pub c: Vec<T>,
    pub blocks: Vec<StandardBlock<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardBlock<T: Real> {
    pub linear: bool,
    pub f0: DMatrix<T>,
    /// Nonzero coefficient matrices, sorted by variable index.
    pub fi: Vec<(usize, DMatrix<T>)>,
}

impl<T: Real> StandardBlock<T> {
    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    fn eval(&self, y: &DVector<T>) -> DMatrix<T> {
        let mut v = -&self.f0;
        for (i, a) in &self.fi {
            v += a * y[*i];
        }
        v
    }
}

struct Layout {
    n: usize,
    nu: usize,
    m: usize,
    theta: bool,
}

fn sym_len(k: usize) -> usize {
    k * (k + 1) / 2
}

impl Layout {
    fn count(&self) -> usize {
        sym_len(self.n)
            + 2 * sym_len(self.nu)
            + sym_len(self.m)
            + self.nu * self.m
            + if self.theta { self.nu * self.nu } else { 0 }
    }

    fn unpack<T: Real>(&self, y: &DVector<T>) -> SdpVariables<T> {
        let mut k = 0;
        let mut sym = |d: usize| {
            let mut s = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    s[(i, j)] = y[k];
                    s[(j, i)] = y[k];
                    k += 1;
                }
            }
            s
        };
        let m11 = sym(self.n);
        let m22 = sym(self.nu);
        let x22 = sym(self.m);
        let y22 = sym(self.nu);
        let mut full = |r: usize, c: usize| {
            let mut z = DMatrix::zeros(r, c);
            for i in 0..r {
                for j in 0..c {
                    z[(i, j)] = y[k];
                    k += 1;
                }
            }
            z
        };
        let z22 = full(self.nu, self.m);
        let theta22 = self.theta.then(|| full(self.nu, self.nu));
        SdpVariables {
            m11,
            m22,
            x22,
            y22,
            z22,
            theta22,
        }
    }

    fn unit<T: Real>(&self, i: usize) -> SdpVariables<T> {
        let mut y = DVector::zeros(self.count());
        y[i] = T::one();
        self.unpack(&y)
    }
}

type Linear<T> = Box<dyn Fn(&SdpVariables<T>) -> DMatrix<T>>;

fn block_from<T: Real>(
    layout: &Layout,
    name: &str,
    sign: Sign,
    constant: DMatrix<T>,
    linear: Linear<T>,
) -> LmiBlock<T> {
    let terms = (0..layout.count())
        .filter_map(|i| {
            let a = linear(&layout.unit(i));
            (a.iter().any(|x| *x != T::zero())).then_some((i, a))
        })
        .collect();
    LmiBlock {
        name: name.to_string(),
        sign,
        linear: false,
        constant,
        terms,
    }
}

fn stack2<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>, d: &DMatrix<T>) -> DMatrix<T> {
    let (r1, c1) = a.shape();
    let (r2, c2) = d.shape();
    let mut m = DMatrix::zeros(r1 + r2, c1 + c2);
    m.view_mut((0, 0), (r1, c1)).copy_from(a);
    m.view_mut((0, c1), (r1, c2)).copy_from(b);
    m.view_mut((r1, 0), (r2, c1)).copy_from(c);
    m.view_mut((r1, c1), (r2, c2)).copy_from(d);
    m
}

fn build<T: Real>(
    sys: &LtiSystem<T>,
    s_fixed: Option<&DMatrix<T>>,
    l: &DMatrix<T>,
    c_v: &DMatrix<T>,
) -> Result<SdpProblem<T>> {
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let nu = l.ncols();
    if l.nrows() != m || c_v.shape() != (p, nu) || s_fixed.is_some_and(|s| s.shape() != (nu, nu)) {
        return Err(Error::DimensionMismatch(format!(
            "L is {}×{}, C_V is {}×{}, system has m = {m}, p = {p}",
            l.nrows(),
            l.ncols(),
            c_v.nrows(),
            c_v.ncols()
        )));
    }
    let layout = Layout {
        n,
        nu,
        m,
        theta: s_fixed.is_none(),
    };
    let problem = if s_fixed.is_some() { Problem::P2 } else { Problem::P1 };

    let bbt = sys.b() * sys.b().transpose();
    let mut c = vec![T::zero(); layout.count()];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            c[k] = if i == j { bbt[(i, i)] } else { bbt[(i, j)] + bbt[(j, i)] };
            k += 1;
        }
    }
    k += sym_len(nu);
    for i in 0..m {
        for j in i..m {
            if i == j {
                c[k] = T::one();
            }
            k += 1;
        }
    }

    let mut blocks = Vec::new();
    let cvtcv = c_v.transpose() * c_v;

    // Y₂₂ ⪰ Θᵀ − LᵀZᵀ + Θ − ZL + C_VᵀC_V, with Θ = M₂₂S when S is fixed
    let (lc, sc) = (l.clone(), s_fixed.cloned());
    blocks.push(block_from(
        &layout,
        "lyap22",
        Sign::Psd,
        -&cvtcv,
        Box::new(move |v| {
            let theta = match &sc {
                Some(s) => &v.m22 * s,
                None => v.theta22.clone().expect("Θ present for Problem 1"),
            };
            let zl = &v.z22 * &lc;
            &v.y22 - (theta.transpose() - zl.transpose() + theta - zl)
        }),
    ));
    blocks.push(block_from(
        &layout,
        "schur",
        Sign::Psd,
        DMatrix::zeros(m + nu, m + nu),
        Box::new(|v| stack2(&v.x22, &v.z22.transpose(), &v.z22, &v.m22)),
    ));
    let a = sys.a().clone();
    let ctc = sys.c().transpose() * sys.c();
    let ctcv = sys.c().transpose() * c_v;
    let constant = stack2(&ctc, &(-&ctcv), &(-ctcv.transpose()), &DMatrix::zeros(nu, nu));
    blocks.push(block_from(
        &layout,
        "lyap11",
        Sign::Nsd,
        constant,
        Box::new(move |v| {
            let tl = a.transpose() * &v.m11 + &v.m11 * &a;
            stack2(&tl, &DMatrix::zeros(n, nu), &DMatrix::zeros(nu, n), &v.y22)
        }),
    ));
    blocks.push(block_from(
        &layout,
        "M11",
        Sign::Psd,
        DMatrix::zeros(n, n),
        Box::new(|v| v.m11.clone()),
    ));
    blocks.push(block_from(
        &layout,
        "M22",
        Sign::Psd,
        DMatrix::zeros(nu, nu),
        Box::new(|v| v.m22.clone()),
    ));
    Ok(SdpProblem {
        problem,
        sys: sys.clone(),
        l: l.clone(),
        c_v: c_v.clone(),
        s_fixed: s_fixed.cloned(),
        c,
        blocks,
    })
}

/// Relaxation of Problem 1 over `(M₁₁, M₂₂, X₂₂, Y₂₂, Z₂₂, Θ₂₂)`.
///
/// # Errors
/// `DimensionMismatch` on inconsistent `L`, `C_V`.
pub fn build_relaxation_p1<T: Real>(sys: &LtiSystem<T>, l: &DMatrix<T>, c_v: &DMatrix<T>) -> Result<SdpProblem<T>> {
    build(sys, None, l, c_v)
}

/// Relaxation of Problem 2; `S` is fixed so `Θ₂₂` is replaced by `M₂₂S`.
pub fn build_relaxation_p2<T: Real>(
    sys: &LtiSystem<T>,
    s: &DMatrix<T>,
    l: &DMatrix<T>,
    c_v: &DMatrix<T>,
) -> Result<SdpProblem<T>> {
    build(sys, Some(s), l, c_v)
}

/// Adds `offdiag(Θ₂₂ − Z₂₂L) ≥ 0` and `Z₂₂ ≥ 0` as 1×1 blocks.
pub fn add_positivity<T: Real>(mut problem: SdpProblem<T>) -> SdpProblem<T> {
    let layout = problem.layout();
    let (nu, m) = (layout.nu, layout.m);
    for i in 0..nu {
        for j in 0..nu {
            if i == j {
                continue;
            }
            let (l, s) = (problem.l.clone(), problem.s_fixed.clone());
            let mut b = block_from(
                &layout,
                &format!("offdiag[{i},{j}]"),
                Sign::Psd,
                DMatrix::zeros(1, 1),
                Box::new(move |v| {
                    let theta = match &s {
                        Some(s) => &v.m22 * s,
                        None => v.theta22.clone().expect("Θ present for Problem 1"),
                    };
                    let d = theta - &v.z22 * &l;
                    DMatrix::from_element(1, 1, d[(i, j)])
                }),
            );
            b.linear = true;
            problem.blocks.push(b);
        }
    }
    for i in 0..nu {
        for j in 0..m {
            let mut b = block_from(
                &layout,
                &format!("Z[{i},{j}]"),
                Sign::Psd,
                DMatrix::zeros(1, 1),
                Box::new(move |v| DMatrix::from_element(1, 1, v.z22[(i, j)])),
            );
            b.linear = true;
            problem.blocks.push(b);
        }
    }
    problem
}

impl<T: Real> SdpProblem<T> {
    fn layout(&self) -> Layout {
        Layout {
            n: self.sys.n(),
            nu: self.l.ncols(),
            m: self.sys.m(),
            theta: self.problem == Problem::P1,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn sys(&self) -> &LtiSystem<T> {
        &self.sys
    }

    pub fn l(&self) -> &DMatrix<T> {
        &self.l
    }

    pub fn c_v(&self) -> &DMatrix<T> {
        &self.c_v
    }

    /// Splits a variable vector into the named unknowns.
    pub fn unpack(&self, y: &DVector<T>) -> SdpVariables<T> {
        self.layout().unpack(y)
    }

    /// Objective `tr(BᵀM₁₁B + X₂₂)` at `y`.
    pub fn objective(&self, y: &DVector<T>) -> T {
        self.c.iter().zip(y.iter()).fold(T::zero(), |acc, (c, y)| acc + *c * *y)
    }

    /// Largest amount by which any block misses its required sign.
    pub fn violation(&self, y: &DVector<T>) -> T {
        self.blocks
            .iter()
            .map(|b| {
                let mut v = b.eval(y);
                if b.sign == Sign::Nsd {
                    v = -v;
                }
                let lmin = symmetrize(&v)
                    .symmetric_eigenvalues()
                    .iter()
                    .fold(lit::<T>(f64::INFINITY), |a, &x| a.min(x));
                (-lmin).max(T::zero())
            })
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Every block rewritten as `Σ yᵢFᵢ − F₀ ⪰ 0`.
    pub fn to_standard(&self) -> StandardSdp<T> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let s = if b.sign == Sign::Psd { T::one() } else { -T::one() };
                StandardBlock {
                    linear: b.linear,
                    f0: b.constant.map(|x| if x == T::zero() { x } else { -(s * x) }),
                    fi: b.terms.iter().map(|(i, a)| (*i, a * s)).collect(),
                }
            })
            .collect();
        StandardSdp {
            c: self.c.clone(),
            blocks,
        }
    }
}

fn push_num(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String");
}

/// SDPA sparse text of a standard-form problem.
///
/// Header: variable count, block count, block sizes (1×1 elementwise
/// blocks as `-1`), objective vector; then one `var block row col value`
/// line per nonzero upper-triangular entry, 1-based, with `var = 0` for
/// `F₀`. Values carry 17 significant digits.
pub fn sdpa_text<T: Real>(sdp: &StandardSdp<T>) -> String {
    let mut out = String::new();
    writeln!(out, "{}", sdp.c.len()).ok();
    writeln!(out, "{}", sdp.blocks.len()).ok();
    let sizes: Vec<String> = sdp
        .blocks
        .iter()
        .map(|b| {
            if b.linear {
                format!("-{}", b.dim())
            } else {
                b.dim().to_string()
            }
        })
        .collect();
    writeln!(out, "{}", sizes.join(" ")).ok();
    for (k, c) in sdp.c.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        push_num(&mut out, to_f64(*c));
    }
    out.push('\n');
    for (bi, b) in sdp.blocks.iter().enumerate() {
        let mats = std::iter::once((0, &b.f0)).chain(b.fi.iter().map(|(i, a)| (i + 1, a)));
        for (var, a) in mats {
            for r in 0..a.nrows() {
                for c in r..a.ncols() {
                    let x = to_f64(a[(r, c)]);
                    if x != 0.0 {
                        write!(out, "{var} {} {} {} ", bi + 1, r + 1, c + 1).ok();
                        push_num(&mut out, x);
                        out.push('\n');
                    }
                }
            }
        }
    }
    out
}

/// Writes the problem in SDPA sparse format.
///
/// # Errors
/// `Io` when the destination cannot be written.
pub fn export_sdpa<T: Real>(problem: &SdpProblem<T>, destination: &Path) -> Result<()> {
    let mut f = std::fs::File::create(destination)?;
    f.write_all(sdpa_text(&problem.to_standard()).as_bytes())?;
    Ok(())
}

/// Parses SDPA sparse text back into standard form.
///
/// # Errors
/// `Parse` on malformed input.
pub fn read_sdpa<T: Real>(text: &str) -> Result<StandardSdp<T>> {
    let bad = |what: &str| Error::Parse(format!("SDPA: {what}"));
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with(['"', '*']));
    let mut header = |what: &str| lines.next().ok_or_else(|| bad(what));
    let nvars: usize = header("variable count")?
        .split_whitespace()
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("variable count"))?;
    let nblocks: usize = header("block count")?
        .split_whitespace()
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("block count"))?;
    let sizes: Vec<i64> = header("block sizes")?
        .split(|c: char| c.is_whitespace() || ",(){}".contains(c))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| bad("block size")))
        .collect::<Result<_>>()?;
    if sizes.len() != nblocks {
        return Err(bad("block size count"));
    }
    let c: Vec<T> = header("objective")?
        .split(|ch: char| ch.is_whitespace() || ",(){}".contains(ch))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map(lit).map_err(|_| bad("objective entry")))
        .collect::<Result<_>>()?;
    if c.len() != nvars {
        return Err(bad("objective length"));
    }
    let mut blocks: Vec<StandardBlock<T>> = sizes
        .iter()
        .map(|&s| {
            let d = s.unsigned_abs() as usize;
            StandardBlock {
                linear: s < 0,
                f0: DMatrix::zeros(d, d),
                fi: Vec::new(),
            }
        })
        .collect();
    let mut dense: Vec<std::collections::BTreeMap<usize, DMatrix<T>>> = vec![Default::default(); nblocks];
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 5 {
            return Err(bad("entry line"));
        }
        let idx = |k: usize| t[k].parse::<usize>().map_err(|_| bad("entry index"));
        let (var, blk, r, col) = (idx(0)?, idx(1)?, idx(2)?, idx(3)?);
        let x: f64 = t[4].parse().map_err(|_| bad("entry value"))?;
        if blk == 0 || blk > nblocks || var > nvars {
            return Err(bad("entry out of range"));
        }
        let d = blocks[blk - 1].dim();
        if r == 0 || col == 0 || r > d || col > d {
            return Err(bad("entry position"));
        }
        let target = if var == 0 {
            &mut blocks[blk - 1].f0
        } else {
            dense[blk - 1].entry(var - 1).or_insert_with(|| DMatrix::zeros(d, d))
        };
        target[(r - 1, col - 1)] = lit(x);
        target[(col - 1, r - 1)] = lit(x);
    }
    for (b, d) in blocks.iter_mut().zip(dense) {
        b.fi = d.into_iter().collect();
    }
    Ok(StandardSdp { c, blocks })
}

/// Settings of the internal solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T: Real> {
    pub feas_tol: T,
    pub gap_tol: T,
    /// Factor applied to the phase I barrier weight `1/t` after each centering.
    pub mu_shrink: T,
    /// Newton steps allowed per phase I centering, and phase II iterations.
    pub max_newton: usize,
    /// Box `|yᵢ| ≤ bound` added internally so that every centering problem
    /// has a minimizer; `None` solves the problem as given.
    pub bound: Option<T>,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            feas_tol: lit(1e-8),
            gap_tol: lit(1e-7),
            mu_shrink: lit(0.5),
            max_newton: 200,
            bound: Some(lit(1e5)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution<T: Real> {
    pub y: DVector<T>,
    pub objective: T,
    /// Largest sign violation over all blocks.
    pub violation: T,
    /// Duality gap at termination: the larger of `tr(XS)` and the difference
    /// between primal and dual objectives.
    pub gap: T,
    /// Objective at each phase II iteration.
    pub history: Vec<T>,
    pub newton_steps: usize,
}

/// Barrier data for `Σ yᵢFᵢ − F₀ ⪰ 0` blocks.
struct Barrier<'a, T: Real> {
    blocks: &'a [StandardBlock<T>],
    nvars: usize,
}

impl<T: Real> Barrier<'_, T> {
    /// Cholesky factors of every block, `None` when any block is not
    /// positive definite.
    /// Inverse Cholesky factors `L⁻¹` of every block, `None` when any block
    /// is not positive definite.
    fn factors(&self, y: &DVector<T>) -> Option<Vec<DMatrix<T>>> {
        self.blocks
            .iter()
            .map(|b| {
                let ch = nalgebra::Cholesky::new(b.eval(y))?;
                let d = b.dim();
                ch.l().solve_lower_triangular(&DMatrix::identity(d, d))
            })
            .collect()
    }

    fn value(&self, y: &DVector<T>) -> Option<T> {
        let mut phi = T::zero();
        for b in self.blocks {
            let ch = nalgebra::Cholesky::new(b.eval(y))?;
            let d = ch.l_dirty().diagonal();
            for x in d.iter() {
                phi -= lit::<T>(2.0) * x.ln();
            }
        }
        Some(phi)
    }

    /// Gradient and Hessian of `−Σ log det`, from the congruences
    /// `Pᵢ = L⁻¹FᵢL⁻ᵀ`: `∂φ/∂yᵢ = −tr Pᵢ`, `∂²φ/∂yᵢ∂yⱼ = ⟨Pᵢ, Pⱼ⟩`.
    fn derivatives(&self, linv: &[DMatrix<T>]) -> (DVector<T>, DMatrix<T>) {
        let mut g = DVector::zeros(self.nvars);
        let mut h = DMatrix::zeros(self.nvars, self.nvars);
        for (b, li) in self.blocks.iter().zip(linv) {
            let p: Vec<(usize, DMatrix<T>)> = b.fi.iter().map(|(i, a)| (*i, li * a * li.transpose())).collect();
            for (k, (i, pi)) in p.iter().enumerate() {
                g[*i] -= pi.trace();
                for (j, pj) in &p[k..] {
                    let v = pi.dot(pj);
                    h[(*i, *j)] += v;
                    if i != j {
                        h[(*j, *i)] += v;
                    }
                }
            }
        }
        (g, h)
    }
}

fn newton_direction<T: Real>(h: &DMatrix<T>, g: &DVector<T>) -> Option<DVector<T>> {
    // Jacobi scaling keeps the factorization accurate when variables live on
    // very different scales
    let d = h
        .diagonal()
        .map(|x| if x > T::zero() { T::one() / x.sqrt() } else { T::one() });
    let hs = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * d[i] * d[j]);
    let gs = g.component_mul(&d);
    let mut reg = T::zero();
    for _ in 0..8 {
        let hr = &hs + DMatrix::identity(h.nrows(), h.ncols()) * reg;
        if let Some(ch) = nalgebra::Cholesky::new(hr) {
            let step = -ch.solve(&gs).component_mul(&d);
            if step.iter().all(|x| x.is_finite()) {
                return Some(step);
            }
        }
        reg = if reg == T::zero() { lit(1e-14) } else { reg * lit(100.0) };
    }
    None
}

/// Minimizes `t·cᵀy + φ(y)` by damped Newton from a strictly feasible `y`.
/// Returns the Newton step count; `stop` may end the centering early.
fn center<T: Real>(
    bar: &Barrier<'_, T>,
    c: &DVector<T>,
    t: T,
    y: &mut DVector<T>,
    max_newton: usize,
    stop: &dyn Fn(&DVector<T>) -> bool,
) -> Result<usize> {
    let mut prev = lit::<T>(f64::INFINITY);
    for step in 0..max_newton {
        let inv = bar.factors(y).ok_or(Error::NewtonStalled(to_f64(t)))?;
        let (gb, h) = bar.derivatives(&inv);
        let g = c * t + gb;
        let d = newton_direction(&h, &g).ok_or(Error::NewtonStalled(to_f64(t)))?;
        let lambda2 = -g.dot(&d);
        // once Newton stops contracting near the center, rounding dominates
        if lambda2 <= lit(1e-6) || (lambda2 <= lit(1e-3) && lambda2 > prev * lit(0.5)) {
            return Ok(step);
        }
        prev = lambda2;
        let f0 = t * c.dot(y) + bar.value(y).ok_or(Error::NewtonStalled(to_f64(t)))?;
        let mut alpha = if lambda2.sqrt() > lit(0.25) {
            T::one() / (T::one() + lambda2.sqrt())
        } else {
            T::one()
        };
        loop {
            let trial = &*y + &d * alpha;
            if let Some(phi) = bar.value(&trial) {
                if t * c.dot(&trial) + phi <= f0 - lit::<T>(0.25) * alpha * lambda2 {
                    if trial == *y || (alpha < lit(1e-6) && lambda2 <= lit(1e-3)) {
                        // rounding-limited: the step no longer moves y
                        return Ok(step);
                    }
                    *y = trial;
                    break;
                }
            }
            alpha *= lit(0.5);
            if alpha < lit(1e-12) {
                // near the center the decrease is below the rounding of t·cᵀy
                if lambda2 <= lit(1e-3) {
                    return Ok(step);
                }
                return Err(Error::NewtonStalled(to_f64(t)));
            }
        }
        if stop(y) {
            return Ok(step + 1);
        }
    }
    Err(Error::NewtonStalled(to_f64(t)))
}

fn min_eig<T: Real>(m: &DMatrix<T>) -> T {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(lit::<T>(f64::INFINITY), |a, &x| a.min(x))
}

fn box_blocks<T: Real>(nvars: usize, bound: T, offset: usize) -> Vec<StandardBlock<T>> {
    let mut out = Vec::with_capacity(2 * nvars);
    for i in 0..nvars {
        for s in [T::one(), -T::one()] {
            out.push(StandardBlock {
                linear: true,
                f0: DMatrix::from_element(1, 1, -bound),
                fi: vec![(i + offset, DMatrix::from_element(1, 1, s))],
            });
        }
    }
    out
}

/// Interior-point method for a standard-form problem.
///
/// # Errors
/// `SizeLimit`, `Infeasible` when phase I cannot reach a strictly feasible
/// point, `NewtonStalled` when a centering or a primal-dual step fails.
pub fn solve_standard<T: Real>(sdp: &StandardSdp<T>, cfg: &SolverConfig<T>) -> Result<SdpSolution<T>> {
    let nv = sdp.c.len();
    if nv > SIZE_LIMIT {
        return Err(Error::SizeLimit {
            vars: nv,
            limit: SIZE_LIMIT,
        });
    }
    let shrink = cfg.mu_shrink;
    if !(shrink > T::zero() && shrink < T::one()) {
        return Err(Error::InvalidArgument("mu_shrink must lie in (0, 1)".into()));
    }
    let mut newton_steps = 0;

    // phase I over (y, s): Σ yᵢFᵢ − F₀ + sI ⪰ 0, s ≥ −1, minimize s
    let mut y = DVector::zeros(nv);
    let worst = sdp
        .blocks
        .iter()
        .map(|b| min_eig(&b.eval(&y)))
        .fold(lit::<T>(f64::INFINITY), |a, b| a.min(b));
    if worst <= T::zero() {
        let mut p1: Vec<StandardBlock<T>> = sdp
            .blocks
            .iter()
            .map(|b| {
                let mut fi = b.fi.clone();
                fi.push((nv, DMatrix::identity(b.dim(), b.dim())));
                StandardBlock {
                    linear: b.linear,
                    f0: b.f0.clone(),
                    fi,
                }
            })
            .collect();
        p1.push(StandardBlock {
            linear: true,
            f0: DMatrix::from_element(1, 1, -T::one()),
            fi: vec![(nv, DMatrix::from_element(1, 1, T::one()))],
        });
        // phase I needs a bounded feasible set even when phase II does not
        p1.extend(box_blocks(nv, cfg.bound.unwrap_or(lit(1e8)), 0));
        let bar = Barrier {
            blocks: &p1,
            nvars: nv + 1,
        };
        let mut z = DVector::zeros(nv + 1);
        z[nv] = T::one() - worst;
        let mut c = DVector::zeros(nv + 1);
        c[nv] = T::one();
        let dims: usize = p1.iter().map(StandardBlock::dim).sum();
        let mut t = T::one();
        let found = |z: &DVector<T>| z[nv] < T::zero();
        loop {
            newton_steps += center(&bar, &c, t, &mut z, cfg.max_newton, &found)?;
            if found(&z) {
                break;
            }
            if lit::<T>(dims as f64) / t <= cfg.gap_tol {
                return Err(Error::Infeasible(to_f64(z[nv])));
            }
            t /= shrink;
        }
        y = z.rows(0, nv).clone_owned();
    }

    let mut blocks = sdp.blocks.clone();
    if let Some(r) = cfg.bound {
        blocks.extend(box_blocks(nv, r, 0));
    }
    let c = DVector::from_column_slice(&sdp.c);
    let (gap, history, steps) = primal_dual(&blocks, &c, &mut y, cfg)?;
    newton_steps += steps;
    let violation = sdp
        .blocks
        .iter()
        .map(|b| (-min_eig(&b.eval(&y))).max(T::zero()))
        .fold(T::zero(), |a, b| a.max(b));
    if violation > cfg.feas_tol {
        return Err(Error::Infeasible(to_f64(violation)));
    }
    Ok(SdpSolution {
        objective: c.dot(&y),
        y,
        violation,
        gap,
        history,
        newton_steps,
    })
}

/// Largest `α` with `X + αΔ ⪰ 0`, infinite when `Δ` never leaves the cone.
fn max_step<T: Real>(x: &DMatrix<T>, dx: &DMatrix<T>) -> Option<T> {
    let ch = nalgebra::Cholesky::new(x.clone())?;
    let d = x.nrows();
    let li = ch.l().solve_lower_triangular(&DMatrix::identity(d, d))?;
    let lam = min_eig(&(&li * dx * li.transpose()));
    Some(if lam >= T::zero() {
        lit(f64::INFINITY)
    } else {
        -T::one() / lam
    })
}

/// Primal-dual path following (HKM direction, Mehrotra corrector) from a
/// strictly feasible `y`. The dual iterate `X` starts at the identity and
/// may be infeasible; `y` stays strictly feasible throughout.
///
/// Returns the final `tr(XS)`, the objective after every iteration and the
/// iteration count.
fn primal_dual<T: Real>(
    blocks: &[StandardBlock<T>],
    c: &DVector<T>,
    y: &mut DVector<T>,
    cfg: &SolverConfig<T>,
) -> Result<(T, Vec<T>, usize)> {
    let nv = c.len();
    let dims: usize = blocks.iter().map(StandardBlock::dim).sum();
    let dims = lit::<T>(dims as f64);
    let mut x: Vec<DMatrix<T>> = blocks.iter().map(|b| DMatrix::identity(b.dim(), b.dim())).collect();
    let mut history = Vec::new();
    let cnorm = c.norm();
    let limit = cfg.max_newton.max(1);
    for it in 0..limit {
        let stalled = || Error::NewtonStalled(it as f64);
        let s: Vec<DMatrix<T>> = blocks.iter().map(|b| b.eval(y)).collect();
        let sinv: Vec<DMatrix<T>> = s
            .iter()
            .map(|m| nalgebra::Cholesky::new(m.clone()).map(|ch| ch.inverse()))
            .collect::<Option<_>>()
            .ok_or_else(stalled)?;
        let xs: T = x.iter().zip(&s).map(|(a, b)| a.dot(b)).fold(T::zero(), |a, b| a + b);
        let mu = xs / dims;
        let mut rp = c.clone();
        for (b, xb) in blocks.iter().zip(&x) {
            for (i, f) in &b.fi {
                rp[*i] -= f.dot(xb);
            }
        }
        let obj = c.dot(y);
        history.push(obj);
        // with large |y| a tiny primal residual still shifts the dual bound,
        // so the objective difference is checked alongside tr(XS)
        let dual = blocks
            .iter()
            .zip(&x)
            .map(|(b, xb)| b.f0.dot(xb))
            .fold(T::zero(), |a, b| a + b);
        let gap = xs.max((obj - dual).abs());
        if rp.norm() <= cfg.feas_tol * (T::one() + cnorm) && gap <= cfg.gap_tol * (T::one() + obj.abs()) {
            return Ok((gap, history, it));
        }

        // Schur complement M_ij = Σ tr(Fᵢ X Fⱼ S⁻¹)
        let mut m = DMatrix::zeros(nv, nv);
        let mut fsinv = DVector::zeros(nv);
        for ((b, xb), si) in blocks.iter().zip(&x).zip(&sinv) {
            for (j, fj) in &b.fi {
                let g = xb * fj * si;
                fsinv[*j] += fj.dot(si);
                for (i, fi) in &b.fi {
                    m[(*i, *j)] += g.dot(fi);
                }
            }
        }
        let m = symmetrize(&m);

        let direction = |sigma: T, corr: Option<&[DMatrix<T>]>| -> Option<_> {
            let mut rhs = &fsinv * (sigma * mu) - c;
            if let Some(corr) = corr {
                for (b, cb) in blocks.iter().zip(corr) {
                    for (i, f) in &b.fi {
                        rhs[*i] -= f.dot(cb);
                    }
                }
            }
            let dy = newton_direction(&m, &(-rhs))?;
            let mut ds = Vec::with_capacity(blocks.len());
            let mut dx = Vec::with_capacity(blocks.len());
            for (k, b) in blocks.iter().enumerate() {
                let mut d = DMatrix::zeros(b.dim(), b.dim());
                for (i, f) in &b.fi {
                    d += f * dy[*i];
                }
                let mut e = &sinv[k] * (sigma * mu) - &x[k] - &x[k] * &d * &sinv[k];
                if let Some(corr) = corr {
                    e -= &corr[k];
                }
                dx.push(symmetrize(&e));
                ds.push(d);
            }
            let mut ap = lit::<T>(f64::INFINITY);
            let mut ad = lit::<T>(f64::INFINITY);
            for k in 0..blocks.len() {
                ap = ap.min(max_step(&x[k], &dx[k])?);
                ad = ad.min(max_step(&s[k], &ds[k])?);
            }
            Some((dy, dx, ds, ap, ad))
        };

        // predictor aims at μ = 0; its reach sets the centering weight
        let (_, dxa, dsa, ap, ad) = direction(T::zero(), None).ok_or_else(stalled)?;
        let (ap, ad) = (ap.min(T::one()), ad.min(T::one()));
        let mut xs_aff = T::zero();
        for k in 0..blocks.len() {
            xs_aff += (&x[k] + &dxa[k] * ap).dot(&(&s[k] + &dsa[k] * ad));
        }
        let ratio = (xs_aff / xs).max(T::zero()).min(T::one());
        let sigma = ratio * ratio * ratio;
        let corr: Vec<DMatrix<T>> = (0..blocks.len()).map(|k| &dxa[k] * &dsa[k] * &sinv[k]).collect();
        let (dy, dx, _, ap, ad) = direction(sigma, Some(&corr)).ok_or_else(stalled)?;
        let keep = lit::<T>(0.95);
        let ap = (ap * keep).min(T::one());
        let ad = (ad * keep).min(T::one());
        if !(ap > T::zero() && ad > T::zero()) {
            return Err(stalled());
        }
        for (xb, d) in x.iter_mut().zip(&dx) {
            *xb += d * ap;
        }
        *y += dy * ad;
    }
    Err(Error::NewtonStalled(limit as f64))
}

/// Solves a relaxation with the internal interior-point method.
pub fn solve_small<T: Real>(problem: &SdpProblem<T>, cfg: &SolverConfig<T>) -> Result<SdpSolution<T>> {
    solve_standard(&problem.to_standard(), cfg)
}

/// Model recovered from a relaxation solution.
#[derive(Debug, Clone)]
pub struct RecoveredModel<T: Real> {
    pub s: DMatrix<T>,
    pub g: DMatrix<T>,
    /// `blkdiag(M₁₁, M₂₂)`.
    pub m: DMatrix<T>,
    pub sdp_objective: T,
    /// Exact squared H2 error of the recovered model, when `S − GL` is stable.
    pub f_recovered: Option<T>,
    /// `f(recovered) − sdp objective`, `+∞` when unstable.
    pub gap: T,
    pub stable: bool,
}

impl<T: Real> RecoveredModel<T> {
    pub fn vars(&self, problem: Problem) -> DecisionVars<T> {
        match problem {
            Problem::P1 => DecisionVars::p1(&self.s, &self.g),
            Problem::P2 => DecisionVars::p2(&self.s, &self.g),
        }
    }
}

/// `G = M₂₂⁻¹Z₂₂` and, for Problem 1, `S = M₂₂⁻¹Θ₂₂`.
///
/// # Errors
/// `SingularM22` when `λ_min(M₂₂) < 1e-10·‖M₂₂‖`.
pub fn recover<T: Real>(solution: &SdpSolution<T>, problem: &SdpProblem<T>) -> Result<RecoveredModel<T>> {
    let v = problem.unpack(&solution.y);
    let m22 = symmetrize(&v.m22);
    let lmin = min_eig(&m22);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must be rejected too
    if !(lmin >= lit::<T>(1e-10) * m22.norm()) {
        return Err(Error::SingularM22(to_f64(lmin)));
    }
    let ch = nalgebra::Cholesky::new(m22.clone()).ok_or(Error::SingularM22(to_f64(lmin)))?;
    let g = ch.solve(&v.z22);
    let s = match (&v.theta22, &problem.s_fixed) {
        (Some(theta), _) => ch.solve(theta),
        (None, Some(s)) => s.clone(),
        (None, None) => unreachable!("Problem 2 stores S"),
    };
    let (n, nu) = (v.m11.nrows(), m22.nrows());
    let mut m = DMatrix::zeros(n + nu, n + nu);
    m.view_mut((0, 0), (n, n)).copy_from(&v.m11);
    m.view_mut((n, n), (nu, nu)).copy_from(&m22);

    let fs = FixedStructure::new(&problem.sys, problem.l.clone(), problem.c_v.clone())?;
    let vars = match problem.problem {
        Problem::P1 => DecisionVars::p1(&s, &g),
        Problem::P2 => DecisionVars::p2(&s, &g),
    };
    let stable = spectrum(&vars.f(&fs))?.is_stable;
    let f_recovered = if stable { Some(objective_f(&vars, &fs)?) } else { None };
    let gap = f_recovered.map_or(lit(f64::INFINITY), |f| f - solution.objective);
    Ok(RecoveredModel {
        s,
        g,
        m,
        sdp_objective: solution.objective,
        f_recovered,
        gap,
        stable,
    })
}
