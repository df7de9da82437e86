//! H2 objective, gradients, KKT residuals and the iterative solvers for
//! Problem 1 (optimize `𝒳 = [S G]`) and Problem 2 (optimize `G`, `S` fixed).
//!
//! The objective is the squared H2 norm of the error system
//! `(blkdiag(A, F), [B; G], [C, −C_V])` with `F = 𝒳ℒ = S − GL`, evaluated
//! through block Gramians.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lti::{assemble_sym, FullOrderCache, LtiSystem};
use crate::matrix_equations::{place_poles, spectrum, sylvester_checked, symmetrize, SchurForm, StableFactor};
use crate::moments::{InterpolationData, Provenance, ReducedModel};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    /// Optimize `𝒳 = [S G]` with `L` fixed.
    P1,
    /// Optimize `G` with `(S, L)` fixed.
    P2,
}

/// How Problem 1 treats the output map `C_V = CΠ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CvMode {
    /// Keep the initial `C_V`; the gradient is exactly the printed one.
    Frozen,
    /// Recompute `C_V = CΠ(S, L)` at every iterate so that the model keeps
    /// interpolating at `σ(S)`; the gradient then includes the dependence of
    /// `Π` on `S`.
    #[default]
    Refresh,
}

/// Data held fixed during optimization: `L`, `ℒ = [I; −L]`, `ℰ = [0; I]`,
/// `C_V` and the full-order system.
#[derive(Debug, Clone)]
pub struct FixedStructure<T: Real> {
    sys: LtiSystem<T>,
    l: DMatrix<T>,
    script_l: DMatrix<T>,
    script_e: DMatrix<T>,
    c_v: DMatrix<T>,
    cache: FullOrderCache<T>,
    base_f: T,
}

impl<T: Real> FixedStructure<T> {
    /// # Errors
    /// `DimensionMismatch`, or `UnstableMatrix` if `A` is not Hurwitz.
    pub fn new(sys: &LtiSystem<T>, l: DMatrix<T>, c_v: DMatrix<T>) -> Result<Self> {
        let (m, nu) = l.shape();
        if m != sys.m() || c_v.nrows() != sys.p() || c_v.ncols() != nu {
            return Err(Error::DimensionMismatch(format!(
                "L is {m}×{nu}, C_V is {}×{}, system has m = {}, p = {}",
                c_v.nrows(),
                c_v.ncols(),
                sys.m(),
                sys.p()
            )));
        }
        let mut script_l = DMatrix::zeros(nu + m, nu);
        script_l.view_mut((0, 0), (nu, nu)).fill_with_identity();
        script_l.view_mut((nu, 0), (m, nu)).copy_from(&(-&l));
        let mut script_e = DMatrix::zeros(nu + m, m);
        script_e.view_mut((nu, 0), (m, m)).fill_with_identity();
        let cache = FullOrderCache::new(sys.a(), sys.b(), sys.c())?;
        let base_f = (sys.b().transpose() * &cache.m11 * sys.b()).trace();
        Ok(Self {
            sys: sys.clone(),
            l,
            script_l,
            script_e,
            c_v,
            cache,
            base_f,
        })
    }

    /// Uses `C_V = CΠ` with `AΠ + BL = ΠS`.
    pub fn from_data(sys: &LtiSystem<T>, data: &InterpolationData<T>) -> Result<Self> {
        let mut fs = Self::new(sys, data.l().clone(), DMatrix::zeros(sys.p(), data.order()))?;
        fs.c_v = sys.c() * fs.pi_of(data.s())?;
        Ok(fs)
    }

    pub fn sys(&self) -> &LtiSystem<T> {
        &self.sys
    }

    pub fn l(&self) -> &DMatrix<T> {
        &self.l
    }

    /// `ℒ = [I_ν; −L]`.
    pub fn script_l(&self) -> &DMatrix<T> {
        &self.script_l
    }

    /// `ℰ = [0; I_m]`.
    pub fn script_e(&self) -> &DMatrix<T> {
        &self.script_e
    }

    pub fn c_v(&self) -> &DMatrix<T> {
        &self.c_v
    }

    pub fn order(&self) -> usize {
        self.l.ncols()
    }

    /// Copy with a different output map.
    pub fn with_c_v(&self, c_v: DMatrix<T>) -> Result<Self> {
        if c_v.shape() != self.c_v.shape() {
            return Err(Error::DimensionMismatch("C_V shape changed".into()));
        }
        let mut fs = self.clone();
        fs.c_v = c_v;
        Ok(fs)
    }

    /// `Π(S)` solving `AΠ + BL = ΠS`.
    pub fn pi_of(&self, s: &DMatrix<T>) -> Result<DMatrix<T>> {
        let ss = SchurForm::new(s)?;
        sylvester_checked(&self.cache.factor.a, &ss, &(self.sys.b() * &self.l))
    }
}

/// Optimizer unknowns.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionVars<T: Real> {
    /// `𝒳 = [S G]`, ν×(ν+m).
    P1 { x: DMatrix<T> },
    /// `G` (ν×m) with the fixed `S` stored alongside.
    P2 { g: DMatrix<T>, s: DMatrix<T> },
}

impl<T: Real> DecisionVars<T> {
    pub fn p1(s: &DMatrix<T>, g: &DMatrix<T>) -> Self {
        let (nu, m) = g.shape();
        let mut x = DMatrix::zeros(nu, nu + m);
        x.view_mut((0, 0), (nu, nu)).copy_from(s);
        x.view_mut((0, nu), (nu, m)).copy_from(g);
        Self::P1 { x }
    }

    pub fn p2(s: &DMatrix<T>, g: &DMatrix<T>) -> Self {
        Self::P2 {
            g: g.clone(),
            s: s.clone(),
        }
    }

    pub fn problem(&self) -> Problem {
        match self {
            Self::P1 { .. } => Problem::P1,
            Self::P2 { .. } => Problem::P2,
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Self::P1 { x } => x.nrows(),
            Self::P2 { g, .. } => g.nrows(),
        }
    }

    pub fn s(&self) -> DMatrix<T> {
        match self {
            Self::P1 { x } => x.columns(0, x.nrows()).clone_owned(),
            Self::P2 { s, .. } => s.clone(),
        }
    }

    /// `G = 𝒳ℰ`.
    pub fn g(&self) -> DMatrix<T> {
        match self {
            Self::P1 { x } => {
                let nu = x.nrows();
                x.columns(nu, x.ncols() - nu).clone_owned()
            }
            Self::P2 { g, .. } => g.clone(),
        }
    }

    /// `F = 𝒳ℒ = S − GL`.
    pub fn f(&self, fs: &FixedStructure<T>) -> DMatrix<T> {
        match self {
            Self::P1 { x } => x * &fs.script_l,
            Self::P2 { g, s } => s - g * &fs.l,
        }
    }

    /// The optimized matrix: `𝒳` for P1, `G` for P2.
    pub fn unknown(&self) -> &DMatrix<T> {
        match self {
            Self::P1 { x } => x,
            Self::P2 { g, .. } => g,
        }
    }

    fn with_unknown(&self, u: DMatrix<T>) -> Self {
        match self {
            Self::P1 { .. } => Self::P1 { x: u },
            Self::P2 { s, .. } => Self::P2 { g: u, s: s.clone() },
        }
    }

    /// Membership in the stability domain: `σ(𝒳ℒ) ⊂ ℂ⁻`.
    pub fn is_feasible(&self, fs: &FixedStructure<T>) -> Result<bool> {
        Ok(spectrum(&self.f(fs))?.is_stable)
    }

    /// Reduced model `(𝒳ℒ, 𝒳ℰ, C_V)` with right provenance.
    pub fn to_model(&self, fs: &FixedStructure<T>) -> Result<ReducedModel<T>> {
        let s = self.s();
        let f = self.f(fs);
        let mut model = ReducedModel::new(f.clone(), self.g(), fs.c_v.clone())?;
        let pi = fs.pi_of(&s).ok();
        if let Some(pi) = pi {
            let f_stable = spectrum(&f)?.is_stable;
            let es = spectrum(&s)?.eigenvalues;
            let ef = spectrum(&f)?.eigenvalues;
            let gap = es
                .iter()
                .flat_map(|a| ef.iter().map(move |b| (a - b).re.hypot((a - b).im)))
                .fold(lit::<T>(f64::INFINITY), |a, b| a.min(b));
            let scale = s.norm().max(f.norm()).max(T::one());
            model.provenance = Some(Provenance::Right {
                s,
                l: fs.l.clone(),
                pi,
                f_stable,
                spectra_disjoint: gap > lit::<T>(1e-8) * scale,
            });
        }
        Ok(model)
    }
}

/// Gramian blocks and derived quantities at one point.
struct Evaluation<T: Real> {
    f: T,
    grad: Option<DMatrix<T>>,
    c_v: DMatrix<T>,
    w12: DMatrix<T>,
    w22: DMatrix<T>,
    m12: DMatrix<T>,
    m22: DMatrix<T>,
}

fn infeasible<T: Real>(f: &DMatrix<T>) -> Error {
    let abscissa = spectrum(f).map(|r| r.spectral_abscissa).unwrap_or(T::zero());
    Error::InfeasiblePoint(crate::scalar::to_f64(abscissa))
}

fn evaluate<T: Real>(
    vars: &DecisionVars<T>,
    fs: &FixedStructure<T>,
    mode: CvMode,
    want_grad: bool,
) -> Result<Evaluation<T>> {
    let f_mat = vars.f(fs);
    let g = vars.g();
    let ff = match StableFactor::new(&f_mat, "F") {
        Ok(ff) => ff,
        Err(Error::UnstableMatrix { abscissa, .. }) => return Err(Error::InfeasiblePoint(abscissa)),
        Err(e) => return Err(e),
    };
    let refresh = mode == CvMode::Refresh && vars.problem() == Problem::P1;
    let (c_v, pi) = if refresh {
        let pi = fs.pi_of(&vars.s()).map_err(|_| infeasible(&f_mat))?;
        (fs.sys.c() * &pi, Some(pi))
    } else {
        (fs.c_v.clone(), None)
    };
    let b = fs.sys.b();
    let c = fs.sys.c();
    let cache = &fs.cache;
    let m12 =
        crate::matrix_equations::sylvester_from_schur(&cache.factor.at, &ff.a.negated(), &(-(c.transpose() * &c_v)))?;
    let m22 = symmetrize(&ff.obs_raw(&(c_v.transpose() * &c_v))?);
    let cross = (b.transpose() * &m12 * &g).trace();
    let f = fs.base_f + cross + cross + (g.transpose() * &m22 * &g).trace();

    let w12 = crate::matrix_equations::sylvester_from_schur(&cache.factor.a, &ff.at.negated(), &(b * g.transpose()))?;
    let w22 = symmetrize(&ff.ctrl_raw(&(&g * g.transpose()))?);

    let grad = if want_grad {
        let two = lit::<T>(2.0);
        let df = m12.transpose() * &w12 + &m22 * &w22;
        let dg = m12.transpose() * b + &m22 * &g;
        let mut grad = match vars.problem() {
            Problem::P1 => (df * fs.script_l.transpose() + dg * fs.script_e.transpose()) * two,
            Problem::P2 => (dg - df * fs.l.transpose()) * two,
        };
        if let Some(pi) = pi {
            let gamma_h = (&c_v * &w22 - c * &w12) * two;
            let j = c.transpose() * gamma_h;
            let ss = SchurForm::new(&vars.s().transpose())?;
            let psi = sylvester_checked(&cache.factor.at, &ss, &(-j))?;
            let ds = pi.transpose() * psi;
            let nu = vars.order();
            let mut head = grad.columns_mut(0, nu);
            head += ds;
        }
        Some(grad)
    } else {
        None
    };
    Ok(Evaluation {
        f,
        grad,
        c_v,
        w12,
        w22,
        m12,
        m22,
    })
}

/// Squared H2 error `tr(ℬeᵀ ℳ ℬe)` with `C_V` held fixed.
///
/// # Errors
/// `InfeasiblePoint` when `𝒳ℒ` is not Hurwitz.
pub fn objective_f<T: Real>(vars: &DecisionVars<T>, fs: &FixedStructure<T>) -> Result<T> {
    Ok(evaluate(vars, fs, CvMode::Frozen, false)?.f)
}

/// Squared H2 error of the model whose output map is recomputed as
/// `CΠ(S, L)` (the refreshed objective; equals [`objective_f`] for P2).
pub fn objective_refreshed<T: Real>(vars: &DecisionVars<T>, fs: &FixedStructure<T>) -> Result<T> {
    Ok(evaluate(vars, fs, CvMode::Refresh, false)?.f)
}

/// Analytic gradient with `C_V` held fixed.
///
/// P1: `2[(M₁₂ᵀW₁₂ + M₂₂W₂₂)ℒᵀ + (M₁₂ᵀB + M₂₂𝒳ℰ)ℰᵀ]`;
/// P2: `2[−(M₁₂ᵀW₁₂ + M₂₂W₂₂)Lᵀ + M₁₂ᵀB + M₂₂G]`.
pub fn gradient_f<T: Real>(vars: &DecisionVars<T>, fs: &FixedStructure<T>) -> Result<DMatrix<T>> {
    Ok(evaluate(vars, fs, CvMode::Frozen, true)?
        .grad
        .expect("gradient requested"))
}

/// Gradient of [`objective_refreshed`], including the sensitivity of
/// `Π(S)` obtained from an adjoint Sylvester solve.
pub fn gradient_refreshed<T: Real>(vars: &DecisionVars<T>, fs: &FixedStructure<T>) -> Result<DMatrix<T>> {
    Ok(evaluate(vars, fs, CvMode::Refresh, true)?
        .grad
        .expect("gradient requested"))
}

/// Exact error Gramians `(𝒲, ℳ)` at a feasible point, for `C_V` fixed.
pub fn exact_gramians<T: Real>(vars: &DecisionVars<T>, fs: &FixedStructure<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let e = evaluate(vars, fs, CvMode::Frozen, false)?;
    Ok((
        assemble_sym(&fs.cache.w11, &e.w12, &e.w22),
        assemble_sym(&fs.cache.m11, &e.m12, &e.m22),
    ))
}

/// Frobenius norms of the three KKT blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual<T: Real> {
    /// `‖𝒜ᵀℳ + ℳ𝒜 + 𝒞ᵀ𝒞‖`.
    pub r_m: T,
    /// `‖𝒜𝒲 + 𝒲𝒜ᵀ + ℬℬᵀ‖`.
    pub r_w: T,
    /// Norm of the stationarity block, `½‖∇f‖` at exact Gramians.
    pub r_x: T,
}

impl<T: Real> KktResidual<T> {
    pub fn max(&self) -> T {
        self.r_m.max(self.r_w).max(self.r_x)
    }
}

struct KktBlocks<T: Real> {
    rm: DMatrix<T>,
    rw: DMatrix<T>,
    rx: DMatrix<T>,
    be: DMatrix<T>,
}

fn kkt_blocks<T: Real>(
    w: &DMatrix<T>,
    m: &DMatrix<T>,
    vars: &DecisionVars<T>,
    fs: &FixedStructure<T>,
) -> Result<KktBlocks<T>> {
    let sys = &fs.sys;
    let (n, nu) = (sys.n(), vars.order());
    if w.shape() != (n + nu, n + nu) || m.shape() != (n + nu, n + nu) {
        return Err(Error::DimensionMismatch(format!(
            "Gramian iterates must be {0}×{0}",
            n + nu
        )));
    }
    let f = vars.f(fs);
    let g = vars.g();
    let mut ae = DMatrix::zeros(n + nu, n + nu);
    ae.view_mut((0, 0), (n, n)).copy_from(sys.a());
    ae.view_mut((n, n), (nu, nu)).copy_from(&f);
    let mut be = DMatrix::zeros(n + nu, sys.m());
    be.view_mut((0, 0), (n, sys.m())).copy_from(sys.b());
    be.view_mut((n, 0), (nu, sys.m())).copy_from(&g);
    let mut ce = DMatrix::zeros(sys.p(), n + nu);
    ce.view_mut((0, 0), (sys.p(), n)).copy_from(sys.c());
    ce.view_mut((0, n), (sys.p(), nu)).copy_from(&(-&fs.c_v));
    let rm = ae.transpose() * m + m * &ae + ce.transpose() * &ce;
    let rw = &ae * w + w * ae.transpose() + &be * be.transpose();
    let m21 = m.view((n, 0), (nu, n));
    let m22 = m.view((n, n), (nu, nu));
    let w12 = w.view((0, n), (n, nu));
    let w22 = w.view((n, n), (nu, nu));
    let df = m21 * w12 + m22 * w22;
    let dg = m21 * sys.b() + m22 * &g;
    let rx = match vars.problem() {
        Problem::P1 => df * fs.script_l.transpose() + dg * fs.script_e.transpose(),
        Problem::P2 => dg - df * fs.l.transpose(),
    };
    Ok(KktBlocks { rm, rw, rx, be })
}

/// Evaluates the KKT system at `(𝒲, ℳ, 𝒳)`.
pub fn kkt_residual<T: Real>(
    w: &DMatrix<T>,
    m: &DMatrix<T>,
    vars: &DecisionVars<T>,
    fs: &FixedStructure<T>,
) -> Result<KktResidual<T>> {
    let k = kkt_blocks(w, m, vars, fs)?;
    Ok(KktResidual {
        r_m: k.rm.norm(),
        r_w: k.rw.norm(),
        r_x: k.rx.norm(),
    })
}

/// One entry of an optimizer trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateReport<T: Real> {
    pub iteration: usize,
    pub f: T,
    pub grad_norm: T,
    pub kkt_residual: T,
    /// Spectral abscissa of `𝒳ℒ`.
    pub abscissa: T,
    pub step: T,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Backtracking found no sufficient decrease before the step fell below
    /// `1e-16` or stopped changing the iterate.
    LineSearchStalled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule<T: Real> {
    Armijo {
        c: T,
        shrink: T,
        alpha0: T,
    },
    /// Constant step; halved only when the trial is infeasible or would
    /// increase `f`.
    Fixed(T),
}

impl<T: Real> Default for StepRule<T> {
    fn default() -> Self {
        Self::Armijo {
            c: lit(1e-4),
            shrink: lit(0.5),
            alpha0: T::one(),
        }
    }
}

/// Settings of the gradient method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmConfig<T: Real> {
    pub step: StepRule<T>,
    pub tol_grad: T,
    pub max_iters: usize,
    pub mode: CvMode,
    pub positivity: bool,
}

impl<T: Real> Default for PmConfig<T> {
    fn default() -> Self {
        Self {
            step: StepRule::default(),
            tol_grad: lit(1e-8),
            max_iters: 5000,
            mode: CvMode::Refresh,
            positivity: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PmOutcome<T: Real> {
    pub vars: DecisionVars<T>,
    /// Structure at the final iterate (`C_V` refreshed in refresh mode).
    pub fs: FixedStructure<T>,
    pub f: T,
    pub grad_norm: T,
    pub kkt: KktResidual<T>,
    pub iterations: usize,
    pub termination: Termination,
    pub history: Vec<IterateReport<T>>,
}

impl<T: Real> PmOutcome<T> {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

fn inner<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.component_mul(b).sum()
}

fn abscissa<T: Real>(f: &DMatrix<T>) -> T {
    spectrum(f).map(|r| r.spectral_abscissa).unwrap_or(T::zero())
}

/// Gradient descent on the stability domain with backtracking.
///
/// Trial points whose `𝒳ℒ` is not Hurwitz count as Armijo failures, so
/// every accepted iterate is feasible and `f` is non-increasing. With
/// positivity on, trial points are projected by [`project_positive`] and
/// the sufficient-decrease test uses the projected step.
///
/// # Errors
/// `InfeasibleStart` when the (projected) start is not in the stability
/// domain.
pub fn run_pm<T: Real>(vars0: &DecisionVars<T>, fs: &FixedStructure<T>, cfg: &PmConfig<T>) -> Result<PmOutcome<T>> {
    let mode = cfg.mode;
    let mut vars = if cfg.positivity {
        project_positive(vars0, fs)
    } else {
        vars0.clone()
    };
    let mut current = match evaluate(&vars, fs, mode, true) {
        Ok(e) => e,
        Err(Error::InfeasiblePoint(a)) => return Err(Error::InfeasibleStart(a)),
        Err(e) => return Err(e),
    };
    let mut history = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut last_step = T::zero();
    let mut iteration = 0;
    loop {
        let grad = current.grad.clone().expect("gradient requested");
        let gnorm = grad.norm();
        let fs_k = fs.with_c_v(current.c_v.clone())?;
        let kkt = kkt_at(&current, &vars, &fs_k)?;
        history.push(IterateReport {
            iteration,
            f: current.f,
            grad_norm: gnorm,
            kkt_residual: kkt.max(),
            abscissa: abscissa(&vars.f(fs)),
            step: last_step,
            accepted: true,
        });
        if gnorm <= cfg.tol_grad * (T::one() + current.f.abs()) {
            termination = Termination::Converged;
            break;
        }
        if iteration >= cfg.max_iters {
            break;
        }
        let x = vars.unknown();
        let (mut alpha, c, shrink) = match cfg.step {
            StepRule::Armijo { c, shrink, alpha0 } => (alpha0, Some(c), shrink),
            StepRule::Fixed(a) => (a, None, lit(0.5)),
        };
        let mut accepted = None;
        while alpha >= lit(1e-16) {
            let mut trial = vars.with_unknown(x - &grad * alpha);
            if cfg.positivity {
                trial = project_positive(&trial, fs);
            }
            // once the step rounds away entirely, further shrinking cannot help
            if trial.unknown() == x {
                break;
            }
            match evaluate(&trial, fs, mode, true) {
                Ok(e) => {
                    let ok = match c {
                        Some(c) => {
                            let decrease = inner(&grad, &(x - trial.unknown()));
                            e.f <= current.f - c * decrease
                        }
                        None => e.f <= current.f,
                    };
                    if ok {
                        accepted = Some((trial, e));
                        break;
                    }
                }
                Err(Error::InfeasiblePoint(_)) | Err(Error::SpectraOverlap { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha *= shrink;
        }
        let Some((next, e)) = accepted else {
            termination = Termination::LineSearchStalled;
            if let Some(last) = history.last_mut() {
                last.accepted = false;
            }
            break;
        };
        vars = next;
        current = e;
        last_step = alpha;
        iteration += 1;
    }
    let fs_final = fs.with_c_v(current.c_v.clone())?;
    let kkt = kkt_at(&current, &vars, &fs_final)?;
    let grad_norm = current.grad.as_ref().map_or(T::zero(), |g| g.norm());
    Ok(PmOutcome {
        f: current.f,
        grad_norm,
        kkt,
        iterations: iteration,
        termination,
        history,
        vars,
        fs: fs_final,
    })
}

fn kkt_at<T: Real>(e: &Evaluation<T>, vars: &DecisionVars<T>, fs: &FixedStructure<T>) -> Result<KktResidual<T>> {
    let w = assemble_sym(&fs.cache.w11, &e.w12, &e.w22);
    let m = assemble_sym(&fs.cache.m11, &e.m12, &e.m22);
    kkt_residual(&w, &m, vars, fs)
}

/// Update rule for the KKT iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KktScheme {
    /// `𝒲 += α(𝒜𝒲 + 𝒲𝒜ᵀ + ℬℬᵀ)`, `ℳ += α(𝒜ᵀℳ + ℳ𝒜 + 𝒞ᵀ𝒞)`,
    /// `𝒳 −= α·r_X`: each Gramian relaxes along its own Lyapunov residual.
    #[default]
    GramianFlow,
    /// The Lagrangian descent–ascent form `𝒲 += α(𝒜ᵀℳ + ℳ𝒜 + 𝒞ᵀ𝒞)`,
    /// `ℳ −= α(𝒜𝒲 + 𝒲𝒜ᵀ + ℬℬᵀ)`, `𝒳 −= α·r_X`.
    Lagrangian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktConfig<T: Real> {
    pub alpha: T,
    pub tol_kkt: T,
    pub max_iters: usize,
    pub scheme: KktScheme,
}

impl<T: Real> Default for KktConfig<T> {
    fn default() -> Self {
        Self {
            alpha: lit(1e-3),
            tol_kkt: lit(1e-6),
            max_iters: 5000,
            scheme: KktScheme::GramianFlow,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KktOutcome<T: Real> {
    pub vars: DecisionVars<T>,
    pub w: DMatrix<T>,
    pub m: DMatrix<T>,
    pub residual: KktResidual<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Whether `𝒳ℒ` is Hurwitz at the last iterate.
    pub stable: bool,
    pub history: Vec<IterateReport<T>>,
}

/// Fixed-step iteration on the coupled KKT system.
///
/// # Errors
/// `Diverged` when the residual exceeds `1e8` times its initial value or
/// becomes non-finite.
pub fn run_kkt<T: Real>(
    vars0: &DecisionVars<T>,
    w0: &DMatrix<T>,
    m0: &DMatrix<T>,
    fs: &FixedStructure<T>,
    cfg: &KktConfig<T>,
) -> Result<KktOutcome<T>> {
    let mut vars = vars0.clone();
    let mut w = w0.clone();
    let mut m = m0.clone();
    let mut history = Vec::new();
    let mut initial = None;
    let mut iteration = 0;
    let alpha = cfg.alpha;
    let (residual, converged) = loop {
        let k = kkt_blocks(&w, &m, &vars, fs)?;
        let res = KktResidual {
            r_m: k.rm.norm(),
            r_w: k.rw.norm(),
            r_x: k.rx.norm(),
        };
        let worst = res.max();
        let start = *initial.get_or_insert(worst.max(lit(1e-300)));
        if !worst.is_finite() || worst > lit::<T>(1e8) * start {
            return Err(Error::Diverged(iteration));
        }
        let f_val = (k.be.transpose() * &m * &k.be).trace();
        history.push(IterateReport {
            iteration,
            f: f_val,
            grad_norm: res.r_x * lit(2.0),
            kkt_residual: worst,
            abscissa: abscissa(&vars.f(fs)),
            step: alpha,
            accepted: true,
        });
        if worst <= cfg.tol_kkt {
            break (res, true);
        }
        if iteration >= cfg.max_iters {
            break (res, false);
        }
        match cfg.scheme {
            KktScheme::GramianFlow => {
                w += &k.rw * alpha;
                m += &k.rm * alpha;
            }
            KktScheme::Lagrangian => {
                w += &k.rm * alpha;
                m -= &k.rw * alpha;
            }
        }
        vars = vars.with_unknown(vars.unknown() - &k.rx * alpha);
        iteration += 1;
    };
    let stable = spectrum(&vars.f(fs))?.is_stable;
    Ok(KktOutcome {
        vars,
        w,
        m,
        residual,
        iterations: iteration,
        converged,
        stable,
        history,
    })
}

/// Sequential feasibility restoration for positive models.
///
/// Clamps `G ≥ 0`, then (Problem 1 only) raises off-diagonal entries of `S`
/// until `offdiag(S − GL) ≥ 0`. This is not an exact joint projection.
pub fn project_positive<T: Real>(vars: &DecisionVars<T>, fs: &FixedStructure<T>) -> DecisionVars<T> {
    let g = vars.g().map(|x| x.max(T::zero()));
    match vars {
        DecisionVars::P1 { .. } => {
            let mut s = vars.s();
            let gl = &g * &fs.l;
            let nu = s.nrows();
            for i in 0..nu {
                for j in 0..nu {
                    if i != j && s[(i, j)] < gl[(i, j)] {
                        s[(i, j)] = gl[(i, j)];
                    }
                }
            }
            DecisionVars::p1(&s, &g)
        }
        DecisionVars::P2 { s, .. } => DecisionVars::p2(s, &g),
    }
}

/// Stabilizing start: `G₀ = place_poles(S, L, targets)`.
pub fn init_pole_placement<T: Real>(
    data: &InterpolationData<T>,
    targets: &[Complex<T>],
    problem: Problem,
) -> Result<DecisionVars<T>> {
    let g = place_poles(data.s(), data.l(), targets)?;
    Ok(match problem {
        Problem::P1 => DecisionVars::p1(data.s(), &g),
        Problem::P2 => DecisionVars::p2(data.s(), &g),
    })
}

/// Default placement targets `{−1, −2, …, −ν}`.
pub fn default_targets<T: Real>(nu: usize) -> Vec<Complex<T>> {
    (1..=nu).map(|k| Complex::new(-lit::<T>(k as f64), T::zero())).collect()
}

/// `S₀ = diag(u₁, …, u_ν)` with `u_i ~ U(0, 1)`, reproducible from `seed`.
pub fn init_random_unstable_s<T: Real>(nu: usize, seed: u64) -> DMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d: Vec<T> = (0..nu).map(|_| lit(rng.random_range(f64::EPSILON..1.0))).collect();
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d))
}

/// Settings for multi-start Problem 1.
#[derive(Debug, Clone)]
pub struct MultiStartConfig<T: Real> {
    pub restarts: usize,
    pub seed: u64,
    pub pm: PmConfig<T>,
    pub targets: Vec<Complex<T>>,
    /// Used for the first restart instead of a random draw.
    pub s0: Option<DMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct MultiStartOutcome<T: Real> {
    pub best: PmOutcome<T>,
    pub best_index: usize,
    /// Final `f` of every restart; `None` when a restart failed.
    pub finals: Vec<Option<T>>,
}

/// Runs Problem 1 from `restarts` random unstable `S₀` (seeds `seed + i`),
/// each stabilized by pole placement, and keeps the lowest final `f`
/// (ties go to the lowest restart index).
///
/// # Errors
/// Propagates the first error if every restart fails.
pub fn run_multistart<T: Real>(
    sys: &LtiSystem<T>,
    l: &DMatrix<T>,
    cfg: &MultiStartConfig<T>,
) -> Result<MultiStartOutcome<T>> {
    let nu = l.ncols();
    let mut best: Option<(usize, PmOutcome<T>)> = None;
    let mut finals = Vec::with_capacity(cfg.restarts);
    let mut first_err = None;
    for i in 0..cfg.restarts.max(1) {
        let s0 = match (&cfg.s0, i) {
            (Some(s), 0) => s.clone(),
            _ => init_random_unstable_s(nu, cfg.seed.wrapping_add(i as u64)),
        };
        let run = (|| {
            let data = InterpolationData::new(s0, l.clone())?;
            let fs = FixedStructure::from_data(sys, &data)?;
            let vars0 = init_pole_placement(&data, &cfg.targets, Problem::P1)?;
            run_pm(&vars0, &fs, &cfg.pm)
        })();
        match run {
            Ok(out) => {
                finals.push(Some(out.f));
                if best.as_ref().is_none_or(|(_, b)| out.f < b.f) {
                    best = Some((i, out));
                }
            }
            Err(e) => {
                finals.push(None);
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((best_index, best)) => Ok(MultiStartOutcome {
            best,
            best_index,
            finals,
        }),
        None => Err(first_err.unwrap_or(Error::InvalidArgument("no restarts".into()))),
    }
}
