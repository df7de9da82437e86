//! Moments, Krylov projections, reduced-model families and interpolation
//! checks.
//!
//! Complex conjugate interpolation points are kept in real arithmetic: the
//! pair `a ± ib` becomes the block `[[a, b], [−b, a]]` of `S`, and a point of
//! multiplicity `j` becomes a (real) Jordan block with a `+1` (or `I₂`)
//! superdiagonal. The tangent direction sits in the first column of the
//! block of `L`; the remaining columns are zero.

use nalgebra::{Complex, ComplexField, DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::lti::{complexify, min_distance_to_spectrum, transfer_value, LtiSystem};
use crate::matrix_equations::{controllability_rank, observability_rank, solve_sylvester, spectrum};
use crate::scalar::{eps, lit, to_f64, Real};

/// One distinct interpolation point (or conjugate pair) and its multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGroup<T: Real> {
    /// For a conjugate pair this is the member with positive imaginary part.
    pub point: Complex<T>,
    pub multiplicity: usize,
}

impl<T: Real> PointGroup<T> {
    pub fn is_pair(&self) -> bool {
        self.point.im != T::zero()
    }

    /// Number of columns of `S` occupied by the group.
    pub fn width(&self) -> usize {
        if self.is_pair() {
            2 * self.multiplicity
        } else {
            self.multiplicity
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PointBlock<T: Real> {
    group: PointGroup<T>,
    offset: usize,
}

fn same_point<T: Real>(a: &Complex<T>, b: &Complex<T>) -> bool {
    (a - b).modulus() <= lit::<T>(1e-12) * (T::one() + a.modulus())
}

/// Groups a point list: repeats become multiplicities and conjugate pairs
/// are merged. Order follows first appearance.
///
/// # Errors
/// `InvalidArgument` if a complex point lacks its conjugate or the two
/// members of a pair have different multiplicities.
pub fn group_points<T: Real>(points: &[Complex<T>]) -> Result<Vec<PointGroup<T>>> {
    let mut distinct: Vec<(Complex<T>, usize)> = Vec::new();
    for p in points {
        if let Some(entry) = distinct.iter_mut().find(|(q, _)| same_point(q, p)) {
            entry.1 += 1;
        } else {
            distinct.push((*p, 1));
        }
    }
    let mut groups = Vec::new();
    let mut consumed = vec![false; distinct.len()];
    for i in 0..distinct.len() {
        if consumed[i] {
            continue;
        }
        let (p, mult) = distinct[i];
        consumed[i] = true;
        if p.im.abs() <= lit::<T>(1e-14) * (T::one() + p.re.abs()) {
            groups.push(PointGroup {
                point: Complex::new(p.re, T::zero()),
                multiplicity: mult,
            });
            continue;
        }
        let conj = p.conj();
        let partner = (0..distinct.len()).find(|&j| !consumed[j] && same_point(&distinct[j].0, &conj));
        let Some(j) = partner else {
            return Err(Error::InvalidArgument(format!(
                "complex point {} {:+}j has no conjugate partner",
                to_f64(p.re),
                to_f64(p.im)
            )));
        };
        if distinct[j].1 != mult {
            return Err(Error::InvalidArgument(
                "conjugate pair members have different multiplicities".into(),
            ));
        }
        consumed[j] = true;
        groups.push(PointGroup {
            point: Complex::new(p.re, p.im.abs()),
            multiplicity: mult,
        });
    }
    Ok(groups)
}

/// Signal-generator pair `(S, L)` for the right family.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationData<T: Real> {
    s: DMatrix<T>,
    l: DMatrix<T>,
    structure: Option<Vec<PointBlock<T>>>,
}

impl<T: Real> InterpolationData<T> {
    /// # Errors
    /// `DimensionMismatch` for inconsistent shapes, `NotObservable` if the
    /// pair `(L, S)` is unobservable.
    pub fn new(s: DMatrix<T>, l: DMatrix<T>) -> Result<Self> {
        if !s.is_square() || l.ncols() != s.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "S is {}×{}, L is {}×{}",
                s.nrows(),
                s.ncols(),
                l.nrows(),
                l.ncols()
            )));
        }
        let rank = observability_rank(&l, &s)?;
        if rank < s.nrows() {
            return Err(Error::NotObservable { rank, order: s.nrows() });
        }
        Ok(Self { s, l, structure: None })
    }

    /// Builds the real Jordan-structured `(S, L)` for a point list.
    ///
    /// Repeated points give Jordan blocks and complex points must come with
    /// their conjugates. `directions` holds one tangent vector per group as
    /// returned by [`group_points`].
    pub fn from_points(points: &[Complex<T>], directions: &[DVector<T>]) -> Result<Self> {
        let groups = group_points(points)?;
        Self::from_groups(&groups, directions)
    }

    pub fn from_groups(groups: &[PointGroup<T>], directions: &[DVector<T>]) -> Result<Self> {
        if directions.len() != groups.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} directions for {} point groups",
                directions.len(),
                groups.len()
            )));
        }
        let m = directions.first().map_or(0, |d| d.len());
        if directions.iter().any(|d| d.len() != m) {
            return Err(Error::DimensionMismatch("tangent directions differ in length".into()));
        }
        let nu: usize = groups.iter().map(PointGroup::width).sum();
        let mut s = DMatrix::zeros(nu, nu);
        let mut l = DMatrix::zeros(m, nu);
        let mut structure = Vec::with_capacity(groups.len());
        let mut offset = 0;
        for (g, dir) in groups.iter().zip(directions) {
            let (a, b) = (g.point.re, g.point.im);
            if g.is_pair() {
                for k in 0..g.multiplicity {
                    let o = offset + 2 * k;
                    s[(o, o)] = a;
                    s[(o, o + 1)] = b;
                    s[(o + 1, o)] = -b;
                    s[(o + 1, o + 1)] = a;
                    if k > 0 {
                        s[(o - 2, o)] = T::one();
                        s[(o - 1, o + 1)] = T::one();
                    }
                }
            } else {
                for k in 0..g.multiplicity {
                    let o = offset + k;
                    s[(o, o)] = a;
                    if k > 0 {
                        s[(o - 1, o)] = T::one();
                    }
                }
            }
            l.set_column(offset, dir);
            structure.push(PointBlock {
                group: g.clone(),
                offset,
            });
            offset += g.width();
        }
        let mut data = Self::new(s, l)?;
        data.structure = Some(structure);
        Ok(data)
    }

    pub fn s(&self) -> &DMatrix<T> {
        &self.s
    }

    pub fn l(&self) -> &DMatrix<T> {
        &self.l
    }

    pub fn order(&self) -> usize {
        self.s.nrows()
    }

    /// Point groups when the data was built from a point list.
    pub fn groups(&self) -> Option<Vec<PointGroup<T>>> {
        self.structure
            .as_ref()
            .map(|s| s.iter().map(|b| b.group.clone()).collect())
    }
}

/// Pair `(Q, R)` for the left family.
#[derive(Debug, Clone, PartialEq)]
pub struct DualInterpolationData<T: Real> {
    q: DMatrix<T>,
    r: DMatrix<T>,
}

impl<T: Real> DualInterpolationData<T> {
    /// # Errors
    /// `DimensionMismatch`, or `NotControllable` if `(Q, R)` is not
    /// controllable.
    pub fn new(q: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        if !q.is_square() || r.nrows() != q.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "Q is {}×{}, R is {}×{}",
                q.nrows(),
                q.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        let rank = controllability_rank(&q, &r)?;
        if rank < q.nrows() {
            return Err(Error::NotControllable { rank, order: q.nrows() });
        }
        Ok(Self { q, r })
    }

    /// Dual of right data: `Q = Sᵀ`, `R = Lᵀ`.
    pub fn from_right(data: &InterpolationData<T>) -> Result<Self> {
        Self::new(data.s.transpose(), data.l.transpose())
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    Right,
    Left,
}

/// Moments `CΠ` (right) or `ΥB` (left) with the projector that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet<T: Real> {
    pub kind: MomentKind,
    pub value: DMatrix<T>,
    /// `Π` for right moments, `Υ` for left moments.
    pub projector: DMatrix<T>,
    pub points: Vec<Complex<T>>,
    pub multiplicities: Vec<usize>,
}

/// Distinct eigenvalues of `s` with algebraic multiplicities.
fn eigen_clusters<T: Real>(s: &DMatrix<T>) -> Result<Vec<(Complex<T>, usize)>> {
    let eigs = spectrum(s)?.eigenvalues;
    let mut clusters: Vec<(Complex<T>, usize)> = Vec::new();
    for z in eigs {
        let tol = lit::<T>(1e-4) * (T::one() + z.modulus());
        if let Some(c) = clusters.iter_mut().find(|(w, _)| (w - z).modulus() <= tol) {
            let k = lit::<T>(c.1 as f64);
            c.0 = (c.0 * Complex::new(k, T::zero()) + z) / Complex::new(k + T::one(), T::zero());
            c.1 += 1;
        } else {
            clusters.push((z, 1));
        }
    }
    Ok(clusters)
}

/// Right moments `CΠ` with `AΠ + BL = ΠS`.
///
/// # Errors
/// `SpectraOverlap` if `σ(S)` meets `σ(A)`.
pub fn moments_right<T: Real>(sys: &LtiSystem<T>, data: &InterpolationData<T>) -> Result<MomentSet<T>> {
    if data.l.nrows() != sys.m() {
        return Err(Error::DimensionMismatch(format!(
            "L has {} rows, system has {} inputs",
            data.l.nrows(),
            sys.m()
        )));
    }
    let pi = solve_sylvester(sys.a(), &data.s, &(sys.b() * &data.l))?;
    let clusters = eigen_clusters(&data.s)?;
    Ok(MomentSet {
        kind: MomentKind::Right,
        value: sys.c() * &pi,
        projector: pi,
        points: clusters.iter().map(|c| c.0).collect(),
        multiplicities: clusters.iter().map(|c| c.1).collect(),
    })
}

/// Left moments `ΥB` with `QΥ = ΥA + RC`.
///
/// # Errors
/// `SpectraOverlap` if `σ(Q)` meets `σ(A)`.
pub fn moments_left<T: Real>(sys: &LtiSystem<T>, data: &DualInterpolationData<T>) -> Result<MomentSet<T>> {
    if data.r.ncols() != sys.p() {
        return Err(Error::DimensionMismatch(format!(
            "R has {} columns, system has {} outputs",
            data.r.ncols(),
            sys.p()
        )));
    }
    let upsilon = solve_sylvester(&data.q, sys.a(), &(-(&data.r * sys.c())))?;
    let clusters = eigen_clusters(&data.q)?;
    Ok(MomentSet {
        kind: MomentKind::Left,
        value: &upsilon * sys.b(),
        projector: upsilon,
        points: clusters.iter().map(|c| c.0).collect(),
        multiplicities: clusters.iter().map(|c| c.1).collect(),
    })
}

/// Where a reduced model came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance<T: Real> {
    Right {
        s: DMatrix<T>,
        l: DMatrix<T>,
        pi: DMatrix<T>,
        /// `F` is Hurwitz.
        f_stable: bool,
        /// `σ(F) ∩ σ(S) = ∅`.
        spectra_disjoint: bool,
    },
    Left {
        q: DMatrix<T>,
        r: DMatrix<T>,
        upsilon: DMatrix<T>,
        f_stable: bool,
        spectra_disjoint: bool,
    },
}

/// Reduced model `(F, G, H)` with optional provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel<T: Real> {
    pub f: DMatrix<T>,
    pub g: DMatrix<T>,
    pub h: DMatrix<T>,
    pub provenance: Option<Provenance<T>>,
}

impl<T: Real> ReducedModel<T> {
    /// # Errors
    /// `DimensionMismatch` for inconsistent shapes.
    pub fn new(f: DMatrix<T>, g: DMatrix<T>, h: DMatrix<T>) -> Result<Self> {
        if !f.is_square() || g.nrows() != f.nrows() || h.ncols() != f.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "F is {}×{}, G is {}×{}, H is {}×{}",
                f.nrows(),
                f.ncols(),
                g.nrows(),
                g.ncols(),
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(Self {
            f,
            g,
            h,
            provenance: None,
        })
    }

    pub fn order(&self) -> usize {
        self.f.nrows()
    }

    pub fn pi(&self) -> Option<&DMatrix<T>> {
        match &self.provenance {
            Some(Provenance::Right { pi, .. }) => Some(pi),
            _ => None,
        }
    }

    pub fn to_system(&self) -> Result<LtiSystem<T>> {
        LtiSystem::new(self.f.clone(), self.g.clone(), self.h.clone())
    }
}

fn disjoint_spectra<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<bool> {
    let eb = spectrum(b)?.eigenvalues;
    let gap = min_distance_to_spectrum(a, &eb)?;
    let scale = a.norm().max(b.norm()).max(T::one());
    Ok(gap > lit::<T>(1e-8) * scale)
}

/// Right family member `F = S − GL`, input map `G`, output map `CΠ`.
///
/// # Errors
/// `DimensionMismatch` when `G` or the moments do not fit `(S, L)`.
pub fn assemble_family_right<T: Real>(
    data: &InterpolationData<T>,
    g: &DMatrix<T>,
    moments: &MomentSet<T>,
) -> Result<ReducedModel<T>> {
    let nu = data.order();
    if moments.kind != MomentKind::Right
        || g.nrows() != nu
        || g.ncols() != data.l.nrows()
        || moments.value.ncols() != nu
    {
        return Err(Error::DimensionMismatch(
            "G, L, S and the right moments must share the order ν".into(),
        ));
    }
    let f = &data.s - g * &data.l;
    let f_stable = spectrum(&f)?.is_stable;
    let spectra_disjoint = disjoint_spectra(&f, &data.s)?;
    let mut model = ReducedModel::new(f, g.clone(), moments.value.clone())?;
    model.provenance = Some(Provenance::Right {
        s: data.s.clone(),
        l: data.l.clone(),
        pi: moments.projector.clone(),
        f_stable,
        spectra_disjoint,
    });
    Ok(model)
}

/// Left family member `F = Q − RH`, input map `ΥB`, output map `H`.
///
/// # Errors
/// `DimensionMismatch` when `H` or the moments do not fit `(Q, R)`.
pub fn assemble_family_left<T: Real>(
    data: &DualInterpolationData<T>,
    h: &DMatrix<T>,
    moments: &MomentSet<T>,
) -> Result<ReducedModel<T>> {
    let nu = data.q.nrows();
    if moments.kind != MomentKind::Left || h.ncols() != nu || h.nrows() != data.r.ncols() || moments.value.nrows() != nu
    {
        return Err(Error::DimensionMismatch(
            "H, R, Q and the left moments must share the order ν".into(),
        ));
    }
    let f = &data.q - &data.r * h;
    let f_stable = spectrum(&f)?.is_stable;
    let spectra_disjoint = disjoint_spectra(&f, &data.q)?;
    let mut model = ReducedModel::new(f, moments.value.clone(), h.clone())?;
    model.provenance = Some(Provenance::Left {
        q: data.q.clone(),
        r: data.r.clone(),
        upsilon: moments.projector.clone(),
        f_stable,
        spectra_disjoint,
    });
    Ok(model)
}

/// Explicit resolvent-based projection basis.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovBasis<T: Real> {
    pub kind: MomentKind,
    /// Raw columns `(sI − A)^{-k} B ℓ` (right) or `(sI − Aᵀ)^{-k} Cᵀ rᵀ`
    /// (left); conjugate pairs contribute both members.
    pub v: DMatrix<Complex<T>>,
    /// Non-singular transform with `basis = Re(v·t)`.
    pub t: DMatrix<Complex<T>>,
    /// Real basis: `Π` for the right family, `Υᵀ` for the left family.
    pub basis: DMatrix<T>,
    /// `S` (right) or `Q` (left).
    pub generator: DMatrix<T>,
    /// `L` (right, m×ν) or `R` (left, ν×p).
    pub directions: DMatrix<T>,
    pub points: Vec<Complex<T>>,
    pub multiplicities: Vec<usize>,
}

impl<T: Real> KrylovBasis<T> {
    pub fn interpolation_data(&self) -> Result<InterpolationData<T>> {
        match self.kind {
            MomentKind::Right => InterpolationData::new(self.generator.clone(), self.directions.clone()),
            MomentKind::Left => Err(Error::InvalidArgument("left basis carries (Q, R)".into())),
        }
    }

    pub fn dual_data(&self) -> Result<DualInterpolationData<T>> {
        match self.kind {
            MomentKind::Left => DualInterpolationData::new(self.generator.clone(), self.directions.clone()),
            MomentKind::Right => Err(Error::InvalidArgument("right basis carries (S, L)".into())),
        }
    }
}

fn resolvent_lu<T: Real>(
    a: &DMatrix<T>,
    s: Complex<T>,
) -> Result<nalgebra::LU<Complex<T>, nalgebra::Dyn, nalgebra::Dyn>> {
    let n = a.nrows();
    let mut m = -complexify(a);
    for i in 0..n {
        m[(i, i)] += s;
    }
    let on_spectrum = Error::PointOnSpectrum {
        re: to_f64(s.re),
        im: to_f64(s.im),
        which: "A",
    };
    let lu = m.clone().lu();
    let inv = lu.try_inverse().ok_or(on_spectrum)?;
    let norm1 = |x: &DMatrix<Complex<T>>| {
        x.column_iter()
            .map(|c| c.iter().fold(T::zero(), |acc, z| acc + z.modulus()))
            .fold(T::zero(), |p, q| p.max(q))
    };
    let cond = norm1(&m) * norm1(&inv);
    if !cond.is_finite() || cond > lit::<T>(1e14) {
        return Err(Error::PointOnSpectrum {
            re: to_f64(s.re),
            im: to_f64(s.im),
            which: "A",
        });
    }
    Ok(m.lu())
}

fn build_right_basis<T: Real>(
    sys: &LtiSystem<T>,
    groups: &[PointGroup<T>],
    directions: &[DVector<T>],
    kind: MomentKind,
) -> Result<KrylovBasis<T>> {
    let data = InterpolationData::from_groups(groups, directions)?;
    if data.l.nrows() != sys.m() {
        return Err(Error::DimensionMismatch(format!(
            "tangent directions have length {}, system has {} inputs",
            data.l.nrows(),
            sys.m()
        )));
    }
    let n = sys.n();
    let nu = data.order();
    let mut v = DMatrix::<Complex<T>>::zeros(n, nu);
    let mut t = DMatrix::<Complex<T>>::zeros(nu, nu);
    let half = lit::<T>(0.5);
    let mut col = 0;
    for (g, dir) in groups.iter().zip(directions) {
        let lu = resolvent_lu(sys.a(), g.point)?;
        let bl = sys.b() * dir;
        let mut w = complexify(&DMatrix::from_column_slice(n, 1, bl.as_slice()));
        for k in 0..g.multiplicity {
            w = lu.solve(&w).ok_or(Error::PointOnSpectrum {
                re: to_f64(g.point.re),
                im: to_f64(g.point.im),
                which: "A",
            })?;
            let sign = if k % 2 == 0 { T::one() } else { -T::one() };
            if g.is_pair() {
                v.set_column(col, &w.column(0));
                v.set_column(col + 1, &w.column(0).map(|z| z.conj()));
                let c = Complex::new(sign * half, T::zero());
                let ic = Complex::new(T::zero(), sign * half);
                t[(col, col)] = c;
                t[(col + 1, col)] = c;
                t[(col, col + 1)] = -ic;
                t[(col + 1, col + 1)] = ic;
                col += 2;
            } else {
                v.set_column(col, &w.column(0));
                t[(col, col)] = Complex::new(sign, T::zero());
                col += 1;
            }
        }
    }
    let basis = (&v * &t).map(|z| z.re);
    check_basis_rank(&basis)?;
    let (points, multiplicities) = expand_groups(groups);
    Ok(KrylovBasis {
        kind,
        v,
        t,
        basis,
        generator: data.s,
        directions: data.l,
        points,
        multiplicities,
    })
}

fn expand_groups<T: Real>(groups: &[PointGroup<T>]) -> (Vec<Complex<T>>, Vec<usize>) {
    let mut points = Vec::new();
    let mut mults = Vec::new();
    for g in groups {
        points.push(g.point);
        mults.push(g.multiplicity);
        if g.is_pair() {
            points.push(g.point.conj());
            mults.push(g.multiplicity);
        }
    }
    (points, mults)
}

fn check_basis_rank<T: Real>(basis: &DMatrix<T>) -> Result<()> {
    let (n, nu) = basis.shape();
    if nu == 0 {
        return Ok(());
    }
    if n < nu {
        // A basis wider than the state cannot have full column rank; it is
        // still a valid (degenerate) projection, e.g. derivative columns of a
        // scalar system.
        return Ok(());
    }
    let sv = SVD::new(basis.clone(), false, false).singular_values;
    let smax = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let smin = sv.iter().copied().fold(lit::<T>(f64::INFINITY), |a, b| a.min(b));
    if smax == T::zero() || smin <= lit::<T>(n as f64) * eps::<T>() * smax {
        return Err(Error::RankDeficient);
    }
    if smin / smax < lit::<T>(1e-12) {
        return Err(Error::ClusteredPoints(to_f64(smax / smin)));
    }
    Ok(())
}

/// Point groups with one tangent direction each.
type GroupedPoints<T> = (Vec<PointGroup<T>>, Vec<DVector<T>>);

fn groups_from_distinct<T: Real>(
    points: &[Complex<T>],
    multiplicities: &[usize],
    directions: &[DVector<T>],
) -> Result<GroupedPoints<T>> {
    if multiplicities.len() != points.len() || directions.len() != points.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points, {} multiplicities, {} directions",
            points.len(),
            multiplicities.len(),
            directions.len()
        )));
    }
    if multiplicities.contains(&0) {
        return Err(Error::InvalidArgument("multiplicities must be positive".into()));
    }
    let mut expanded = Vec::new();
    for (p, &k) in points.iter().zip(multiplicities) {
        if expanded.iter().any(|q| same_point(q, p)) {
            return Err(Error::InvalidArgument("interpolation points must be distinct".into()));
        }
        expanded.extend(std::iter::repeat_n(*p, k));
    }
    let groups = group_points(&expanded)?;
    let mut dirs = Vec::with_capacity(groups.len());
    for g in &groups {
        let matching: Vec<&DVector<T>> = points
            .iter()
            .zip(directions)
            .filter(|(p, _)| same_point(p, &g.point) || same_point(p, &g.point.conj()))
            .map(|(_, d)| d)
            .collect();
        if matching.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidArgument(
                "conjugate points need identical real tangent directions".into(),
            ));
        }
        dirs.push(matching[0].clone());
    }
    Ok((groups, dirs))
}

/// Right Krylov basis with columns `(s_jI − A)⁻¹Bℓ_j` for distinct points.
///
/// Conjugate pairs are realified, so `basis` is real and equals the
/// Sylvester solution `Π` for the block-diagonal `S` of the points.
///
/// # Errors
/// `PointOnSpectrum`, `RankDeficient`, `ClusteredPoints`.
pub fn krylov_right<T: Real>(
    sys: &LtiSystem<T>,
    points: &[Complex<T>],
    directions: &[DVector<T>],
) -> Result<KrylovBasis<T>> {
    let ones = vec![1; points.len()];
    krylov_right_higher(sys, points, &ones, directions)
}

/// Right Krylov basis including derivative (Jordan) columns.
///
/// A point of multiplicity `j` contributes `(sI − A)^{-k}Bℓ` for
/// `k = 1..j`; the recorded transform applies the signs `(−1)^{k−1}` so that
/// `basis` solves `AΠ + BL = ΠS` for the `+1`-superdiagonal Jordan `S`.
pub fn krylov_right_higher<T: Real>(
    sys: &LtiSystem<T>,
    points: &[Complex<T>],
    multiplicities: &[usize],
    directions: &[DVector<T>],
) -> Result<KrylovBasis<T>> {
    let (groups, dirs) = groups_from_distinct(points, multiplicities, directions)?;
    build_right_basis(sys, &groups, &dirs, MomentKind::Right)
}

/// Left Krylov basis with columns `(s_jI − Aᵀ)⁻¹Cᵀr_jᵀ`.
///
/// `basis` is `Υᵀ`, where `Υ` solves `QΥ = ΥA + RC` with `Q = Sᵀ` of the
/// dual construction and `R` stacking the directions as rows.
pub fn krylov_left<T: Real>(
    sys: &LtiSystem<T>,
    points: &[Complex<T>],
    directions: &[DVector<T>],
) -> Result<KrylovBasis<T>> {
    let ones = vec![1; points.len()];
    krylov_left_higher(sys, points, &ones, directions)
}

pub fn krylov_left_higher<T: Real>(
    sys: &LtiSystem<T>,
    points: &[Complex<T>],
    multiplicities: &[usize],
    directions: &[DVector<T>],
) -> Result<KrylovBasis<T>> {
    let (groups, dirs) = groups_from_distinct(points, multiplicities, directions)?;
    let mut basis = build_right_basis(&sys.dual(), &groups, &dirs, MomentKind::Left)?;
    basis.generator = basis.generator.transpose();
    basis.directions = basis.directions.transpose();
    Ok(basis)
}

/// One tangential interpolation condition.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationResidual<T: Real> {
    pub point: Complex<T>,
    /// 0 for the value condition, `k` for the condition involving the
    /// `k`-th derivative along a Jordan chain.
    pub order: usize,
    pub residual: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationReport<T: Real> {
    pub residuals: Vec<InterpolationResidual<T>>,
    pub max_residual: T,
    pub pass: bool,
}

/// Jordan chain `x_1 … x_k` of `S` at `λ`: `(S − λI)x_1 = 0`,
/// `(S − λI)x_i = x_{i−1}`.
type Chain<T> = (Complex<T>, Vec<DVector<Complex<T>>>);

fn structural_chains<T: Real>(blocks: &[PointBlock<T>], nu: usize) -> Vec<Chain<T>> {
    let mut chains = Vec::new();
    for b in blocks {
        let g = &b.group;
        let mut xs = Vec::with_capacity(g.multiplicity);
        for k in 0..g.multiplicity {
            let mut x = DVector::<Complex<T>>::zeros(nu);
            if g.is_pair() {
                x[b.offset + 2 * k] = Complex::new(T::one(), T::zero());
                x[b.offset + 2 * k + 1] = Complex::new(T::zero(), T::one());
            } else {
                x[b.offset + k] = Complex::new(T::one(), T::zero());
            }
            xs.push(x);
        }
        chains.push((g.point, xs));
    }
    chains
}

fn numeric_chains<T: Real>(s: &DMatrix<T>) -> Result<Vec<Chain<T>>> {
    let nu = s.nrows();
    let sc = complexify(s);
    let null_tol = lit::<T>(1e-6) * s.norm().max(T::one());
    let mut chains = Vec::new();
    for (lambda, k) in eigen_clusters(s)? {
        if lambda.im < T::zero() {
            continue;
        }
        let mut n = sc.clone();
        for i in 0..nu {
            n[(i, i)] -= lambda;
        }
        let svd = SVD::new(n.clone(), true, true);
        let v_t = svd.v_t.as_ref().ok_or(Error::SchurFailed)?;
        let mut small: Vec<usize> = (0..nu).filter(|&i| svd.singular_values[i] <= null_tol).collect();
        if small.is_empty() {
            let imin = (0..nu)
                .min_by(|&a, &b| {
                    svd.singular_values[a]
                        .partial_cmp(&svd.singular_values[b])
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(0);
            small.push(imin);
        }
        let null_vec = |i: usize| -> DVector<Complex<T>> { v_t.row(i).adjoint() };
        if small.len() >= k {
            for &i in small.iter().take(k) {
                chains.push((lambda, vec![null_vec(i)]));
            }
        } else if small.len() == 1 {
            let mut xs = vec![null_vec(small[0])];
            for _ in 1..k {
                let prev = xs.last().expect("chain start").clone();
                let next = svd
                    .solve(&prev, null_tol)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                xs.push(next);
            }
            chains.push((lambda, xs));
        } else {
            return Err(Error::InvalidArgument(
                "mixed Jordan structure in S is not supported".into(),
            ));
        }
    }
    Ok(chains)
}

/// Central finite-difference `j`-th derivative along the real axis.
fn derivative<T: Real, F>(f: &F, s: Complex<T>, order: usize) -> Result<DMatrix<Complex<T>>>
where
    F: Fn(Complex<T>) -> Result<DMatrix<Complex<T>>>,
{
    if order == 0 {
        return f(s);
    }
    let base = match order {
        1 => 1e-6,
        2 => 1e-4,
        3 => 1e-3,
        _ => 5e-3,
    };
    let h = lit::<T>(base) * (T::one() + s.modulus());
    let mut acc: Option<DMatrix<Complex<T>>> = None;
    let mut binom = 1.0f64;
    for i in 0..=order {
        let shift = lit::<T>(order as f64 / 2.0 - i as f64) * h;
        let val = f(s + Complex::new(shift, T::zero()))?;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let coeff = Complex::new(lit::<T>(sign * binom), T::zero());
        let term = val * coeff;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
        binom = binom * (order - i) as f64 / (i + 1) as f64;
    }
    let hj = Complex::new(h.powi(order as i32), T::zero());
    Ok(acc.expect("at least one stencil point") / hj)
}

/// Checks the tangential interpolation conditions of `model` at `σ(S)`.
///
/// For a Jordan chain `x_1 … x_k` at `λ` with `ℓ_i = L x_i`, condition `k`
/// is `Σ_i D^{(k−i)}(λ)/(k−i)! · ℓ_i = 0` with `D = K − K̂`; for simple
/// points it reduces to `(K(λ) − K̂(λ))ℓ = 0`. Derivatives use central
/// finite differences. Conjugate points are checked once.
///
/// # Errors
/// `PointOnSpectrum` when a point lies on `σ(A)` or `σ(F)`.
pub fn check_interpolation<T: Real>(
    sys: &LtiSystem<T>,
    model: &ReducedModel<T>,
    data: &InterpolationData<T>,
    tol: T,
) -> Result<InterpolationReport<T>> {
    let chains = match &data.structure {
        Some(blocks) => structural_chains(blocks, data.order()),
        None => numeric_chains(&data.s)?,
    };
    let lambdas: Vec<Complex<T>> = chains.iter().map(|c| c.0).collect();
    for (which, a) in [("A", sys.a()), ("F", &model.f)] {
        let gap = min_distance_to_spectrum(a, &lambdas)?;
        if gap <= lit::<T>(1e-10) * (T::one() + a.norm()) {
            let z = lambdas
                .iter()
                .copied()
                .find(|l| min_distance_to_spectrum(a, &[*l]).map(|g| g == gap).unwrap_or(false))
                .unwrap_or(lambdas[0]);
            return Err(Error::PointOnSpectrum {
                re: to_f64(z.re),
                im: to_f64(z.im),
                which,
            });
        }
    }
    let diff = |s: Complex<T>| -> Result<DMatrix<Complex<T>>> {
        let err = || Error::PointOnSpectrum {
            re: to_f64(s.re),
            im: to_f64(s.im),
            which: "A",
        };
        let k = transfer_value(sys.a(), sys.b(), sys.c(), s).ok_or_else(err)?;
        let kh = transfer_value(&model.f, &model.g, &model.h, s).ok_or_else(err)?;
        Ok(k - kh)
    };
    let lc = complexify(&data.l);
    let mut residuals = Vec::new();
    for (lambda, xs) in &chains {
        let ells: Vec<DVector<Complex<T>>> = xs.iter().map(|x| &lc * x).collect();
        let derivs: Vec<DMatrix<Complex<T>>> = (0..xs.len())
            .map(|j| derivative(&diff, *lambda, j))
            .collect::<Result<_>>()?;
        for k in 0..xs.len() {
            let mut acc = DVector::<Complex<T>>::zeros(sys.p());
            let mut fact = 1.0f64;
            for i in (0..=k).rev() {
                let j = k - i;
                if j > 0 {
                    fact *= j as f64;
                }
                let scale = Complex::new(lit::<T>(1.0 / fact), T::zero());
                acc += &derivs[j] * &ells[i] * scale;
            }
            let residual = acc.iter().fold(T::zero(), |a, z| a + z.modulus_squared()).sqrt();
            residuals.push(InterpolationResidual {
                point: *lambda,
                order: k,
                residual,
            });
        }
    }
    let max_residual = residuals.iter().map(|r| r.residual).fold(T::zero(), |a, b| a.max(b));
    Ok(InterpolationReport {
        pass: max_residual <= tol,
        max_residual,
        residuals,
    })
}
