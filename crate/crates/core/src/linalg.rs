//! Finite-dimensional complex linear algebra tuned for microstate counting.
//!
//! Projectors are stored as orthonormal range bases rather than dense
//! matrices, so subspace ranks stay exact integers and kernel complements are
//! computed by Gram-Schmidt completion. Dense matrices are materialised only
//! in tests. All numeric comparisons scale an absolute tolerance by the
//! operand norms.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default tolerance for norm-scaled comparisons.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Orthonormality requirement on projector range bases.
pub const BASIS_TOL: f64 = 1e-12;
/// Gram-Schmidt residual below which a candidate counts as linearly
/// dependent on the already chosen directions.
const GS_DROP_TOL: f64 = 1e-6;

/// Measurement outcome sign, used to label spin projectors and joint
/// outcome branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Sign::Plus => 0,
            Sign::Minus => 1,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// Unit vector in R^3 selecting a spin measurement axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction([f64; 3]);

impl Direction {
    pub fn new(components: [f64; 3]) -> Result<Self> {
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitDirection { norm });
        }
        Ok(Direction(components))
    }

    /// Axis in the z-x plane at `angle` radians from +z.
    pub fn from_plane_angle(angle: f64) -> Self {
        Direction([angle.sin(), 0.0, angle.cos()])
    }

    pub fn from_plane_degrees(degrees: f64) -> Self {
        Self::from_plane_angle(degrees.to_radians())
    }

    pub fn components(self) -> [f64; 3] {
        self.0
    }

    pub fn dot(self, other: Direction) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    /// Angle between the two axes, in [0, pi].
    pub fn angle_to(self, other: Direction) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }
}

/// Dense complex vector over a fixed-dimension Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::EmptyVector);
        }
        Ok(StateVector { amplitudes })
    }

    pub fn from_reals(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn zero(dim: usize) -> Self {
        assert!(dim > 0, "zero vector needs a positive dimension");
        StateVector {
            amplitudes: vec![Complex64::new(0.0, 0.0); dim],
        }
    }

    /// Standard basis vector `e_index` in `dim` dimensions.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index out of range");
        let mut v = Self::zero(dim);
        v.amplitudes[index] = Complex64::new(1.0, 0.0);
        v
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }

    /// Hermitian inner product, conjugate-linear in `self` (the first slot).
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.check_dim(other)?;
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, b) in self.amplitudes.iter().zip(other.amplitudes.iter()) {
            acc += a.conj() * b;
        }
        Ok(acc)
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        StateVector {
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn scaled_real(&self, factor: f64) -> Self {
        self.scaled(Complex64::new(factor, 0.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(StateVector {
            amplitudes: self
                .amplitudes
                .iter()
                .zip(other.amplitudes.iter())
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(StateVector {
            amplitudes: self
                .amplitudes
                .iter()
                .zip(other.amplitudes.iter())
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// In-place `self += c * other`. Dimensions must already agree.
    pub(crate) fn add_scaled_assign(&mut self, c: Complex64, other: &Self) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.amplitudes.iter_mut().zip(other.amplitudes.iter()) {
            *a += c * b;
        }
    }

    /// Kronecker product; index layout is `i * other.dim() + j`.
    pub fn tensor(&self, other: &Self) -> Self {
        let mut amplitudes = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amplitudes {
            for b in &other.amplitudes {
                amplitudes.push(a * b);
            }
        }
        StateVector { amplitudes }
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if norm <= 0.0 {
            return Err(Error::ZeroState);
        }
        Ok(self.scaled_real(1.0 / norm))
    }

    pub fn distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    /// True when every amplitude is below `tol` in magnitude relative to
    /// nothing at all: plain absolute comparison on the norm.
    pub fn is_negligible(&self, tol: f64) -> bool {
        self.norm_sq() <= tol * tol
    }
}

/// Orthogonal projector stored as an orthonormal basis of its range.
#[derive(Clone, Debug)]
pub struct Projector {
    dim: usize,
    basis: Vec<StateVector>,
}

impl Projector {
    /// Wraps an already orthonormal family. Pairwise overlaps and norms are
    /// checked against [`BASIS_TOL`].
    pub fn from_orthonormal(dim: usize, basis: Vec<StateVector>) -> Result<Self> {
        let mut max_dev: f64 = 0.0;
        for (i, a) in basis.iter().enumerate() {
            if a.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: a.dim(),
                    right: dim,
                });
            }
            max_dev = max_dev.max((a.norm_sq() - 1.0).abs());
            for b in basis.iter().skip(i + 1) {
                max_dev = max_dev.max(a.inner(b)?.norm());
            }
        }
        if max_dev > BASIS_TOL {
            return Err(Error::NotOrthonormal { deviation: max_dev });
        }
        Ok(Projector { dim, basis })
    }

    /// Projector onto the span of an arbitrary family of vectors.
    pub fn span(dim: usize, vectors: &[StateVector]) -> Result<Self> {
        let mut basis = Vec::new();
        gram_schmidt_extend(&mut basis, &mut vectors.iter().cloned(), vectors.len());
        Ok(Projector { dim, basis })
    }

    /// Rank-one projector onto the ray through `v`.
    pub fn onto_ray(v: &StateVector) -> Result<Self> {
        Ok(Projector {
            dim: v.dim(),
            basis: vec![v.normalized()?],
        })
    }

    /// Projector onto the span of the listed standard basis directions.
    pub fn standard(dim: usize, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= dim {
                return Err(Error::IndexOutOfRange {
                    what: "standard basis",
                    index: i,
                    len: dim,
                });
            }
        }
        Ok(Projector {
            dim,
            basis: indices
                .iter()
                .map(|&i| StateVector::basis(dim, i))
                .collect(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Projector {
            dim,
            basis: (0..dim).map(|i| StateVector::basis(dim, i)).collect(),
        }
    }

    pub fn basis(&self) -> &[StateVector] {
        &self.basis
    }

    /// Orthonormal basis of the kernel, found by completing the range basis
    /// against the standard basis.
    pub fn complement_basis(&self) -> Vec<StateVector> {
        let mut chosen = self.basis.clone();
        let before = chosen.len();
        gram_schmidt_extend(
            &mut chosen,
            &mut (0..self.dim).map(|i| StateVector::basis(self.dim, i)),
            self.dim - before,
        );
        chosen.split_off(before)
    }

    pub fn complement(&self) -> Projector {
        Projector {
            dim: self.dim,
            basis: self.complement_basis(),
        }
    }

    /// `self (x) I_d_right` on the product space, materialised as a range
    /// basis. Use [`ProductProjector`] when the embedded rank gets large.
    pub fn embed_left(&self, d_right: usize) -> Projector {
        let mut basis = Vec::with_capacity(self.basis.len() * d_right);
        for b in &self.basis {
            for j in 0..d_right {
                basis.push(b.tensor(&StateVector::basis(d_right, j)));
            }
        }
        Projector {
            dim: self.dim * d_right,
            basis,
        }
    }

    /// `I_d_left (x) self` on the product space.
    pub fn embed_right(&self, d_left: usize) -> Projector {
        let mut basis = Vec::with_capacity(d_left * self.basis.len());
        for i in 0..d_left {
            let e = StateVector::basis(d_left, i);
            for b in &self.basis {
                basis.push(e.tensor(b));
            }
        }
        Projector {
            dim: d_left * self.dim,
            basis,
        }
    }

    /// Kronecker product projector, materialised. Intended for small ranks.
    pub fn tensor(&self, other: &Projector) -> Projector {
        let mut basis = Vec::with_capacity(self.basis.len() * other.basis.len());
        for a in &self.basis {
            for b in &other.basis {
                basis.push(a.tensor(b));
            }
        }
        Projector {
            dim: self.dim * other.dim,
            basis,
        }
    }

    /// Dense matrix of the projector. Test and diagnostic use only.
    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for b in &self.basis {
            let amps = b.amplitudes();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    m[(i, j)] += amps[i] * amps[j].conj();
                }
            }
        }
        m
    }
}

/// Common interface for projector-like objects: dense range-basis projectors
/// and structured tensor products. Expansion construction needs application,
/// exact ranks, and deterministic streams of orthonormal candidates spanning
/// range and kernel.
pub trait ProjectorLike {
    fn dim(&self) -> usize;
    fn rank(&self) -> usize;
    fn apply(&self, x: &StateVector) -> Result<StateVector>;
    /// Orthonormal vectors spanning the range, in a fixed order.
    fn range_candidates(&self) -> Box<dyn Iterator<Item = StateVector> + '_>;
    /// Orthonormal vectors spanning the kernel, in a fixed order.
    fn kernel_candidates(&self) -> Box<dyn Iterator<Item = StateVector> + '_>;

    fn kernel_rank(&self) -> usize {
        self.dim() - self.rank()
    }
}

impl ProjectorLike for Projector {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rank(&self) -> usize {
        self.basis.len()
    }

    fn apply(&self, x: &StateVector) -> Result<StateVector> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: x.dim(),
            });
        }
        let mut out = StateVector::zero(self.dim);
        for b in &self.basis {
            let c = b.inner(x)?;
            out.add_scaled_assign(c, b);
        }
        Ok(out)
    }

    fn range_candidates(&self) -> Box<dyn Iterator<Item = StateVector> + '_> {
        Box::new(self.basis.iter().cloned())
    }

    fn kernel_candidates(&self) -> Box<dyn Iterator<Item = StateVector> + '_> {
        Box::new(self.complement_basis().into_iter())
    }
}

/// Projector of the form `L (x) R` on a bipartite space, applied without
/// materialising the product basis.
#[derive(Clone, Debug)]
pub struct ProductProjector {
    left: Projector,
    right: Projector,
}

impl ProductProjector {
    pub fn new(left: Projector, right: Projector) -> Self {
        ProductProjector { left, right }
    }

    pub fn left(&self) -> &Projector {
        &self.left
    }

    pub fn right(&self) -> &Projector {
        &self.right
    }

    pub fn left_dim(&self) -> usize {
        self.left.dim
    }

    pub fn right_dim(&self) -> usize {
        self.right.dim
    }

    /// Applies `L (x) I` by projecting the column space of the matricised
    /// vector, then `I (x) R` on the rows.
    fn apply_factors(&self, x: &StateVector) -> StateVector {
        let (dl, dr) = (self.left.dim, self.right.dim);
        let amps = x.amplitudes();
        // Stage 1: y = (L (x) I) x, accumulated basis vector by basis vector.
        let mut y = vec![Complex64::new(0.0, 0.0); dl * dr];
        for b in &self.left.basis {
            let bamps = b.amplitudes();
            let mut coef = vec![Complex64::new(0.0, 0.0); dr];
            for i in 0..dl {
                let bc = bamps[i].conj();
                let row = &amps[i * dr..(i + 1) * dr];
                for (j, &v) in row.iter().enumerate() {
                    coef[j] += bc * v;
                }
            }
            for i in 0..dl {
                let bi = bamps[i];
                let row = &mut y[i * dr..(i + 1) * dr];
                for (j, c) in coef.iter().enumerate() {
                    row[j] += bi * c;
                }
            }
        }
        // Stage 2: z = (I (x) R) y, row by row.
        let mut z = vec![Complex64::new(0.0, 0.0); dl * dr];
        for i in 0..dl {
            let row = &y[i * dr..(i + 1) * dr];
            let out = &mut z[i * dr..(i + 1) * dr];
            for b in &self.right.basis {
                let bamps = b.amplitudes();
                let mut c = Complex64::new(0.0, 0.0);
                for (j, &v) in row.iter().enumerate() {
                    c += bamps[j].conj() * v;
                }
                for (j, o) in out.iter_mut().enumerate() {
                    *o += c * bamps[j];
                }
            }
        }
        StateVector { amplitudes: z }
    }
}

impl ProjectorLike for ProductProjector {
    fn dim(&self) -> usize {
        self.left.dim * self.right.dim
    }

    fn rank(&self) -> usize {
        self.left.basis.len() * self.right.basis.len()
    }

    fn apply(&self, x: &StateVector) -> Result<StateVector> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: x.dim(),
            });
        }
        Ok(self.apply_factors(x))
    }

    fn range_candidates(&self) -> Box<dyn Iterator<Item = StateVector> + '_> {
        Box::new(
            self.left
                .basis
                .iter()
                .flat_map(move |l| self.right.basis.iter().map(move |r| l.tensor(r))),
        )
    }

    /// ker(L (x) R) = ker(L) (x) H_R + ran(L) (x) ker(R).
    fn kernel_candidates(&self) -> Box<dyn Iterator<Item = StateVector> + '_> {
        let left_kernel = self.left.complement_basis();
        let right_kernel = self.right.complement_basis();
        let dr = self.right.dim;
        let first = left_kernel.into_iter().flat_map(move |kl| {
            (0..dr)
                .map(move |j| kl.tensor(&StateVector::basis(dr, j)))
                .collect::<Vec<_>>()
        });
        let second = self.left.basis.iter().flat_map(move |rl| {
            right_kernel
                .clone()
                .into_iter()
                .map(move |kr| rl.tensor(&kr))
        });
        Box::new(first.chain(second))
    }
}

/// Extends `chosen` (assumed orthonormal) with up to `want` vectors drawn
/// from `candidates`, orthogonalising each candidate twice for numerical
/// stability and dropping near-dependent ones. Returns how many were added.
///
/// The candidate order fully determines the result, which keeps expansion
/// construction bit-reproducible.
pub(crate) fn gram_schmidt_extend(
    chosen: &mut Vec<StateVector>,
    candidates: &mut dyn Iterator<Item = StateVector>,
    want: usize,
) -> usize {
    let mut added = 0;
    while added < want {
        let Some(cand) = candidates.next() else {
            break;
        };
        if let Some(next) = orthogonalize_against(&cand, chosen) {
            chosen.push(next);
            added += 1;
        }
    }
    added
}

/// One Gram-Schmidt step with re-orthogonalisation; `None` when the
/// candidate is (numerically) inside the span of `against`.
pub(crate) fn orthogonalize_against(
    candidate: &StateVector,
    against: &[StateVector],
) -> Option<StateVector> {
    let original_norm = candidate.norm();
    if original_norm <= 0.0 {
        return None;
    }
    let mut v = candidate.clone();
    for _ in 0..2 {
        for b in against {
            let c = b.inner(&v).expect("dimensions agree");
            v.add_scaled_assign(-c, b);
        }
    }
    let norm = v.norm();
    if norm <= GS_DROP_TOL * original_norm {
        return None;
    }
    Some(v.scaled_real(1.0 / norm))
}

/// Dense unitary, row-major. Used for invariance checks on expansions; the
/// dimensions involved stay small.
#[derive(Clone, Debug)]
pub struct Unitary {
    dim: usize,
    matrix: Vec<Complex64>,
}

impl Unitary {
    /// Validates that columns are orthonormal within `1e-10`.
    pub fn new(dim: usize, matrix: Vec<Complex64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                left: matrix.len(),
                right: dim * dim,
            });
        }
        let u = Unitary { dim, matrix };
        let dev = u.unitarity_deviation();
        if dev > 1e-10 {
            return Err(Error::NotUnitary { deviation: dev });
        }
        Ok(u)
    }

    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        Unitary { dim, matrix }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn unitarity_deviation(&self) -> f64 {
        let mut max_dev: f64 = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..self.dim {
                    acc += self.matrix[k * self.dim + i].conj() * self.matrix[k * self.dim + j];
                }
                let expected = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((acc - expected).norm());
            }
        }
        max_dev
    }

    pub fn apply(&self, x: &StateVector) -> Result<StateVector> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: x.dim(),
            });
        }
        let amps = x.amplitudes();
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
            for (j, &a) in amps.iter().enumerate() {
                *o += row[j] * a;
            }
        }
        StateVector::new(out)
    }

    /// Unitary sending `from[k]` to `to[k]` and fixing the orthogonal
    /// complement of `span(from)` pointwise. Both families must be
    /// orthonormal and span the same subspace.
    pub fn from_basis_map(dim: usize, from: &[StateVector], to: &[StateVector]) -> Result<Self> {
        if from.len() != to.len() {
            return Err(Error::DimensionMismatch {
                left: from.len(),
                right: to.len(),
            });
        }
        let mut matrix = vec![Complex64::new(0.0, 0.0); dim * dim];
        for (f, t) in from.iter().zip(to.iter()) {
            for i in 0..dim {
                for j in 0..dim {
                    matrix[i * dim + j] += t.amplitudes()[i] * f.amplitudes()[j].conj();
                }
            }
        }
        let mut completion = from.to_vec();
        let before = completion.len();
        gram_schmidt_extend(
            &mut completion,
            &mut (0..dim).map(|i| StateVector::basis(dim, i)),
            dim - before,
        );
        for c in completion.iter().skip(before) {
            for i in 0..dim {
                for j in 0..dim {
                    matrix[i * dim + j] += c.amplitudes()[i] * c.amplitudes()[j].conj();
                }
            }
        }
        Unitary::new(dim, matrix)
    }

    /// Checks `U P = P U` by applying both orders to every standard basis
    /// vector.
    pub fn commutes_with(&self, p: &Projector, tol: f64) -> Result<bool> {
        if p.dim != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: p.dim,
            });
        }
        for i in 0..self.dim {
            let e = StateVector::basis(self.dim, i);
            let up = self.apply(&p.apply(&e)?)?;
            let pu = p.apply(&self.apply(&e)?)?;
            if up.distance(&pu)? > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Projector onto the spin-`outcome` eigenspace of the Pauli operator along
/// `axis`: `(I + outcome * axis . sigma) / 2`. Basis convention: index 0 is
/// spin-up along +z.
pub fn spin_projector(axis: Direction, outcome: Sign) -> Projector {
    let [x, y, z] = axis.components();
    let s = outcome.value();
    let (nx, ny, nz) = (s * x, s * y, s * z);
    // Columns of (I + n.sigma)/2; their squared norms are (1 +- nz)/2, so at
    // least one is well conditioned for every axis.
    let col0 = StateVector::new(vec![
        Complex64::new((1.0 + nz) / 2.0, 0.0),
        Complex64::new(nx / 2.0, ny / 2.0),
    ])
    .expect("two amplitudes");
    let col1 = StateVector::new(vec![
        Complex64::new(nx / 2.0, -ny / 2.0),
        Complex64::new((1.0 - nz) / 2.0, 0.0),
    ])
    .expect("two amplitudes");
    let pick = if col0.norm_sq() >= col1.norm_sq() {
        col0
    } else {
        col1
    };
    Projector::onto_ray(&pick).expect("projector column is nonzero")
}

/// One term of a Schmidt decomposition across a fixed bipartition.
#[derive(Clone, Debug)]
pub struct SchmidtTerm {
    pub coefficient: f64,
    pub left: StateVector,
    pub right: StateVector,
}

/// Schmidt decomposition of `x` across dims `d_left x d_right`, terms sorted
/// by decreasing coefficient. Coefficients below `1e-12` of the largest are
/// dropped; the zero vector yields no terms.
pub fn schmidt(x: &StateVector, d_left: usize, d_right: usize) -> Result<Vec<SchmidtTerm>> {
    if d_left * d_right != x.dim() {
        return Err(Error::BadFactorization {
            dim: x.dim(),
            left: d_left,
            right: d_right,
        });
    }
    if x.norm_sq() == 0.0 {
        return Ok(Vec::new());
    }
    let m = DMatrix::from_fn(d_left, d_right, |i, j| x.amplitudes()[i * d_right + j]);
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let mut terms = Vec::new();
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv <= 1e-12 * max_sv {
            continue;
        }
        let left = StateVector::new((0..d_left).map(|i| u[(i, k)]).collect())?;
        let right = StateVector::new((0..d_right).map(|j| v_t[(k, j)]).collect())?;
        terms.push(SchmidtTerm {
            coefficient: sv,
            left,
            right,
        });
    }
    terms.sort_by(|a, b| b.coefficient.total_cmp(&a.coefficient));
    Ok(terms)
}

/// Schmidt rank with singular values below `tol * ||x||` discarded.
pub fn schmidt_rank(x: &StateVector, d_left: usize, d_right: usize, tol: f64) -> Result<usize> {
    let cutoff = tol * x.norm();
    Ok(schmidt(x, d_left, d_right)?
        .iter()
        .filter(|t| t.coefficient > cutoff)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn random_state(rng: &mut ChaCha12Rng, dim: usize) -> StateVector {
        loop {
            let v = StateVector::new(
                (0..dim)
                    .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                    .collect(),
            )
            .unwrap();
            if v.norm() > 1e-3 {
                return v;
            }
        }
    }

    pub(crate) fn random_projector(rng: &mut ChaCha12Rng, dim: usize, rank: usize) -> Projector {
        let mut basis = Vec::new();
        while basis.len() < rank {
            let cand = random_state(rng, dim);
            if let Some(v) = orthogonalize_against(&cand, &basis) {
                basis.push(v);
            }
        }
        Projector::from_orthonormal(dim, basis).unwrap()
    }

    #[test]
    fn inner_product_is_conjugate_linear_in_first_slot() {
        let x = StateVector::new(vec![c(1.0, 1.0), c(0.0, 0.0)]).unwrap();
        let e1 = StateVector::basis(2, 0);
        let ip = x.inner(&e1).unwrap();
        assert_eq!(ip, c(1.0, -1.0));
    }

    #[test]
    fn tensor_of_basis_vectors_is_a_basis_vector() {
        let e1 = StateVector::basis(2, 0);
        let t = e1.tensor(&e1);
        assert_eq!(t.dim(), 4);
        assert_eq!(t.amplitudes()[0], c(1.0, 0.0));
        assert!(t.amplitudes()[1..].iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn projector_rejects_non_orthonormal_basis() {
        let v = StateVector::from_reals(&[1.0, 1.0]).unwrap();
        let err = Projector::from_orthonormal(2, vec![v]);
        assert!(matches!(err, Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn complement_has_complementary_rank_and_annihilates_range() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let p = random_projector(&mut rng, 6, 2);
        let q = p.complement();
        assert_eq!(q.rank(), 4);
        for b in p.basis() {
            assert!(q.apply(b).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn embed_left_acts_factorwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let p = random_projector(&mut rng, 3, 1);
        let x = random_state(&mut rng, 3);
        let y = random_state(&mut rng, 4);
        let lhs = p.embed_left(4).apply(&x.tensor(&y)).unwrap();
        let rhs = p.apply(&x).unwrap().tensor(&y);
        assert!(lhs.distance(&rhs).unwrap() < 1e-10 * rhs.norm().max(1.0));
    }

    #[test]
    fn product_projector_matches_materialised_tensor() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let p = random_projector(&mut rng, 4, 2);
        let q = random_projector(&mut rng, 3, 2);
        let pp = ProductProjector::new(p.clone(), q.clone());
        let dense = p.tensor(&q);
        let x = random_state(&mut rng, 12);
        let a = pp.apply(&x).unwrap();
        let b = dense.apply(&x).unwrap();
        assert!(a.distance(&b).unwrap() < 1e-10 * x.norm());
        assert_eq!(pp.rank(), dense.rank());
    }

    #[test]
    fn product_projector_kernel_candidates_span_the_kernel() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let p = random_projector(&mut rng, 3, 1);
        let q = random_projector(&mut rng, 2, 1);
        let pp = ProductProjector::new(p, q);
        let kernel: Vec<_> = pp.kernel_candidates().collect();
        assert_eq!(kernel.len(), pp.kernel_rank());
        for k in &kernel {
            assert!(pp.apply(k).unwrap().norm() < 1e-10);
        }
        // Pairwise orthonormal by construction.
        for (i, a) in kernel.iter().enumerate() {
            assert!((a.norm() - 1.0).abs() < 1e-10);
            for b in kernel.iter().skip(i + 1) {
                assert!(a.inner(b).unwrap().norm() < 1e-10);
            }
        }
    }

    #[test]
    fn spin_projector_along_z_selects_first_basis_vector() {
        let p = spin_projector(Direction::new([0.0, 0.0, 1.0]).unwrap(), Sign::Plus);
        assert_eq!(p.rank(), 1);
        let e0 = StateVector::basis(2, 0);
        assert!(p.apply(&e0).unwrap().distance(&e0).unwrap() < 1e-12);
        let e1 = StateVector::basis(2, 1);
        assert!(p.apply(&e1).unwrap().norm() < 1e-12);
    }

    #[test]
    fn spin_projector_along_x_matches_diagonalisation() {
        // Oracle: eigenvector of sigma_x for +1 is (e0 + e1)/sqrt(2).
        let p = spin_projector(Direction::new([1.0, 0.0, 0.0]).unwrap(), Sign::Plus);
        let plus = StateVector::from_reals(&[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]).unwrap();
        assert!(p.apply(&plus).unwrap().distance(&plus).unwrap() < 1e-12);
        let minus = StateVector::from_reals(&[1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()]).unwrap();
        assert!(p.apply(&minus).unwrap().norm() < 1e-12);
    }

    #[test]
    fn opposite_spin_projectors_sum_to_identity() {
        let axis = Direction::from_plane_angle(0.83);
        let p = spin_projector(axis, Sign::Plus);
        let m = spin_projector(axis, Sign::Minus);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = random_state(&mut rng, 2);
        let sum = p.apply(&x).unwrap().add(&m.apply(&x).unwrap()).unwrap();
        assert!(sum.distance(&x).unwrap() < 1e-12 * x.norm());
        assert!(p.basis()[0].inner(&m.basis()[0]).unwrap().norm() < 1e-12);
    }

    #[test]
    fn schmidt_of_product_state_has_one_term() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let x = random_state(&mut rng, 3).normalized().unwrap();
        let y = random_state(&mut rng, 4).normalized().unwrap();
        let terms = schmidt(&x.tensor(&y), 3, 4).unwrap();
        assert_eq!(terms.len(), 1);
        assert!((terms[0].coefficient - 1.0).abs() < 1e-10);
    }

    #[test]
    fn schmidt_of_singlet_like_state_has_two_equal_terms() {
        let inv = 1.0 / 2f64.sqrt();
        let x = StateVector::from_reals(&[0.0, inv, -inv, 0.0]).unwrap();
        let terms = schmidt(&x, 2, 2).unwrap();
        assert_eq!(terms.len(), 2);
        for t in &terms {
            assert!((t.coefficient - inv).abs() < 1e-12);
        }
    }

    #[test]
    fn schmidt_of_zero_vector_is_empty() {
        let z = StateVector::zero(6);
        assert!(schmidt(&z, 2, 3).unwrap().is_empty());
    }

    #[test]
    fn schmidt_reconstructs_random_states() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..100 {
            let x = random_state(&mut rng, 12);
            let terms = schmidt(&x, 3, 4).unwrap();
            let mut rebuilt = StateVector::zero(12);
            for t in &terms {
                rebuilt.add_scaled_assign(
                    Complex64::new(t.coefficient, 0.0),
                    &t.left.tensor(&t.right),
                );
            }
            assert!(rebuilt.distance(&x).unwrap() < 1e-9 * x.norm());
        }
    }

    #[test]
    fn from_basis_map_permutes_and_fixes_complement() {
        let dim = 5;
        let f0 = StateVector::basis(dim, 0);
        let f1 = StateVector::basis(dim, 1);
        let u = Unitary::from_basis_map(dim, &[f0.clone(), f1.clone()], &[f1.clone(), f0.clone()])
            .unwrap();
        assert!(u.apply(&f0).unwrap().distance(&f1).unwrap() < 1e-10);
        let e4 = StateVector::basis(dim, 4);
        assert!(u.apply(&e4).unwrap().distance(&e4).unwrap() < 1e-10);
    }

    #[test]
    fn direction_angle_is_symmetric_and_normalised() {
        let a = Direction::from_plane_degrees(0.0);
        let b = Direction::from_plane_degrees(45.0);
        assert!((a.angle_to(b).to_degrees() - 45.0).abs() < 1e-10);
        assert!((b.angle_to(a) - a.angle_to(b)).abs() < 1e-15);
        assert!(Direction::new([0.5, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn projector_application_is_idempotent(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let dim = rng.gen_range(2..10);
            let rank = rng.gen_range(1..=dim);
            let p = random_projector(&mut rng, dim, rank);
            let x = random_state(&mut rng, dim);
            let once = p.apply(&x).unwrap();
            let twice = p.apply(&once).unwrap();
            prop_assert!(twice.distance(&once).unwrap() <= 1e-10 * x.norm().max(1.0));
        }

        #[test]
        fn unitaries_preserve_norms_and_inner_products(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(1000));
            let dim = rng.gen_range(2..8);
            let p = random_projector(&mut rng, dim, dim);
            let from: Vec<_> = p.basis().to_vec();
            let mut to = from.clone();
            to.rotate_left(1);
            let u = Unitary::from_basis_map(dim, &from, &to).unwrap();
            let x = random_state(&mut rng, dim);
            let y = random_state(&mut rng, dim);
            let ux = u.apply(&x).unwrap();
            let uy = u.apply(&y).unwrap();
            prop_assert!((ux.norm() - x.norm()).abs() <= 1e-9 * x.norm().max(1.0));
            let before = x.inner(&y).unwrap();
            let after = ux.inner(&uy).unwrap();
            prop_assert!((before - after).norm() <= 1e-9 * (x.norm() * y.norm()).max(1.0));
        }

        #[test]
        fn embedded_projector_acts_factorwise(seed in 0u64..200) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(2000));
            let dl = rng.gen_range(2..5);
            let dr = rng.gen_range(2..5);
            let rank = rng.gen_range(1..=dl);
            let p = random_projector(&mut rng, dl, rank);
            let x = random_state(&mut rng, dl);
            let y = random_state(&mut rng, dr);
            let lhs = p.embed_left(dr).apply(&x.tensor(&y)).unwrap();
            let rhs = p.apply(&x).unwrap().tensor(&y);
            prop_assert!(lhs.distance(&rhs).unwrap() <= 1e-10 * rhs.norm().max(1.0));
        }
    }
}
