//! Equiamplitude expansions: decompositions of a state vector into pairwise
//! orthogonal pieces of equal norm that sum back to the state.
//!
//! Three constructions are provided. [`equiamplitude_expand`] splits a state
//! into `n` pieces with no further structure. [`adapted_expand`] arranges the
//! pieces so that almost all are eigenstates of a target projector, with at
//! most one residual piece that is not. [`product_adapted_expand`] does the
//! same for a family of mutually orthogonal product projectors on a bipartite
//! space, emitting per-branch grids of product-form pieces plus residuals.
//!
//! All three are built on the same mixer: given an orthonormal family
//! `f_1..f_k` with `f_1` aligned to the vector being split, the pieces
//! `xi_j = (norm/k) * sum_k omega^{jk} f_k` (omega a primitive k-th root of
//! unity) are pairwise orthogonal, share the same norm, and sum to the
//! original vector because the phases cancel columnwise. The mixing basis is
//! completed deterministically, so identical inputs produce bit-identical
//! expansions.

use num_complex::Complex64;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha12Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    orthogonalize_against, schmidt, ProductProjector, Projector, ProjectorLike, StateVector,
    Unitary,
};

/// Relative slack (scaled by `n`) under which `p * n` counts as an integer.
pub const INTEGRALITY_SNAP: f64 = 1e-9;
/// Default eigenstate classification tolerance.
pub const CLASSIFY_EPS: f64 = 1e-9;

/// How a microstate relates to a target projector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    InRange,
    InKernel,
    Cat,
}

/// Tensor factors of a product-form microstate.
#[derive(Clone, Debug)]
pub struct ProductParts {
    pub left: StateVector,
    pub right: StateVector,
}

/// One piece of an expansion.
///
/// `weight` is the piece's share of the expansion in units of the squared
/// amplitude: ordinary microstates carry weight 1, while the residual pieces
/// of a product expansion aggregate the mass their branch could not fit into
/// the grid. `||vector||^2 = weight * amplitude^2` always holds.
#[derive(Clone, Debug)]
pub struct Microstate {
    pub vector: StateVector,
    pub weight: f64,
    pub classification: Option<Classification>,
    pub branch_label: Option<String>,
    pub product_parts: Option<ProductParts>,
}

impl Microstate {
    fn plain(vector: StateVector) -> Self {
        Microstate {
            vector,
            weight: 1.0,
            classification: None,
            branch_label: None,
            product_parts: None,
        }
    }

    fn classified(vector: StateVector, class: Classification) -> Self {
        Microstate {
            classification: Some(class),
            ..Microstate::plain(vector)
        }
    }
}

/// An equiamplitude expansion of a parent state into `n` slots.
///
/// Every stored piece is orthogonal to every other piece and the pieces sum
/// to the parent. The vector list has exactly `n` entries unless residual
/// pieces aggregate more than one slot of mass each (only the product
/// construction does that), so `n` is stored explicitly and is the
/// denominator for all probability counting.
#[derive(Clone, Debug)]
pub struct Expansion {
    parent: StateVector,
    amplitude: f64,
    slots: usize,
    microstates: Vec<Microstate>,
}

impl Expansion {
    /// Assembles an expansion without validating it; pair with
    /// [`verify_expansion`]. The amplitude is fixed by the parent and `n`.
    pub fn from_microstates(parent: StateVector, n: usize, microstates: Vec<Microstate>) -> Self {
        let amplitude = parent.norm() / (n as f64).sqrt();
        Expansion {
            parent,
            amplitude,
            slots: n,
            microstates,
        }
    }

    pub fn parent(&self) -> &StateVector {
        &self.parent
    }

    /// Common norm of the weight-1 microstates.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Number of slots (the counting denominator).
    pub fn n(&self) -> usize {
        self.slots
    }

    pub fn microstates(&self) -> &[Microstate] {
        &self.microstates
    }

    pub fn dim(&self) -> usize {
        self.parent.dim()
    }

    /// Applies a unitary to the parent and every piece, preserving weights,
    /// classifications, and labels. Product structure is dropped: a general
    /// unitary does not respect the factorization.
    pub fn transformed(&self, u: &Unitary) -> Result<Expansion> {
        let mut microstates = Vec::with_capacity(self.microstates.len());
        for m in &self.microstates {
            microstates.push(Microstate {
                vector: u.apply(&m.vector)?,
                weight: m.weight,
                classification: m.classification,
                branch_label: m.branch_label.clone(),
                product_parts: None,
            });
        }
        Ok(Expansion {
            parent: u.apply(&self.parent)?,
            amplitude: self.amplitude,
            slots: self.slots,
            microstates,
        })
    }

    pub fn to_dump(&self) -> ExpansionDump {
        ExpansionDump {
            parent: complex_pairs(&self.parent),
            amplitude: self.amplitude,
            n: self.slots,
            microstates: self
                .microstates
                .iter()
                .map(|m| MicrostateDump {
                    amplitudes: complex_pairs(&m.vector),
                    classification: m.classification,
                    branch_label: m.branch_label.clone(),
                })
                .collect(),
        }
    }
}

fn complex_pairs(v: &StateVector) -> Vec<[f64; 2]> {
    v.amplitudes().iter().map(|c| [c.re, c.im]).collect()
}

/// Serialization form of an expansion; complex amplitudes as `[re, im]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansionDump {
    pub parent: Vec<[f64; 2]>,
    pub amplitude: f64,
    pub n: usize,
    pub microstates: Vec<MicrostateDump>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MicrostateDump {
    pub amplitudes: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_label: Option<String>,
}

/// Slot tallies of an expansion adapted to a single projector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationCounts {
    pub in_range: usize,
    pub in_kernel: usize,
    pub cat: usize,
}

impl AdaptationCounts {
    pub fn n(&self) -> usize {
        self.in_range + self.in_kernel + self.cat
    }
}

/// Expansion adapted to one projector: `in_range` pieces lie in its range,
/// `in_kernel` pieces in its kernel, and at most one piece straddles both.
#[derive(Clone, Debug)]
pub struct AdaptedExpansion {
    pub expansion: Expansion,
    pub counts: AdaptationCounts,
}

/// One projector of a product family, acting as `left (x) right` on a
/// bipartite space. `label` names the joint outcome, e.g. `"+-"`.
#[derive(Clone, Debug)]
pub struct BranchProjector {
    pub label: String,
    pub left: Projector,
    pub right: Projector,
}

/// Slot allocation for one branch of a product expansion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchCount {
    pub label: String,
    /// Per-wing grid shape; `count = grid.0 * grid.1`.
    pub grid: (usize, usize),
    pub count: usize,
    /// The branch's exact share of slots, `n * weight`; `count` is its
    /// integer part realized as product microstates.
    pub target_mass: f64,
}

/// Expansion adapted to a family of product projectors. The grid pieces of
/// each branch are product vectors carrying that branch's label; whatever
/// mass the integer grids could not absorb sits in `cat_slots` residual
/// slots, realized as one unlabeled-weight residual vector per branch.
#[derive(Clone, Debug)]
pub struct ProductAdaptedExpansion {
    pub expansion: Expansion,
    pub branches: Vec<BranchCount>,
    pub cat_slots: usize,
}

impl ProductAdaptedExpansion {
    pub fn n(&self) -> usize {
        self.expansion.n()
    }

    pub fn branch(&self, label: &str) -> Option<&BranchCount> {
        self.branches.iter().find(|b| b.label == label)
    }
}

/// Streams an orthonormal family drawn from an orthonormal candidate
/// iterator, with the span of a small excluded set removed. Works in time
/// linear in the number of candidates: instead of re-orthogonalizing against
/// everything accepted so far, it maintains the (at most two-dimensional)
/// remainder of the excluded span not yet absorbed by accepted candidates.
struct ExcludingStream<I> {
    candidates: I,
    live: Vec<StateVector>,
}

impl<I: Iterator<Item = StateVector>> ExcludingStream<I> {
    fn new(candidates: I, excluded: &[StateVector]) -> Self {
        let mut live = Vec::with_capacity(excluded.len());
        for e in excluded {
            if let Some(v) = orthogonalize_against(e, &live) {
                live.push(v);
            }
        }
        ExcludingStream { candidates, live }
    }
}

impl<I: Iterator<Item = StateVector>> Iterator for ExcludingStream<I> {
    type Item = StateVector;

    fn next(&mut self) -> Option<StateVector> {
        for cand in self.candidates.by_ref() {
            let Some(out) = orthogonalize_against(&cand, &self.live) else {
                continue;
            };
            // The accepted candidate absorbs part of the excluded span; the
            // live remainder must stay orthogonal to it.
            let old = std::mem::take(&mut self.live);
            for g in &old {
                let mut v = g.clone();
                for _ in 0..2 {
                    let c = cand.inner(&v).expect("dimensions agree");
                    v.add_scaled_assign(-c, &cand);
                }
                // g was a unit vector; if the accepted candidate absorbed it
                // almost entirely, what is left is rounding noise.
                if v.norm() <= 1e-8 {
                    continue;
                }
                if let Some(kept) = orthogonalize_against(&v, &self.live) {
                    self.live.push(kept);
                }
            }
            return Some(out);
        }
        None
    }
}

/// Splits `target` into `extras.len() + 1` pairwise orthogonal pieces of
/// equal norm summing to `target`, by phasing the orthonormal family
/// `{target/||target||} U extras` through the inverse discrete Fourier
/// transform. `extras` must be orthonormal and orthogonal to `target`.
fn dft_pieces(target: &StateVector, extras: &[StateVector]) -> Vec<StateVector> {
    let count = extras.len() + 1;
    if count == 1 {
        return vec![target.clone()];
    }
    let dim = target.dim();
    let norm = target.norm();
    let scale = Complex64::new(norm / count as f64, 0.0);
    let inv_norm = 1.0 / norm;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(count);
    let mut pieces = vec![StateVector::zero(dim); count];
    let mut buf = vec![Complex64::new(0.0, 0.0); count];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for d in 0..dim {
        buf[0] = target.amplitudes()[d] * inv_norm;
        for (slot, extra) in buf[1..].iter_mut().zip(extras.iter()) {
            *slot = extra.amplitudes()[d];
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (piece, value) in pieces.iter_mut().zip(buf.iter()) {
            piece.amplitudes_mut()[d] = value * scale;
        }
    }
    pieces
}

/// Orthogonal split of `side` into a main part of squared norm `main_mass`
/// and a residue carrying the rest, both inside the plane spanned by `side`
/// and `partner` (a unit vector orthogonal to `side` in the same subspace).
fn residue_split(
    side: &StateVector,
    main_mass: f64,
    partner: &StateVector,
) -> (StateVector, StateVector) {
    let total = side.norm_sq();
    let rest = total - main_mass;
    let t = total.sqrt();
    let cross = (main_mass * rest / total).sqrt();
    let g1 = side.scaled_real(1.0 / t);
    let mut main = g1.scaled_real(main_mass / t);
    main.add_scaled_assign(Complex64::new(cross, 0.0), partner);
    let mut residue = g1.scaled_real(rest / t);
    residue.add_scaled_assign(Complex64::new(-cross, 0.0), partner);
    (main, residue)
}

fn collect_extras<I: Iterator<Item = StateVector>>(
    stream: &mut ExcludingStream<I>,
    want: usize,
    side: &'static str,
    needed: usize,
) -> Result<Vec<StateVector>> {
    let extras: Vec<StateVector> = stream.take(want).collect();
    if extras.len() < want {
        return Err(Error::InsufficientRank {
            side,
            needed,
            available: needed - (want - extras.len()),
        });
    }
    Ok(extras)
}

/// Expands `psi` into `n` pairwise orthogonal equal-norm pieces summing to
/// `psi`. The mixing subspace is completed from `subspace_seed` (checked
/// against nothing; near-dependent vectors are skipped) and then the
/// standard basis, in order, so the result is deterministic.
pub fn equiamplitude_expand(
    psi: &StateVector,
    n: usize,
    subspace_seed: Option<&[StateVector]>,
) -> Result<Expansion> {
    if psi.norm_sq() <= 0.0 {
        return Err(Error::ZeroState);
    }
    let dim = psi.dim();
    if n < 2 || n > dim {
        return Err(Error::MicrostateCountOutOfRange {
            n,
            min: 2,
            max: dim,
        });
    }
    let mut chosen = vec![psi.normalized()?];
    let mut added = 0;
    if let Some(seed) = subspace_seed {
        for cand in seed {
            if added == n - 1 {
                break;
            }
            if let Some(v) = orthogonalize_against(cand, &chosen) {
                chosen.push(v);
                added += 1;
            }
        }
    }
    let mut basis_index = 0;
    while added < n - 1 && basis_index < dim {
        let cand = StateVector::basis(dim, basis_index);
        basis_index += 1;
        if let Some(v) = orthogonalize_against(&cand, &chosen) {
            chosen.push(v);
            added += 1;
        }
    }
    if added < n - 1 {
        return Err(Error::MicrostateCountOutOfRange {
            n,
            min: 2,
            max: added + 1,
        });
    }
    let extras = &chosen[1..];
    let pieces = dft_pieces(psi, extras);
    let microstates = pieces.into_iter().map(Microstate::plain).collect();
    Ok(Expansion::from_microstates(psi.clone(), n, microstates))
}

/// Expands `psi` into `n` slots adapted to `target`: `m = floor(p n)` pieces
/// in the range, `floor((1-p) n)` in the kernel (`p` the Born weight of the
/// range), and one straddling residual piece unless `p n` is an integer.
///
/// Products within [`INTEGRALITY_SNAP`] (scaled by `n`) of an integer are
/// treated as integral. Each side needs one spare dimension beyond its piece
/// count when it carries part of the residual.
pub fn adapted_expand<P: ProjectorLike + ?Sized>(
    psi: &StateVector,
    target: &P,
    n: usize,
) -> Result<AdaptedExpansion> {
    let norm_sq = psi.norm_sq();
    if norm_sq <= 0.0 {
        return Err(Error::ZeroState);
    }
    if n < 2 {
        return Err(Error::MicrostateCountOutOfRange {
            n,
            min: 2,
            max: psi.dim(),
        });
    }
    if target.dim() != psi.dim() {
        return Err(Error::DimensionMismatch {
            left: target.dim(),
            right: psi.dim(),
        });
    }
    let amp_sq = norm_sq / n as f64;
    let range_vec = target.apply(psi)?;
    let kernel_vec = psi.sub(&range_vec)?;
    let t_range = (range_vec.norm_sq() / norm_sq).clamp(0.0, 1.0) * n as f64;
    let rounded = t_range.round();
    let integral = (t_range - rounded).abs() <= INTEGRALITY_SNAP * n as f64;
    let (m, m_kernel, cat) = if integral {
        let m = rounded as usize;
        (m, n - m, 0)
    } else {
        let m = t_range.floor() as usize;
        (m, n - m - 1, 1)
    };

    let (range_pieces, range_residue) = expand_one_side(
        &range_vec,
        m,
        !integral,
        amp_sq,
        target.rank(),
        "range",
        || target.range_candidates(),
    )?;
    let (kernel_pieces, kernel_residue) = expand_one_side(
        &kernel_vec,
        m_kernel,
        !integral,
        amp_sq,
        target.kernel_rank(),
        "kernel",
        || target.kernel_candidates(),
    )?;

    let mut microstates = Vec::with_capacity(n);
    for v in range_pieces {
        microstates.push(Microstate::classified(v, Classification::InRange));
    }
    for v in kernel_pieces {
        microstates.push(Microstate::classified(v, Classification::InKernel));
    }
    if cat == 1 {
        let r = match (range_residue, kernel_residue) {
            (Some(a), Some(b)) => a.add(&b)?,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => {
                return Err(Error::FailedVerification {
                    reason: "non-integral split produced no residue".into(),
                })
            }
        };
        microstates.push(Microstate::classified(r, Classification::Cat));
    }
    Ok(AdaptedExpansion {
        expansion: Expansion::from_microstates(psi.clone(), n, microstates),
        counts: AdaptationCounts {
            in_range: m,
            in_kernel: m_kernel,
            cat,
        },
    })
}

/// Side worker for [`adapted_expand`]: splits one eigenspace component into
/// `m` equal-norm pieces of squared norm `amp_sq`, plus a residue when the
/// side mass is not exactly `m * amp_sq`.
fn expand_one_side<I, F>(
    side: &StateVector,
    m: usize,
    fractional: bool,
    amp_sq: f64,
    rank: usize,
    name: &'static str,
    candidates: F,
) -> Result<(Vec<StateVector>, Option<StateVector>)>
where
    I: Iterator<Item = StateVector>,
    F: Fn() -> I,
{
    if m == 0 {
        return if fractional {
            Ok((Vec::new(), Some(side.clone())))
        } else {
            Ok((Vec::new(), None))
        };
    }
    let needed = m + usize::from(fractional);
    if needed > rank {
        return Err(Error::InsufficientRank {
            side: name,
            needed,
            available: rank,
        });
    }
    let g1 = side.normalized()?;
    if !fractional {
        let mut stream = ExcludingStream::new(candidates(), std::slice::from_ref(&g1));
        let extras = collect_extras(&mut stream, m - 1, name, needed)?;
        return Ok((dft_pieces(side, &extras), None));
    }
    let g2 = ExcludingStream::new(candidates(), std::slice::from_ref(&g1))
        .next()
        .ok_or(Error::InsufficientRank {
            side: name,
            needed,
            available: m,
        })?;
    let (main, residue) = residue_split(side, m as f64 * amp_sq, &g2);
    let main_hat = main.normalized()?;
    let residue_hat = residue.normalized()?;
    let mut stream = ExcludingStream::new(candidates(), &[main_hat, residue_hat]);
    let extras = collect_extras(&mut stream, m - 1, name, needed)?;
    Ok((dft_pieces(&main, &extras), Some(residue)))
}

/// Expands `psi` against a family of mutually orthogonal product projectors
/// summing to the identity. Each branch vector must factor across the
/// bipartition (Schmidt rank 1); it is realized as a `k_left x k_right` grid
/// of product microstates, with per-branch leftovers kept as residual
/// vectors whose slot total is `n` minus the grid total.
///
/// Grid shape: when the branch's slot share `t` is an integer `K`, `k_left`
/// is the largest divisor of `K` with `k_left^2 <= K` that fits both wing
/// ranks. Otherwise `k_left = floor(sqrt(t))` and `k_right = floor(t /
/// k_left)`, and each wing needs one spare dimension for its residue.
pub fn product_adapted_expand(
    psi: &StateVector,
    branches: &[BranchProjector],
    n: usize,
) -> Result<ProductAdaptedExpansion> {
    let norm_sq = psi.norm_sq();
    if norm_sq <= 0.0 {
        return Err(Error::ZeroState);
    }
    if branches.is_empty() {
        return Err(Error::InvalidBranchFamily {
            reason: "empty family".into(),
        });
    }
    let d_left = branches[0].left.dim();
    let d_right = branches[0].right.dim();
    if d_left * d_right != psi.dim() {
        return Err(Error::BadFactorization {
            dim: psi.dim(),
            left: d_left,
            right: d_right,
        });
    }
    validate_branch_family(branches, d_left, d_right)?;
    if n < branches.len().max(2) {
        return Err(Error::MicrostateCountOutOfRange {
            n,
            min: branches.len().max(2),
            max: psi.dim(),
        });
    }

    let amp_sq = norm_sq / n as f64;
    let mut grid_states = Vec::new();
    let mut residues = Vec::new();
    let mut counts = Vec::with_capacity(branches.len());
    let mut allocated = 0usize;

    for branch in branches {
        let projector = ProductProjector::new(branch.left.clone(), branch.right.clone());
        let branch_vec = projector.apply(psi)?;
        let t = branch_vec.norm_sq() / amp_sq;
        let rounded = t.round();
        let integral = (t - rounded).abs() <= INTEGRALITY_SNAP * n as f64;
        if integral && rounded == 0.0 {
            counts.push(BranchCount {
                label: branch.label.clone(),
                grid: (0, 0),
                count: 0,
                target_mass: t,
            });
            continue;
        }

        let terms = schmidt(&branch_vec, d_left, d_right)?;
        let cutoff = 1e-9 * branch_vec.norm();
        let significant = terms.iter().filter(|s| s.coefficient > cutoff).count();
        if significant > 1 {
            return Err(Error::EntangledBranch {
                label: branch.label.clone(),
                rank: significant,
            });
        }
        let lead = &terms[0];
        let u = lead.left.scaled_real(lead.coefficient);
        let v = lead.right.clone();

        let (k_left, k_right, residue_weight) =
            if integral {
                let k = rounded as usize;
                let (ka, kb) = balanced_grid(k, branch.left.rank(), branch.right.rank())
                    .ok_or_else(|| Error::UnrealizableBranchGrid {
                        label: branch.label.clone(),
                        count: k,
                        left: branch.left.rank(),
                        right: branch.right.rank(),
                    })?;
                (ka, kb, 0.0)
            } else if t < 1.0 {
                (0, 0, t)
            } else {
                // A fractional branch leaves a residue on each wing, so the
                // grid sides must each spare one range direction.
                let (ka, kb) =
                    best_grid_under(t.floor() as usize, branch.left.rank(), branch.right.rank())
                        .ok_or(Error::InsufficientRank {
                            side: "branch wings",
                            needed: 2,
                            available: branch.left.rank().min(branch.right.rank()),
                        })?;
                (ka, kb, t - (ka * kb) as f64)
            };
        let count = k_left * k_right;
        allocated += count;

        if count > 0 {
            let ratio = if integral {
                1.0
            } else {
                ((count as f64) / t).sqrt()
            };
            let left_pieces = expand_wing(&u, k_left, ratio, &branch.left, "branch left wing")?;
            let right_pieces = expand_wing(&v, k_right, ratio, &branch.right, "branch right wing")?;
            let mut rebuilt_main: Option<StateVector> = None;
            for lp in &left_pieces.pieces {
                for rp in &right_pieces.pieces {
                    let vector = lp.tensor(rp);
                    grid_states.push(Microstate {
                        vector,
                        weight: 1.0,
                        classification: Some(Classification::InRange),
                        branch_label: Some(branch.label.clone()),
                        product_parts: Some(ProductParts {
                            left: lp.clone(),
                            right: rp.clone(),
                        }),
                    });
                }
            }
            if !integral {
                let main = left_pieces.main.tensor(&right_pieces.main);
                rebuilt_main = Some(main);
            }
            if let Some(main) = rebuilt_main {
                let residue = branch_vec.sub(&main)?;
                residues.push(Microstate {
                    vector: residue,
                    weight: residue_weight,
                    classification: Some(Classification::Cat),
                    branch_label: Some(branch.label.clone()),
                    product_parts: None,
                });
            }
        } else {
            // Too light for even a single grid cell: the whole branch
            // component is residual.
            residues.push(Microstate {
                vector: branch_vec,
                weight: residue_weight,
                classification: Some(Classification::Cat),
                branch_label: Some(branch.label.clone()),
                product_parts: None,
            });
        }
        counts.push(BranchCount {
            label: branch.label.clone(),
            grid: (k_left, k_right),
            count,
            target_mass: t,
        });
    }

    let cat_slots = n - allocated;
    let mut microstates = grid_states;
    microstates.extend(residues);
    Ok(ProductAdaptedExpansion {
        expansion: Expansion::from_microstates(psi.clone(), n, microstates),
        branches: counts,
        cat_slots,
    })
}

struct WingPieces {
    pieces: Vec<StateVector>,
    /// Sum of the pieces: the wing's main component.
    main: StateVector,
}

/// Splits wing vector `w` into `k` equal-norm pieces carrying `ratio` of its
/// squared norm (`ratio = 1` consumes the wing exactly; `ratio < 1` leaves a
/// residue orthogonal to every piece).
fn expand_wing(
    w: &StateVector,
    k: usize,
    ratio: f64,
    wing: &Projector,
    name: &'static str,
) -> Result<WingPieces> {
    let g1 = w.normalized()?;
    if (ratio - 1.0).abs() <= f64::EPSILON * 8.0 {
        let mut stream = ExcludingStream::new(wing.range_candidates(), std::slice::from_ref(&g1));
        let extras = collect_extras(&mut stream, k - 1, name, k)?;
        return Ok(WingPieces {
            pieces: dft_pieces(w, &extras),
            main: w.clone(),
        });
    }
    let g2 = ExcludingStream::new(wing.range_candidates(), std::slice::from_ref(&g1))
        .next()
        .ok_or(Error::InsufficientRank {
            side: name,
            needed: k + 1,
            available: k,
        })?;
    let (main, residue) = residue_split(w, w.norm_sq() * ratio, &g2);
    let main_hat = main.normalized()?;
    let residue_hat = residue.normalized()?;
    let mut stream = ExcludingStream::new(wing.range_candidates(), &[main_hat, residue_hat]);
    let extras = collect_extras(&mut stream, k - 1, name, k + 1)?;
    Ok(WingPieces {
        pieces: dft_pieces(&main, &extras),
        main,
    })
}

fn validate_branch_family(
    branches: &[BranchProjector],
    d_left: usize,
    d_right: usize,
) -> Result<()> {
    let mut total_rank = 0usize;
    for (i, b) in branches.iter().enumerate() {
        if b.left.dim() != d_left || b.right.dim() != d_right {
            return Err(Error::InvalidBranchFamily {
                reason: format!("branch {} has mismatched wing dimensions", b.label),
            });
        }
        total_rank += b.left.rank() * b.right.rank();
        for other in branches.iter().skip(i + 1) {
            if !wing_orthogonal(&b.left, &other.left) && !wing_orthogonal(&b.right, &other.right) {
                return Err(Error::InvalidBranchFamily {
                    reason: format!("branches {} and {} overlap", b.label, other.label),
                });
            }
        }
    }
    if total_rank != d_left * d_right {
        return Err(Error::InvalidBranchFamily {
            reason: format!(
                "branch ranks sum to {} but the space has dimension {}",
                total_rank,
                d_left * d_right
            ),
        });
    }
    Ok(())
}

fn wing_orthogonal(a: &Projector, b: &Projector) -> bool {
    for x in a.basis() {
        for y in b.basis() {
            if x.inner(y).map(|c| c.norm()).unwrap_or(f64::INFINITY) > 1e-10 {
                return false;
            }
        }
    }
    true
}

/// Eigenstate test of `xi` against `p`: in the range, in the kernel, or a
/// straddling "cat" vector, with both tests relative to `||xi||`.
pub fn classify<P: ProjectorLike + ?Sized>(
    xi: &StateVector,
    p: &P,
    eps: f64,
) -> Result<Classification> {
    let norm = xi.norm();
    if norm <= 0.0 {
        return Err(Error::ZeroState);
    }
    let image = p.apply(xi)?;
    if image.distance(xi)? <= eps * norm {
        return Ok(Classification::InRange);
    }
    if image.norm() <= eps * norm {
        return Ok(Classification::InKernel);
    }
    Ok(Classification::Cat)
}

/// Geometry report for an expansion, all figures relative: overlaps are in
/// units of the squared amplitude, norm deviations in units of the
/// amplitude, reconstruction in units of the parent norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub max_overlap: f64,
    pub max_norm_deviation: f64,
    pub reconstruction_error: f64,
    pub pairs_checked: usize,
    pub sampled: bool,
    pub in_range_slots: usize,
    pub in_kernel_slots: usize,
    pub cat_slots: usize,
    pub tolerance: f64,
}

impl VerificationReport {
    /// Overlaps and norms within `tolerance`; reconstruction within
    /// `100 * tolerance`.
    pub fn passes(&self) -> bool {
        self.max_overlap <= self.tolerance
            && self.max_norm_deviation <= self.tolerance
            && self.reconstruction_error <= 100.0 * self.tolerance
    }
}

const FULL_PAIRWISE_LIMIT: usize = 256;
const SAMPLED_PAIRS: usize = 4096;

/// Checks the defining conditions of an expansion: pairwise orthogonality,
/// equal norms (scaled by each piece's declared weight), and reconstruction
/// of the parent. Small expansions get the full pairwise Gram check; large
/// ones are sampled (adjacent pairs plus seeded random pairs), with the
/// report recording how many pairs were touched.
pub fn verify_expansion(e: &Expansion, tol: f64) -> VerificationReport {
    let states = e.microstates();
    let count = states.len();
    let amp = e.amplitude();
    let amp_sq = amp * amp;

    let mut max_norm_dev: f64 = 0.0;
    let mut sum = StateVector::zero(e.dim());
    let mut in_range = 0usize;
    let mut in_kernel = 0usize;
    for m in states {
        let expected = m.weight.max(0.0).sqrt() * amp;
        max_norm_dev = max_norm_dev.max((m.vector.norm() - expected).abs() / amp);
        sum.add_scaled_assign(Complex64::new(1.0, 0.0), &m.vector);
        match m.classification {
            Some(Classification::InRange) => in_range += 1,
            Some(Classification::InKernel) => in_kernel += 1,
            _ => {}
        }
    }
    let reconstruction_error = sum.distance(e.parent()).unwrap_or(f64::INFINITY)
        / e.parent().norm().max(f64::MIN_POSITIVE);

    let full = count <= FULL_PAIRWISE_LIMIT || count * count * e.dim() <= (1 << 28);
    let mut max_overlap: f64 = 0.0;
    let mut pairs_checked = 0usize;
    let check = |i: usize, j: usize, max_overlap: &mut f64| {
        let o = pair_overlap(&states[i], &states[j]);
        *max_overlap = max_overlap.max(o / amp_sq);
    };
    if full {
        for i in 0..count {
            for j in (i + 1)..count {
                check(i, j, &mut max_overlap);
                pairs_checked += 1;
            }
        }
    } else {
        for i in 0..count.saturating_sub(1) {
            check(i, i + 1, &mut max_overlap);
            pairs_checked += 1;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(0xE9);
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.gen_range(0..count);
            let j = rng.gen_range(0..count);
            if i != j {
                check(i.min(j), i.max(j), &mut max_overlap);
                pairs_checked += 1;
            }
        }
    }

    let cat_slots = e.n().saturating_sub(in_range + in_kernel);
    VerificationReport {
        max_overlap,
        max_norm_deviation: max_norm_dev,
        reconstruction_error,
        pairs_checked,
        sampled: !full,
        in_range_slots: in_range,
        in_kernel_slots: in_kernel,
        cat_slots,
        tolerance: tol,
    }
}

/// Inner-product magnitude between two microstates, via the tensor factors
/// when both carry compatible product structure.
fn pair_overlap(a: &Microstate, b: &Microstate) -> f64 {
    if let (Some(pa), Some(pb)) = (&a.product_parts, &b.product_parts) {
        if pa.left.dim() == pb.left.dim() && pa.right.dim() == pb.right.dim() {
            let l = pa.left.inner(&pb.left).map(|c| c.norm()).unwrap_or(0.0);
            if l == 0.0 {
                return 0.0;
            }
            let r = pa.right.inner(&pb.right).map(|c| c.norm()).unwrap_or(0.0);
            return l * r;
        }
    }
    a.vector.inner(&b.vector).map(|c| c.norm()).unwrap_or(0.0)
}

/// Picks the balanced grid `(k_left, k_right)` for an integral branch count:
/// the largest divisor pair with `k_left <= k_right` that fits both wing
/// ranks, preferring the most square shape.
fn balanced_grid(k: usize, rank_left: usize, rank_right: usize) -> Option<(usize, usize)> {
    if k == 0 {
        return Some((0, 0));
    }
    let mut d = (k as f64).sqrt().floor() as usize;
    d = d.max(1);
    while d >= 1 {
        if k.is_multiple_of(d) {
            let (ka, kb) = (d, k / d);
            if ka <= rank_left && kb <= rank_right {
                return Some((ka, kb));
            }
            if kb <= rank_left && ka <= rank_right {
                return Some((kb, ka));
            }
        }
        d -= 1;
    }
    None
}

/// Picks the grid absorbing the most slots without exceeding `k`, for a
/// fractional branch: each side leaves one wing direction free for the
/// residue, and ties go to the most square shape. `None` when a wing has
/// no direction to spare.
fn best_grid_under(k: usize, rank_left: usize, rank_right: usize) -> Option<(usize, usize)> {
    let left_cap = rank_left.saturating_sub(1);
    let right_cap = rank_right.saturating_sub(1);
    if left_cap == 0 || right_cap == 0 || k == 0 {
        return None;
    }
    let mut best = (1usize, 1usize);
    for ka in 1..=left_cap.min(k) {
        let kb = (k / ka).min(right_cap);
        let better = ka * kb > best.0 * best.1
            || (ka * kb == best.0 * best.1 && ka.min(kb) > best.0.min(best.1));
        if better {
            best = (ka, kb);
        }
    }
    Some(best)
}
