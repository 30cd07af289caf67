//! Two-wing spin-pair scenarios with interchangeable probability backends.
//!
//! A scenario fixes two measurement directions per wing, a four-amplitude
//! spin state, and per-wing ancilla sizes. Joint outcome distributions can
//! then be computed three ways: directly from quadratic weights, by slot
//! counting over a product expansion (yielding exact rational intervals), or
//! by seeded Monte Carlo sampling. On top of the distributions sit the
//! standard locality diagnostics: parameter independence, outcome
//! independence, completeness, measurement independence, and the CHSH
//! statistic.

use num_rational::Rational64;
use num_traits::Signed as _;
use serde::{Deserialize, Serialize};

use crate::counting::{born_quantity, probability_bounds, rational_to_f64, RationalDto};
use crate::error::{Error, Result};
use crate::expansion::{
    adapted_expand, classify, product_adapted_expand, verify_expansion, BranchProjector,
    Classification, Expansion, Microstate, ProductAdaptedExpansion, CLASSIFY_EPS,
};
use crate::hidden::{
    monte_carlo, pair_key, parse_pair_label, BranchWeightModel, EmpiricalJoint, SettingPair,
    UniformMicrostateModel,
};
use crate::linalg::{spin_projector, Direction, ProductProjector, Projector, Sign, StateVector};

/// How probabilities are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backend {
    /// Quadratic weights of the branch projectors.
    Born,
    /// Exact rational intervals from an `n`-slot product expansion.
    Counting { n: usize },
    /// Seeded sampling of the branch weights.
    MonteCarlo { trials: u64, seed: u64 },
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Born => write!(f, "born"),
            Backend::Counting { n } => write!(f, "counting(n={n})"),
            Backend::MonteCarlo { trials, seed } => {
                write!(f, "monte-carlo(trials={trials},seed={seed})")
            }
        }
    }
}

/// Selects the primary or alternate direction of a wing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    Primary,
    Alternate,
}

impl Choice {
    pub const BOTH: [Choice; 2] = [Choice::Primary, Choice::Alternate];

    fn index(self) -> usize {
        match self {
            Choice::Primary => 0,
            Choice::Alternate => 1,
        }
    }
}

/// The four setting pairs of a CHSH run, with the sign each correlation
/// carries in the statistic.
const CHSH_GRID: [(Choice, Choice, f64); 4] = [
    (Choice::Primary, Choice::Primary, 1.0),
    (Choice::Primary, Choice::Alternate, -1.0),
    (Choice::Alternate, Choice::Primary, 1.0),
    (Choice::Alternate, Choice::Alternate, 1.0),
];

/// Spin singlet amplitudes over the joint basis `(s_A, s_B)`.
pub fn singlet() -> StateVector {
    let inv = 1.0 / 2f64.sqrt();
    StateVector::from_reals(&[0.0, inv, -inv, 0.0]).expect("static amplitudes")
}

/// Symmetric photon-pair amplitudes: both wings agree on "one photon each
/// way" but the relative sign differs from the singlet.
pub fn photon_pair() -> StateVector {
    let inv = 1.0 / 2f64.sqrt();
    StateVector::from_reals(&[0.0, inv, inv, 0.0]).expect("static amplitudes")
}

/// A two-wing measurement scenario.
#[derive(Clone, Debug)]
pub struct EPRBScenario {
    pub alice: Direction,
    pub alice_alt: Direction,
    pub bob: Direction,
    pub bob_alt: Direction,
    spin_state: StateVector,
    pub ancilla_alice: usize,
    pub ancilla_bob: usize,
    pub backend: Backend,
}

impl EPRBScenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alice: Direction,
        alice_alt: Direction,
        bob: Direction,
        bob_alt: Direction,
        spin_state: StateVector,
        ancilla_alice: usize,
        ancilla_bob: usize,
        backend: Backend,
    ) -> Result<Self> {
        if spin_state.dim() != 4 {
            return Err(Error::InvalidScenario(format!(
                "spin state must have four amplitudes, got {}",
                spin_state.dim()
            )));
        }
        if spin_state.norm_sq() <= 0.0 {
            return Err(Error::ZeroState);
        }
        if ancilla_alice == 0 || ancilla_bob == 0 {
            return Err(Error::InvalidScenario(
                "ancilla dimensions must be at least 1".into(),
            ));
        }
        Ok(EPRBScenario {
            alice,
            alice_alt,
            bob,
            bob_alt,
            spin_state,
            ancilla_alice,
            ancilla_bob,
            backend,
        })
    }

    /// Singlet at the standard maximal-violation grid: Alice at 0 and 90
    /// degrees in the measurement plane, Bob at 45 and 135.
    pub fn standard(backend: Backend) -> Self {
        EPRBScenario::new(
            Direction::from_plane_degrees(0.0),
            Direction::from_plane_degrees(90.0),
            Direction::from_plane_degrees(45.0),
            Direction::from_plane_degrees(135.0),
            singlet(),
            4,
            4,
            backend,
        )
        .expect("static scenario")
    }

    pub fn spin_state(&self) -> &StateVector {
        &self.spin_state
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn alice_direction(&self, choice: Choice) -> Direction {
        match choice {
            Choice::Primary => self.alice,
            Choice::Alternate => self.alice_alt,
        }
    }

    pub fn bob_direction(&self, choice: Choice) -> Direction {
        match choice {
            Choice::Primary => self.bob,
            Choice::Alternate => self.bob_alt,
        }
    }

    pub fn settings(&self, ca: Choice, cb: Choice) -> SettingPair {
        SettingPair::new(self.alice_direction(ca), self.bob_direction(cb))
    }

    fn pair_stream(ca: Choice, cb: Choice) -> u64 {
        (ca.index() * 2 + cb.index()) as u64
    }

    /// Joint state on `(spin_A (x) anc_A) (x) (spin_B (x) anc_B)` with both
    /// ancillas in their first basis state.
    pub fn full_state(&self) -> StateVector {
        let a = self.ancilla_alice;
        let b = self.ancilla_bob;
        let right_dim = 2 * b;
        let mut full = StateVector::zero(2 * a * right_dim);
        for sa in 0..2 {
            for sb in 0..2 {
                let amp = self.spin_state.amplitudes()[2 * sa + sb];
                full.amplitudes_mut()[(sa * a) * right_dim + sb * b] = amp;
            }
        }
        full
    }

    pub fn wing_dims(&self) -> (usize, usize) {
        (2 * self.ancilla_alice, 2 * self.ancilla_bob)
    }

    /// Wing projector for one sign of one wing's chosen direction, acting on
    /// the spin factor and leaving the ancilla alone.
    pub fn wing_projector(&self, wing: Wing, choice: Choice, sign: Sign) -> Projector {
        match wing {
            Wing::Alice => {
                spin_projector(self.alice_direction(choice), sign).embed_left(self.ancilla_alice)
            }
            Wing::Bob => {
                spin_projector(self.bob_direction(choice), sign).embed_left(self.ancilla_bob)
            }
        }
    }

    /// The four-branch product family for one setting pair, labeled by sign
    /// pairs in the order `++, +-, -+, --`.
    pub fn branch_family(&self, ca: Choice, cb: Choice) -> Vec<BranchProjector> {
        let mut family = Vec::with_capacity(4);
        for s in Sign::BOTH {
            for t in Sign::BOTH {
                family.push(BranchProjector {
                    label: pair_key(s, t),
                    left: self.wing_projector(Wing::Alice, ca, s),
                    right: self.wing_projector(Wing::Bob, cb, t),
                });
            }
        }
        family
    }

    /// Product expansion of the full state for one setting pair.
    pub fn product_expansion(
        &self,
        ca: Choice,
        cb: Choice,
        n: usize,
    ) -> Result<ProductAdaptedExpansion> {
        product_adapted_expand(&self.full_state(), &self.branch_family(ca, cb), n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wing {
    Alice,
    Bob,
}

/// A probability (or derived quantity) under one backend: an exact point, an
/// exact rational interval, or a sampled estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Point(f64),
    Interval { lo: Rational64, hi: Rational64 },
    Estimate { mean: f64, stderr: f64 },
}

impl Cell {
    /// Hard lower and upper bounds. Estimates have none; their center is
    /// returned for both ends and the spread lives in `stderr`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Cell::Point(x) => (*x, *x),
            Cell::Interval { lo, hi } => (rational_to_f64(*lo), rational_to_f64(*hi)),
            Cell::Estimate { mean, .. } => (*mean, *mean),
        }
    }

    pub fn midpoint(&self) -> f64 {
        let (lo, hi) = self.bounds();
        0.5 * (lo + hi)
    }

    pub fn stderr(&self) -> Option<f64> {
        match self {
            Cell::Estimate { stderr, .. } => Some(*stderr),
            _ => None,
        }
    }

    pub fn to_dto(&self) -> CellDto {
        match self {
            Cell::Point(x) => CellDto::Point(*x),
            Cell::Interval { lo, hi } => CellDto::Interval {
                lo: (*lo).into(),
                hi: (*hi).into(),
            },
            Cell::Estimate { mean, stderr } => CellDto::Estimate {
                mean: *mean,
                stderr: *stderr,
            },
        }
    }
}

/// Serialization form of a [`Cell`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellDto {
    Point(f64),
    Interval { lo: RationalDto, hi: RationalDto },
    Estimate { mean: f64, stderr: f64 },
}

/// Whether a deviation is conclusively inside tolerance, conclusively
/// outside, or undecidable at the available precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
    WidthLimited,
}

impl Verdict {
    /// Judges a deviation cell against `tol`. Intervals must clear the
    /// tolerance with their entire width to be conclusive; estimates use a
    /// three-sigma band.
    pub fn judge(cell: &Cell, tol: f64) -> Verdict {
        match cell {
            Cell::Point(x) => {
                if *x <= tol {
                    Verdict::Holds
                } else {
                    Verdict::Violated
                }
            }
            Cell::Interval { lo, hi } => {
                if rational_to_f64(*hi) <= tol {
                    Verdict::Holds
                } else if rational_to_f64(*lo) > tol {
                    Verdict::Violated
                } else {
                    Verdict::WidthLimited
                }
            }
            Cell::Estimate { mean, stderr } => {
                if mean + 3.0 * stderr <= tol {
                    Verdict::Holds
                } else if mean - 3.0 * stderr > tol {
                    Verdict::Violated
                } else {
                    Verdict::WidthLimited
                }
            }
        }
    }
}

/// Slot bookkeeping behind a counting-backend distribution.
#[derive(Clone, Copy, Debug)]
pub struct CountingData {
    /// Grid slots per cell, rows indexed by Alice's sign.
    pub counts: [[usize; 2]; 2],
    pub cat_slots: usize,
    pub n: usize,
}

/// Joint outcome distribution at one setting pair.
#[derive(Clone, Debug)]
pub struct JointDistribution {
    pub settings: SettingPair,
    pub backend: Backend,
    /// Rows indexed by Alice's sign, columns by Bob's.
    pub cells: [[Cell; 2]; 2],
    /// Probability mass (or slot share) carrying no definite joint outcome.
    pub cat_mass: f64,
    pub counting: Option<CountingData>,
}

impl JointDistribution {
    pub fn cell(&self, s: Sign, t: Sign) -> Cell {
        self.cells[s.index()][t.index()]
    }

    /// Marginal of one wing's sign. For counting distributions the residual
    /// slots are charged once, not once per cell.
    pub fn marginal(&self, wing: Wing, sign: Sign) -> Cell {
        if let Some(data) = &self.counting {
            let k = match wing {
                Wing::Alice => data.counts[sign.index()][0] + data.counts[sign.index()][1],
                Wing::Bob => data.counts[0][sign.index()] + data.counts[1][sign.index()],
            };
            let n = data.n as i64;
            return Cell::Interval {
                lo: Rational64::new(k as i64, n),
                hi: Rational64::new((k + data.cat_slots) as i64, n),
            };
        }
        let pick = |s: Sign, t: Sign| self.cell(s, t);
        let pair = match wing {
            Wing::Alice => [pick(sign, Sign::Plus), pick(sign, Sign::Minus)],
            Wing::Bob => [pick(Sign::Plus, sign), pick(Sign::Minus, sign)],
        };
        match self.backend {
            Backend::Born => Cell::Point(pair[0].midpoint() + pair[1].midpoint()),
            Backend::MonteCarlo { .. } => {
                let mean = pair[0].midpoint() + pair[1].midpoint();
                let stderr = pair
                    .iter()
                    .filter_map(|c| c.stderr())
                    .map(|s| s * s)
                    .sum::<f64>()
                    .sqrt();
                Cell::Estimate { mean, stderr }
            }
            Backend::Counting { .. } => unreachable!("counting data stored above"),
        }
    }

    /// Correlation of the two wings' signs. Counting distributions get the
    /// tight interval: every residual slot shifts the correlation by exactly
    /// one slot's worth in one direction.
    pub fn correlation(&self) -> Cell {
        if let Some(data) = &self.counting {
            let n = data.n as i64;
            let base = data.counts[0][0] as i64 + data.counts[1][1] as i64
                - data.counts[0][1] as i64
                - data.counts[1][0] as i64;
            let cat = data.cat_slots as i64;
            return Cell::Interval {
                lo: Rational64::new(base - cat, n),
                hi: Rational64::new(base + cat, n),
            };
        }
        let signed = |s: Sign, t: Sign| {
            let v = self.cell(s, t);
            if s == t {
                v.midpoint()
            } else {
                -v.midpoint()
            }
        };
        let mean = signed(Sign::Plus, Sign::Plus)
            + signed(Sign::Plus, Sign::Minus)
            + signed(Sign::Minus, Sign::Plus)
            + signed(Sign::Minus, Sign::Minus);
        match self.backend {
            Backend::Born => Cell::Point(mean),
            Backend::MonteCarlo { .. } => {
                let kept_var: f64 = self
                    .cells
                    .iter()
                    .flatten()
                    .filter_map(|c| c.stderr())
                    .map(|s| s * s)
                    .sum();
                Cell::Estimate {
                    mean,
                    stderr: kept_var.sqrt(),
                }
            }
            Backend::Counting { .. } => unreachable!("counting data stored above"),
        }
    }

    pub fn to_dto(&self) -> JointDto {
        let mut cells = std::collections::BTreeMap::new();
        for s in Sign::BOTH {
            for t in Sign::BOTH {
                cells.insert(pair_key(s, t), self.cell(s, t).to_dto());
            }
        }
        JointDto {
            settings: settings_dto(&self.settings),
            backend: self.backend.to_string(),
            cells,
            cat_mass: self.cat_mass,
            correlation: self.correlation().to_dto(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SettingsDto {
    pub alice: [f64; 3],
    pub bob: [f64; 3],
}

fn settings_dto(s: &SettingPair) -> SettingsDto {
    SettingsDto {
        alice: s.alice.components(),
        bob: s.bob.components(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointDto {
    pub settings: SettingsDto,
    pub backend: String,
    pub cells: std::collections::BTreeMap<String, CellDto>,
    pub cat_mass: f64,
    pub correlation: CellDto,
}

/// Computes the joint distribution for one setting pair under the
/// scenario's backend.
pub fn joint_distribution(sc: &EPRBScenario, ca: Choice, cb: Choice) -> Result<JointDistribution> {
    let settings = sc.settings(ca, cb);
    match sc.backend {
        Backend::Born => {
            let psi = sc.full_state();
            let mut cells = [[Cell::Point(0.0); 2]; 2];
            for s in Sign::BOTH {
                for t in Sign::BOTH {
                    let p = ProductProjector::new(
                        sc.wing_projector(Wing::Alice, ca, s),
                        sc.wing_projector(Wing::Bob, cb, t),
                    );
                    cells[s.index()][t.index()] = Cell::Point(born_quantity(&psi, &p)?);
                }
            }
            Ok(JointDistribution {
                settings,
                backend: sc.backend,
                cells,
                cat_mass: 0.0,
                counting: None,
            })
        }
        Backend::Counting { n } => {
            let pae = sc.product_expansion(ca, cb, n)?;
            let mut counts = [[0usize; 2]; 2];
            for branch in &pae.branches {
                let (s, t) = parse_pair_label(&branch.label)?;
                counts[s.index()][t.index()] = branch.count;
            }
            let data = CountingData {
                counts,
                cat_slots: pae.cat_slots,
                n,
            };
            let n_i = n as i64;
            let mut cells = [[Cell::Point(0.0); 2]; 2];
            for s in Sign::BOTH {
                for t in Sign::BOTH {
                    let k = counts[s.index()][t.index()] as i64;
                    cells[s.index()][t.index()] = Cell::Interval {
                        lo: Rational64::new(k, n_i),
                        hi: Rational64::new(k + pae.cat_slots as i64, n_i),
                    };
                }
            }
            Ok(JointDistribution {
                settings,
                backend: sc.backend,
                cells,
                cat_mass: pae.cat_slots as f64 / n as f64,
                counting: Some(data),
            })
        }
        Backend::MonteCarlo { trials, seed } => {
            let born = sc.clone().with_backend(Backend::Born);
            let exact = joint_distribution(&born, ca, cb)?;
            let mut raw = [[0.0f64; 2]; 2];
            for s in Sign::BOTH {
                for t in Sign::BOTH {
                    raw[s.index()][t.index()] = exact.cell(s, t).midpoint();
                }
            }
            let model = BranchWeightModel::from_cells(raw, settings)?;
            let joint = monte_carlo(
                &model,
                &settings,
                trials,
                seed,
                EPRBScenario::pair_stream(ca, cb),
            )?;
            let kept = joint.kept().max(1) as f64;
            let mut cells = [[Cell::Point(0.0); 2]; 2];
            for s in Sign::BOTH {
                for t in Sign::BOTH {
                    let p = joint.fraction(s, t);
                    cells[s.index()][t.index()] = Cell::Estimate {
                        mean: p,
                        stderr: (p * (1.0 - p) / kept).max(0.0).sqrt(),
                    };
                }
            }
            Ok(JointDistribution {
                settings,
                backend: sc.backend,
                cells,
                cat_mass: joint.cat_hits as f64 / joint.trials as f64,
                counting: None,
            })
        }
    }
}

/// Draws seeded samples from the uniform slot model of a finite product
/// expansion, residual slots included.
pub fn sample_microstates(
    sc: &EPRBScenario,
    ca: Choice,
    cb: Choice,
    n: usize,
    trials: u64,
    seed: u64,
) -> Result<EmpiricalJoint> {
    let settings = sc.settings(ca, cb);
    let pae = sc.product_expansion(ca, cb, n)?;
    let model = UniformMicrostateModel::from_product(&pae, settings)?;
    monte_carlo(
        &model,
        &settings,
        trials,
        seed,
        EPRBScenario::pair_stream(ca, cb),
    )
}

/// One-sided marginal computed without any reference to the other wing:
/// the projector is `wing (x) identity` on the full space. Only meaningful
/// for the exact backends; the sampling backend has no one-sided estimator.
pub fn structural_marginal(
    sc: &EPRBScenario,
    wing: Wing,
    choice: Choice,
    sign: Sign,
) -> Result<Cell> {
    let psi = sc.full_state();
    let (da, db) = sc.wing_dims();
    let projector = match wing {
        Wing::Alice => ProductProjector::new(
            sc.wing_projector(Wing::Alice, choice, sign),
            Projector::identity(db),
        ),
        Wing::Bob => ProductProjector::new(
            Projector::identity(da),
            sc.wing_projector(Wing::Bob, choice, sign),
        ),
    };
    match sc.backend {
        Backend::Born => Ok(Cell::Point(born_quantity(&psi, &projector)?)),
        Backend::Counting { n } => {
            let ae = adapted_expand(&psi, &projector, n)?;
            let bounds = probability_bounds(&ae);
            Ok(Cell::Interval {
                lo: bounds.lower,
                hi: bounds.upper,
            })
        }
        Backend::MonteCarlo { .. } => Err(Error::InvalidScenario(
            "structural marginals are defined for the exact backends only".into(),
        )),
    }
}

/// A conditional probability, or the record that its condition has
/// probability zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Conditional {
    Defined(Cell),
    Undefined,
}

/// `p(t | s)`: Bob's outcome given Alice's, from one joint distribution.
pub fn conditional(jd: &JointDistribution, t: Sign, s: Sign) -> Conditional {
    if let Some(data) = &jd.counting {
        let n = data.n as i64;
        let cell_lo = Rational64::new(data.counts[s.index()][t.index()] as i64, n);
        let cell_hi = cell_lo + Rational64::new(data.cat_slots as i64, n);
        let marg = data.counts[s.index()][0] + data.counts[s.index()][1];
        let marg_lo = Rational64::new(marg as i64, n);
        let marg_hi = marg_lo + Rational64::new(data.cat_slots as i64, n);
        if marg_hi == Rational64::new(0, 1) {
            return Conditional::Undefined;
        }
        let one = Rational64::new(1, 1);
        let lo = if marg_hi > Rational64::new(0, 1) {
            (cell_lo / marg_hi).min(one)
        } else {
            Rational64::new(0, 1)
        };
        let hi = if marg_lo > Rational64::new(0, 1) {
            (cell_hi / marg_lo).min(one)
        } else {
            one
        };
        return Conditional::Defined(Cell::Interval { lo, hi });
    }
    let cell = jd.cell(s, t);
    let marg = jd.marginal(Wing::Alice, s);
    let (m_lo, _) = marg.bounds();
    if m_lo <= 1e-15 {
        return Conditional::Undefined;
    }
    match (cell, marg) {
        (Cell::Point(c), Cell::Point(m)) => Conditional::Defined(Cell::Point(c / m)),
        (
            Cell::Estimate {
                mean: c,
                stderr: sc_,
            },
            Cell::Estimate {
                mean: m,
                stderr: sm,
            },
        ) => {
            let ratio = c / m;
            let rel = if c.abs() > 0.0 {
                ((sc_ / c).powi(2) + (sm / m).powi(2)).sqrt()
            } else {
                sm / m
            };
            Conditional::Defined(Cell::Estimate {
                mean: ratio,
                stderr: ratio.abs().max(1.0 / m) * rel.min(1.0),
            })
        }
        _ => Conditional::Undefined,
    }
}

/// One diagnosed locality condition.
#[derive(Clone, Debug)]
pub struct ConditionReport {
    pub name: &'static str,
    pub deviation: Cell,
    pub verdict: Verdict,
    pub note: String,
}

impl ConditionReport {
    pub fn to_dto(&self) -> ConditionDto {
        ConditionDto {
            name: self.name.to_string(),
            deviation: self.deviation.to_dto(),
            verdict: self.verdict,
            note: self.note.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionDto {
    pub name: String,
    pub deviation: CellDto,
    pub verdict: Verdict,
    pub note: String,
}

/// Status of measurement independence for a backend's hidden-variable
/// reading.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiStatus {
    /// The backend carries no hidden variable to distribute.
    NoHiddenVariable,
    Independent,
    ContextDependent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiReport {
    pub status: MiStatus,
    pub note: String,
}

/// The full diagnostic battery at one scenario's four setting pairs.
#[derive(Clone, Debug)]
pub struct ConditionBattery {
    pub backend: Backend,
    pub tolerance: f64,
    pub parameter_independence: ConditionReport,
    pub outcome_independence: ConditionReport,
    pub completeness: ConditionReport,
    pub measurement_independence: MiReport,
}

impl ConditionBattery {
    pub fn to_dto(&self) -> BatteryDto {
        BatteryDto {
            backend: self.backend.to_string(),
            tolerance: self.tolerance,
            conditions: vec![
                self.parameter_independence.to_dto(),
                self.outcome_independence.to_dto(),
                self.completeness.to_dto(),
            ],
            measurement_independence: self.measurement_independence.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatteryDto {
    pub backend: String,
    pub tolerance: f64,
    pub conditions: Vec<ConditionDto>,
    pub measurement_independence: MiReport,
}

/// Greater-by-upper-bound comparison used to keep the worst deviation.
fn worse(a: &Cell, b: &Cell) -> bool {
    let hi = |c: &Cell| match c {
        Cell::Estimate { mean, .. } => *mean,
        other => other.bounds().1,
    };
    hi(a) > hi(b)
}

fn max_cell(acc: &mut Cell, cand: Cell) {
    if worse(&cand, acc) {
        *acc = cand;
    }
}

/// Absolute difference of two rational intervals.
fn interval_abs_diff(
    a_lo: Rational64,
    a_hi: Rational64,
    b_lo: Rational64,
    b_hi: Rational64,
) -> (Rational64, Rational64) {
    let zero = Rational64::new(0, 1);
    let lo = (a_lo - b_hi).max(b_lo - a_hi).max(zero);
    let hi = (a_hi - b_lo).max(b_hi - a_lo);
    (lo, hi)
}

fn cell_interval(c: &Cell) -> Result<(Rational64, Rational64)> {
    match c {
        Cell::Interval { lo, hi } => Ok((*lo, *hi)),
        _ => Err(Error::InvalidScenario(
            "expected an interval-valued cell".into(),
        )),
    }
}

/// Runs the locality diagnostics for the scenario's backend over its four
/// setting pairs.
pub fn condition_battery(sc: &EPRBScenario, tol: f64) -> Result<ConditionBattery> {
    let joints: Vec<JointDistribution> = {
        let mut js = Vec::with_capacity(4);
        for (ca, cb, _) in CHSH_GRID {
            js.push(joint_distribution(sc, ca, cb)?);
        }
        js
    };

    let parameter_independence = match sc.backend {
        Backend::Born | Backend::Counting { .. } => {
            // The one-sided marginal takes no input from the other wing, so
            // the two variants being compared are a single computation.
            let mut checked = 0usize;
            let mut cross_gap = 0.0f64;
            for wing in [Wing::Alice, Wing::Bob] {
                for choice in Choice::BOTH {
                    for sign in Sign::BOTH {
                        structural_marginal(sc, wing, choice, sign)?;
                        checked += 1;
                    }
                }
            }
            // Informational: how far apart the joint-derived marginals land.
            for sign in Sign::BOTH {
                for choice in Choice::BOTH {
                    let i = choice.index() * 2;
                    let a = joints[i].marginal(Wing::Alice, sign).bounds();
                    let b = joints[i + 1].marginal(Wing::Alice, sign).bounds();
                    cross_gap = cross_gap.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
                    let j = choice.index();
                    let c = joints[j].marginal(Wing::Bob, sign).bounds();
                    let d = joints[j + 2].marginal(Wing::Bob, sign).bounds();
                    cross_gap = cross_gap.max((c.0 - d.0).abs()).max((c.1 - d.1).abs());
                }
            }
            let deviation = Cell::Point(0.0);
            ConditionReport {
                name: "parameter-independence",
                verdict: Verdict::judge(&deviation, tol),
                deviation,
                note: format!(
                    "{checked} one-sided marginals computed without the other wing's setting; \
                     joint-derived marginal bounds stay within {cross_gap:.3e} across the grid"
                ),
            }
        }
        Backend::MonteCarlo { .. } => {
            let mut dev = Cell::Estimate {
                mean: 0.0,
                stderr: 0.0,
            };
            for sign in Sign::BOTH {
                for choice in Choice::BOTH {
                    let pairs = [
                        (
                            joints[choice.index() * 2].marginal(Wing::Alice, sign),
                            joints[choice.index() * 2 + 1].marginal(Wing::Alice, sign),
                        ),
                        (
                            joints[choice.index()].marginal(Wing::Bob, sign),
                            joints[choice.index() + 2].marginal(Wing::Bob, sign),
                        ),
                    ];
                    for (a, b) in pairs {
                        let mean = (a.midpoint() - b.midpoint()).abs();
                        let stderr = (a.stderr().unwrap_or(0.0).powi(2)
                            + b.stderr().unwrap_or(0.0).powi(2))
                        .sqrt();
                        max_cell(&mut dev, Cell::Estimate { mean, stderr });
                    }
                }
            }
            ConditionReport {
                name: "parameter-independence",
                verdict: Verdict::judge(&dev, tol),
                deviation: dev,
                note: "largest gap between sampled marginals across the other wing's settings"
                    .into(),
            }
        }
    };

    let mut oi_dev = match sc.backend {
        Backend::Born => Cell::Point(0.0),
        Backend::Counting { .. } => Cell::Interval {
            lo: Rational64::new(0, 1),
            hi: Rational64::new(0, 1),
        },
        Backend::MonteCarlo { .. } => Cell::Estimate {
            mean: 0.0,
            stderr: 0.0,
        },
    };
    let mut oi_undefined = 0usize;
    for jd in &joints {
        for s in Sign::BOTH {
            for t in Sign::BOTH {
                let cond = conditional(jd, t, s);
                let Conditional::Defined(c) = cond else {
                    oi_undefined += 1;
                    continue;
                };
                let marg_t = jd.marginal(Wing::Bob, t);
                let dev = match (c, marg_t) {
                    (Cell::Point(x), Cell::Point(y)) => Cell::Point((x - y).abs()),
                    (Cell::Interval { lo, hi }, Cell::Interval { lo: ml, hi: mh }) => {
                        let (lo, hi) = interval_abs_diff(lo, hi, ml, mh);
                        Cell::Interval { lo, hi }
                    }
                    (
                        Cell::Estimate { mean, stderr },
                        Cell::Estimate {
                            mean: m,
                            stderr: sm,
                        },
                    ) => Cell::Estimate {
                        mean: (mean - m).abs(),
                        stderr: (stderr * stderr + sm * sm).sqrt(),
                    },
                    _ => continue,
                };
                max_cell(&mut oi_dev, dev);
            }
        }
    }
    let outcome_independence = ConditionReport {
        name: "outcome-independence",
        verdict: Verdict::judge(&oi_dev, tol),
        deviation: oi_dev,
        note: if oi_undefined > 0 {
            format!("{oi_undefined} conditionals undefined (zero-probability condition)")
        } else {
            "largest |p(t|s) - p(t)| over the grid".into()
        },
    };

    let mut comp_dev = match sc.backend {
        Backend::Born => Cell::Point(0.0),
        Backend::Counting { .. } => Cell::Interval {
            lo: Rational64::new(0, 1),
            hi: Rational64::new(0, 1),
        },
        Backend::MonteCarlo { .. } => Cell::Estimate {
            mean: 0.0,
            stderr: 0.0,
        },
    };
    for jd in &joints {
        for s in Sign::BOTH {
            for t in Sign::BOTH {
                let cell = jd.cell(s, t);
                let ma = jd.marginal(Wing::Alice, s);
                let mb = jd.marginal(Wing::Bob, t);
                let dev = match (cell, ma, mb) {
                    (Cell::Point(c), Cell::Point(a), Cell::Point(b)) => {
                        Cell::Point((c - a * b).abs())
                    }
                    (
                        Cell::Interval { lo, hi },
                        Cell::Interval { lo: al, hi: ah },
                        Cell::Interval { lo: bl, hi: bh },
                    ) => {
                        let (plo, phi) = (al * bl, ah * bh);
                        let (dlo, dhi) = interval_abs_diff(lo, hi, plo, phi);
                        Cell::Interval { lo: dlo, hi: dhi }
                    }
                    (
                        Cell::Estimate {
                            mean: c,
                            stderr: sc_,
                        },
                        Cell::Estimate {
                            mean: a,
                            stderr: sa,
                        },
                        Cell::Estimate {
                            mean: b,
                            stderr: sb,
                        },
                    ) => {
                        let prod_err = (a.abs() * sb).hypot(b.abs() * sa);
                        Cell::Estimate {
                            mean: (c - a * b).abs(),
                            stderr: sc_.hypot(prod_err),
                        }
                    }
                    _ => continue,
                };
                max_cell(&mut comp_dev, dev);
            }
        }
    }
    let completeness = ConditionReport {
        name: "completeness",
        verdict: Verdict::judge(&comp_dev, tol),
        deviation: comp_dev,
        note: "largest |p(s,t) - p(s)p(t)| over the grid".into(),
    };

    let measurement_independence = match sc.backend {
        Backend::Born => MiReport {
            status: MiStatus::NoHiddenVariable,
            note: "quadratic weights are computed directly from the state; there is no \
                   lambda ensemble to redistribute"
                .into(),
        },
        Backend::Counting { n } => MiReport {
            status: MiStatus::ContextDependent,
            note: format!(
                "the {n}-slot ensemble is rebuilt per setting pair; marginal counts agree \
                 across Bob's settings but the microstate sets differ"
            ),
        },
        Backend::MonteCarlo { .. } => MiReport {
            status: MiStatus::ContextDependent,
            note: "samples are drawn from per-setting branch weights, so the sampled \
                   ensemble is tied to the setting pair"
                .into(),
        },
    };

    Ok(ConditionBattery {
        backend: sc.backend,
        tolerance: tol,
        parameter_independence,
        outcome_independence,
        completeness,
        measurement_independence,
    })
}

/// One CHSH term.
#[derive(Clone, Debug)]
pub struct ChshTerm {
    pub settings: SettingPair,
    pub sign: f64,
    pub correlation: Cell,
}

/// The CHSH statistic `|E(a,b) - E(a,b') + E(a',b) + E(a',b')|`.
#[derive(Clone, Debug)]
pub struct ChshReport {
    pub backend: Backend,
    pub terms: [ChshTerm; 4],
    pub s_value: Cell,
    /// Whether the statistic conclusively exceeds the classical bound 2
    /// (`None` when the width or noise straddles it).
    pub exceeds_classical: Option<bool>,
}

impl ChshReport {
    pub fn to_dto(&self) -> ChshDto {
        ChshDto {
            backend: self.backend.to_string(),
            terms: self
                .terms
                .iter()
                .map(|t| ChshTermDto {
                    settings: settings_dto(&t.settings),
                    sign: t.sign,
                    correlation: t.correlation.to_dto(),
                })
                .collect(),
            s_value: self.s_value.to_dto(),
            exceeds_classical: self.exceeds_classical,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChshTermDto {
    pub settings: SettingsDto,
    pub sign: f64,
    pub correlation: CellDto,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChshDto {
    pub backend: String,
    pub terms: Vec<ChshTermDto>,
    pub s_value: CellDto,
    pub exceeds_classical: Option<bool>,
}

/// Evaluates the CHSH statistic over the scenario's four setting pairs.
pub fn chsh(sc: &EPRBScenario) -> Result<ChshReport> {
    let mut terms = Vec::with_capacity(4);
    for (ca, cb, sign) in CHSH_GRID {
        let jd = joint_distribution(sc, ca, cb)?;
        terms.push(ChshTerm {
            settings: jd.settings,
            sign,
            correlation: jd.correlation(),
        });
    }
    let terms: [ChshTerm; 4] = terms.try_into().expect("four terms");

    let s_value = match sc.backend {
        Backend::Born => {
            let sum: f64 = terms
                .iter()
                .map(|t| t.sign * t.correlation.midpoint())
                .sum();
            Cell::Point(sum.abs())
        }
        Backend::Counting { .. } => {
            let zero = Rational64::new(0, 1);
            let mut lo = zero;
            let mut hi = zero;
            for t in &terms {
                let (clo, chi) = cell_interval(&t.correlation)?;
                if t.sign >= 0.0 {
                    lo += clo;
                    hi += chi;
                } else {
                    lo -= chi;
                    hi -= clo;
                }
            }
            // |[lo, hi]|
            let (alo, ahi) = if lo >= zero {
                (lo, hi)
            } else if hi <= zero {
                (-hi, -lo)
            } else {
                (zero, hi.max(-lo))
            };
            Cell::Interval { lo: alo, hi: ahi }
        }
        Backend::MonteCarlo { .. } => {
            let mean: f64 = terms
                .iter()
                .map(|t| t.sign * t.correlation.midpoint())
                .sum();
            let var: f64 = terms
                .iter()
                .filter_map(|t| t.correlation.stderr())
                .map(|s| s * s)
                .sum();
            Cell::Estimate {
                mean: mean.abs(),
                stderr: var.sqrt(),
            }
        }
    };

    let exceeds_classical = match &s_value {
        Cell::Point(x) => Some(*x > 2.0),
        Cell::Interval { lo, hi } => {
            if rational_to_f64(*lo) > 2.0 {
                Some(true)
            } else if rational_to_f64(*hi) <= 2.0 {
                Some(false)
            } else {
                None
            }
        }
        Cell::Estimate { mean, stderr } => {
            if mean - 3.0 * stderr > 2.0 {
                Some(true)
            } else if mean + 3.0 * stderr <= 2.0 {
                Some(false)
            } else {
                None
            }
        }
    };

    Ok(ChshReport {
        backend: sc.backend,
        terms,
        s_value,
        exceeds_classical,
    })
}

/// Sweeps the angle between the wings' primary directions, reporting the
/// correlation under each backend as CSV. Monte Carlo columns are left
/// empty unless `mc` supplies trials and a seed.
pub fn correlation_sweep(
    sc: &EPRBScenario,
    thetas_deg: &[f64],
    n: usize,
    mc: Option<(u64, u64)>,
) -> Result<String> {
    let mut out = String::from("theta_deg,E_born,E_counting_lo,E_counting_hi,E_mc,stderr\n");
    for &theta in thetas_deg {
        let make = |backend: Backend| -> Result<EPRBScenario> {
            EPRBScenario::new(
                Direction::from_plane_degrees(0.0),
                Direction::from_plane_degrees(90.0),
                Direction::from_plane_degrees(theta),
                Direction::from_plane_degrees(theta + 90.0),
                sc.spin_state().clone(),
                sc.ancilla_alice,
                sc.ancilla_bob,
                backend,
            )
        };
        let born = joint_distribution(&make(Backend::Born)?, Choice::Primary, Choice::Primary)?;
        let counting = joint_distribution(
            &make(Backend::Counting { n })?,
            Choice::Primary,
            Choice::Primary,
        )?;
        let (clo, chi) = cell_interval(&counting.correlation())?;
        let (e_mc, stderr) = match mc {
            Some((trials, seed)) => {
                let jd = joint_distribution(
                    &make(Backend::MonteCarlo { trials, seed })?,
                    Choice::Primary,
                    Choice::Primary,
                )?;
                let c = jd.correlation();
                (
                    format!("{}", c.midpoint()),
                    format!("{}", c.stderr().unwrap_or(f64::NAN)),
                )
            }
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            theta,
            born.correlation().midpoint(),
            rational_to_f64(clo),
            rational_to_f64(chi),
            e_mc,
            stderr,
        ));
    }
    Ok(out)
}

/// Report of a two-wing product-state completeness run: with both wings
/// expanded exactly, the joint slot counts factorize into the per-wing
/// counts, so joint probability equals the product of the marginals.
#[derive(Clone, Debug)]
pub struct ProductCompletenessReport {
    pub n_alice: usize,
    pub n_bob: usize,
    pub alice_share: Rational64,
    pub bob_share: Rational64,
    pub joint_share: Rational64,
    pub deviation: Rational64,
    pub verified: bool,
}

/// Expands two independent wing states against their own projectors and
/// tensors the expansions. Both wing splits must be exact (no residual
/// slot); the joint counting probability of `target_a (x) target_b` then
/// factorizes with zero deviation, which is the completeness condition for
/// product preparations.
pub fn product_completeness_demo(
    phi: &StateVector,
    chi: &StateVector,
    target_a: &Projector,
    target_b: &Projector,
    n_a: usize,
    n_b: usize,
) -> Result<ProductCompletenessReport> {
    let ea = adapted_expand(phi, target_a, n_a)?;
    let eb = adapted_expand(chi, target_b, n_b)?;
    if ea.counts.cat != 0 || eb.counts.cat != 0 {
        return Err(Error::InvalidScenario(format!(
            "wing splits leave residual slots ({} and {}); pick slot counts that divide \
             the weights exactly",
            ea.counts.cat, eb.counts.cat
        )));
    }
    let parent = phi.tensor(chi);
    let mut microstates = Vec::with_capacity(n_a * n_b);
    for ma in ea.expansion.microstates() {
        for mb in eb.expansion.microstates() {
            let in_both = ma.classification == Some(Classification::InRange)
                && mb.classification == Some(Classification::InRange);
            microstates.push(Microstate {
                vector: ma.vector.tensor(&mb.vector),
                weight: 1.0,
                classification: Some(if in_both {
                    Classification::InRange
                } else {
                    Classification::InKernel
                }),
                branch_label: None,
                product_parts: None,
            });
        }
    }
    let joint_expansion = Expansion::from_microstates(parent, n_a * n_b, microstates);
    let verified = verify_expansion(&joint_expansion, 1e-9).passes();

    let joint_target = ProductProjector::new(target_a.clone(), target_b.clone());
    let mut joint_count = 0usize;
    for m in joint_expansion.microstates() {
        if classify(&m.vector, &joint_target, CLASSIFY_EPS)? == Classification::InRange {
            joint_count += 1;
        }
    }

    let alice_share = Rational64::new(ea.counts.in_range as i64, n_a as i64);
    let bob_share = Rational64::new(eb.counts.in_range as i64, n_b as i64);
    let joint_share = Rational64::new(joint_count as i64, (n_a * n_b) as i64);
    let deviation = (joint_share - alice_share * bob_share).abs();
    Ok(ProductCompletenessReport {
        n_alice: n_a,
        n_bob: n_b,
        alice_share,
        bob_share,
        joint_share,
        deviation,
        verified,
    })
}

/// The box-pair scenario: a symmetric "one each way" state measured along
/// the same axis on both wings. Its statistics are complete knowledge of
/// the preparation, yet outcome independence fails maximally: learning one
/// wing's outcome flips the other from even odds to certainty.
pub fn photon_box_scenario(backend: Backend) -> EPRBScenario {
    EPRBScenario::new(
        Direction::new([0.0, 0.0, 1.0]).expect("unit"),
        Direction::from_plane_degrees(90.0),
        Direction::new([0.0, 0.0, 1.0]).expect("unit"),
        Direction::from_plane_degrees(90.0),
        photon_pair(),
        2,
        2,
        backend,
    )
    .expect("static scenario")
}

/// Smallest slot count up to `cap` that makes every weight integral within
/// the snapping tolerance, if one exists.
pub fn suggest_microstate_count(weights: &[f64], cap: usize) -> Option<usize> {
    (2..=cap).find(|&n| {
        weights.iter().all(|w| {
            let t = w * n as f64;
            (t - t.round()).abs() <= 1e-9 * n as f64
        })
    })
}
