//! Hidden-variable sampling models for two-wing spin experiments.
//!
//! A model assigns each value of a hidden variable a definite joint outcome
//! given the two measurement directions. Three concrete models are provided:
//! a uniform sampler over the slots of a product expansion (whose hidden
//! variable is the microstate index, and whose distribution is tied to the
//! setting pair the expansion was built for), a classical unit-sphere
//! baseline (setting-independent by construction), and a weighted branch
//! sampler driven by the quadratic weights themselves. Shared machinery
//! covers seeded Monte Carlo estimation, exact averaging over finite
//! supports, and the standard independence diagnostics.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Rational64;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::{Classification, ProductAdaptedExpansion};
use crate::linalg::{Direction, Sign};

/// A pair of measurement directions, one per wing.
#[derive(Clone, Copy, Debug)]
pub struct SettingPair {
    pub alice: Direction,
    pub bob: Direction,
}

impl SettingPair {
    pub fn new(alice: Direction, bob: Direction) -> Self {
        SettingPair { alice, bob }
    }

    pub fn from_plane_degrees(alice_deg: f64, bob_deg: f64) -> Self {
        SettingPair {
            alice: Direction::from_plane_degrees(alice_deg),
            bob: Direction::from_plane_degrees(bob_deg),
        }
    }

    pub fn approx_eq(&self, other: &SettingPair) -> bool {
        directions_close(self.alice, other.alice) && directions_close(self.bob, other.bob)
    }
}

fn directions_close(a: Direction, b: Direction) -> bool {
    let x = a.components();
    let y = b.components();
    x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() <= 1e-12)
}

impl fmt::Display for SettingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.alice.components();
        let b = self.bob.components();
        write!(
            f,
            "alice=[{:.6},{:.6},{:.6}] bob=[{:.6},{:.6},{:.6}]",
            a[0], a[1], a[2], b[0], b[1], b[2]
        )
    }
}

/// A value of the hidden variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaValue {
    /// Microstate (or category) index.
    Index(u64),
    /// A point of the unit interval.
    Real(f64),
    /// A point of the unit sphere.
    Axis([f64; 3]),
}

/// Joint outcome assigned to one hidden-variable value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pair(Sign, Sign),
    /// The hidden variable landed on a slot carrying no definite joint
    /// outcome.
    Residual,
}

/// Size of a model's hidden-variable space. `Finite(n)` promises a uniform
/// distribution over the indices `0..n`, which is what makes exact averaging
/// by enumeration possible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    Finite(u64),
    Unbounded,
}

/// A deterministic hidden-variable model: each lambda fixes the joint
/// outcome for the settings it is asked about.
pub trait HiddenVariableModel {
    fn name(&self) -> &str;

    /// The setting pair this model's lambda distribution is tied to, if any.
    /// `None` means the same distribution serves every setting pair.
    fn context(&self) -> Option<&SettingPair>;

    fn support(&self) -> Support;

    fn sample_lambda(&self, rng: &mut ChaCha12Rng) -> LambdaValue;

    fn outcome(&self, lambda: &LambdaValue, settings: &SettingPair) -> Result<Outcome>;
}

fn check_context(model: &dyn HiddenVariableModel, settings: &SettingPair) -> Result<()> {
    if let Some(ctx) = model.context() {
        if !ctx.approx_eq(settings) {
            return Err(Error::ContextBound {
                expected: ctx.to_string(),
                got: settings.to_string(),
            });
        }
    }
    Ok(())
}

/// Uniform sampler over the `n` slots of a product expansion. The hidden
/// variable is the slot index; grid slots map to their branch's joint
/// outcome in branch order, and the trailing residual slots map to
/// [`Outcome::Residual`]. Because the expansion was built for one setting
/// pair, the model refuses to answer for any other.
pub struct UniformMicrostateModel {
    context: SettingPair,
    slots: Vec<Outcome>,
}

impl UniformMicrostateModel {
    pub fn from_product(pae: &ProductAdaptedExpansion, context: SettingPair) -> Result<Self> {
        let mut slots = Vec::with_capacity(pae.n());
        for branch in &pae.branches {
            let (s, t) = parse_pair_label(&branch.label)?;
            slots.extend(std::iter::repeat_n(Outcome::Pair(s, t), branch.count));
        }
        slots.extend(std::iter::repeat_n(Outcome::Residual, pae.cat_slots));
        if slots.len() != pae.n() {
            return Err(Error::InvalidScenario(format!(
                "slot layout has {} entries for {} slots",
                slots.len(),
                pae.n()
            )));
        }
        Ok(UniformMicrostateModel { context, slots })
    }

    pub fn n(&self) -> usize {
        self.slots.len()
    }
}

impl HiddenVariableModel for UniformMicrostateModel {
    fn name(&self) -> &str {
        "uniform-microstate"
    }

    fn context(&self) -> Option<&SettingPair> {
        Some(&self.context)
    }

    fn support(&self) -> Support {
        Support::Finite(self.slots.len() as u64)
    }

    fn sample_lambda(&self, rng: &mut ChaCha12Rng) -> LambdaValue {
        LambdaValue::Index(rng.gen_range(0..self.slots.len() as u64))
    }

    fn outcome(&self, lambda: &LambdaValue, settings: &SettingPair) -> Result<Outcome> {
        check_context(self, settings)?;
        let LambdaValue::Index(i) = lambda else {
            return Err(Error::InvalidScenario(
                "uniform microstate model expects an index lambda".into(),
            ));
        };
        let i = *i as usize;
        self.slots.get(i).copied().ok_or(Error::IndexOutOfRange {
            what: "slot",
            index: i,
            len: self.slots.len(),
        })
    }
}

pub fn parse_pair_label(label: &str) -> Result<(Sign, Sign)> {
    let mut signs = Vec::with_capacity(2);
    for ch in label.chars() {
        match ch {
            '+' => signs.push(Sign::Plus),
            '-' => signs.push(Sign::Minus),
            _ => {
                return Err(Error::InvalidScenario(format!(
                    "branch label {label:?} is not a sign pair"
                )))
            }
        }
    }
    if signs.len() != 2 {
        return Err(Error::InvalidScenario(format!(
            "branch label {label:?} is not a sign pair"
        )));
    }
    Ok((signs[0], signs[1]))
}

pub fn pair_key(s: Sign, t: Sign) -> String {
    format!("{s}{t}")
}

/// Classical unit-sphere model: lambda is a uniformly random axis, each wing
/// answers with the sign of its direction's projection on the axis, and the
/// wings are anti-aligned. Its lambda distribution never depends on the
/// settings, so it satisfies measurement independence by construction; the
/// price is a correlation linear in the angle.
pub struct LocalBaseline;

impl LocalBaseline {
    /// Closed-form cell probabilities, rows indexed by Alice's sign.
    pub fn analytic_cells(&self, settings: &SettingPair) -> [[f64; 2]; 2] {
        let theta = settings.alice.angle_to(settings.bob);
        let same = theta / (2.0 * std::f64::consts::PI);
        let diff = (std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI);
        [[same, diff], [diff, same]]
    }

    /// Closed-form correlation `2 theta / pi - 1`.
    pub fn analytic_correlation(&self, settings: &SettingPair) -> f64 {
        2.0 * settings.alice.angle_to(settings.bob) / std::f64::consts::PI - 1.0
    }
}

impl HiddenVariableModel for LocalBaseline {
    fn name(&self) -> &str {
        "local-baseline"
    }

    fn context(&self) -> Option<&SettingPair> {
        None
    }

    fn support(&self) -> Support {
        Support::Unbounded
    }

    fn sample_lambda(&self, rng: &mut ChaCha12Rng) -> LambdaValue {
        let u: f64 = 2.0 * rng.gen::<f64>() - 1.0;
        let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let r = (1.0 - u * u).max(0.0).sqrt();
        LambdaValue::Axis([r * phi.cos(), r * phi.sin(), u])
    }

    fn outcome(&self, lambda: &LambdaValue, settings: &SettingPair) -> Result<Outcome> {
        let LambdaValue::Axis(axis) = lambda else {
            return Err(Error::InvalidScenario(
                "baseline model expects an axis lambda".into(),
            ));
        };
        let a = settings.alice.components();
        let b = settings.bob.components();
        let da = a[0] * axis[0] + a[1] * axis[1] + a[2] * axis[2];
        let db = b[0] * axis[0] + b[1] * axis[1] + b[2] * axis[2];
        let s = if da >= 0.0 { Sign::Plus } else { Sign::Minus };
        let t = if db >= 0.0 { Sign::Minus } else { Sign::Plus };
        Ok(Outcome::Pair(s, t))
    }
}

/// Samples joint outcomes directly from a four-cell distribution. The hidden
/// variable is a uniform point of the unit interval, carved into four
/// segments with the cell probabilities; this is the infinite-refinement
/// limit of slot counting, so it reproduces the quadratic weights without
/// finite-`n` bias.
pub struct BranchWeightModel {
    context: SettingPair,
    /// Cumulative probabilities over (++, +-, -+, --).
    thresholds: [f64; 4],
}

impl BranchWeightModel {
    /// `cells` rows are indexed by Alice's sign, columns by Bob's. The cells
    /// must be nonnegative and sum to 1 within 1e-9.
    pub fn from_cells(cells: [[f64; 2]; 2], context: SettingPair) -> Result<Self> {
        let flat = [cells[0][0], cells[0][1], cells[1][0], cells[1][1]];
        if flat.iter().any(|p| *p < -1e-12) {
            return Err(Error::InvalidScenario("negative cell probability".into()));
        }
        let total: f64 = flat.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidScenario(format!(
                "cell probabilities sum to {total}, not 1"
            )));
        }
        let mut thresholds = [0.0; 4];
        let mut acc = 0.0;
        for (slot, p) in thresholds.iter_mut().zip(flat.iter()) {
            acc += p.max(0.0);
            *slot = acc;
        }
        thresholds[3] = 1.0;
        Ok(BranchWeightModel {
            context,
            thresholds,
        })
    }
}

const PAIR_ORDER: [(Sign, Sign); 4] = [
    (Sign::Plus, Sign::Plus),
    (Sign::Plus, Sign::Minus),
    (Sign::Minus, Sign::Plus),
    (Sign::Minus, Sign::Minus),
];

impl HiddenVariableModel for BranchWeightModel {
    fn name(&self) -> &str {
        "branch-weight"
    }

    fn context(&self) -> Option<&SettingPair> {
        Some(&self.context)
    }

    fn support(&self) -> Support {
        Support::Unbounded
    }

    fn sample_lambda(&self, rng: &mut ChaCha12Rng) -> LambdaValue {
        LambdaValue::Real(rng.gen::<f64>())
    }

    fn outcome(&self, lambda: &LambdaValue, settings: &SettingPair) -> Result<Outcome> {
        check_context(self, settings)?;
        let LambdaValue::Real(u) = lambda else {
            return Err(Error::InvalidScenario(
                "branch weight model expects a unit-interval lambda".into(),
            ));
        };
        let k = self.thresholds.iter().position(|t| u < t).unwrap_or(3);
        let (s, t) = PAIR_ORDER[k];
        Ok(Outcome::Pair(s, t))
    }
}

/// Tallied outcomes of a seeded Monte Carlo run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalJoint {
    /// Counts keyed by outcome pair (`"++"`, `"+-"`, `"-+"`, `"--"`).
    pub counts: BTreeMap<String, u64>,
    pub trials: u64,
    /// Draws that landed on residual slots; excluded from the fractions.
    pub cat_hits: u64,
    pub seed: u64,
}

impl EmpiricalJoint {
    /// Trials that produced a definite pair.
    pub fn kept(&self) -> u64 {
        self.trials - self.cat_hits
    }

    pub fn count(&self, s: Sign, t: Sign) -> u64 {
        self.counts.get(&pair_key(s, t)).copied().unwrap_or(0)
    }

    /// Cell fraction among definite-pair trials.
    pub fn fraction(&self, s: Sign, t: Sign) -> f64 {
        let kept = self.kept();
        if kept == 0 {
            return f64::NAN;
        }
        self.count(s, t) as f64 / kept as f64
    }

    /// Estimated correlation of the two wings' signs.
    pub fn correlation(&self) -> f64 {
        self.fraction(Sign::Plus, Sign::Plus) + self.fraction(Sign::Minus, Sign::Minus)
            - self.fraction(Sign::Plus, Sign::Minus)
            - self.fraction(Sign::Minus, Sign::Plus)
    }

    /// Standard error of [`correlation`](Self::correlation) under binomial
    /// sampling.
    pub fn correlation_stderr(&self) -> f64 {
        let kept = self.kept();
        if kept == 0 {
            return f64::NAN;
        }
        let e = self.correlation();
        ((1.0 - e * e).max(0.0) / kept as f64).sqrt()
    }
}

/// Runs `trials` seeded draws of `model` at `settings`. The RNG stream index
/// keeps runs for different setting pairs statistically independent under a
/// shared seed.
pub fn monte_carlo(
    model: &dyn HiddenVariableModel,
    settings: &SettingPair,
    trials: u64,
    seed: u64,
    stream: u64,
) -> Result<EmpiricalJoint> {
    if trials == 0 {
        return Err(Error::InvalidScenario("zero Monte Carlo trials".into()));
    }
    check_context(model, settings)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for (s, t) in PAIR_ORDER {
        counts.insert(pair_key(s, t), 0);
    }
    let mut cat_hits = 0u64;
    for _ in 0..trials {
        let lambda = model.sample_lambda(&mut rng);
        match model.outcome(&lambda, settings)? {
            Outcome::Pair(s, t) => {
                *counts.get_mut(&pair_key(s, t)).expect("prefilled") += 1;
            }
            Outcome::Residual => cat_hits += 1,
        }
    }
    Ok(EmpiricalJoint {
        counts,
        trials,
        cat_hits,
        seed,
    })
}

/// Exact joint distribution of a finite-support model, as rational counts
/// over the support size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactJoint {
    /// Rows indexed by Alice's sign, columns by Bob's.
    pub cells: [[Rational64; 2]; 2],
    /// Share of the support carrying no definite pair.
    pub cat: Rational64,
    pub n: u64,
}

impl ExactJoint {
    /// Correlation as an exact rational, available when no residual share
    /// dilutes the cells.
    pub fn correlation(&self) -> Option<Rational64> {
        (self.cat == Rational64::new(0, 1))
            .then(|| self.cells[0][0] + self.cells[1][1] - self.cells[0][1] - self.cells[1][0])
    }

    pub fn cell(&self, s: Sign, t: Sign) -> Rational64 {
        self.cells[s.index()][t.index()]
    }
}

/// Averages a finite-support model exactly by enumerating its (uniform)
/// index space. Models with continuous hidden variables cannot be enumerated
/// and return [`Error::InfiniteSupport`].
pub fn exact_average(
    model: &dyn HiddenVariableModel,
    settings: &SettingPair,
) -> Result<ExactJoint> {
    let Support::Finite(n) = model.support() else {
        return Err(Error::InfiniteSupport);
    };
    check_context(model, settings)?;
    let mut counts = [[0i64; 2]; 2];
    let mut cat = 0i64;
    for i in 0..n {
        match model.outcome(&LambdaValue::Index(i), settings)? {
            Outcome::Pair(s, t) => counts[s.index()][t.index()] += 1,
            Outcome::Residual => cat += 1,
        }
    }
    let n_i = n as i64;
    let make = |c: i64| Rational64::new(c, n_i);
    Ok(ExactJoint {
        cells: [
            [make(counts[0][0]), make(counts[0][1])],
            [make(counts[1][0]), make(counts[1][1])],
        ],
        cat: make(cat),
        n,
    })
}

/// Outcome of checking that each lambda factorizes the joint response into
/// independent per-wing responses.
#[derive(Clone, Debug)]
pub enum FactorizabilityVerdict {
    /// Every checked lambda gave a product-form (here: deterministic)
    /// response.
    Factorizable { lambdas_checked: u64 },
    /// A lambda whose joint response is not the product of its marginal
    /// responses.
    NotFactorizable { witness: String },
    /// The model is tied to a different setting pair, so the condition
    /// cannot even be posed at these settings.
    ContextBound { expected: String, got: String },
}

/// Checks factorizability for a deterministic model by enumerating a finite
/// support or sampling `samples` lambdas from an unbounded one. Determinism
/// makes each per-lambda joint distribution a point mass, which factorizes
/// identically; the check still walks the support to confirm every lambda
/// yields a definite response.
pub fn factorizability_check(
    model: &dyn HiddenVariableModel,
    settings: &SettingPair,
    samples: u64,
    seed: u64,
) -> Result<FactorizabilityVerdict> {
    if let Some(ctx) = model.context() {
        if !ctx.approx_eq(settings) {
            return Ok(FactorizabilityVerdict::ContextBound {
                expected: ctx.to_string(),
                got: settings.to_string(),
            });
        }
    }
    let mut checked = 0u64;
    match model.support() {
        Support::Finite(n) => {
            for i in 0..n {
                model.outcome(&LambdaValue::Index(i), settings)?;
                checked += 1;
            }
        }
        Support::Unbounded => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let lambda = model.sample_lambda(&mut rng);
                model.outcome(&lambda, settings)?;
                checked += 1;
            }
        }
    }
    Ok(FactorizabilityVerdict::Factorizable {
        lambdas_checked: checked,
    })
}

/// Whether a family of models shares one setting-independent lambda
/// distribution.
#[derive(Clone, Debug)]
pub enum MeasurementIndependence {
    /// No model in the family ties its distribution to a setting pair.
    Independent { models_checked: usize },
    /// At least one model's lambda distribution is bound to its settings.
    ContextDependent {
        models_checked: usize,
        bound_contexts: Vec<String>,
    },
}

/// Builds a model per setting pair and reports whether the lambda
/// distribution is independent of the settings across the grid.
pub fn measurement_independence_check<F>(
    factory: F,
    grid: &[SettingPair],
) -> Result<MeasurementIndependence>
where
    F: Fn(&SettingPair) -> Result<Box<dyn HiddenVariableModel>>,
{
    let mut bound = Vec::new();
    for pair in grid {
        let model = factory(pair)?;
        if let Some(ctx) = model.context() {
            bound.push(ctx.to_string());
        }
    }
    if bound.is_empty() {
        Ok(MeasurementIndependence::Independent {
            models_checked: grid.len(),
        })
    } else {
        Ok(MeasurementIndependence::ContextDependent {
            models_checked: grid.len(),
            bound_contexts: bound,
        })
    }
}

/// A product expansion together with the setting pair it was built for.
#[derive(Clone, Debug)]
pub struct ContextualEnsemble {
    pub context: SettingPair,
    pub product: ProductAdaptedExpansion,
}

/// Comparison of two same-Alice ensembles: Alice's marginal slot counts
/// against how much of the underlying microstate sets they actually share.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrespondenceReport {
    pub n: usize,
    /// Alice-plus grid slots in (left, right).
    pub alice_plus: (usize, usize),
    pub alice_minus: (usize, usize),
    /// Residual mass on Alice-plus branches in (left, right).
    pub plus_cat_mass: (f64, f64),
    pub minus_cat_mass: (f64, f64),
    pub marginals_match: bool,
    /// Microstates appearing (up to phase) in both ensembles.
    pub common_microstates: usize,
    pub left_total: usize,
    pub right_total: usize,
}

/// Compares two ensembles sharing the parent state and Alice's direction but
/// differing in Bob's. Alice's marginal counts coincide while the microstate
/// sets themselves are typically disjoint: the lambda distribution moved
/// even though no local statistic did.
pub fn ensemble_correspondence(
    left: &ContextualEnsemble,
    right: &ContextualEnsemble,
) -> Result<CorrespondenceReport> {
    let le = &left.product.expansion;
    let re = &right.product.expansion;
    if le.n() != re.n() {
        return Err(Error::MismatchedEnsembles {
            reason: format!("slot counts differ: {} vs {}", le.n(), re.n()),
        });
    }
    let parent_gap = le.parent().distance(re.parent())?;
    if parent_gap > 1e-9 * le.parent().norm() {
        return Err(Error::MismatchedEnsembles {
            reason: "parent states differ".into(),
        });
    }
    if !directions_close(left.context.alice, right.context.alice) {
        return Err(Error::MismatchedEnsembles {
            reason: "Alice's settings differ".into(),
        });
    }

    let tally = |e: &ContextualEnsemble| -> Result<(usize, usize, f64, f64)> {
        let mut plus = 0usize;
        let mut minus = 0usize;
        for b in &e.product.branches {
            let (s, _) = parse_pair_label(&b.label)?;
            match s {
                Sign::Plus => plus += b.count,
                Sign::Minus => minus += b.count,
            }
        }
        let mut plus_cat = 0.0;
        let mut minus_cat = 0.0;
        for m in e.product.expansion.microstates() {
            if m.classification != Some(Classification::Cat) {
                continue;
            }
            let label = m.branch_label.as_deref().ok_or(Error::UnlabeledExpansion)?;
            let (s, _) = parse_pair_label(label)?;
            match s {
                Sign::Plus => plus_cat += m.weight,
                Sign::Minus => minus_cat += m.weight,
            }
        }
        Ok((plus, minus, plus_cat, minus_cat))
    };
    let (lp, lm, lpc, lmc) = tally(left)?;
    let (rp, rm, rpc, rmc) = tally(right)?;

    let amp_sq = le.amplitude() * le.amplitude();
    let mut common = 0usize;
    let mut left_total = 0usize;
    let mut right_total = 0usize;
    let full_weight = |w: f64| (w - 1.0).abs() <= 1e-12;
    for lm_state in le.microstates().iter().filter(|m| full_weight(m.weight)) {
        left_total += 1;
        for rm_state in re.microstates().iter().filter(|m| full_weight(m.weight)) {
            let overlap = microstate_overlap(lm_state, rm_state);
            if overlap >= (1.0 - 1e-6) * amp_sq {
                common += 1;
            }
        }
    }
    for m in re.microstates() {
        if full_weight(m.weight) {
            right_total += 1;
        }
    }

    Ok(CorrespondenceReport {
        n: le.n(),
        alice_plus: (lp, rp),
        alice_minus: (lm, rm),
        plus_cat_mass: (lpc, rpc),
        minus_cat_mass: (lmc, rmc),
        marginals_match: lp == rp
            && lm == rm
            && (lpc - rpc).abs() <= 1e-9
            && (lmc - rmc).abs() <= 1e-9,
        common_microstates: common,
        left_total,
        right_total,
    })
}

fn microstate_overlap(a: &crate::expansion::Microstate, b: &crate::expansion::Microstate) -> f64 {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::product_adapted_expand;
    use crate::expansion::tests::{singlet_with_ancillas, spin_branches};
    use proptest::prelude::*;

    fn sixty_degree_setup() -> (ProductAdaptedExpansion, SettingPair) {
        let psi = singlet_with_ancillas(4);
        let settings = SettingPair::from_plane_degrees(0.0, 60.0);
        let branches = spin_branches(settings.alice, settings.bob, 4);
        let pae = product_adapted_expand(&psi, &branches, 16).unwrap();
        (pae, settings)
    }

    #[test]
    fn slot_layout_follows_branch_order() {
        let (pae, settings) = sixty_degree_setup();
        let model = UniformMicrostateModel::from_product(&pae, settings).unwrap();
        assert_eq!(model.n(), 16);
        let at = |i: u64| model.outcome(&LambdaValue::Index(i), &settings).unwrap();
        assert_eq!(at(0), Outcome::Pair(Sign::Plus, Sign::Plus));
        assert_eq!(at(1), Outcome::Pair(Sign::Plus, Sign::Plus));
        assert_eq!(at(2), Outcome::Pair(Sign::Plus, Sign::Minus));
        assert_eq!(at(7), Outcome::Pair(Sign::Plus, Sign::Minus));
        assert_eq!(at(8), Outcome::Pair(Sign::Minus, Sign::Plus));
        assert_eq!(at(14), Outcome::Pair(Sign::Minus, Sign::Minus));
        assert_eq!(at(15), Outcome::Pair(Sign::Minus, Sign::Minus));
    }

    #[test]
    fn asking_for_other_settings_is_context_bound() {
        let (pae, settings) = sixty_degree_setup();
        let model = UniformMicrostateModel::from_product(&pae, settings).unwrap();
        let other = SettingPair::from_plane_degrees(0.0, 45.0);
        let err = model.outcome(&LambdaValue::Index(0), &other).unwrap_err();
        assert!(matches!(err, Error::ContextBound { .. }), "{err}");
        assert!(matches!(
            monte_carlo(&model, &other, 10, 1, 0),
            Err(Error::ContextBound { .. })
        ));
    }

    #[test]
    fn exact_average_reproduces_the_slot_fractions() {
        let (pae, settings) = sixty_degree_setup();
        let model = UniformMicrostateModel::from_product(&pae, settings).unwrap();
        let joint = exact_average(&model, &settings).unwrap();
        assert_eq!(joint.cell(Sign::Plus, Sign::Plus), Rational64::new(1, 8));
        assert_eq!(joint.cell(Sign::Plus, Sign::Minus), Rational64::new(3, 8));
        assert_eq!(joint.cell(Sign::Minus, Sign::Plus), Rational64::new(3, 8));
        assert_eq!(joint.cell(Sign::Minus, Sign::Minus), Rational64::new(1, 8));
        assert_eq!(joint.cat, Rational64::new(0, 1));
        assert_eq!(joint.correlation(), Some(Rational64::new(-1, 2)));
    }

    #[test]
    fn exact_average_needs_finite_support() {
        let settings = SettingPair::from_plane_degrees(0.0, 30.0);
        assert!(matches!(
            exact_average(&LocalBaseline, &settings),
            Err(Error::InfiniteSupport)
        ));
    }

    #[test]
    fn uniform_sampling_is_uniform() {
        let (pae, settings) = sixty_degree_setup();
        let model = UniformMicrostateModel::from_product(&pae, settings).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let n = model.n() as u64;
        let trials = 160_000u64;
        let mut bins = vec![0u64; model.n()];
        for _ in 0..trials {
            let LambdaValue::Index(i) = model.sample_lambda(&mut rng) else {
                panic!("index lambda expected");
            };
            bins[i as usize] += 1;
        }
        let expected = trials as f64 / n as f64;
        let chi2: f64 = bins
            .iter()
            .map(|&b| (b as f64 - expected).powi(2) / expected)
            .sum();
        // 0.001 critical value for 15 degrees of freedom.
        assert!(chi2 < 37.697, "chi2 = {chi2}");
    }

    #[test]
    fn monte_carlo_is_reproducible_and_streams_differ() {
        let (pae, settings) = sixty_degree_setup();
        let model = UniformMicrostateModel::from_product(&pae, settings).unwrap();
        let a = monte_carlo(&model, &settings, 5000, 7, 0).unwrap();
        let b = monte_carlo(&model, &settings, 5000, 7, 0).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo(&model, &settings, 5000, 7, 1).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.trials, a.kept() + a.cat_hits);
    }

    #[test]
    fn empirical_joint_serializes_with_the_documented_keys() {
        let (pae, settings) = sixty_degree_setup();
        let model = UniformMicrostateModel::from_product(&pae, settings).unwrap();
        let joint = monte_carlo(&model, &settings, 100, 42, 0).unwrap();
        let value = serde_json::to_value(&joint).unwrap();
        let obj = value.as_object().unwrap();
        assert_eq!(obj.len(), 4);
        for key in ["counts", "trials", "cat_hits", "seed"] {
            assert!(obj.contains_key(key), "missing {key}");
        }
        let counts = obj["counts"].as_object().unwrap();
        for key in ["++", "+-", "-+", "--"] {
            assert!(counts.contains_key(key), "missing cell {key}");
        }
        let back: EmpiricalJoint = serde_json::from_value(value).unwrap();
        assert_eq!(back, joint);
    }

    #[test]
    fn baseline_matches_its_closed_form() {
        let settings = SettingPair::from_plane_degrees(0.0, 60.0);
        let model = LocalBaseline;
        let analytic = model.analytic_correlation(&settings);
        assert!((analytic - (-1.0 / 3.0)).abs() < 1e-12);
        let joint = monte_carlo(&model, &settings, 200_000, 11, 0).unwrap();
        assert!((joint.correlation() - analytic).abs() < 0.01);
        let cells = model.analytic_cells(&settings);
        let total: f64 = cells.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_is_perfectly_anticorrelated_at_zero_angle() {
        let settings = SettingPair::from_plane_degrees(20.0, 20.0);
        let model = LocalBaseline;
        assert!((model.analytic_correlation(&settings) + 1.0).abs() < 1e-12);
        let joint = monte_carlo(&model, &settings, 20_000, 3, 0).unwrap();
        assert_eq!(joint.count(Sign::Plus, Sign::Plus), 0);
        assert_eq!(joint.count(Sign::Minus, Sign::Minus), 0);
    }

    #[test]
    fn branch_weight_model_reproduces_its_cells() {
        let settings = SettingPair::from_plane_degrees(0.0, 0.0);
        let model = BranchWeightModel::from_cells([[0.0, 0.5], [0.5, 0.0]], settings).unwrap();
        let joint = monte_carlo(&model, &settings, 50_000, 5, 0).unwrap();
        assert_eq!(joint.count(Sign::Plus, Sign::Plus), 0);
        assert_eq!(joint.count(Sign::Minus, Sign::Minus), 0);
        assert!((joint.fraction(Sign::Plus, Sign::Minus) - 0.5).abs() < 0.02);
        assert!((joint.correlation() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_models_factorize() {
        let (pae, settings) = sixty_degree_setup();
        let model = UniformMicrostateModel::from_product(&pae, settings).unwrap();
        let verdict = factorizability_check(&model, &settings, 0, 0).unwrap();
        assert!(matches!(
            verdict,
            FactorizabilityVerdict::Factorizable {
                lambdas_checked: 16
            }
        ));
        let other = SettingPair::from_plane_degrees(0.0, 10.0);
        let verdict = factorizability_check(&model, &other, 0, 0).unwrap();
        assert!(matches!(
            verdict,
            FactorizabilityVerdict::ContextBound { .. }
        ));
        let verdict = factorizability_check(&LocalBaseline, &other, 256, 9).unwrap();
        assert!(matches!(
            verdict,
            FactorizabilityVerdict::Factorizable {
                lambdas_checked: 256
            }
        ));
    }

    #[test]
    fn context_free_families_pass_measurement_independence() {
        let grid = [
            SettingPair::from_plane_degrees(0.0, 45.0),
            SettingPair::from_plane_degrees(0.0, 135.0),
            SettingPair::from_plane_degrees(90.0, 45.0),
        ];
        let verdict = measurement_independence_check(
            |_| Ok(Box::new(LocalBaseline) as Box<dyn HiddenVariableModel>),
            &grid,
        )
        .unwrap();
        assert!(matches!(
            verdict,
            MeasurementIndependence::Independent { models_checked: 3 }
        ));
    }

    #[test]
    fn slot_counting_families_are_context_dependent() {
        let psi = singlet_with_ancillas(4);
        let grid = [
            SettingPair::from_plane_degrees(0.0, 60.0),
            SettingPair::from_plane_degrees(0.0, 120.0),
        ];
        let verdict = measurement_independence_check(
            |pair| {
                let branches = spin_branches(pair.alice, pair.bob, 4);
                let pae = product_adapted_expand(&psi, &branches, 16)?;
                Ok(Box::new(UniformMicrostateModel::from_product(&pae, *pair)?)
                    as Box<dyn HiddenVariableModel>)
            },
            &grid,
        )
        .unwrap();
        match verdict {
            MeasurementIndependence::ContextDependent {
                models_checked,
                bound_contexts,
            } => {
                assert_eq!(models_checked, 2);
                assert_eq!(bound_contexts.len(), 2);
            }
            other => panic!("expected context dependence, got {other:?}"),
        }
    }

    #[test]
    fn same_alice_ensembles_match_marginally_but_share_nothing() {
        let psi = singlet_with_ancillas(4);
        let left_ctx = SettingPair::from_plane_degrees(0.0, 60.0);
        let right_ctx = SettingPair::from_plane_degrees(0.0, 120.0);
        let make = |ctx: SettingPair| ContextualEnsemble {
            context: ctx,
            product: product_adapted_expand(&psi, &spin_branches(ctx.alice, ctx.bob, 4), 16)
                .unwrap(),
        };
        let left = make(left_ctx);
        let right = make(right_ctx);
        let report = ensemble_correspondence(&left, &right).unwrap();
        assert_eq!(report.alice_plus, (8, 8));
        assert_eq!(report.alice_minus, (8, 8));
        assert!(report.marginals_match);
        assert_eq!(report.common_microstates, 0);
        assert_eq!(report.left_total, 16);
        assert_eq!(report.right_total, 16);
    }

    #[test]
    fn identical_ensembles_share_everything() {
        let psi = singlet_with_ancillas(4);
        let ctx = SettingPair::from_plane_degrees(0.0, 60.0);
        let make = || ContextualEnsemble {
            context: ctx,
            product: product_adapted_expand(&psi, &spin_branches(ctx.alice, ctx.bob, 4), 16)
                .unwrap(),
        };
        let report = ensemble_correspondence(&make(), &make()).unwrap();
        assert_eq!(report.common_microstates, 16);
    }

    #[test]
    fn mismatched_ensembles_are_rejected() {
        let psi = singlet_with_ancillas(4);
        let a = ContextualEnsemble {
            context: SettingPair::from_plane_degrees(0.0, 60.0),
            product: product_adapted_expand(
                &psi,
                &spin_branches(
                    Direction::from_plane_degrees(0.0),
                    Direction::from_plane_degrees(60.0),
                    4,
                ),
                16,
            )
            .unwrap(),
        };
        let b = ContextualEnsemble {
            context: SettingPair::from_plane_degrees(90.0, 60.0),
            product: product_adapted_expand(
                &psi,
                &spin_branches(
                    Direction::from_plane_degrees(90.0),
                    Direction::from_plane_degrees(60.0),
                    4,
                ),
                16,
            )
            .unwrap(),
        };
        let err = ensemble_correspondence(&a, &b).unwrap_err();
        assert!(matches!(err, Error::MismatchedEnsembles { .. }), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn baseline_correlation_is_within_chsh_reach(a in 0.0f64..180.0, b in 0.0f64..180.0) {
            let settings = SettingPair::from_plane_degrees(a, b);
            let e = LocalBaseline.analytic_correlation(&settings);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&e));
        }

        #[test]
        fn empirical_fractions_sum_to_one(seed in 0u64..40) {
            let settings = SettingPair::from_plane_degrees(10.0, 75.0);
            let joint = monte_carlo(&LocalBaseline, &settings, 2000, seed, 0).unwrap();
            let total: u64 = joint.counts.values().sum();
            prop_assert_eq!(total + joint.cat_hits, joint.trials);
        }
    }
}
