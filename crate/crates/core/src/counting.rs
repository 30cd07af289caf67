//! Probability as microstate counting.
//!
//! An expansion adapted to a projector assigns the projector an interval of
//! probabilities rather than a point: counting the pieces inside the range
//! gives the lower endpoint, and charging every unclassified slot to the
//! range gives the upper one. Both endpoints are exact rationals with
//! denominator `n`, so the interval width is `cat / n` and shrinks as the
//! expansion is refined. The quadratic weight of the projector is recovered
//! in the limit because it is always contained in the interval.

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::{
    adapted_expand, classify, verify_expansion, AdaptedExpansion, Classification, Expansion,
    ProductAdaptedExpansion, VerificationReport, CLASSIFY_EPS,
};
use crate::linalg::{ProjectorLike, StateVector, Unitary};

/// A closed interval of probabilities with exact rational endpoints over the
/// slot count `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImpreciseProbability {
    pub lower: Rational64,
    pub upper: Rational64,
    pub n: usize,
    /// Slots charged to neither endpoint (the interval width times `n`).
    pub cat_count: usize,
}

impl ImpreciseProbability {
    fn from_counts(in_range: usize, cat: usize, n: usize) -> Self {
        let n_i = n as i64;
        ImpreciseProbability {
            lower: Rational64::new(in_range as i64, n_i),
            upper: Rational64::new((in_range + cat) as i64, n_i),
            n,
            cat_count: cat,
        }
    }

    pub fn width(&self) -> Rational64 {
        self.upper - self.lower
    }

    pub fn lower_f64(&self) -> f64 {
        rational_to_f64(self.lower)
    }

    pub fn upper_f64(&self) -> f64 {
        rational_to_f64(self.upper)
    }

    /// The point value when the interval has collapsed to one.
    pub fn point(&self) -> Option<Rational64> {
        (self.lower == self.upper).then_some(self.lower)
    }

    /// Containment of a real value, with `slack` absorbing rounding in the
    /// value being tested (the endpoints themselves are exact).
    pub fn contains(&self, value: f64, slack: f64) -> bool {
        self.lower_f64() - value <= slack && value - self.upper_f64() <= slack
    }

    pub fn to_dto(&self) -> BoundsDto {
        BoundsDto {
            lower: self.lower.into(),
            upper: self.upper.into(),
            n: self.n,
            cat_count: self.cat_count,
        }
    }
}

pub fn rational_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Serialization form of a rational number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalDto {
    pub num: i64,
    pub den: i64,
}

impl From<Rational64> for RationalDto {
    fn from(r: Rational64) -> Self {
        RationalDto {
            num: *r.numer(),
            den: *r.denom(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoundsDto {
    pub lower: RationalDto,
    pub upper: RationalDto,
    pub n: usize,
    pub cat_count: usize,
}

/// Probability interval of the adaptation target from the slot tallies.
pub fn probability_bounds(ae: &AdaptedExpansion) -> ImpreciseProbability {
    ImpreciseProbability::from_counts(ae.counts.in_range, ae.counts.cat, ae.expansion.n())
}

/// Probability interval of one branch of a product expansion. Residual slots
/// are shared by all branches, so each branch is charged all of them at the
/// upper endpoint.
pub fn branch_bounds(pae: &ProductAdaptedExpansion, label: &str) -> Result<ImpreciseProbability> {
    let branch = pae
        .branch(label)
        .ok_or_else(|| Error::InvalidScenario(format!("no branch labeled {label}")))?;
    Ok(ImpreciseProbability::from_counts(
        branch.count,
        pae.cat_slots,
        pae.n(),
    ))
}

/// Probability interval for an arbitrary projector against an arbitrary
/// expansion, by classifying each full-weight microstate. Fractional-weight
/// pieces are charged to the undecided middle along with the cats.
pub fn classify_bounds<P: ProjectorLike + ?Sized>(
    e: &Expansion,
    target: &P,
    eps: f64,
) -> Result<ImpreciseProbability> {
    let mut in_range = 0usize;
    let mut in_kernel = 0usize;
    for m in e.microstates() {
        if (m.weight - 1.0).abs() > 1e-12 {
            continue;
        }
        match classify(&m.vector, target, eps)? {
            Classification::InRange => in_range += 1,
            Classification::InKernel => in_kernel += 1,
            Classification::Cat => {}
        }
    }
    let n = e.n();
    let cat = n
        .checked_sub(in_range + in_kernel)
        .ok_or_else(|| Error::FailedVerification {
            reason: "classified more full-weight slots than the expansion has".into(),
        })?;
    Ok(ImpreciseProbability::from_counts(in_range, cat, n))
}

/// Quadratic weight of `target` in `psi`: `||P psi||^2 / ||psi||^2`.
pub fn born_quantity<P: ProjectorLike + ?Sized>(psi: &StateVector, target: &P) -> Result<f64> {
    let norm_sq = psi.norm_sq();
    if norm_sq <= 0.0 {
        return Err(Error::ZeroState);
    }
    Ok((target.apply(psi)?.norm_sq() / norm_sq).clamp(0.0, 1.0))
}

/// Result of checking that the counting interval traps the quadratic weight.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub n: usize,
    pub bounds: BoundsDto,
    pub born: f64,
    pub width: f64,
    pub contained: bool,
}

/// Builds the `n`-slot adapted expansion and checks that its probability
/// interval contains the quadratic weight of `target`.
pub fn containment_check<P: ProjectorLike + ?Sized>(
    psi: &StateVector,
    target: &P,
    n: usize,
) -> Result<ContainmentReport> {
    let ae = adapted_expand(psi, target, n)?;
    let bounds = probability_bounds(&ae);
    let born = born_quantity(psi, target)?;
    Ok(ContainmentReport {
        n,
        bounds: bounds.to_dto(),
        born,
        width: rational_to_f64(bounds.width()),
        contained: bounds.contains(born, 1e-12),
    })
}

/// One row of a refinement sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub n: usize,
    pub bounds: ImpreciseProbability,
    pub born: f64,
}

/// Runs [`containment_check`]'s construction over a schedule of slot counts,
/// reporting the interval at each `n`.
pub fn convergence_sweep<P: ProjectorLike + ?Sized>(
    psi: &StateVector,
    target: &P,
    schedule: &[usize],
) -> Result<Vec<SweepPoint>> {
    let born = born_quantity(psi, target)?;
    let mut points = Vec::with_capacity(schedule.len());
    for &n in schedule {
        let ae = adapted_expand(psi, target, n)?;
        points.push(SweepPoint {
            n,
            bounds: probability_bounds(&ae),
            born,
        });
    }
    Ok(points)
}

/// Renders a sweep as CSV with exact rational endpoints.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("n,lower_num,lower_den,upper_num,upper_den,born,width\n");
    for p in points {
        let b = &p.bounds;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.n,
            b.lower.numer(),
            b.lower.denom(),
            b.upper.numer(),
            b.upper.denom(),
            p.born,
            rational_to_f64(b.width()),
        ));
    }
    out
}

/// Exact counting share of one full-weight microstate: `1 / n`.
pub fn microstate_share(e: &Expansion, index: usize) -> Result<Rational64> {
    let m = e.microstates().get(index).ok_or(Error::IndexOutOfRange {
        what: "microstate",
        index,
        len: e.microstates().len(),
    })?;
    if (m.weight - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidScenario(format!(
            "microstate {index} carries fractional weight {}",
            m.weight
        )));
    }
    Ok(Rational64::new(1, e.n() as i64))
}

/// Report of a symmetry check: a unitary fixing one microstate maps the
/// expansion to a valid expansion of the transformed parent, and the fixed
/// microstate keeps its exact `1 / n` share in both.
#[derive(Clone, Debug)]
pub struct InvarianceReport {
    pub index: usize,
    /// Relative movement of the fixed microstate under the unitary.
    pub deviation: f64,
    pub share_before: Rational64,
    pub share_after: Rational64,
    pub verification: VerificationReport,
}

/// Applies `u` to the expansion and confirms that (a) the microstate at
/// `index` is pointwise fixed, (b) the image is still a valid expansion, and
/// (c) the fixed microstate's counting share is unchanged.
pub fn invariance_test(e: &Expansion, u: &Unitary, index: usize) -> Result<InvarianceReport> {
    let m = e.microstates().get(index).ok_or(Error::IndexOutOfRange {
        what: "microstate",
        index,
        len: e.microstates().len(),
    })?;
    let moved = u.apply(&m.vector)?;
    let deviation = moved.distance(&m.vector)? / m.vector.norm().max(f64::MIN_POSITIVE);
    if deviation > CLASSIFY_EPS {
        return Err(Error::MicrostateNotFixed { deviation });
    }
    let share_before = microstate_share(e, index)?;
    let transformed = e.transformed(u)?;
    let verification = verify_expansion(&transformed, 1e-9);
    if !verification.passes() {
        return Err(Error::FailedVerification {
            reason: format!("transformed expansion fails geometry checks: {verification:?}"),
        });
    }
    let share_after = microstate_share(&transformed, index)?;
    Ok(InvarianceReport {
        index,
        deviation,
        share_before,
        share_after,
        verification,
    })
}

/// Probability interval of a single microstate obtained by classifying the
/// expansion against the ray projector onto that microstate. For a valid
/// expansion this collapses to the exact point `1 / n`.
pub fn ray_share_bounds(e: &Expansion, index: usize) -> Result<ImpreciseProbability> {
    let m = e.microstates().get(index).ok_or(Error::IndexOutOfRange {
        what: "microstate",
        index,
        len: e.microstates().len(),
    })?;
    let ray = crate::linalg::Projector::onto_ray(&m.vector)?;
    classify_bounds(e, &ray, CLASSIFY_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::equiamplitude_expand;
    use crate::linalg::Projector;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha12Rng;

    fn dim8_case() -> (StateVector, Projector) {
        let mut psi = StateVector::zero(8);
        psi.amplitudes_mut()[0] = Complex64::new(1.0, 0.0);
        psi.amplitudes_mut()[4] = Complex64::new(1.0, 0.0);
        psi.amplitudes_mut()[5] = Complex64::new(1.0, 0.0);
        (psi, Projector::standard(8, &[0, 1, 2, 3]).unwrap())
    }

    fn random_state(rng: &mut ChaCha12Rng, dim: usize) -> StateVector {
        StateVector::new(
            (0..dim)
                .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn integral_slot_count_gives_a_point_interval() {
        let (psi, p) = dim8_case();
        let ae = adapted_expand(&psi, &p, 3).unwrap();
        let bounds = probability_bounds(&ae);
        assert_eq!(bounds.lower, Rational64::new(1, 3));
        assert_eq!(bounds.upper, Rational64::new(1, 3));
        assert_eq!(bounds.point(), Some(Rational64::new(1, 3)));
        assert_eq!(bounds.width(), Rational64::new(0, 1));
    }

    #[test]
    fn fractional_slot_count_gives_a_one_slot_interval() {
        let (psi, p) = dim8_case();
        let ae = adapted_expand(&psi, &p, 4).unwrap();
        let bounds = probability_bounds(&ae);
        assert_eq!(bounds.lower, Rational64::new(1, 4));
        assert_eq!(bounds.upper, Rational64::new(1, 2));
        assert_eq!(bounds.width(), Rational64::new(1, 4));
        assert!(bounds.contains(1.0 / 3.0, 1e-12));
    }

    #[test]
    fn born_quantity_matches_the_mass_ratio() {
        let (psi, p) = dim8_case();
        let born = born_quantity(&psi, &p).unwrap();
        assert!((born - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn containment_holds_over_a_small_schedule() {
        let (psi, p) = dim8_case();
        // Beyond n = 6 the rank-4 kernel cannot hold floor(2n/3) pieces plus
        // a residue direction.
        for n in 2..=6 {
            let report = containment_check(&psi, &p, n).unwrap();
            assert!(report.contained, "n = {n}: {report:?}");
        }
        let err = containment_check(&psi, &p, 7).unwrap_err();
        assert!(matches!(err, Error::InsufficientRank { .. }), "{err}");
    }

    #[test]
    fn sweep_width_is_zero_exactly_when_the_split_is_integral() {
        let (psi, p) = dim8_case();
        let points = convergence_sweep(&psi, &p, &[2, 3, 4, 5, 6]).unwrap();
        for point in &points {
            let integral = point.n % 3 == 0;
            if integral {
                assert_eq!(point.bounds.width(), Rational64::new(0, 1), "n={}", point.n);
            } else {
                assert_eq!(
                    point.bounds.width(),
                    Rational64::new(1, point.n as i64),
                    "n={}",
                    point.n
                );
            }
        }
    }

    #[test]
    fn sweep_csv_has_exact_rational_columns() {
        let (psi, p) = dim8_case();
        let points = convergence_sweep(&psi, &p, &[3, 4]).unwrap();
        let csv = sweep_csv(&points);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,lower_num,lower_den,upper_num,upper_den,born,width"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&row[..5], &["3", "1", "3", "1", "3"]);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&row[..5], &["4", "1", "4", "1", "2"]);
        assert_eq!(row[6], "0.25");
    }

    #[test]
    fn each_microstate_has_share_exactly_one_over_n() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let psi = random_state(&mut rng, 10);
        let e = equiamplitude_expand(&psi, 6, None).unwrap();
        for i in 0..6 {
            assert_eq!(microstate_share(&e, i).unwrap(), Rational64::new(1, 6));
            let bounds = ray_share_bounds(&e, i).unwrap();
            assert_eq!(bounds.lower, Rational64::new(1, 6));
            assert_eq!(bounds.upper, Rational64::new(1, 6));
        }
    }

    #[test]
    fn classify_bounds_traps_born_for_unadapted_expansions() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let psi = random_state(&mut rng, 12);
        let p = Projector::standard(12, &[0, 1, 2, 3, 4]).unwrap();
        let e = equiamplitude_expand(&psi, 7, None).unwrap();
        let bounds = classify_bounds(&e, &p, CLASSIFY_EPS).unwrap();
        let born = born_quantity(&psi, &p).unwrap();
        assert!(bounds.contains(born, 1e-12));
    }

    #[test]
    fn invariance_holds_for_unitaries_fixing_a_microstate() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let psi = random_state(&mut rng, 8);
        let e = equiamplitude_expand(&psi, 4, None).unwrap();
        // Swap two other microstates; the first stays pointwise fixed.
        let a = e.microstates()[1].vector.normalized().unwrap();
        let b = e.microstates()[2].vector.normalized().unwrap();
        let u = Unitary::from_basis_map(8, &[a.clone(), b.clone()], &[b, a]).unwrap();
        let report = invariance_test(&e, &u, 0).unwrap();
        assert_eq!(report.share_before, Rational64::new(1, 4));
        assert_eq!(report.share_after, Rational64::new(1, 4));
        assert!(report.deviation < 1e-10);
    }

    #[test]
    fn moving_the_chosen_microstate_is_an_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let psi = random_state(&mut rng, 8);
        let e = equiamplitude_expand(&psi, 4, None).unwrap();
        let a = e.microstates()[0].vector.normalized().unwrap();
        let b = e.microstates()[2].vector.normalized().unwrap();
        let u = Unitary::from_basis_map(8, &[a.clone(), b.clone()], &[b, a]).unwrap();
        let err = invariance_test(&e, &u, 0).unwrap_err();
        assert!(matches!(err, Error::MicrostateNotFixed { .. }), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn containment_is_universal(seed in 0u64..400) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let dim = rng.gen_range(4..14);
            let rank = rng.gen_range(1..dim);
            let indices: Vec<usize> = (0..rank).collect();
            let p = Projector::standard(dim, &indices).unwrap();
            let psi = random_state(&mut rng, dim);
            let n = rng.gen_range(2..=dim.min(9));
            match containment_check(&psi, &p, n) {
                Ok(report) => prop_assert!(report.contained, "{:?}", report),
                Err(Error::InsufficientRank { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }

        #[test]
        fn widths_never_exceed_one_slot_for_adapted_expansions(seed in 0u64..200) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(9000));
            let dim = rng.gen_range(6..16);
            let rank = rng.gen_range(2..dim - 1);
            let indices: Vec<usize> = (0..rank).collect();
            let p = Projector::standard(dim, &indices).unwrap();
            let psi = random_state(&mut rng, dim);
            let n = rng.gen_range(2..=6);
            if let Ok(ae) = adapted_expand(&psi, &p, n) {
                let bounds = probability_bounds(&ae);
                prop_assert!(bounds.width() <= Rational64::new(1, n as i64));
            }
        }
    }
}
