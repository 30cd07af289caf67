//! Equiamplitude microstate expansions with exact rational probability
//! bounds, uniform-microstate sampling models, and two-wing Bell-test
//! diagnostics.
//!
//! The crate decomposes a state vector into `n` mutually orthogonal pieces
//! of equal norm, classifies the pieces against measurement projectors, and
//! turns the resulting counts into probability intervals whose endpoints are
//! exact rationals over `n`. A companion sampling model draws single
//! microstates uniformly, and the [`eprb`] module wires both into spin-pair
//! experiments with the usual locality conditions and the CHSH statistic.

#![forbid(unsafe_code)]

pub mod counting;
pub mod eprb;
pub mod error;
pub mod expansion;
pub mod hidden;
pub mod linalg;

pub use counting::{
    born_quantity, branch_bounds, classify_bounds, containment_check, convergence_sweep,
    invariance_test, microstate_share, probability_bounds, sweep_csv, BoundsDto, ContainmentReport,
    ImpreciseProbability, InvarianceReport, RationalDto, SweepPoint,
};
pub use eprb::{
    chsh, condition_battery, conditional, correlation_sweep, joint_distribution,
    photon_box_scenario, photon_pair, product_completeness_demo, sample_microstates, singlet,
    structural_marginal, suggest_microstate_count, Backend, Cell, Choice, ChshReport,
    ConditionBattery, ConditionReport, Conditional, EPRBScenario, JointDistribution,
    ProductCompletenessReport, Verdict, Wing,
};
pub use error::{Error, Result};
pub use expansion::{
    adapted_expand, classify, equiamplitude_expand, product_adapted_expand, verify_expansion,
    AdaptationCounts, AdaptedExpansion, BranchCount, BranchProjector, Classification, Expansion,
    Microstate, ProductAdaptedExpansion, VerificationReport,
};
pub use hidden::{
    ensemble_correspondence, exact_average, factorizability_check, measurement_independence_check,
    monte_carlo, BranchWeightModel, ContextualEnsemble, CorrespondenceReport, EmpiricalJoint,
    ExactJoint, FactorizabilityVerdict, HiddenVariableModel, LambdaValue, LocalBaseline,
    MeasurementIndependence, Outcome, SettingPair, Support, UniformMicrostateModel,
};
pub use linalg::{
    schmidt, schmidt_rank, spin_projector, Direction, ProductProjector, Projector, ProjectorLike,
    SchmidtTerm, Sign, StateVector, Unitary,
};
