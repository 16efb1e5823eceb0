//! Batch prediction sets for multiclass classification.
//!
//! Given a calibration sample of labeled non-conformity scores and a batch
//! of m unlabeled test items over K classes, this crate computes exact
//! rank-based conformal p-values and tests every candidate label vector in
//! [K]^m with a combining function: Bonferroni, Simes, adaptive Simes
//! (Storey, quantile or oracle estimates of the number of correct labels)
//! or Fisher. The retained candidates form a batch prediction set whose
//! coverage is at least 1 - alpha, in the iid model with full-calibrated
//! p-values and in the label-shift-robust conditional model with
//! class-calibrated p-values.
//!
//! Beyond exhaustive enumeration the crate provides:
//!
//! - per-item prediction sets and per-class count bounds read off the set;
//! - an O(K * m^2) shortcut for the count bounds (exact for two classes
//!   with complementary probability scores, conservative otherwise) and
//!   the multinomial reconstruction of a conservative set from bounds;
//! - Monte-Carlo calibration of empirical thresholds so that any combining
//!   function, including Fisher, keeps the coverage guarantee;
//! - a Gaussian-mixture benchmark and coverage simulations.

pub mod combiners;
pub mod enumeration;
pub mod error;
pub mod experiment;
pub mod frac;
pub mod io;
pub mod pvalues;
pub mod rng;
pub mod shortcut;
pub mod thresholds;

pub use combiners::{
    adaptive_simes_p, batch_p, bonferroni_p, chi_square_even_survival, fisher_p, quantile_m0,
    simes_p, storey_m0, BatchPValue, CombinerContext, CombinerSpec, M0Estimator, M0Value,
};
pub use enumeration::{
    bonferroni_prefilter, class_count_bounds, conservative_set_filter, count_vector,
    enumerate_set, individual_sets, reconstruct_cardinality, AppliedRule, BatchPredictionSet,
    CountBounds, InclusionRule, IndividualSets, SetMember, DEFAULT_ENUMERATION_BUDGET,
};
pub use error::{Error, Result};
pub use frac::Frac;
pub use pvalues::{
    build_calibration, conformal_pvalues, CalibrationMode, CalibrationSet, PValuePanel,
    RankPValue, ScorePanel,
};
pub use shortcut::{general_shortcut_bounds, simes_shortcut_bounds};
pub use thresholds::{
    build_table, calibrate_conditional, calibrate_iid, composition_count, compositions,
    TableEntry, Threshold, ThresholdTable,
};
pub use experiment::{
    generate_gaussian, run_coverage_experiment, run_size_experiment,
    run_size_experiment_detailed, BatchMethod, CoverageModel, ExperimentReport, GaussianConfig,
    MethodSummary, ReplicationSizes,
};
