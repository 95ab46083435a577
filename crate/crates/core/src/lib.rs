//! Region-specific and global treatment effects on the restricted mean
//! survival time (RMST) scale for multi-regional clinical trials.
//!
//! Patients enrolled in different regions of one randomized trial rarely
//! share the same covariate mix, so raw region-by-region RMST contrasts
//! confound genuine regional effect modification with recruitment
//! imbalance. This crate standardizes every region to one target covariate
//! distribution before estimating the per-region treatment effect, using
//! either entropy-balancing calibration weights (exact moment matching,
//! no sampling model) or inverse-probability-of-sampling weights, and then
//! carries the weights through four RMST-difference estimators:
//!
//! - a weighted Kaplan-Meier plug-in ([`survival`]),
//! - a weighted G-formula built on IPCW RMST regression ([`regression`]),
//! - a weighted Hajek (self-normalized IPCW) estimator ([`estimators`]),
//! - a doubly robust augmented combination of the two ([`estimators`]).
//!
//! [`inference`] adds per-estimator variance-based confidence intervals, a
//! Wald chi-square test of cross-region consistency, and an
//! inverse-variance pooled global effect. [`diagnostics`] reports weighted
//! absolute standardized mean differences against the target, and
//! [`simulate`] contains a reproducible Monte Carlo harness with a
//! quadrature oracle for the true estimands.

pub mod calibrate;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod ipsw;
pub mod numerics;
pub mod regression;
pub mod simulate;
pub mod survival;
pub mod weights;

pub use calibrate::{calibrate_region, effective_sample_size, CalibrationSolution, SolverOptions};
pub use data::{
    evaluate_g, load_dataset, load_panels_str, target_from_pooled, write_dataset,
    CalibrationTarget, Dataset, GFunction, GSpec, LoadedPanels, RegionPanel, SchemaMapping,
    SubjectRecord,
};
pub use diagnostics::{
    balance_report, pooled_target, smd_binary_from_prevalences, smd_continuous_from_moments,
    weighted_smd_binary, weighted_smd_continuous, BalanceRow, TargetSample,
};
pub use error::{Error, Result};
pub use estimators::{augmented_estimate, hajek_estimate, AugmentedNormalization};
pub use inference::{
    chi_square_upper_tail, confidence_interval, consistency_test, global_estimate,
    ConsistencyTestResult,
};
pub use ipsw::{
    fit_region_membership, inverse_propensity_factors, ipsw_from_known_score, ipsw_mixture_target,
    MembershipFit, MembershipModel, SamplingScoreModel,
};
pub use regression::{fit_ipcw_rmst_regression, g_formula_estimate, Link, RmstRegressionFit};
pub use simulate::{
    full_menu, generate_region, run_monte_carlo, true_estimands, Arm, HazardModel, McOutput,
    McSummaryRow, SamplingKind, ScenarioConfig, SimEstimator, SimWeighting, TrueEstimands,
};
pub use survival::{
    censoring_survival, censoring_survival_for_arm, ipc_weights, ipc_weights_per_arm,
    km_curve_variance, km_difference_estimate, km_rmst_variance, weighted_km_curve,
    weighted_km_rmst, weighted_risk_set, ArmOrContrast, EstimatorTag, RmstEstimate, StepCurve,
    WeightedRiskSet,
};
pub use weights::{WeightKind, WeightSet, Weighting};
