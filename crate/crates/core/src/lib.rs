//! Gaussian-smoothed p-Wasserstein distances between sampled distributions.
//!
//! Estimation goes through Gaussian-noise augmentation of empirical measures and
//! exact discrete optimal transport. On top of that sit plug-in asymptotic
//! variances, bootstrap inference, discretized dual Sobolev norms for null-limit
//! simulation, minimum distance estimation, and a reproducible Monte Carlo
//! harness.

pub mod error;
pub mod harness;
pub mod estimator;
pub mod inference;
pub mod mde;
pub mod measures;
pub mod ot;
pub mod quadrature;
pub mod seed;
pub mod sobolev;
pub mod stats;

pub use error::{Error, Result};
pub use measures::{
    check_moment_condition, empirical, pool, sample, smooth_augment, DiscreteMeasure, DistributionSpec, Family,
    MomentReport, MomentStatus, NoiseTensor, Sample, SmoothingConfig,
};
pub use ot::{c_transform, duality_gap, solve_exact, wasserstein_1d, DualPotentials, PlanEntry, TransportPlan};
pub use seed::{derive_seed, SeedLabel, SeedPath};
pub use stats::ks_two_sample;
pub use quadrature::smooth_wasserstein_1d;
pub use estimator::{
    barycentric_potential, estimate_swd, plugin_variance, DenseReference, SmoothDistanceEstimate, VarianceEstimate,
    VarianceMode,
};
pub use sobolev::{
    dual_norm, dual_norm_general_p, dual_norm_p2, project_to_grid, simulate_null_limit, verify_comparison, Boundary,
    ComparisonReport, Grid, GridMeasure, GridSigned, GridSource,
};
pub use inference::{
    bootstrap_naive_null, bootstrap_one_sample_alt, bootstrap_one_sample_null, bootstrap_pooled_null,
    bootstrap_two_sample_alt, confidence_interval, equality_test, quantile, BootstrapDistribution, BootstrapScheme,
    Interval, NoiseCoupling, TestResult,
};
pub use mde::{
    fit_mde, mde_limit_experiment, mde_value_experiment, FamilyKind, MdeObjective, MdeOptions, MdeResult, ParametricFamily,
};
pub use harness::{run_experiment, run_replications, ExperimentConfig, ReplicationReport, Summary};
