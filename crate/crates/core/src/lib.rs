//! Misspecified Wald detection for single-snapshot colocated MIMO radar in
//! AR(1) clutter whose innovation law is unknown.
//!
//! The detector fits a Gaussian AR(1) model by maximum likelihood, estimates
//! the sandwich covariance `A^-1 B A^-1` of the fit and tests `alpha = 0`
//! with a Wald statistic that is asymptotically `chi2_2` under the null for
//! any circular innovation law with finite fourth moment.

mod error;
pub mod mle;
pub mod montecarlo;
pub mod numerics;
mod optim;
pub mod signal;
pub mod wald;

pub use error::{Error, Result};
pub use mle::{
    mml_estimate, mml_estimate_with, ConvergenceReport, Estimate, EstimatorOptions, ParamVector,
};
pub use montecarlo::{
    aggregate, run_pd_sweep, run_pfa_sweep, Campaign, GridPoint, Scenario, SweepMode, SweepRow,
    Tally,
};
pub use numerics::{
    chi2_survival_2dof, marcum_q1, threshold_from_pfa, ComplexSample, InnovationLaw, RngStream,
};
pub use signal::{
    build_steering, synthesize_observation, AlphaPhase, ClutterSpec, Hypothesis, Observation,
    SteeringMode, SteeringSpec, TargetSpec,
};
pub use wald::{
    asymptotic_pd, estimate_noncentrality, sandwich, wald_statistic, DetectionOutcome, Threshold,
};
