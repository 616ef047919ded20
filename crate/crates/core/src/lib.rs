//! Causal excursion effect estimation for micro-randomized trials.
//!
//! The estimator is weighted and centered least squares (WCLS): a weighted
//! regression of the proximal outcome on working-model controls and centered
//! treatment-by-moderator terms, with a between-individual sandwich
//! covariance and a Mancl–DeRouen small-sample correction. The
//! [`simulation`] module provides generative models, Monte Carlo studies, and
//! the exchangeable-GEE comparison; [`oracle`] holds brute-force plug-in
//! estimators used to certify the fit on small instances.

pub mod config;
pub mod data;
pub mod design;
pub mod error;
pub mod estimator;
pub mod oracle;
pub mod simulation;

pub use data::{ingest_csv, log_transform, write_csv, DecisionRecord, Individual, IndividualId, MrtDataset, Schema};
pub use design::{build_design, compute_weight, ArmSpec, Design, DesignRow, ModelSpec, ProbSpec, Ptilde};
pub use error::{Error, Result};
pub use estimator::{fit, fit_wcls, solve_wcls, CoefficientRow, FitReport, WclsFit};
pub use simulation::{run_mc_study, simulate_mrt, GenerativeModel, McReport};
