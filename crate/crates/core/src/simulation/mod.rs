//! Synthetic MRT generation, ground-truth effects, and Monte Carlo studies.

mod endogenous;
mod excursion;
mod gee;
mod model;
mod rng;
mod study;
pub mod synthetic;

pub use endogenous::{run_bias_demo, simulate_endogenous_pair, BiasDemoConfig, BiasDemoReport, BiasRow, EndogenousModel};
pub use excursion::{
    monte_carlo_excursion_effect, oracle_excursion_effect, Contrast, ExcursionModel, Moderation, StratumEffect,
    TwoPointModel,
};
pub use gee::{gee_exchangeable_fit, GeeFit, GeeOptions};
pub use model::{
    simulate_mrt, CovariateSource, GenerativeModel, MeanCoefficients, AVAIL, COVARIATE, ID, LAG_OUTCOME, OUTCOME,
    TIME, TREATMENT,
};
pub use rng::{child_seed, rng_from_seed, splitmix64};
pub use study::{run_mc_study, run_mc_study_unchecked, McReport, StudyConfig, StudyOptions, StudyVariant, VariantSummary};
