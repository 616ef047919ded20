//! Two-decision-point trials where the second covariate is the first
//! outcome. Exchangeable GEE is biased here; WCLS (independence) is not.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::excursion::{Contrast, ExcursionModel};
use super::gee::{gee_exchangeable_fit, GeeOptions};
use super::rng::{child_seed, rng_from_seed};
use crate::config::KeyValues;
use crate::data::{DecisionRecord, Individual, IndividualId, MrtDataset, Schema};
use crate::design::{build_design, ModelSpec};
use crate::error::{Error, Result};
use crate::estimator::solve_wcls;

///
/// ```text
/// X1 ~ N(0, 1), A_t ~ Bern(p), e1 ~ N(0, noise_sd²)
/// Y2 = α0 + α1 X1 + A1 (β0 + β1 X1) + e1
/// X2 = Y2                       (or X2 ~ N(0, 1) when not endogenous)
/// Y3 = α0 + α1 X2 + A2 (β0 + β1 X2) + e2
/// e2 = κ (e1 - E[e1 | Y2]) + √(1 - κ²) noise_sd η,   η ~ N(0, 1)
/// ```
///
/// `κ` is `carryover`. Subtracting `E[e1 | Y2]` (exact: `Y2` is a two-part
/// Gaussian mixture over `A1`) keeps `E[Y3 | X2, A2]` linear, so the
/// marginal mean model holds at both decision points and the residuals are
/// still correlated across time. When not endogenous, `e2 = κ e1 + ...` and
/// every working correlation is consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndogenousModel {
    pub n: usize,
    pub p: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub noise_sd: f64,
    /// Share of the first error carried into the second, in `[0, 1)`.
    pub carryover: f64,
    pub endogenous: bool,
}

impl Default for EndogenousModel {
    fn default() -> Self {
        Self {
            n: 500,
            p: 0.6,
            alpha0: 0.0,
            alpha1: 1.0,
            beta0: 1.0,
            beta1: 0.5,
            noise_sd: 1.0,
            carryover: 0.8,
            endogenous: true,
        }
    }
}

pub const OUTCOME: &str = "y";
pub const COVARIATE: &str = "x";

impl EndogenousModel {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::config(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(Error::config("noise_sd must be finite and positive"));
        }
        if !(0.0..1.0).contains(&self.carryover) {
            return Err(Error::config(format!("carryover must lie in [0, 1), got {}", self.carryover)));
        }
        for v in [self.alpha0, self.alpha1, self.beta0, self.beta1] {
            if !v.is_finite() {
                return Err(Error::config("model coefficients must be finite"));
            }
        }
        Ok(())
    }

    pub fn schema() -> Schema {
        Schema::new(super::model::ID, super::model::TIME, super::model::AVAIL, OUTCOME)
            .treatment(super::model::TREATMENT)
            .covariate(COVARIATE)
    }

    /// Controls `(1, X)` and effect `β0 + β1 X`.
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::single_arm(OUTCOME, super::model::AVAIL, super::model::TREATMENT, self.p)
            .with_controls([COVARIATE])
            .with_moderators([COVARIATE])
    }

    /// One individual: `[(x, a, y); 2]`.
    fn trajectory(&self, rng: &mut ChaCha8Rng) -> [(f64, bool, f64); 2] {
        let gauss = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
        let x1 = gauss(rng);
        let a1 = rng.random::<f64>() < self.p;
        let e1 = self.noise_sd * gauss(rng);
        let y2 = self.outcome(x1, a1) + e1;
        let fresh = (1.0 - self.carryover * self.carryover).sqrt() * self.noise_sd * gauss(rng);
        let (x2, e2) = if self.endogenous {
            (y2, self.carryover * (e1 - self.first_error_given_outcome(y2)) + fresh)
        } else {
            (gauss(rng), self.carryover * e1 + fresh)
        };
        let a2 = rng.random::<f64>() < self.p;
        let y3 = self.outcome(x2, a2) + e2;
        [(x1, a1, y2), (x2, a2, y3)]
    }

    /// `E[e1 | Y2 = y]`. Given `A1 = a`, `Y2 ~ N(α0 + a β0, (α1 + a β1)² + σ²)`
    /// and `E[e1 | Y2, a] = σ² (Y2 - α0 - a β0) / ((α1 + a β1)² + σ²)`.
    pub fn first_error_given_outcome(&self, y: f64) -> f64 {
        let s2 = self.noise_sd * self.noise_sd;
        let parts = [(0.0, 1.0 - self.p), (1.0, self.p)].map(|(a, prior)| {
            let mean = self.alpha0 + a * self.beta0;
            let var = (self.alpha1 + a * self.beta1).powi(2) + s2;
            let log_w = prior.ln() - 0.5 * var.ln() - 0.5 * (y - mean).powi(2) / var;
            (log_w, s2 * (y - mean) / var)
        });
        let top = parts[0].0.max(parts[1].0);
        let (num, den) = parts.iter().fold((0.0, 0.0), |(num, den), (lw, m)| {
            let w = (lw - top).exp();
            (num + w * m, den + w)
        });
        num / den
    }

    fn outcome(&self, x: f64, a: bool) -> f64 {
        let effect = if a { self.beta0 + self.beta1 * x } else { 0.0 };
        self.alpha0 + self.alpha1 * x + effect
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let model = Self {
            n: kv.parsed_or("n", d.n)?,
            p: kv.parsed_or("p", d.p)?,
            alpha0: kv.parsed_or("alpha0", d.alpha0)?,
            alpha1: kv.parsed_or("alpha1", d.alpha1)?,
            beta0: kv.parsed_or("beta0", d.beta0)?,
            beta1: kv.parsed_or("beta1", d.beta1)?,
            noise_sd: kv.parsed_or("noise_sd", d.noise_sd)?,
            carryover: kv.parsed_or("carryover", d.carryover)?,
            endogenous: kv.get_bool("endogenous")?.unwrap_or(d.endogenous),
        };
        model.validate()?;
        Ok(model)
    }
}

impl ExcursionModel for EndogenousModel {
    fn sample_contrasts(&self, rng: &mut ChaCha8Rng) -> Vec<Contrast> {
        self.trajectory(rng)
            .iter()
            .enumerate()
            .map(|(t, &(x, _, _))| Contrast {
                time: t as u32 + 1,
                available: true,
                stratum: 0,
                value: self.beta0 + self.beta1 * x,
            })
            .collect()
    }
}

/// Draws one dataset of `n` individuals with two decision points each.
pub fn simulate_endogenous_pair(model: &EndogenousModel, seed: u64) -> Result<MrtDataset> {
    model.validate()?;
    let mut rng = rng_from_seed(seed);
    let individuals = (0..model.n)
        .map(|i| Individual {
            id: IndividualId::new((i + 1).to_string()),
            records: model
                .trajectory(&mut rng)
                .iter()
                .enumerate()
                .map(|(t, &(x, a, y))| DecisionRecord {
                    time_index: t as u32 + 1,
                    available: true,
                    treatments: vec![a],
                    outcome: Some(y),
                    covariates: vec![Some(x)],
                    rand_prob: vec![None],
                })
                .collect(),
        })
        .collect();
    MrtDataset::new(EndogenousModel::schema(), individuals)
}

/// A bias-demo config: the model keys of [`EndogenousModel::from_kv`] (all
/// optional) plus `reps` and `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasDemoConfig {
    pub model: EndogenousModel,
    pub reps: usize,
    pub seed: Option<u64>,
}

impl BiasDemoConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let model = EndogenousModel::from_kv(kv)?;
        let config = Self { model, reps: kv.parsed_or("reps", 1000)?, seed: kv.get_parsed("seed")? };
        kv.ensure_all_used()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::from_path(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub estimator: String,
    pub coefficient: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    /// `sd / √reps`.
    pub mc_se: f64,
    /// `|bias| > 3 mc_se`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasDemoReport {
    pub model: EndogenousModel,
    pub seed: u64,
    pub reps: usize,
    pub failures: usize,
    pub mean_rho: f64,
    pub rows: Vec<BiasRow>,
}

impl BiasDemoReport {
    pub fn row(&self, estimator: &str, coefficient: &str) -> Option<&BiasRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.coefficient == coefficient)
    }

    pub fn to_csv(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let _ = writeln!(out, "# seed={} reps={} failures={}", self.seed, self.reps, self.failures);
        let _ = writeln!(
            out,
            "# model: n={} p={} alpha=({}, {}) beta=({}, {}) noise_sd={} carryover={} endogenous={} mean_rho={}",
            m.n, m.p, m.alpha0, m.alpha1, m.beta0, m.beta1, m.noise_sd, m.carryover, m.endogenous, self.mean_rho
        );
        out.push_str("estimator,coefficient,truth,mean,bias,sd,mc_se,flagged\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.estimator, r.coefficient, r.truth, r.mean, r.bias, r.sd, r.mc_se, r.flagged
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Fits independence (WCLS) and exchangeable GEE to `reps` datasets and
/// compares both `β̂` with the true effect coefficients. The GEE fit uses the
/// raw treatment indicator, `Y ~ X + A + A X`, as a standard GEE analysis
/// would; centering would shield β from the cross-time terms.
pub fn run_bias_demo(model: &EndogenousModel, reps: usize, seed: u64, workers: usize) -> Result<BiasDemoReport> {
    model.validate()?;
    if reps < 2 {
        return Err(Error::config("bias demo needs at least 2 replications"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let spec = model.spec();
    let raw = spec.clone().uncentered();
    let results: Vec<Result<Option<([f64; 2], [f64; 2], f64)>>> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let data = simulate_endogenous_pair(model, child_seed(seed, r as u64))?;
                let indep = solve_wcls(&build_design(&data, &spec)?)?;
                match gee_exchangeable_fit(&build_design(&data, &raw)?, &GeeOptions::default()) {
                    Ok(g) => {
                        let b = &g.coefficients.beta;
                        Ok(Some(([indep.beta[0], indep.beta[1]], [b[0], b[1]], g.rho)))
                    }
                    Err(e @ Error::Convergence { .. }) => {
                        log::warn!("replication {r}: {e}");
                        Ok(None)
                    }
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let mut ok = Vec::with_capacity(reps);
    for r in results {
        if let Some(v) = r? {
            ok.push(v);
        }
    }
    let failures = reps - ok.len();
    if failures as f64 > super::study::MAX_FAILURE_RATE * reps as f64 {
        return Err(Error::Study { failures, reps });
    }
    let truth = [model.beta0, model.beta1];
    let mut rows = Vec::new();
    for (estimator, pick) in [("independence", 0usize), ("exchangeable", 1)] {
        for (k, coefficient) in ["β0", "β1"].iter().enumerate() {
            let values: Vec<f64> = ok.iter().map(|v| if pick == 0 { v.0[k] } else { v.1[k] }).collect();
            let m = values.len() as f64;
            let mean = values.iter().sum::<f64>() / m;
            let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
            let mc_se = sd / m.sqrt();
            let bias = mean - truth[k];
            rows.push(BiasRow {
                estimator: estimator.into(),
                coefficient: (*coefficient).into(),
                truth: truth[k],
                mean,
                bias,
                sd,
                mc_se,
                flagged: bias.abs() > 3.0 * mc_se,
            });
        }
    }
    let mean_rho = ok.iter().map(|v| v.2).sum::<f64>() / ok.len() as f64;
    Ok(BiasDemoReport { model: *model, seed, reps, failures, mean_rho, rows })
}
