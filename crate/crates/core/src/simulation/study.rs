//! Monte Carlo studies: bias, SD, coverage and rejection rate of several WCLS
//! working models on data from one generative model.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::excursion::{oracle_excursion_effect, Moderation};
use super::model::{simulate_mrt, GenerativeModel, COVARIATE, LAG_OUTCOME};
use super::rng::child_seed;
use crate::config::KeyValues;
use crate::design::{ModelSpec, Ptilde};
use crate::error::{Error, Result};
use crate::estimator::fit;

/// Replications with a failed fit above this fraction make the study fail.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyVariant {
    pub name: String,
    pub spec: ModelSpec,
}

impl StudyVariant {
    /// Controls `(1, X, Y_lag)`, `(1, X)`, `(1, Y_lag)`, and `(1)`, each with a
    /// constant effect.
    pub fn standard_four(model: &GenerativeModel) -> Vec<Self> {
        let sets: [(&str, &[&str]); 4] = [
            ("WCLS-1", &[COVARIATE, LAG_OUTCOME]),
            ("WCLS-2", &[COVARIATE]),
            ("WCLS-3", &[LAG_OUTCOME]),
            ("WCLS-4", &[]),
        ];
        sets.iter()
            .map(|(name, controls)| Self { name: (*name).into(), spec: model.spec(controls.iter().copied()) })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub reps: usize,
    pub seed: u64,
    /// Confidence level for coverage; `1 - level` is the test size.
    pub level: f64,
    pub workers: usize,
}

/// A study file: generative-model keys plus
///
/// ```text
/// reps = 1000
/// seed = 20200601
/// level = 0.95
/// variants = WCLS-1, WCLS-2
/// variant.WCLS-1.controls = jbsteps30pre_log, jbsteps30_log_lag1
/// variant.WCLS-2.controls = jbsteps30pre_log
/// ```
///
/// Without `variants` the four standard working models are used. Each
/// variant may also set `.moderators` and `.ptilde` (a number).
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub model: GenerativeModel,
    pub variants: Vec<StudyVariant>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
}

impl StudyConfig {
    pub fn from_kv(kv: &KeyValues, base_dir: Option<&Path>) -> Result<Self> {
        let model = GenerativeModel::from_kv(kv, base_dir)?;
        let variants = match kv.get_list("variants") {
            None => StudyVariant::standard_four(&model),
            Some(names) if names.is_empty() => return Err(Error::config("`variants` is empty")),
            Some(names) => names
                .into_iter()
                .map(|name| {
                    let key = |field: &str| format!("variant.{name}.{field}");
                    let controls = kv.get_list(&key("controls")).unwrap_or_default();
                    let moderators = kv.get_list(&key("moderators")).unwrap_or_default();
                    let mut spec = model.spec(controls).with_moderators(moderators);
                    if let Some(pt) = kv.get_parsed::<f64>(&key("ptilde"))? {
                        spec = spec.with_ptilde(Ptilde::Constant(pt));
                    }
                    spec.validate().map_err(|e| Error::config(format!("variant `{name}`: {e}")))?;
                    Ok(StudyVariant { name, spec })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let config = Self {
            model,
            variants,
            reps: kv.get_parsed("reps")?,
            seed: kv.get_parsed("seed")?,
            level: kv.get_parsed("level")?,
        };
        kv.ensure_all_used()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_kv(&KeyValues::from_path(path)?, path.parent())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub reps: usize,
    pub failures: usize,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub rejection_rate: f64,
    pub bias_mcse: f64,
    pub sd_mcse: f64,
    pub coverage_mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub model: String,
    pub seed: u64,
    pub reps: usize,
    pub level: f64,
    pub variants: Vec<VariantSummary>,
}

impl McReport {
    /// Errors when any variant failed in more than 1% of replications.
    pub fn check_failures(&self) -> Result<()> {
        for v in &self.variants {
            if v.failures as f64 > MAX_FAILURE_RATE * self.reps as f64 {
                return Err(Error::Study { failures: v.failures, reps: self.reps });
            }
        }
        Ok(())
    }

    /// `#` header lines with the seed and model, then one row per variant at
    /// full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# seed={} reps={} level={}", self.seed, self.reps, self.level);
        let _ = writeln!(out, "# model: {}", self.model);
        out.push_str(
            "variant,reps,failures,truth,bias,sd,coverage,mean_se,rejection_rate,bias_mcse,sd_mcse,coverage_mcse\n",
        );
        for v in &self.variants {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                v.variant,
                v.reps,
                v.failures,
                v.truth,
                v.bias,
                v.sd,
                v.coverage,
                v.mean_se,
                v.rejection_rate,
                v.bias_mcse,
                v.sd_mcse,
                v.coverage_mcse
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == name)
    }
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    estimate: f64,
    se: f64,
    covered: bool,
    rejected: bool,
}

/// Runs the study, failing if more than 1% of any variant's fits failed.
pub fn run_mc_study(model: &GenerativeModel, variants: &[StudyVariant], options: &StudyOptions) -> Result<McReport> {
    let report = run_mc_study_unchecked(model, variants, options)?;
    report.check_failures()?;
    Ok(report)
}

/// Runs the study and reports failures without judging them.
///
/// Replication `r` simulates from `child_seed(seed, r)`; results are gathered
/// in replication order and summed sequentially, so the report does not
/// depend on `workers`.
pub fn run_mc_study_unchecked(
    model: &GenerativeModel,
    variants: &[StudyVariant],
    options: &StudyOptions,
) -> Result<McReport> {
    model.validate()?;
    if options.reps == 0 {
        return Err(Error::config("reps must be at least 1"));
    }
    if variants.is_empty() {
        return Err(Error::config("study needs at least one variant"));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::domain(format!("confidence level must lie in (0, 1), got {}", options.level)));
    }
    for v in variants {
        if v.spec.q_beta() != 1 {
            return Err(Error::config(format!(
                "variant `{}` must have a single treatment-effect coefficient",
                v.name
            )));
        }
    }
    let truth = oracle_excursion_effect(model, Moderation::Marginal, 0, 0)?[0].effect;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let draws: Vec<Result<Vec<Option<Draw>>>> = pool.install(|| {
        (0..options.reps)
            .into_par_iter()
            .map(|r| replicate(model, variants, options, truth, r as u64))
            .collect()
    });
    let mut per_variant: Vec<Vec<Option<Draw>>> = vec![Vec::with_capacity(options.reps); variants.len()];
    for rep in draws {
        for (k, d) in rep?.into_iter().enumerate() {
            per_variant[k].push(d);
        }
    }
    let summaries = variants
        .iter()
        .zip(per_variant)
        .map(|(v, d)| summarize(&v.name, truth, &d))
        .collect();
    Ok(McReport {
        model: model.describe(),
        seed: options.seed,
        reps: options.reps,
        level: options.level,
        variants: summaries,
    })
}

fn replicate(
    model: &GenerativeModel,
    variants: &[StudyVariant],
    options: &StudyOptions,
    truth: f64,
    r: u64,
) -> Result<Vec<Option<Draw>>> {
    let data = simulate_mrt(model, child_seed(options.seed, r))?;
    Ok(variants
        .iter()
        .map(|v| {
            let fitted = fit(&data, &v.spec).and_then(|f| f.infer_beta(0, options.level));
            match fitted {
                Ok(row) => Some(Draw {
                    estimate: row.estimate,
                    se: row.se,
                    covered: row.lcl <= truth && truth <= row.ucl,
                    rejected: row.p_value < 1.0 - options.level,
                }),
                Err(e) => {
                    log::warn!("replication {r}, variant `{}`: {e}", v.name);
                    None
                }
            }
        })
        .collect())
}

fn summarize(name: &str, truth: f64, draws: &[Option<Draw>]) -> VariantSummary {
    let ok: Vec<Draw> = draws.iter().flatten().copied().collect();
    let m = ok.len() as f64;
    let mean = |f: &dyn Fn(&Draw) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(f).sum::<f64>() / m };
    let mean_est = mean(&|d| d.estimate);
    let var = if ok.len() > 1 {
        ok.iter().map(|d| (d.estimate - mean_est).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    let coverage = mean(&|d| f64::from(u8::from(d.covered)));
    VariantSummary {
        variant: name.to_string(),
        reps: draws.len(),
        failures: draws.len() - ok.len(),
        truth,
        bias: mean_est - truth,
        sd,
        coverage,
        mean_se: mean(&|d| d.se),
        rejection_rate: mean(&|d| f64::from(u8::from(d.rejected))),
        bias_mcse: sd / m.sqrt(),
        sd_mcse: if ok.len() > 1 { sd / (2.0 * (m - 1.0)).sqrt() } else { 0.0 },
        coverage_mcse: (coverage * (1.0 - coverage) / m).sqrt(),
    }
}
