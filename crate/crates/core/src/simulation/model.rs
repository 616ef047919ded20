//! Linear generative model for single-arm MRTs with a continuous covariate
//! and a lagged outcome.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::rng::rng_from_seed;
use crate::config::KeyValues;
use crate::data::{DecisionRecord, Individual, IndividualId, MrtDataset, Schema};
use crate::design::ModelSpec;
use crate::error::{Error, Result};

pub const ID: &str = "userid";
pub const TIME: &str = "decision_index";
pub const AVAIL: &str = "avail";
pub const TREATMENT: &str = "send";
pub const OUTCOME: &str = "jbsteps30_log";
pub const COVARIATE: &str = "jbsteps30pre_log";
pub const LAG_OUTCOME: &str = "jbsteps30_log_lag1";

/// Distribution of the per-decision-point covariate `X_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateSource {
    /// `log(0.5)` (the log transform of a zero count) with probability
    /// `zero_prob`, otherwise `N(mean, sd²)`.
    ZeroInflated { zero_prob: f64, mean: f64, sd: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// Resampled uniformly with replacement.
    Empirical(Arc<[f64]>),
}

impl CovariateSource {
    /// Reads one number per line; blank lines and `#` comments are skipped.
    pub fn empirical_from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| {
                Error::Format(format!("{}: line {}: `{line}` is not a number", path.display(), i + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!("{}: line {}: non-finite value", path.display(), i + 1)));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::Format(format!("{}: no covariate values", path.display())));
        }
        Ok(Self::Empirical(values.into()))
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::ZeroInflated { zero_prob, sd, mean } => {
                if !(0.0..=1.0).contains(zero_prob) {
                    return Err(Error::config(format!("covariate.zero_prob must lie in [0, 1], got {zero_prob}")));
                }
                check_sd(*sd, "covariate.sd")?;
                check_finite(*mean, "covariate.mean")
            }
            Self::Gaussian { sd, mean } => {
                check_sd(*sd, "covariate.sd")?;
                check_finite(*mean, "covariate.mean")
            }
            Self::Empirical(v) if v.is_empty() => Err(Error::config("empirical covariate pool is empty")),
            Self::Empirical(_) => Ok(()),
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::ZeroInflated { zero_prob, mean, sd } => {
                if rng.random::<f64>() < *zero_prob {
                    0.5f64.ln()
                } else {
                    normal(*mean, *sd).sample(rng)
                }
            }
            Self::Gaussian { mean, sd } => normal(*mean, *sd).sample(rng),
            Self::Empirical(pool) => pool[rng.random_range(0..pool.len())],
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::ZeroInflated { zero_prob, mean, sd } => {
                format!("zero-inflated(zero_prob={zero_prob}, mean={mean}, sd={sd})")
            }
            Self::Gaussian { mean, sd } => format!("gaussian(mean={mean}, sd={sd})"),
            Self::Empirical(pool) => format!("empirical({} values)", pool.len()),
        }
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("standard deviation validated at construction")
}

fn check_sd(sd: f64, what: &str) -> Result<()> {
    if sd.is_finite() && sd >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{what} must be a finite non-negative number, got {sd}")))
    }
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{what} must be finite")))
    }
}

/// `E[Y_{t+1} | H_t, A_t] = intercept + coef_x X_t + coef_lag Y_t + effect (A_t - p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCoefficients {
    pub intercept: f64,
    pub coef_x: f64,
    pub coef_lag: f64,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub n: usize,
    pub t: u32,
    pub p: f64,
    pub mean: MeanCoefficients,
    pub noise_sd: f64,
    pub covariate: CovariateSource,
    /// Probability that a decision point is available. Unavailable points get
    /// `A_t = 0`.
    pub availability: f64,
    /// Discarded decision points simulated before `t = 1`, starting from
    /// `Y = 0`. Gives the first recorded lag a draw from near-stationarity.
    pub burn_in: u32,
}

impl GenerativeModel {
    /// Calibration used for the four-variant study: fitted HeartSteps
    /// coefficients, with a zero-inflated Gaussian standing in for the
    /// pre-decision step count.
    pub fn heartsteps_calibrated() -> Self {
        Self {
            n: 37,
            t: 210,
            p: 0.6,
            mean: MeanCoefficients { intercept: 1.6085, coef_x: 0.4037, coef_lag: 0.0655, effect: 0.1229 },
            noise_sd: 2.716,
            covariate: CovariateSource::ZeroInflated { zero_prob: 0.5, mean: 7.0, sd: 2.2 },
            availability: 1.0,
            burn_in: 10,
        }
    }

    pub fn with_effect(mut self, effect: f64) -> Self {
        self.mean.effect = effect;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.t < 1 {
            return Err(Error::config("T must be at least 1"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::config(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(self.availability > 0.0 && self.availability <= 1.0) {
            return Err(Error::config(format!("availability must lie in (0, 1], got {}", self.availability)));
        }
        let m = self.mean;
        for (v, what) in [(m.intercept, "intercept"), (m.coef_x, "coef_x"), (m.coef_lag, "coef_lag"), (m.effect, "effect")] {
            check_finite(v, what)?;
        }
        check_sd(self.noise_sd, "noise_sd")?;
        self.covariate.validate()
    }

    /// Reads the generative-model keys of a study or model config:
    ///
    /// ```text
    /// n = 37
    /// T = 210
    /// p = 0.6
    /// intercept = 1.6085
    /// coef_x = 0.4037
    /// coef_lag = 0.0655
    /// effect = 0.1229
    /// noise_sd = 2.716
    /// covariate = zero-inflated     # or gaussian, empirical
    /// covariate.zero_prob = 0.5
    /// covariate.mean = 7
    /// covariate.sd = 2.2
    /// ```
    ///
    /// `covariate.file` gives the pool for `empirical`, resolved against
    /// `base_dir` when relative. `availability` (default 1) and `burn_in`
    /// (default 10) are optional.
    pub fn from_kv(kv: &KeyValues, base_dir: Option<&Path>) -> Result<Self> {
        let covariate = match kv.require("covariate")? {
            "zero-inflated" => CovariateSource::ZeroInflated {
                zero_prob: kv.require_parsed("covariate.zero_prob")?,
                mean: kv.require_parsed("covariate.mean")?,
                sd: kv.require_parsed("covariate.sd")?,
            },
            "gaussian" => CovariateSource::Gaussian {
                mean: kv.require_parsed("covariate.mean")?,
                sd: kv.require_parsed("covariate.sd")?,
            },
            "empirical" => {
                let file = Path::new(kv.require("covariate.file")?);
                let path = match base_dir {
                    Some(dir) if file.is_relative() => dir.join(file),
                    _ => file.to_path_buf(),
                };
                CovariateSource::empirical_from_path(path)?
            }
            other => {
                return Err(Error::config(format!(
                    "unknown covariate source `{other}` (expected zero-inflated, gaussian, or empirical)"
                )))
            }
        };
        let model = Self {
            n: kv.require_parsed("n")?,
            t: kv.require_parsed("T")?,
            p: kv.require_parsed("p")?,
            mean: MeanCoefficients {
                intercept: kv.require_parsed("intercept")?,
                coef_x: kv.require_parsed("coef_x")?,
                coef_lag: kv.require_parsed("coef_lag")?,
                effect: kv.require_parsed("effect")?,
            },
            noise_sd: kv.require_parsed("noise_sd")?,
            covariate,
            availability: kv.parsed_or("availability", 1.0)?,
            burn_in: kv.parsed_or("burn_in", 10)?,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn schema() -> Schema {
        Schema::new(ID, TIME, AVAIL, OUTCOME).treatment(TREATMENT).covariate(COVARIATE).covariate(LAG_OUTCOME)
    }

    /// Spec with the given controls over the simulated columns and `p̃ = p`.
    pub fn spec<S: Into<String>>(&self, controls: impl IntoIterator<Item = S>) -> ModelSpec {
        ModelSpec::single_arm(OUTCOME, AVAIL, TREATMENT, self.p).with_controls(controls)
    }

    pub fn describe(&self) -> String {
        let m = self.mean;
        format!(
            "n={} T={} p={} mean={}+{}*x+{}*y_lag+{}*(a-{}) noise_sd={} covariate={} availability={} burn_in={}",
            self.n,
            self.t,
            self.p,
            m.intercept,
            m.coef_x,
            m.coef_lag,
            m.effect,
            self.p,
            self.noise_sd,
            self.covariate.describe(),
            self.availability,
            self.burn_in
        )
    }

    fn step(&self, rng: &mut ChaCha8Rng, lag: f64) -> Step {
        let x = self.covariate.draw(rng);
        let available = self.availability >= 1.0 || rng.random::<f64>() < self.availability;
        let treated = available && rng.random::<f64>() < self.p;
        let m = self.mean;
        let a = if treated { 1.0 } else { 0.0 };
        let mean = m.intercept + m.coef_x * x + m.coef_lag * lag + m.effect * (a - self.p);
        let y = mean + self.noise_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        Step { x, available, treated, y }
    }

    /// One trajectory of `T` recorded decision points, after burn-in.
    pub(crate) fn trajectory(&self, rng: &mut ChaCha8Rng) -> Vec<(Step, f64)> {
        let mut lag = 0.0;
        for _ in 0..self.burn_in {
            lag = self.step(rng, lag).y;
        }
        (0..self.t)
            .map(|_| {
                let s = self.step(rng, lag);
                let prev = lag;
                lag = s.y;
                (s, prev)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Step {
    pub x: f64,
    pub available: bool,
    pub treated: bool,
    pub y: f64,
}

/// Draws one dataset. Individuals are generated in order from a single
/// stream, so the output depends only on `model` and `seed`.
pub fn simulate_mrt(model: &GenerativeModel, seed: u64) -> Result<MrtDataset> {
    model.validate()?;
    let mut rng = rng_from_seed(seed);
    let individuals = (0..model.n)
        .map(|i| {
            let records = model
                .trajectory(&mut rng)
                .into_iter()
                .enumerate()
                .map(|(t, (s, lag))| DecisionRecord {
                    time_index: t as u32 + 1,
                    available: s.available,
                    treatments: vec![s.treated],
                    outcome: Some(s.y),
                    covariates: vec![Some(s.x), Some(lag)],
                    rand_prob: vec![None],
                })
                .collect();
            Individual { id: IndividualId::new((i + 1).to_string()), records }
        })
        .collect();
    MrtDataset::new(GenerativeModel::schema(), individuals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let m = GenerativeModel { n: 3, t: 5, ..GenerativeModel::heartsteps_calibrated() };
        assert_eq!(simulate_mrt(&m, 11).unwrap(), simulate_mrt(&m, 11).unwrap());
        assert_ne!(simulate_mrt(&m, 11).unwrap(), simulate_mrt(&m, 12).unwrap());
    }

    #[test]
    fn lag_column_is_previous_outcome() {
        let m = GenerativeModel { n: 2, t: 20, ..GenerativeModel::heartsteps_calibrated() };
        let d = simulate_mrt(&m, 3).unwrap();
        for ind in d.individuals() {
            for w in ind.records.windows(2) {
                assert_eq!(w[1].covariates[1], w[0].outcome);
            }
        }
    }

    #[test]
    fn covariate_moments() {
        let src = CovariateSource::ZeroInflated { zero_prob: 0.5, mean: 7.0, sd: 2.2 };
        let mut rng = rng_from_seed(1);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| src.draw(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let zeros = xs.iter().filter(|&&x| x == 0.5f64.ln()).count() as f64 / n as f64;
        let expected = 0.5 * 0.5f64.ln() + 0.5 * 7.0;
        assert!((mean - expected).abs() < 0.02, "{mean}");
        assert!((zeros - 0.5).abs() < 0.005);
    }

    #[test]
    fn treatment_rate_and_availability() {
        let m = GenerativeModel { n: 50, t: 200, availability: 0.7, ..GenerativeModel::heartsteps_calibrated() };
        let d = simulate_mrt(&m, 5).unwrap();
        let recs: Vec<_> = d.individuals().iter().flat_map(|i| &i.records).collect();
        let avail = recs.iter().filter(|r| r.available).count() as f64;
        let treated = recs.iter().filter(|r| r.treatments[0]).count() as f64;
        assert!((avail / recs.len() as f64 - 0.7).abs() < 0.01);
        assert!((treated / avail - 0.6).abs() < 0.01);
        assert!(recs.iter().all(|r| r.available || !r.treatments[0]));
    }

    #[test]
    fn config_round_trip() {
        let kv = KeyValues::parse(
            "n = 37\nT = 210\np = 0.6\nintercept = 1.6085\ncoef_x = 0.4037\ncoef_lag = 0.0655\n\
             effect = 0.1229\nnoise_sd = 2.716\ncovariate = zero-inflated\ncovariate.zero_prob = 0.5\n\
             covariate.mean = 7\ncovariate.sd = 2.2\n",
        )
        .unwrap();
        let m = GenerativeModel::from_kv(&kv, None).unwrap();
        kv.ensure_all_used().unwrap();
        assert_eq!(m, GenerativeModel::heartsteps_calibrated());
    }

    #[test]
    fn bad_config_values() {
        let base = "n = 37\nT = 210\nintercept = 0\ncoef_x = 0\ncoef_lag = 0\neffect = 0\nnoise_sd = 1\ncovariate = gaussian\ncovariate.mean = 0\ncovariate.sd = 1\n";
        let kv = KeyValues::parse(&format!("{base}p = 1.2\n")).unwrap();
        assert!(matches!(GenerativeModel::from_kv(&kv, None), Err(Error::Config(_))));
        let kv = KeyValues::parse(base).unwrap();
        assert!(matches!(GenerativeModel::from_kv(&kv, None), Err(Error::Config(_))));
    }
}
