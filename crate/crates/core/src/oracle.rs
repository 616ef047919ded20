//! Brute-force plug-in estimators on small enumerable instances.
//!
//! These compute causal excursion effects directly from cell means, with no
//! linear algebra, and exist to certify the regression-based estimator in
//! tests. With constant randomization probability and a model saturated in
//! time × covariate strata, WCLS and the plug-in estimate coincide exactly.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DecisionRecord, Individual, IndividualId, MrtDataset, Schema};
use crate::design::{ArmSpec, ModelSpec, ProbSpec};
use crate::error::{Error, Result};

pub const MAX_INDIVIDUALS: usize = 16;
pub const MAX_TIMES: u32 = 3;

/// Single-arm dataset with binary covariates and constant probability `p`.
#[derive(Debug, Clone)]
pub struct EnumInstance {
    data: MrtDataset,
    p: f64,
}

/// A time point together with the values of the stratifying covariates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub time: u32,
    pub stratum: Vec<u8>,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}, s={:?})", self.time, self.stratum)
    }
}

impl EnumInstance {
    pub fn new(data: MrtDataset, p: f64) -> Result<Self> {
        if data.n() > MAX_INDIVIDUALS || data.max_time() > MAX_TIMES {
            return Err(Error::domain(format!(
                "enumerable instances are limited to {MAX_INDIVIDUALS} individuals and {MAX_TIMES} times"
            )));
        }
        if data.schema().treatments.len() != 1 {
            return Err(Error::domain("enumerable instances have a single arm"));
        }
        let binary = data
            .individuals()
            .iter()
            .flat_map(|i| &i.records)
            .flat_map(|r| &r.covariates)
            .all(|c| matches!(c, None | Some(0.0) | Some(1.0)));
        if !binary {
            return Err(Error::domain("enumerable instances need binary covariates"));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain("p must lie in (0, 1)"));
        }
        Ok(Self { data, p })
    }

    pub fn data(&self) -> &MrtDataset {
        &self.data
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Random instance with one binary covariate `x`, in which every
    /// (time, x) cell has at least one treated and one untreated available
    /// record.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let n = rng.random_range(6..=MAX_INDIVIDUALS);
            let t_max = rng.random_range(1..=MAX_TIMES);
            let p = [0.3, 0.4, 0.5, 0.6, 0.7][rng.random_range(0..5)];
            let individuals: Vec<Individual> = (0..n)
                .map(|i| Individual {
                    id: IndividualId::new(format!("{}", i + 1)),
                    records: (1..=t_max)
                        .map(|t| {
                            let available = rng.random_bool(0.85);
                            let x = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                            let a = available && rng.random_bool(p);
                            let y = rng.random_range(-3.0..3.0) + x + if a { 0.5 } else { 0.0 };
                            DecisionRecord {
                                time_index: t,
                                available,
                                treatments: vec![a],
                                outcome: Some((y * 64.0_f64).round() / 64.0),
                                covariates: vec![Some(x)],
                                rand_prob: vec![None],
                            }
                        })
                        .collect(),
                })
                .collect();
            let schema = Schema::new("userid", "decision_index", "avail", "y").treatment("a").covariate("x");
            let data = MrtDataset::new(schema, individuals).expect("generated records are valid");
            let inst = Self { data, p };
            let strat = Stratification::by(["x"]);
            let complete = (1..=t_max).all(|t| {
                [0u8, 1].iter().all(|&x| {
                    inst.cell_counts(&strat)
                        .get(&CellKey { time: t, stratum: vec![x] })
                        .is_some_and(|&(treated, control)| treated > 0 && control > 0)
                })
            });
            if complete {
                return inst;
            }
        }
    }

    fn cell_counts(&self, strat: &Stratification) -> BTreeMap<CellKey, (usize, usize)> {
        let mut counts = BTreeMap::new();
        for r in self.available_records() {
            let key = strat.key(&self.data, r);
            let entry = counts.entry(key).or_insert((0, 0));
            if r.treatments[0] {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
        counts
    }

    fn available_records(&self) -> impl Iterator<Item = &DecisionRecord> {
        self.data
            .individuals()
            .iter()
            .flat_map(|i| &i.records)
            .filter(|r| r.available)
    }

    /// Empirical `P(I_t = 1)` for every time index present.
    pub fn availability_rates(&self) -> BTreeMap<u32, f64> {
        let mut totals: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for r in self.data.individuals().iter().flat_map(|i| &i.records) {
            let e = totals.entry(r.time_index).or_default();
            e.1 += 1;
            if r.available {
                e.0 += 1;
            }
        }
        totals
            .into_iter()
            .map(|(t, (a, all))| (t, a as f64 / all as f64))
            .collect()
    }
}

/// Covariates that define strata within each time point.
#[derive(Debug, Clone, Default)]
pub struct Stratification {
    pub covariates: Vec<String>,
}

impl Stratification {
    pub fn by<S: Into<String>>(covariates: impl IntoIterator<Item = S>) -> Self {
        Self { covariates: covariates.into_iter().map(Into::into).collect() }
    }

    /// Time alone.
    pub fn time_only() -> Self {
        Self::default()
    }

    fn key(&self, data: &MrtDataset, r: &DecisionRecord) -> CellKey {
        let stratum = self
            .covariates
            .iter()
            .map(|c| {
                let idx = data.schema().covariate_index(c).expect("stratifier is a covariate");
                r.covariates[idx].map(|v| v as u8).unwrap_or(u8::MAX)
            })
            .collect();
        CellKey { time: r.time_index, stratum }
    }
}

/// Per-cell `mean(Y | A = 1) - mean(Y | A = 0)` among available records.
pub fn plugin_excursion_estimate(
    instance: &EnumInstance,
    strat: &Stratification,
) -> Result<BTreeMap<CellKey, f64>> {
    let mut sums: BTreeMap<CellKey, [(f64, usize); 2]> = BTreeMap::new();
    for r in instance.available_records() {
        let key = strat.key(&instance.data, r);
        let arm = usize::from(r.treatments[0]);
        let slot = &mut sums.entry(key).or_insert([(0.0, 0); 2])[arm];
        slot.0 += r.outcome.expect("available records have outcomes");
        slot.1 += 1;
    }
    sums.into_iter()
        .map(|(key, [(s0, n0), (s1, n1)])| {
            if n0 == 0 || n1 == 0 {
                Err(Error::Unidentifiable { cell: key.to_string() })
            } else {
                Ok((key, s1 / n1 as f64 - s0 / n0 as f64))
            }
        })
        .collect()
}

/// Availability-weighted time average `Σ_t P(I_t=1) β(t) / Σ_t P(I_t=1)`.
pub fn time_averaged_effect(instance: &EnumInstance, per_time: &BTreeMap<u32, f64>) -> f64 {
    let rates = instance.availability_rates();
    let (num, den) = per_time.iter().fold((0.0, 0.0), |(num, den), (t, b)| {
        let w = rates.get(t).copied().unwrap_or(0.0);
        (num + w * b, den + w)
    });
    num / den
}

/// The marginal excursion effect: per-time plug-in contrasts averaged with
/// empirical availability weights.
pub fn plugin_marginal_effect(instance: &EnumInstance) -> Result<f64> {
    let cells = plugin_excursion_estimate(instance, &Stratification::time_only())?;
    let per_time = cells.into_iter().map(|(k, v)| (k.time, v)).collect();
    Ok(time_averaged_effect(instance, &per_time))
}

/// Rewrites `instance` with one indicator column per (time, stratum) cell
/// except the first, and returns a spec whose controls and moderators are
/// exactly those indicators. Effects for cell `k` are `β₀ + β_k`
/// (`β₀` alone for the reference cell), see [`cell_effects_from_beta`].
pub fn saturated_design(
    instance: &EnumInstance,
    strat: &Stratification,
) -> Result<(MrtDataset, ModelSpec, Vec<CellKey>)> {
    let keys: Vec<CellKey> = instance.cell_counts(strat).into_keys().collect();
    let names: Vec<String> = (1..keys.len()).map(|k| format!("cell{k}")).collect();
    let base = instance.data.schema();
    let mut schema = Schema::new(&base.id, &base.time, &base.availability, &base.outcome)
        .treatment(&base.treatments[0]);
    for n in &names {
        schema = schema.covariate(n);
    }
    let individuals = instance
        .data
        .individuals()
        .iter()
        .map(|ind| Individual {
            id: ind.id.clone(),
            records: ind
                .records
                .iter()
                .map(|r| {
                    let key = strat.key(&instance.data, r);
                    let covariates = keys[1..]
                        .iter()
                        .map(|k| Some(if *k == key { 1.0 } else { 0.0 }))
                        .collect();
                    DecisionRecord { covariates, ..r.clone() }
                })
                .collect(),
        })
        .collect();
    let data = MrtDataset::new(schema, individuals)?;
    let mut spec = ModelSpec::single_arm(&base.outcome, &base.availability, &base.treatments[0], instance.p)
        .with_controls(names.clone())
        .with_moderators(names);
    spec.arms = vec![ArmSpec { treatment: base.treatments[0].clone(), prob: ProbSpec::Constant(instance.p) }];
    spec.id = base.id.clone();
    spec.time = base.time.clone();
    Ok((data, spec, keys))
}

pub fn cell_effects_from_beta(beta: &[f64], keys: &[CellKey]) -> BTreeMap<CellKey, f64> {
    keys.iter()
        .enumerate()
        .map(|(k, key)| (key.clone(), if k == 0 { beta[0] } else { beta[0] + beta[k] }))
        .collect()
}
