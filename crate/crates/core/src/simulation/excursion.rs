//! Ground-truth causal excursion effects of generative models.
//!
//! The effect at decision point `t` in stratum `s` is
//! `E[Y_{t+1}(H̄_{t-1}, 1) - Y_{t+1}(H̄_{t-1}, 0) | I_t = 1, S_t = s]`, with the
//! history generated under the randomization policy. Models expose this as a
//! per-trajectory contrast of conditional means; Monte Carlo averages it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::GenerativeModel;
use super::rng::rng_from_seed;
use crate::error::{Error, Result};

/// The conditional-mean contrast at one decision point of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrast {
    pub time: u32,
    pub available: bool,
    /// Discrete moderator value; 0 when the model has none.
    pub stratum: u8,
    /// `E[Y_{t+1} | H_t, A_t = 1] - E[Y_{t+1} | H_t, A_t = 0]`.
    pub value: f64,
}

pub trait ExcursionModel {
    /// Simulates one trajectory under the randomization policy.
    fn sample_contrasts(&self, rng: &mut ChaCha8Rng) -> Vec<Contrast>;

    /// Closed-form marginal effect, when one exists.
    fn analytic_marginal(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moderation {
    /// `Σ_t P(I_t=1) β(t) / Σ_t P(I_t=1)`: the effect pooled over time.
    Marginal,
    /// One effect per `(t, stratum)` cell among available points.
    ByTimeAndStratum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StratumEffect {
    pub time: Option<u32>,
    pub stratum: Option<u8>,
    pub effect: f64,
    /// Zero for analytic values.
    pub mc_se: f64,
}

/// Analytic value when the model has one and `moderation` is marginal,
/// otherwise Monte Carlo over `draws` trajectories.
pub fn oracle_excursion_effect<M: ExcursionModel + ?Sized>(
    model: &M,
    moderation: Moderation,
    draws: usize,
    seed: u64,
) -> Result<Vec<StratumEffect>> {
    if moderation == Moderation::Marginal {
        if let Some(effect) = model.analytic_marginal() {
            return Ok(vec![StratumEffect { time: None, stratum: None, effect, mc_se: 0.0 }]);
        }
    }
    monte_carlo_excursion_effect(model, moderation, draws, seed)
}

/// Ratio-of-means estimate in every cell with a delta-method standard error.
pub fn monte_carlo_excursion_effect<M: ExcursionModel + ?Sized>(
    model: &M,
    moderation: Moderation,
    draws: usize,
    seed: u64,
) -> Result<Vec<StratumEffect>> {
    if draws < 2 {
        return Err(Error::domain("Monte Carlo needs at least 2 draws"));
    }
    let mut rng = rng_from_seed(seed);
    // Per trajectory and cell: numerator Σ I c and denominator Σ I.
    let mut cells: BTreeMap<(Option<u32>, Option<u8>), Vec<(f64, f64)>> = BTreeMap::new();
    for d in 0..draws {
        let mut this: BTreeMap<(Option<u32>, Option<u8>), (f64, f64)> = BTreeMap::new();
        for c in model.sample_contrasts(&mut rng) {
            if !c.available {
                continue;
            }
            let key = match moderation {
                Moderation::Marginal => (None, None),
                Moderation::ByTimeAndStratum => (Some(c.time), Some(c.stratum)),
            };
            let e = this.entry(key).or_insert((0.0, 0.0));
            e.0 += c.value;
            e.1 += 1.0;
        }
        for (key, v) in this {
            let column = cells.entry(key).or_default();
            column.resize(d, (0.0, 0.0));
            column.push(v);
        }
    }
    let n = draws as f64;
    let mut out = Vec::new();
    for (key, mut column) in cells {
        column.resize(draws, (0.0, 0.0));
        let num = column.iter().map(|v| v.0).sum::<f64>() / n;
        let den = column.iter().map(|v| v.1).sum::<f64>() / n;
        let ratio = num / den;
        let var = column.iter().map(|v| (v.0 - ratio * v.1).powi(2)).sum::<f64>() / (n - 1.0);
        out.push(StratumEffect { time: key.0, stratum: key.1, effect: ratio, mc_se: (var / n).sqrt() / den });
    }
    Ok(out)
}

impl ExcursionModel for GenerativeModel {
    fn sample_contrasts(&self, rng: &mut ChaCha8Rng) -> Vec<Contrast> {
        self.trajectory(rng)
            .into_iter()
            .enumerate()
            .map(|(t, (s, _))| Contrast {
                time: t as u32 + 1,
                available: s.available,
                stratum: 0,
                value: self.mean.effect,
            })
            .collect()
    }

    fn analytic_marginal(&self) -> Option<f64> {
        Some(self.mean.effect)
    }
}

/// Two decision points with a binary covariate that responds to the first
/// treatment and availability that drops after treatment. Small enough to
/// enumerate, so Monte Carlo can be checked exactly.
///
/// ```text
/// X1 ~ Bern(0.4), I1 = 1, A1 ~ Bern(p)
/// E[Y2 | X1, A1]         = 1 + 0.5 X1 + A1 (0.3 + 0.4 X1)
/// X2 ~ Bern(0.3 + 0.4 A1 + 0.2 X1), I2 ~ Bern(0.9 - 0.3 A1), A2 ~ I2 Bern(p)
/// E[Y3 | X2, A1, A2]     = 0.5 + 0.2 X2 + 0.3 A1 + A2 (0.2 - 0.5 X2 + 0.6 A1)
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointModel {
    pub p: f64,
}

impl TwoPointModel {
    fn contrast1(x1: u8) -> f64 {
        0.3 + 0.4 * f64::from(x1)
    }

    fn contrast2(x2: u8, a1: u8) -> f64 {
        0.2 - 0.5 * f64::from(x2) + 0.6 * f64::from(a1)
    }

    fn x2_prob(a1: u8, x1: u8) -> f64 {
        0.3 + 0.4 * f64::from(a1) + 0.2 * f64::from(x1)
    }

    fn i2_prob(a1: u8) -> f64 {
        0.9 - 0.3 * f64::from(a1)
    }

    /// Exact effects by summing over all 32 histories.
    pub fn enumerate(&self, moderation: Moderation) -> Vec<StratumEffect> {
        let bern = |p: f64, v: u8| if v == 1 { p } else { 1.0 - p };
        // (time, stratum) -> (Σ prob·contrast, Σ prob)
        let mut acc: BTreeMap<(u32, u8), (f64, f64)> = BTreeMap::new();
        for x1 in 0..2u8 {
            for a1 in 0..2u8 {
                let w1 = bern(0.4, x1) * bern(self.p, a1);
                if a1 == 0 {
                    // t = 1 contributions, counted once per (x1) after summing a1.
                    let e = acc.entry((1, x1)).or_default();
                    e.0 += bern(0.4, x1) * Self::contrast1(x1);
                    e.1 += bern(0.4, x1);
                }
                for x2 in 0..2u8 {
                    let w2 = w1 * bern(Self::x2_prob(a1, x1), x2) * Self::i2_prob(a1);
                    let e = acc.entry((2, x2)).or_default();
                    e.0 += w2 * Self::contrast2(x2, a1);
                    e.1 += w2;
                }
            }
        }
        match moderation {
            Moderation::ByTimeAndStratum => acc
                .into_iter()
                .map(|((t, s), (num, den))| StratumEffect {
                    time: Some(t),
                    stratum: Some(s),
                    effect: num / den,
                    mc_se: 0.0,
                })
                .collect(),
            Moderation::Marginal => {
                let (num, den) = acc.values().fold((0.0, 0.0), |a, v| (a.0 + v.0, a.1 + v.1));
                vec![StratumEffect { time: None, stratum: None, effect: num / den, mc_se: 0.0 }]
            }
        }
    }
}

impl ExcursionModel for TwoPointModel {
    fn sample_contrasts(&self, rng: &mut ChaCha8Rng) -> Vec<Contrast> {
        let x1 = u8::from(rng.random::<f64>() < 0.4);
        let a1 = u8::from(rng.random::<f64>() < self.p);
        let x2 = u8::from(rng.random::<f64>() < Self::x2_prob(a1, x1));
        let i2 = rng.random::<f64>() < Self::i2_prob(a1);
        vec![
            Contrast { time: 1, available: true, stratum: x1, value: Self::contrast1(x1) },
            Contrast { time: 2, available: i2, stratum: x2, value: Self::contrast2(x2, a1) },
        ]
    }
}
