//! A synthetic stand-in for the HeartSteps analysis file: same columns and
//! shape (37 × 210, five decision points a day, about 80% availability,
//! walking and sedentary suggestions at 0.3 each), with log step counts
//! produced by a count model. Values are invented; only the layout is real.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::rng::rng_from_seed;
use crate::data::{log_transform, DecisionRecord, Individual, IndividualId, MrtDataset, Schema};
use crate::error::Result;

pub const SEND_ACTIVE: &str = "send_active";
pub const SEND_SEDENTARY: &str = "send_sedentary";
pub const STUDY_DAY: &str = "study_day_nogap";
pub const LOCATION: &str = "location_homework";

pub const AVAILABILITY_RATE: f64 = 0.8;
pub const ARM_PROB: f64 = 0.3;

/// Column layout of the synthetic file. `send` is the only treatment column
/// here; the per-arm indicators travel as covariates so that either a one-arm
/// or a two-arm spec can read the file.
pub fn schema() -> Schema {
    Schema::new(super::ID, super::TIME, super::AVAIL, super::OUTCOME)
        .treatment(super::TREATMENT)
        .covariate(SEND_ACTIVE)
        .covariate(SEND_SEDENTARY)
        .covariate(super::COVARIATE)
        .covariate(super::LAG_OUTCOME)
        .covariate(STUDY_DAY)
        .covariate(LOCATION)
}

fn log_steps(rng: &mut ChaCha8Rng, log_mean: f64) -> f64 {
    // Zero steps about 40% of the time, otherwise log-normal counts.
    let count = if rng.random::<f64>() < 0.4 {
        0.0
    } else {
        (log_mean + 1.3 * rng.sample::<f64, _>(StandardNormal)).exp().round()
    };
    log_transform(count).expect("non-negative count")
}

pub fn heartsteps_like(n: usize, t: u32, seed: u64) -> Result<MrtDataset> {
    let mut rng = rng_from_seed(seed);
    let baseline = Normal::new(0.0, 0.5).expect("valid sd");
    let individuals = (0..n)
        .map(|i| {
            let b = baseline.sample(&mut rng);
            let home_rate = rng.random_range(0.3..0.7);
            let mut lag = log_steps(&mut rng, 3.5 + b);
            let records = (1..=t)
                .map(|time| {
                    let day = f64::from((time - 1) / 5);
                    let available = rng.random::<f64>() < AVAILABILITY_RATE;
                    let home = rng.random::<f64>() < home_rate;
                    let pre = log_steps(&mut rng, 4.5 + b);
                    let u: f64 = rng.random();
                    let walk = available && u < ARM_PROB;
                    let sedentary = available && (ARM_PROB..2.0 * ARM_PROB).contains(&u);
                    let loc = f64::from(u8::from(home));
                    let mut effect = 0.0;
                    if walk {
                        effect = 0.3 - 0.010 * day + 0.3 * loc;
                    } else if sedentary {
                        effect = 0.25 - 0.006 * day - 0.1 * loc;
                    }
                    let mean = 1.7 + 0.5 * b + 0.41 * pre + 0.05 * lag - 0.011 * day + 0.14 * loc + effect;
                    let latent = mean + 2.6 * rng.sample::<f64, _>(StandardNormal);
                    let count = (latent.exp() - 0.5).max(0.0).round();
                    let y = log_transform(count).expect("non-negative count");
                    let indicator = |v: bool| Some(f64::from(u8::from(v)));
                    let record = DecisionRecord {
                        time_index: time,
                        available,
                        treatments: vec![walk || sedentary],
                        outcome: Some(y),
                        covariates: vec![
                            indicator(walk),
                            indicator(sedentary),
                            Some(pre),
                            Some(lag),
                            Some(day),
                            Some(loc),
                        ],
                        rand_prob: vec![None],
                    };
                    lag = y;
                    record
                })
                .collect();
            Individual { id: IndividualId::new((i + 1).to_string()), records }
        })
        .collect();
    MrtDataset::new(schema(), individuals)
}
