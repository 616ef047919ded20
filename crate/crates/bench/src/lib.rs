//! Fixtures shared by the benchmarks.

use wcls_core::simulation::{simulate_mrt, GenerativeModel};
use wcls_core::{build_design, Design, ModelSpec, MrtDataset};

/// A calibrated dataset of `n` individuals and `t` decision points with the
/// full control set.
pub fn fixture(n: usize, t: u32, seed: u64) -> (MrtDataset, ModelSpec, Design) {
    let model = GenerativeModel { n, t, ..GenerativeModel::heartsteps_calibrated() };
    let data = simulate_mrt(&model, seed).expect("valid model");
    let spec = model.spec([wcls_core::simulation::COVARIATE, wcls_core::simulation::LAG_OUTCOME]);
    let design = build_design(&data, &spec).expect("valid spec");
    (data, spec, design)
}
