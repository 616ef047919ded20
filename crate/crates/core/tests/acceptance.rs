//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each, and
//! exits non-zero if any failed.
//!
//! `cargo test -p wcls-core --test acceptance`

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use wcls_core::oracle::{
    cell_effects_from_beta, plugin_excursion_estimate, plugin_marginal_effect, saturated_design,
    time_averaged_effect, EnumInstance, Stratification,
};
use wcls_core::simulation::{run_bias_demo, run_mc_study, BiasDemoConfig, StudyConfig, StudyOptions};
use wcls_core::{build_design, fit, ingest_csv, solve_wcls, ModelSpec, MrtDataset};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn study(name: &str) -> Result<(StudyConfig, StudyOptions), String> {
    let config = StudyConfig::from_path(data_dir().join("studies").join(name)).map_err(|e| e.to_string())?;
    let options = StudyOptions {
        reps: config.reps.unwrap_or(1000),
        seed: config.seed.ok_or("study file has no seed")?,
        level: config.level.unwrap_or(0.95),
        workers: workers(),
    };
    Ok((config, options))
}

fn working_model_study() -> Outcome {
    let (config, options) = study("appendix-c.study")?;
    if options.reps != 1000 {
        return Err(format!("study file asks for {} replications, expected 1000", options.reps));
    }
    let report = run_mc_study(&config.model, &config.variants, &options).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    let mut detail = Vec::new();
    for v in &report.variants {
        let (lo, hi) = if matches!(v.variant.as_str(), "WCLS-1" | "WCLS-2") { (0.062, 0.072) } else { (0.069, 0.079) };
        detail.push(format!("{} bias {:+.4} sd {:.4} cover {:.3}", v.variant, v.bias, v.sd, v.coverage));
        if v.bias.abs() > 0.01 {
            problems.push(format!("{} |bias| {:.4} > 0.01", v.variant, v.bias.abs()));
        }
        if !(lo..=hi).contains(&v.sd) {
            problems.push(format!("{} sd {:.4} outside [{lo}, {hi}]", v.variant, v.sd));
        }
        if !(0.94..=0.98).contains(&v.coverage) {
            problems.push(format!("{} coverage {:.3} outside [0.94, 0.98]", v.variant, v.coverage));
        }
    }
    let sd = |name: &str| report.variant(name).map_or(f64::NAN, |v| v.sd);
    if !(sd("WCLS-1") < sd("WCLS-4")) {
        problems.push("SD(WCLS-1) is not below SD(WCLS-4)".into());
    }
    let mut text = detail.join("; ");
    if !problems.is_empty() {
        text = format!("{}; {text}", problems.join("; "));
    }
    check(problems.is_empty(), text)
}

fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let inst = EnumInstance::random(seed);
        for strat in [Stratification::by(["x"]), Stratification::time_only()] {
            let (data, spec, keys) = saturated_design(&inst, &strat).map_err(|e| e.to_string())?;
            // Point estimates only: tiny saturated designs can have unit leverage.
            let design = build_design(&data, &spec).map_err(|e| e.to_string())?;
            let coef = solve_wcls(&design).map_err(|e| format!("instance {seed}: {e}"))?;
            let from_wcls = cell_effects_from_beta(&coef.beta, &keys);
            let plugin = plugin_excursion_estimate(&inst, &strat).map_err(|e| e.to_string())?;
            for (k, v) in &plugin {
                worst = worst.max((v - from_wcls[k]).abs());
            }
            if strat.covariates.is_empty() {
                let per_time = from_wcls.iter().map(|(k, v)| (k.time, *v)).collect();
                let marginal = plugin_marginal_effect(&inst).map_err(|e| e.to_string())?;
                worst = worst.max((time_averaged_effect(&inst, &per_time) - marginal).abs());
            }
        }
    }
    check(worst < 1e-10, format!("200 instances, max |WCLS - plug-in| = {worst:.2e}"))
}

fn micro_example() -> Outcome {
    let csv = "userid,decision_index,avail,a,y\n1,1,1,1,3\n2,1,1,1,1\n3,1,1,0,2\n4,1,1,0,0\n";
    let spec = ModelSpec::single_arm("y", "avail", "a", 0.5);
    let data = ingest_csv(csv.as_bytes(), &spec.schema()).map_err(|e| e.to_string())?;
    let f = fit(&data, &spec).map_err(|e| e.to_string())?;
    let se = f.se()[1];
    let dev = [(f.alpha_hat[0] - 1.5).abs(), (f.beta_hat[0] - 1.0).abs(), (se - 1.0).abs()];
    let max = dev.iter().copied().fold(0.0, f64::max);
    check(
        max < 1e-12,
        format!("alpha0 {} beta0 {} SE {} (max deviation {max:.1e})", f.alpha_hat[0], f.beta_hat[0], se),
    )
}

fn bundled(spec_name: &str) -> Result<(MrtDataset, ModelSpec), String> {
    let spec = ModelSpec::from_path(data_dir().join(spec_name)).map_err(|e| e.to_string())?;
    let file = std::fs::File::open(data_dir().join("synthetic_mrt_37x210.csv")).map_err(|e| e.to_string())?;
    let data = ingest_csv(std::io::BufReader::new(file), &spec.schema()).map_err(|e| e.to_string())?;
    Ok((data, spec))
}

fn centering_invariance() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ["q1.spec", "q2_day.spec"] {
        let (data, spec) = bundled(name)?;
        let centered = fit(&data, &spec).map_err(|e| e.to_string())?;
        let raw = fit(&data, &spec.clone().uncentered()).map_err(|e| e.to_string())?;
        for (a, b) in centered.beta_hat.iter().zip(&raw.beta_hat) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst < 1e-10, format!("bundled dataset, max |β centered - β uncentered| = {worst:.2e}"))
}

fn gee_bias() -> Outcome {
    let config = BiasDemoConfig::from_path(data_dir().join("bias-demo.conf")).map_err(|e| e.to_string())?;
    let seed = config.seed.ok_or("demo config has no seed")?;
    let report = run_bias_demo(&config.model, config.reps, seed, workers()).map_err(|e| e.to_string())?;
    let indep = report.row("independence", "β0").ok_or("missing row")?;
    let exch = report.row("exchangeable", "β0").ok_or("missing row")?;
    check(
        config.reps == 1000 && exch.flagged && !indep.flagged,
        format!(
            "{} reps; exchangeable bias {:+.4} ({:.1} MC SE), independence bias {:+.4} ({:.1} MC SE)",
            config.reps,
            exch.bias,
            exch.bias / exch.mc_se,
            indep.bias,
            indep.bias / indep.mc_se
        ),
    )
}

fn degrees_of_freedom() -> Outcome {
    let mut got = Vec::new();
    for name in ["q1.spec", "q2_day.spec", "q3_location.spec"] {
        let (data, spec) = bundled(name)?;
        let f = fit(&data, &spec).map_err(|e| e.to_string())?;
        got.push((f.q, f.df));
    }
    let want = vec![(3, (1, 34)), (5, (1, 32)), (7, (1, 30))];
    check(got == want, format!("(q, df) = {got:?}"))
}

fn size_control() -> Outcome {
    let (config, options) = study("null.study")?;
    if config.model.mean.effect != 0.0 || options.reps != 2000 {
        return Err("null study must have effect 0 and 2000 replications".into());
    }
    let report = run_mc_study(&config.model, &config.variants, &options).map_err(|e| e.to_string())?;
    let rates: Vec<String> =
        report.variants.iter().map(|v| format!("{} {:.2}%", v.variant, 100.0 * v.rejection_rate)).collect();
    let ok = report.variants.iter().all(|v| (0.03..=0.07).contains(&v.rejection_rate));
    check(ok, format!("rejection at 5%: {}", rates.join(", ")))
}

fn determinism() -> Outcome {
    let (config, mut options) = study("appendix-c.study")?;
    options.reps = 64;
    let mut run = |w: usize| {
        options.workers = w;
        run_mc_study(&config.model, &config.variants, &options).map(|r| r.to_csv()).map_err(|e| e.to_string())
    };
    let one = run(1)?;
    let eight = run(8)?;
    let again = run(8)?;
    check(
        one == eight && eight == again,
        format!("64-replication report, {} bytes, 1 vs 8 workers and rerun", one.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("working-model robustness and efficiency", working_model_study),
        ("oracle equivalence", oracle_equivalence),
        ("closed-form micro example", micro_example),
        ("centering invariance", centering_invariance),
        ("exchangeable GEE bias", gee_bias),
        ("degrees of freedom", degrees_of_freedom),
        ("size control", size_control),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} PASS {name} [{secs:.1}s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name} [{secs:.1}s]: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
