use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::IndividualId;
use crate::design::DesignRow;

fn design_from(rows: Vec<(usize, f64, Vec<f64>, Vec<f64>, f64)>, n: usize) -> Design {
    let qa = rows[0].2.len();
    let qb = rows[0].3.len();
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(t, (i, w, z, ts, y))| DesignRow { individual: i, time_index: t as u32 + 1, weight: w, z, ts, y })
        .collect();
    Design::from_rows(
        rows,
        (0..qa).map(|j| format!("z{j}")).collect(),
        (0..qb).map(|j| format!("s{j}")).collect(),
        (0..n).map(|i| IndividualId::new(i.to_string())).collect(),
    )
    .unwrap()
}

/// Four individuals, one decision point each, p = 0.5.
fn micro() -> Design {
    let a = [1.0, 1.0, 0.0, 0.0];
    let y = [3.0, 1.0, 2.0, 0.0];
    design_from(
        (0..4).map(|i| (i, 1.0, vec![1.0], vec![a[i] - 0.5], y[i])).collect(),
        4,
    )
}

fn random_design(seed: u64, n: usize, t: usize, qa: usize, qb: usize) -> Design {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for i in 0..n {
        let u: f64 = rng.random_range(-1.0..1.0);
        for _ in 0..t {
            let avail = rng.random_bool(0.85);
            let mut z = vec![1.0];
            z.extend((1..qa).map(|_| rng.random_range(-2.0..2.0)));
            let a = if rng.random_bool(0.6) { 0.4 } else { -0.6 };
            let mut ts = vec![a];
            ts.extend((1..qb).map(|j| a * z[j.min(qa - 1)]));
            let y = 0.5 + z.iter().sum::<f64>() * 0.3 + 0.2 * a + u + rng.random_range(-1.0..1.0);
            rows.push((i, if avail { 1.0 } else { 0.0 }, z, ts, y));
        }
    }
    design_from(rows, n)
}

#[test]
fn micro_example_closed_form() {
    let d = micro();
    let fit = fit_wcls(&d).unwrap();
    assert!((fit.alpha_hat[0] - 1.5).abs() < 1e-12);
    assert!((fit.beta_hat[0] - 1.0).abs() < 1e-12);
    // bread_ββ = 0.25, meat_ββ = 0.25, Var = (1/4)(0.25 / 0.25²) = 1.
    assert!((fit.bread[(1, 1)] - 0.25).abs() < 1e-12);
    assert!((fit.meat[(1, 1)] - 0.25).abs() < 1e-12);
    assert!((fit.se()[1] - 1.0).abs() < 1e-12);
}

#[test]
fn micro_example_matches_hc0() {
    // Single decision point per individual: the cluster sandwich is the
    // textbook HC0 estimator (XᵀX)⁻¹ Xᵀ diag(e²) X (XᵀX)⁻¹.
    let d = micro();
    let fit = fit_wcls(&d).unwrap();
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 1.0, 0.5, 1.0, -0.5, 1.0, -0.5]);
    let e = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let mid = x.transpose() * DMatrix::from_diagonal(&e.component_mul(&e)) * &x;
    let hc0 = &xtx_inv * mid * &xtx_inv;
    assert!((&fit.covariance - hc0).amax() < 1e-12);
}

#[test]
fn exact_fit_has_zero_meat() {
    let rows = (0..6)
        .map(|i| {
            let x = i as f64;
            let a = if i % 2 == 0 { 0.5 } else { -0.5 };
            (i / 2, 1.0, vec![1.0, x], vec![a], 2.0 - 0.5 * x + 0.7 * a)
        })
        .collect();
    let d = design_from(rows, 3);
    let coef = solve_wcls(&d).unwrap();
    let s = sandwich(&d, &coef).unwrap();
    assert!(s.meat.amax() < 1e-20);
    assert!(s.covariance.amax() < 1e-20);
}

#[test]
fn estimating_equation_vanishes_at_solution() {
    let d = random_design(7, 20, 15, 3, 2);
    let coef = solve_wcls(&d).unwrap();
    let scale = d.rows.iter().map(|r| r.y.abs()).fold(0.0, f64::max);
    let resid = estimating_equation(&d, &coef);
    assert!(resid.iter().all(|v| v.abs() < 1e-8 * scale), "{resid:?}");
}

#[test]
fn singular_design_names_columns() {
    let rows = (0..8)
        .map(|i| {
            let x = i as f64;
            (i / 2, 1.0, vec![1.0, x, 2.0 * x], vec![if i % 2 == 0 { 0.4 } else { -0.6 }], x)
        })
        .collect();
    let d = design_from(rows, 4);
    match solve_wcls(&d) {
        Err(Error::SingularDesign { columns }) => {
            assert!(columns.contains(&"z1".to_string()) && columns.contains(&"z2".to_string()), "{columns:?}");
            assert!(!columns.contains(&"s0".to_string()));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn constant_treatment_is_degenerate() {
    let rows = (0..8).map(|i| (i / 2, 1.0, vec![1.0], vec![0.4], i as f64)).collect();
    assert!(matches!(solve_wcls(&design_from(rows, 4)), Err(Error::SingularDesign { .. })));
}

#[test]
fn no_available_rows() {
    let rows = (0..4).map(|i| (i, 0.0, vec![1.0], vec![0.4], 1.0)).collect();
    assert!(matches!(solve_wcls(&design_from(rows, 4)), Err(Error::EmptyData)));
}

/// Mancl–DeRouen written out with explicit `T_i × T_i` leverage matrices.
fn direct_corrected_covariance(d: &Design, coef: &Coefficients) -> DMatrix<f64> {
    let q = d.q();
    let n = d.n();
    let theta = DVector::from_vec(coef.stacked());
    let blocks: Vec<(DMatrix<f64>, DVector<f64>, DVector<f64>)> = (0..n)
        .map(|i| {
            let rows: Vec<_> = d.individual_rows(i).iter().filter(|r| r.weight > 0.0).collect();
            let m = rows.len();
            let mut di = DMatrix::zeros(m, q);
            let mut y = DVector::zeros(m);
            let mut w = DVector::zeros(m);
            for (t, r) in rows.iter().enumerate() {
                for (j, v) in r.z.iter().chain(&r.ts).enumerate() {
                    di[(t, j)] = *v;
                }
                y[t] = r.y;
                w[t] = r.weight;
            }
            let e = &y - &di * &theta;
            (di, w, e)
        })
        .collect();
    let mut total = DMatrix::zeros(q, q);
    for (di, w, _) in &blocks {
        total += di.transpose() * DMatrix::from_diagonal(w) * di;
    }
    let total_inv = total.clone().try_inverse().unwrap();
    let mut meat = DMatrix::zeros(q, q);
    for (di, w, e) in &blocks {
        let k = DMatrix::from_diagonal(w);
        let h = di * &total_inv * di.transpose() * &k;
        let ident = DMatrix::<f64>::identity(h.nrows(), h.ncols());
        let e_tilde = (ident - h).try_inverse().unwrap() * e;
        let u = di.transpose() * &k * e_tilde;
        meat += &u * u.transpose();
    }
    meat /= n as f64;
    let bread_inv = (total / n as f64).try_inverse().unwrap();
    &bread_inv * meat * &bread_inv / n as f64
}

#[test]
fn woodbury_correction_matches_direct_leverage() {
    for seed in 0..5 {
        let d = random_design(seed, 12, 6, 2, 2);
        let coef = solve_wcls(&d).unwrap();
        let fast = small_sample_correct(&d, &coef).unwrap();
        let direct = direct_corrected_covariance(&d, &coef);
        let rel = (&fast.covariance - &direct).amax() / direct.amax();
        assert!(rel < 1e-10, "seed {seed}: rel diff {rel}");
        assert_eq!(fast.df, (1, 12 - 4));
    }
}

#[test]
fn correction_inflates_and_is_psd() {
    for seed in 10..20 {
        let fit = fit_wcls(&random_design(seed, 15, 10, 3, 1)).unwrap();
        assert!(fit.se_shrunk.is_empty(), "seed {seed}");
        for (c, u) in fit.corrected_se().iter().zip(fit.se()) {
            assert!(*c >= u);
        }
        let (a, b) = fit.min_eigenvalues();
        assert!(a > -PSD_TOLERANCE && b > -PSD_TOLERANCE);
        let c = &fit.corrected_covariance;
        assert!((c - c.transpose()).amax() == 0.0);
    }
}

#[test]
fn correction_needs_degrees_of_freedom() {
    let d = random_design(3, 4, 5, 3, 1);
    let coef = solve_wcls(&d).unwrap();
    assert!(matches!(small_sample_correct(&d, &coef), Err(Error::Domain(_))));
}

#[test]
fn individual_with_unit_leverage_is_reported() {
    // Only individual 0 has a nonzero value in the second control column.
    let mut rows = Vec::new();
    for i in 0..6 {
        for t in 0..4 {
            let a = if (i + t) % 2 == 0 { 0.5 } else { -0.5 };
            let x = if i == 0 { t as f64 + 1.0 } else { 0.0 };
            rows.push((i, 1.0, vec![1.0, x], vec![a], (i * t) as f64 * 0.1 + a));
        }
    }
    let d = design_from(rows, 6);
    let coef = solve_wcls(&d).unwrap();
    match small_sample_correct(&d, &coef) {
        Err(Error::Correction { individual }) => assert_eq!(individual, "0"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn correction_vanishes_as_individuals_replicate() {
    // Replicating every individual k times drives each leverage to zero.
    let base = random_design(42, 12, 8, 2, 1);
    let mut ratios = Vec::new();
    for k in [1usize, 10, 100] {
        let mut rows = Vec::new();
        for copy in 0..k {
            for r in &base.rows {
                rows.push((copy * base.n() + r.individual, r.weight, r.z.clone(), r.ts.clone(), r.y));
            }
        }
        let fit = fit_wcls(&design_from(rows, base.n() * k)).unwrap();
        let ratio = fit.corrected_se()[2] / fit.se()[2];
        ratios.push(ratio);
    }
    assert!(ratios[0] > ratios[1] && ratios[1] > ratios[2], "{ratios:?}");
    assert!((ratios[2] - 1.0).abs() < 0.01, "{ratios:?}");
}

#[test]
fn scale_equivariance() {
    let d = random_design(5, 10, 8, 2, 1);
    let c = 3.5;
    let mut scaled = d.clone();
    scaled.rows.iter_mut().for_each(|r| r.y *= c);
    let a = fit_wcls(&d).unwrap();
    let b = fit_wcls(&scaled).unwrap();
    for (x, y) in a.estimates().iter().zip(b.estimates()) {
        assert!((x * c - y).abs() < 1e-10 * (1.0 + y.abs()));
    }
    let diff = (&a.corrected_covariance * (c * c) - &b.corrected_covariance).amax();
    assert!(diff < 1e-10 * b.corrected_covariance.amax());
}

#[test]
fn joint_wald_single_beta_equals_hotelling() {
    let fit = fit_wcls(&random_design(9, 20, 6, 2, 1)).unwrap();
    let w = fit.joint_wald().unwrap();
    let row = fit.infer_beta(0, 0.95).unwrap();
    assert!((w.statistic - row.hotelling_t).abs() < 1e-9 * row.hotelling_t.max(1.0));
    assert!((w.p_value - row.p_value).abs() < 1e-9);
}

#[test]
fn report_formats_agree() {
    let fit = fit_wcls(&random_design(11, 20, 6, 2, 2)).unwrap();
    let report = FitReport::new(&fit, 0.95).unwrap();
    let table = render_table(&report);
    assert!(table.contains("95% LCL") && table.contains("(1, 16)"), "{table}");
    let csv = render_csv(&report);
    let json: serde_json::Value = serde_json::from_str(&render_json(&report)).unwrap();
    for (line, coef) in csv.lines().skip(1).zip(json["coefficients"].as_array().unwrap()) {
        let est: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(est, coef["estimate"].as_f64().unwrap());
    }
}
