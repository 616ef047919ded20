//! GEE with an exchangeable working correlation on a WCLS design. Used to
//! show that non-independence working correlations are biased when
//! covariates are endogenous.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::estimator::{least_squares_qr, solve_wcls, Coefficients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeeOptions {
    pub max_iterations: usize,
    /// Stop when `max |Δθ| / max(max |θ|, 1)` falls below this.
    pub tolerance: f64,
    /// Fix `ρ` instead of estimating it. `Some(0.0)` reproduces WCLS.
    pub fixed_rho: Option<f64>,
}

impl Default for GeeOptions {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8, fixed_rho: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeeFit {
    pub coefficients: Coefficients,
    pub rho: f64,
    pub sigma2: f64,
    pub iterations: usize,
    /// Whether `ρ` hit the admissible boundary.
    pub rho_clamped: bool,
}

const RHO_LIMIT: f64 = 0.99;

/// Iterates moment estimates of `(ρ, σ²)` and the whitened least-squares fit,
/// starting from the independence (WCLS) solution. Rows are scaled by `√w`
/// before whitening. Every decision point must be available; cluster sizes
/// may differ.
pub fn gee_exchangeable_fit(design: &Design, options: &GeeOptions) -> Result<GeeFit> {
    if design.rows.iter().any(|r| r.weight == 0.0) {
        return Err(Error::domain(
            "exchangeable GEE requires every decision point to be available",
        ));
    }
    let q = design.q();
    let n_rows = design.rows.len();
    let max_cluster = (0..design.n()).map(|i| design.individual_rows(i).len()).max().unwrap_or(0);
    let lower = if max_cluster > 2 { -1.0 / (max_cluster as f64 - 1.0) + 0.01 } else { -RHO_LIMIT };
    let mut theta = DVector::from_vec(solve_wcls(design)?.stacked());
    let mut rho = options.fixed_rho.unwrap_or(0.0);
    let mut sigma2;
    let mut rho_clamped = false;
    for iteration in 1..=options.max_iterations {
        let (r, s2) = moments(design, &theta);
        sigma2 = s2;
        if options.fixed_rho.is_none() {
            rho = r;
        }
        if rho > RHO_LIMIT || rho < lower {
            let clamped = rho.clamp(lower, RHO_LIMIT);
            if !rho_clamped {
                log::warn!("working correlation {rho} outside the admissible range; clamped to {clamped}");
            }
            rho_clamped = true;
            rho = clamped;
        }
        let next = whitened_fit(design, rho, n_rows, q)?;
        let scale = theta.amax().max(1.0);
        let change = (&next - &theta).amax() / scale;
        theta = next;
        if change < options.tolerance {
            return Ok(GeeFit {
                coefficients: Coefficients::from_stacked(theta.as_slice(), design.q_alpha()),
                rho,
                sigma2,
                iterations: iteration,
                rho_clamped,
            });
        }
    }
    Err(Error::Convergence { iterations: options.max_iterations, last: theta.iter().copied().collect() })
}

fn residuals(design: &Design, theta: &DVector<f64>) -> Vec<f64> {
    design
        .rows
        .iter()
        .map(|r| {
            let fitted: f64 = r.z.iter().chain(&r.ts).zip(theta.iter()).map(|(x, b)| x * b).sum();
            r.weight.sqrt() * (r.y - fitted)
        })
        .collect()
}

/// Pearson moment estimates of `ρ` and `σ²` with the usual `q` adjustments.
fn moments(design: &Design, theta: &DVector<f64>) -> (f64, f64) {
    let e = residuals(design, theta);
    let q = design.q() as f64;
    let n_rows = e.len() as f64;
    let sigma2 = e.iter().map(|v| v * v).sum::<f64>() / (n_rows - q).max(1.0);
    let mut cross = 0.0;
    let mut pairs = 0.0;
    let mut start = 0;
    for i in 0..design.n() {
        let m = design.individual_rows(i).len();
        let block = &e[start..start + m];
        let sum: f64 = block.iter().sum();
        let sq: f64 = block.iter().map(|v| v * v).sum();
        cross += (sum * sum - sq) / 2.0;
        pairs += (m * (m.saturating_sub(1))) as f64 / 2.0;
        start += m;
    }
    let rho = if pairs > q && sigma2 > 0.0 { cross / (sigma2 * (pairs - q)) } else { 0.0 };
    (rho, sigma2)
}

/// Least squares after multiplying each cluster by `V^{-1/2}`, where
/// `V = (1-ρ) I + ρ J`: deviations from the cluster mean scale by
/// `(1-ρ)^{-1/2}`, the mean by `(1+(m-1)ρ)^{-1/2}`.
fn whitened_fit(design: &Design, rho: f64, n_rows: usize, q: usize) -> Result<DVector<f64>> {
    let mut x = DMatrix::<f64>::zeros(n_rows, q);
    let mut y = DVector::<f64>::zeros(n_rows);
    let mut start = 0;
    for i in 0..design.n() {
        let rows = design.individual_rows(i);
        let m = rows.len();
        let dev = (1.0 - rho).powf(-0.5);
        let avg = (1.0 + (m as f64 - 1.0) * rho).powf(-0.5);
        let mut mean_x = vec![0.0; q];
        let mut mean_y = 0.0;
        for r in rows {
            let sw = r.weight.sqrt();
            for (j, v) in r.z.iter().chain(&r.ts).enumerate() {
                mean_x[j] += sw * v / m as f64;
            }
            mean_y += sw * r.y / m as f64;
        }
        for (k, r) in rows.iter().enumerate() {
            let sw = r.weight.sqrt();
            for (j, v) in r.z.iter().chain(&r.ts).enumerate() {
                x[(start + k, j)] = dev * (sw * v - mean_x[j]) + avg * mean_x[j];
            }
            y[start + k] = dev * (sw * r.y - mean_y) + avg * mean_y;
        }
        start += m;
    }
    least_squares_qr(x, y, &design.column_names())
}
