use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::Design;
use crate::error::{Error, Result};

/// Smallest singular value must exceed this fraction of the largest.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficients {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Coefficients {
    pub fn stacked(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    pub(crate) fn from_stacked(theta: &[f64], q_alpha: usize) -> Self {
        Self {
            alpha: theta[..q_alpha].to_vec(),
            beta: theta[q_alpha..].to_vec(),
        }
    }
}

/// Solves the WCLS estimating equation.
///
/// The residual `y - zᵀα - tsᵀβ` is linear in the parameters, so the root is
/// the weighted least-squares fit of `y` on `(z, ts)`. It is computed from a
/// Householder QR of the `√w`-scaled regressors; rows with zero weight are
/// skipped.
pub fn solve_wcls(design: &Design) -> Result<Coefficients> {
    let theta = weighted_least_squares(design, |_| 1.0)?;
    Ok(Coefficients::from_stacked(theta.as_slice(), design.q_alpha()))
}

/// Weighted LS with an extra per-row multiplier on the design weight. Shared
/// with the GEE independence start.
pub(crate) fn weighted_least_squares(design: &Design, extra: impl Fn(usize) -> f64) -> Result<DVector<f64>> {
    let q = design.q();
    let active: Vec<(usize, f64)> = design
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.weight * extra(i)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if active.is_empty() {
        return Err(Error::EmptyData);
    }
    let m = active.len();
    let mut x = DMatrix::<f64>::zeros(m, q);
    let mut y = DVector::<f64>::zeros(m);
    for (row_out, &(idx, w)) in active.iter().enumerate() {
        let r = &design.rows[idx];
        let sw = w.sqrt();
        for (j, v) in r.z.iter().chain(&r.ts).enumerate() {
            x[(row_out, j)] = sw * v;
        }
        y[row_out] = sw * r.y;
    }
    least_squares_qr(x, y, &design.column_names())
}

pub(crate) fn least_squares_qr(x: DMatrix<f64>, mut y: DVector<f64>, names: &[String]) -> Result<DVector<f64>> {
    let (m, q) = x.shape();
    if m < q {
        return Err(Error::SingularDesign { columns: names.to_vec() });
    }
    let qr = x.qr();
    let r = qr.r();
    check_rank(&r, names)?;
    qr.q_tr_mul(&mut y);
    let head = y.rows(0, q).into_owned();
    r.solve_upper_triangular(&head)
        .ok_or_else(|| Error::SingularDesign { columns: names.to_vec() })
}

fn check_rank(r: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let svd = r.clone().svd(false, true);
    let sv = &svd.singular_values;
    let max = sv.max();
    let (min_idx, min) = sv.argmin();
    if max > 0.0 && min > RANK_TOLERANCE * max {
        return Ok(());
    }
    // Columns loading on the null direction.
    let columns = match &svd.v_t {
        Some(v_t) => {
            let dir = v_t.row(min_idx);
            let peak = dir.amax();
            names
                .iter()
                .zip(dir.iter())
                .filter(|(_, v)| v.abs() > 0.1 * peak)
                .map(|(n, _)| n.clone())
                .collect()
        }
        None => names.to_vec(),
    };
    Err(Error::SingularDesign { columns })
}

/// `(1/n) Σ_i Σ_t w (y - xᵀθ) x` at the given coefficients.
pub fn estimating_equation(design: &Design, coef: &Coefficients) -> Vec<f64> {
    let theta = coef.stacked();
    let mut out = vec![0.0; theta.len()];
    for r in design.rows.iter().filter(|r| r.weight > 0.0) {
        let e = residual(r, &theta);
        for (o, v) in out.iter_mut().zip(r.z.iter().chain(&r.ts)) {
            *o += r.weight * e * v;
        }
    }
    let n = design.n() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

pub(crate) fn residual(row: &crate::design::DesignRow, theta: &[f64]) -> f64 {
    let fitted: f64 = row
        .z
        .iter()
        .chain(&row.ts)
        .zip(theta)
        .map(|(x, t)| x * t)
        .sum();
    row.y - fitted
}
