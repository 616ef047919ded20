//! Robust sandwich covariance and its small-sample correction.
//!
//! The bread is stored in positive-definite form `P_n Σ_t w x xᵀ`; the
//! textbook bread carries a leading minus, which cancels in
//! `M⁻¹ Σ M⁻ᵀ`. The meat is the between-individual average of outer products
//! of per-individual scores `u_i = Σ_t w e x`, so it is robust to any
//! within-individual correlation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::estimator::solve::{residual, Coefficients};

#[derive(Debug, Clone)]
pub struct Sandwich {
    pub bread: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    /// `(1/n) bread⁻¹ meat bread⁻ᵀ`
    pub covariance: DMatrix<f64>,
}

/// Per-individual pieces: `B_i = Σ_t w x xᵀ` and `u_i = Σ_t w e x`.
pub(crate) struct Contributions {
    pub bread_i: Vec<DMatrix<f64>>,
    pub score_i: Vec<DVector<f64>>,
}

pub(crate) fn contributions(design: &Design, coef: &Coefficients) -> Contributions {
    let q = design.q();
    let theta = coef.stacked();
    let mut bread_i = Vec::with_capacity(design.n());
    let mut score_i = Vec::with_capacity(design.n());
    let mut x = DVector::<f64>::zeros(q);
    for i in 0..design.n() {
        let mut b = DMatrix::<f64>::zeros(q, q);
        let mut u = DVector::<f64>::zeros(q);
        for r in design.individual_rows(i).iter().filter(|r| r.weight > 0.0) {
            for (slot, v) in x.iter_mut().zip(r.z.iter().chain(&r.ts)) {
                *slot = *v;
            }
            b.ger(r.weight, &x, &x, 1.0);
            u.axpy(r.weight * residual(r, &theta), &x, 1.0);
        }
        bread_i.push(b);
        score_i.push(u);
    }
    Contributions { bread_i, score_i }
}

fn average_outer(scores: &[DVector<f64>], q: usize) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(q, q);
    for u in scores {
        m.ger(1.0, u, u, 1.0);
    }
    m / scores.len() as f64
}

fn invert_bread(bread: &DMatrix<f64>, design: &Design) -> Result<DMatrix<f64>> {
    bread
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::SingularDesign { columns: design.column_names() })
}

fn sandwich_from(bread_inv: &DMatrix<f64>, meat: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let c = bread_inv * meat * bread_inv.transpose() / n as f64;
    (&c + c.transpose()) * 0.5
}

/// Uncorrected sandwich at a solved fit.
pub fn sandwich(design: &Design, coef: &Coefficients) -> Result<Sandwich> {
    let parts = contributions(design, coef);
    sandwich_from_parts(design, &parts)
}

pub(crate) fn sandwich_from_parts(design: &Design, parts: &Contributions) -> Result<Sandwich> {
    let n = design.n();
    let q = design.q();
    let mut bread = DMatrix::<f64>::zeros(q, q);
    for b in &parts.bread_i {
        bread += b;
    }
    bread /= n as f64;
    let meat = average_outer(&parts.score_i, q);
    let bread_inv = invert_bread(&bread, design)?;
    let covariance = sandwich_from(&bread_inv, &meat, n);
    Ok(Sandwich { bread, meat, covariance })
}

#[derive(Debug, Clone)]
pub struct CorrectedSandwich {
    pub meat: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    /// `(1, n - q)`
    pub df: (usize, usize),
}

/// Relative eigenvalue floor of `B - B_i` below which individual `i`'s
/// leverage is treated as one.
pub const LEVERAGE_TOLERANCE: f64 = 1e-10;

/// Mancl–DeRouen residual inflation.
///
/// Each individual's residual vector is replaced by `(I - H_ii)⁻¹ e_i` with
/// `H_ii = D_i B⁻¹ D_iᵀ K_i`, `B = Σ_j D_jᵀ K_j D_j`. By the Woodbury
/// identity the inflated score is `D_iᵀ K_i ẽ_i = B (B - B_i)⁻¹ u_i`, which
/// avoids forming the `T_i × T_i` leverage matrices.
pub fn small_sample_correct(design: &Design, coef: &Coefficients) -> Result<CorrectedSandwich> {
    let parts = contributions(design, coef);
    correct_from_parts(design, &parts)
}

pub(crate) fn correct_from_parts(design: &Design, parts: &Contributions) -> Result<CorrectedSandwich> {
    let n = design.n();
    let q = design.q();
    if n <= q {
        return Err(Error::domain(format!(
            "small-sample correction needs n - q >= 1 (n = {n}, q = {q})"
        )));
    }
    let mut total = DMatrix::<f64>::zeros(q, q);
    for b in &parts.bread_i {
        total += b;
    }
    let scale = SymmetricEigen::new(total.clone()).eigenvalues.max();
    let mut inflated = Vec::with_capacity(n);
    for (i, (b_i, u_i)) in parts.bread_i.iter().zip(&parts.score_i).enumerate() {
        let rest = &total - b_i;
        let min_eig = SymmetricEigen::new(rest.clone()).eigenvalues.min();
        let singular = || Error::Correction { individual: design.individual_ids[i].to_string() };
        if !(min_eig > LEVERAGE_TOLERANCE * scale) {
            return Err(singular());
        }
        let solved = rest.cholesky().ok_or_else(singular)?.solve(u_i);
        inflated.push(&total * solved);
    }
    let meat = average_outer(&inflated, q);
    let bread = &total / n as f64;
    let bread_inv = invert_bread(&bread, design)?;
    let covariance = sandwich_from(&bread_inv, &meat, n);
    Ok(CorrectedSandwich { meat, covariance, df: (1, n - q) })
}
