//! WCLS fitting, sandwich covariance, and small-sample inference.
//!
//! `α̂` is reported for completeness but should not be interpreted unless the
//! working model `Zᵀα` is believed to be correct.

mod inference;
mod report;
mod sandwich;
mod solve;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::MrtDataset;
use crate::design::{build_design, Design, ModelSpec};
use crate::error::{Error, Result};

pub use inference::{critical_value, f_tail, infer_one, CoefficientRow};
pub use report::{render_csv, render_json, render_table, FitReport};
pub use sandwich::{
    sandwich, small_sample_correct, CorrectedSandwich, Sandwich, LEVERAGE_TOLERANCE,
};
pub use solve::{estimating_equation, solve_wcls, Coefficients, RANK_TOLERANCE};

pub(crate) use solve::least_squares_qr;

/// Eigenvalue floor for the positive-semidefinite check on covariances.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct WclsFit {
    pub alpha_names: Vec<String>,
    pub beta_names: Vec<String>,
    pub alpha_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub bread: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub corrected_meat: DMatrix<f64>,
    pub corrected_covariance: DMatrix<f64>,
    pub n_individuals: usize,
    pub n_available: usize,
    pub q: usize,
    /// `(1, n - q)` for the per-coefficient Hotelling t test.
    pub df: (usize, usize),
    /// Coefficients whose corrected SE came out below the uncorrected SE.
    pub se_shrunk: Vec<usize>,
}

/// Solves, computes the sandwich, and applies the small-sample correction.
pub fn fit_wcls(design: &Design) -> Result<WclsFit> {
    let coef = solve_wcls(design)?;
    let parts = sandwich::contributions(design, &coef);
    let plain = sandwich::sandwich_from_parts(design, &parts)?;
    let corrected = sandwich::correct_from_parts(design, &parts)?;
    let q = design.q();
    let se_shrunk = (0..q)
        .filter(|&j| corrected.covariance[(j, j)] < plain.covariance[(j, j)])
        .collect::<Vec<_>>();
    if !se_shrunk.is_empty() {
        log::warn!("small-sample correction reduced the SE of coefficients {se_shrunk:?}");
    }
    Ok(WclsFit {
        alpha_names: design.alpha_names.clone(),
        beta_names: design.beta_names.clone(),
        alpha_hat: coef.alpha,
        beta_hat: coef.beta,
        bread: plain.bread,
        meat: plain.meat,
        covariance: plain.covariance,
        corrected_meat: corrected.meat,
        corrected_covariance: corrected.covariance,
        n_individuals: design.n(),
        n_available: design.n_available(),
        q,
        df: corrected.df,
        se_shrunk,
    })
}

/// Builds the design for `spec` and fits it.
pub fn fit(data: &MrtDataset, spec: &ModelSpec) -> Result<WclsFit> {
    fit_wcls(&build_design(data, spec)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointWald {
    /// `β̂ᵀ V_ββ⁻¹ β̂` with the corrected covariance.
    pub statistic: f64,
    pub df: (usize, usize),
    pub p_value: f64,
}

impl WclsFit {
    pub fn estimates(&self) -> Vec<f64> {
        self.alpha_hat.iter().chain(&self.beta_hat).copied().collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.alpha_names.iter().chain(&self.beta_names).cloned().collect()
    }

    pub fn q_alpha(&self) -> usize {
        self.alpha_hat.len()
    }

    /// Uncorrected robust standard errors.
    pub fn se(&self) -> Vec<f64> {
        diag_sqrt(&self.covariance)
    }

    pub fn corrected_se(&self) -> Vec<f64> {
        diag_sqrt(&self.corrected_covariance)
    }

    pub fn symbols(&self) -> Vec<String> {
        (0..self.alpha_hat.len())
            .map(|j| format!("α{j}"))
            .chain((0..self.beta_hat.len()).map(|j| format!("β{j}")))
            .collect()
    }

    /// CI, Hotelling t and p for every coefficient from the corrected covariance.
    pub fn infer(&self, level: f64) -> Result<Vec<CoefficientRow>> {
        let names = self.names();
        let symbols = self.symbols();
        let se = self.corrected_se();
        self.estimates()
            .iter()
            .enumerate()
            .map(|(j, &est)| infer_one(&names[j], &symbols[j], est, se[j], self.df.1, level))
            .collect()
    }

    /// Inference for `β_j` alone.
    pub fn infer_beta(&self, j: usize, level: f64) -> Result<CoefficientRow> {
        let k = self.q_alpha() + j;
        let se = self.corrected_covariance[(k, k)].sqrt();
        infer_one(&self.beta_names[j], &format!("β{j}"), self.beta_hat[j], se, self.df.1, level)
    }

    /// Joint test of `β = 0`, referred to `F(dim β, n - q)` after dividing
    /// the Wald statistic by `dim β`.
    pub fn joint_wald(&self) -> Result<JointWald> {
        let qa = self.q_alpha();
        let k = self.beta_hat.len();
        let v = self.corrected_covariance.view((qa, qa), (k, k)).into_owned();
        let b = DVector::from_column_slice(&self.beta_hat);
        let inv = v
            .cholesky()
            .ok_or_else(|| Error::SingularDesign { columns: self.beta_names.clone() })?
            .inverse();
        let statistic = (b.transpose() * inv * &b)[(0, 0)];
        let df = (k, self.df.1);
        Ok(JointWald { statistic, df, p_value: f_tail(statistic / k as f64, df.0, df.1)? })
    }

    /// Smallest eigenvalues of the uncorrected and corrected covariances.
    pub fn min_eigenvalues(&self) -> (f64, f64) {
        let min = |m: &DMatrix<f64>| nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.min();
        (min(&self.covariance), min(&self.corrected_covariance))
    }
}

fn diag_sqrt(m: &DMatrix<f64>) -> Vec<f64> {
    m.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
}

#[cfg(test)]
mod tests;
