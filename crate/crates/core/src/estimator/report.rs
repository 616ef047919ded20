//! Coefficient tables in the usual "Estimate / LCL / UCL / SE / Hotelling t / p"
//! layout, plus machine-readable CSV and JSON.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;

use super::{CoefficientRow, JointWald, WclsFit};
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub level: f64,
    pub n_individuals: usize,
    pub n_available: usize,
    pub q: usize,
    pub df: (usize, usize),
    pub coefficients: Vec<CoefficientRow>,
    pub joint_wald: Option<JointWald>,
    pub covariance: Vec<Vec<f64>>,
    pub corrected_covariance: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl FitReport {
    pub fn new(fit: &WclsFit, level: f64) -> Result<Self> {
        Ok(Self {
            level,
            n_individuals: fit.n_individuals,
            n_available: fit.n_available,
            q: fit.q,
            df: fit.df,
            coefficients: fit.infer(level)?,
            joint_wald: fit.joint_wald().ok(),
            covariance: rows_of(&fit.covariance),
            corrected_covariance: rows_of(&fit.corrected_covariance),
        })
    }
}

fn pct(level: f64) -> String {
    let p = level * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round())
    } else {
        format!("{p}%")
    }
}

fn p_display(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Human-readable table, three decimals.
pub fn render_table(report: &FitReport) -> String {
    let lvl = pct(report.level);
    let header = [
        "Variable".to_string(),
        String::new(),
        "Estimate".into(),
        format!("{lvl} LCL"),
        format!("{lvl} UCL"),
        "SE".into(),
        "Hotelling t".into(),
        "p".into(),
    ];
    let mut cells = vec![header.to_vec()];
    for c in &report.coefficients {
        cells.push(vec![
            c.name.clone(),
            c.symbol.clone(),
            format!("{:.3}", c.estimate),
            format!("{:.3}", c.lcl),
            format!("{:.3}", c.ucl),
            format!("{:.3}", c.se),
            format!("{:.3}", c.hotelling_t),
            p_display(c.p_value),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| cells.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            let pad = widths[j] - cell.chars().count();
            if j < 2 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
            line.push_str("  ");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "\nLCL, UCL, SE, and p are corrected for small sample size. \
         Degrees of freedom for the Hotelling t test: ({}, {}).",
        report.df.0, report.df.1
    );
    let _ = writeln!(
        out,
        "n = {} individuals, {} available decision points, q = {}.",
        report.n_individuals, report.n_available, report.q
    );
    out
}

/// Full-precision CSV, one row per coefficient.
pub fn render_csv(report: &FitReport) -> String {
    let mut out = String::from("variable,symbol,estimate,lcl,ucl,se,hotelling_t,p_value,df1,df2\n");
    for c in &report.coefficients {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.name, c.symbol, c.estimate, c.lcl, c.ucl, c.se, c.hotelling_t, c.p_value, report.df.0, report.df.1
        );
    }
    out
}

pub fn render_json(report: &FitReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}
