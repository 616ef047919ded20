use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    /// `α0`, `α1`, ..., `β0`, ...
    pub symbol: String,
    pub estimate: f64,
    pub lcl: f64,
    pub ucl: f64,
    pub se: f64,
    /// `(estimate / se)²`, referred to `F(1, df2)`.
    pub hotelling_t: f64,
    pub p_value: f64,
}

/// Interval half-width multiplier `√F_crit(level; 1, df2)`.
pub fn critical_value(level: f64, df2: usize) -> Result<f64> {
    check_level(level)?;
    let t = StudentsT::new(0.0, 1.0, df2 as f64).map_err(|e| Error::domain(e.to_string()))?;
    Ok(t.inverse_cdf(0.5 + level / 2.0))
}

/// Upper tail of `F(df1, df2)` at `stat`.
pub fn f_tail(stat: f64, df1: usize, df2: usize) -> Result<f64> {
    let f = FisherSnedecor::new(df1 as f64, df2 as f64).map_err(|e| Error::domain(e.to_string()))?;
    if stat <= 0.0 {
        return Ok(1.0);
    }
    Ok(f.sf(stat))
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("confidence level must lie in (0, 1), got {level}")))
    }
}

/// Per-coefficient Hotelling-t inference at the given standard error.
pub fn infer_one(
    name: &str,
    symbol: &str,
    estimate: f64,
    se: f64,
    df2: usize,
    level: f64,
) -> Result<CoefficientRow> {
    let crit = critical_value(level, df2)?;
    let hotelling_t = if se > 0.0 { (estimate / se).powi(2) } else { f64::INFINITY };
    let p_value = if estimate == 0.0 { 1.0 } else { f_tail(hotelling_t, 1, df2)? };
    Ok(CoefficientRow {
        name: name.to_string(),
        symbol: symbol.to_string(),
        estimate,
        lcl: estimate - crit * se,
        ucl: estimate + crit * se,
        se,
        hotelling_t,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_estimate() {
        let row = infer_one("b", "β0", 0.0, 0.3, 34, 0.95).unwrap();
        assert_eq!(row.hotelling_t, 0.0);
        assert_eq!(row.p_value, 1.0);
        assert!((row.lcl + row.ucl).abs() < 1e-15);
    }

    #[test]
    fn estimate_equal_to_se() {
        let row = infer_one("b", "β0", 0.2, 0.2, 34, 0.95).unwrap();
        assert!((row.hotelling_t - 1.0).abs() < 1e-15);
        let f = FisherSnedecor::new(1.0, 34.0).unwrap();
        assert!((row.p_value - (1.0 - f.cdf(1.0))).abs() < 1e-12);
    }

    #[test]
    fn critical_value_matches_t_quantile() {
        // t_{34, 0.975} = 2.032244509...
        assert!((critical_value(0.95, 34).unwrap() - 2.032_244_509).abs() < 1e-8);
        // 0.131 ± 2.032 * 0.067 gives (-0.006, 0.268).
        let row = infer_one("send", "β0", 0.131, 0.067, 34, 0.95).unwrap();
        assert!((row.lcl - -0.006).abs() < 1e-3 && (row.ucl - 0.268).abs() < 1e-3);
        assert!((row.hotelling_t - 3.82).abs() < 0.01);
        assert!((row.p_value - 0.060).abs() < 0.002);
    }

    #[test]
    fn level_domain() {
        assert!(critical_value(1.0, 10).is_err());
        assert!(critical_value(0.0, 10).is_err());
    }
}
