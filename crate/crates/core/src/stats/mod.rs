//! Correlation analysis and polynomial response surfaces over campaign data.

pub mod poly;
pub mod special;
mod surface;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montecarlo::ScenarioRecord;

pub use surface::{
    coefficient_count, fit_points, fit_surface, slice_first_axis, FittedSurface, Response,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("point {point:?} lies outside the fitted domain")]
    OutOfDomain { point: [f64; 2] },
    #[error("{0}")]
    Invalid(String),
}

/// Scalar features of a [`ScenarioRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    VMax,
    VMin,
    DeltaV,
    ICharge,
    IDischarge,
    SocMax,
    SocMin,
}

impl Variable {
    pub fn of(&self, r: &ScenarioRecord) -> f64 {
        match self {
            Variable::VMax => r.v_max,
            Variable::VMin => r.v_min,
            Variable::DeltaV => r.v_max - r.v_min,
            Variable::ICharge => r.limits.i_charge,
            Variable::IDischarge => r.limits.i_discharge,
            Variable::SocMax => r.limits.soc_max,
            Variable::SocMin => r.limits.soc_min,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variable::VMax => "v_max",
            Variable::VMin => "v_min",
            Variable::DeltaV => "delta_v",
            Variable::ICharge => "i_charge",
            Variable::IDischarge => "i_discharge",
            Variable::SocMax => "soc_max",
            Variable::SocMin => "soc_min",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            Variable::VMax,
            Variable::VMin,
            Variable::DeltaV,
            Variable::ICharge,
            Variable::IDischarge,
            Variable::SocMax,
            Variable::SocMin,
        ]
        .into_iter()
        .find(|v| v.name() == name)
    }
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Invalid(format!(
            "length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::DegenerateInput(format!("need n >= 3, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value for the null of zero correlation, via the t statistic
/// `r * sqrt((n - 2) / (1 - r^2))` with `n - 2` degrees of freedom.
pub fn p_value(r: f64, n: usize) -> Result<f64, StatsError> {
    if n < 3 {
        return Err(StatsError::DegenerateInput(format!("need n >= 3, got {n}")));
    }
    if !(r.abs() < 1.0) {
        return Err(StatsError::DegenerateInput(format!(
            "|r| must be below 1, got {r}"
        )));
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    Ok(special::student_t_two_sided(t, df))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub variable: String,
    pub pearson_r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Correlation of V_max, V_min and ΔV = V_max - V_min with RUL.
pub fn correlation_table(records: &[ScenarioRecord]) -> Result<Vec<CorrelationReport>, StatsError> {
    if records.len() < 3 {
        return Err(StatsError::DegenerateInput(format!(
            "need at least 3 records, got {}",
            records.len()
        )));
    }
    let rul: Vec<f64> = records.iter().map(|r| r.rul_hours).collect();
    [Variable::VMax, Variable::VMin, Variable::DeltaV]
        .iter()
        .map(|var| {
            let x: Vec<f64> = records.iter().map(|r| var.of(r)).collect();
            let r = pearson(&x, &rul).map_err(|e| match e {
                StatsError::DegenerateInput(msg) => {
                    StatsError::DegenerateInput(format!("{}: {msg}", var.name()))
                }
                other => other,
            })?;
            Ok(CorrelationReport {
                variable: var.name().to_string(),
                pearson_r: r,
                p_value: p_value(r, records.len())?,
                n: records.len(),
            })
        })
        .collect()
}

/// CSV with header `variable,r,p,n`, optionally preceded by a `# ...` line.
pub fn write_correlation_csv<W: Write>(
    reports: &[CorrelationReport],
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "variable,r,p,n")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{:e},{}",
            r.variable, r.pearson_r, r.p_value, r.n
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_linearity() {
        let x: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &up).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &down).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_correlation() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-14);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::DegenerateInput(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::DegenerateInput(_))
        ));
        assert!(matches!(
            p_value(1.0, 10),
            Err(StatsError::DegenerateInput(_))
        ));
        assert!(matches!(
            p_value(-1.0, 10),
            Err(StatsError::DegenerateInput(_))
        ));
    }

    #[test]
    fn p_value_anchors() {
        assert_eq!(p_value(0.0, 7).unwrap(), 1.0);
        assert_eq!(p_value(0.0, 500).unwrap(), 1.0);
        assert!((p_value(0.8, 4).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn p_value_monotone() {
        let mut prev = 1.0;
        for k in 1..20 {
            let p = p_value(k as f64 / 20.0, 30).unwrap();
            assert!(p < prev);
            prev = p;
        }
        let mut prev = 1.0;
        for n in 4..60 {
            let p = p_value(0.3, n).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }
}
