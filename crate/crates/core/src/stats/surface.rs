use serde::{Deserialize, Serialize};

use super::{poly, StatsError, Variable};
use crate::montecarlo::ScenarioRecord;

/// Relative slack allowed when testing a point against the fitted domain, so
/// grid points generated from the box edges are never rejected by rounding.
const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Rul,
    LnRul,
}

impl Response {
    pub fn of(&self, rul_hours: f64) -> f64 {
        match self {
            Response::Rul => rul_hours,
            Response::LnRul => rul_hours.ln(),
        }
    }

    /// Maps a surface value back to hours.
    pub fn to_hours(&self, value: f64) -> f64 {
        match self {
            Response::Rul => value,
            Response::LnRul => value.exp(),
        }
    }
}

/// Total-degree bivariate polynomial fitted by least squares in
/// standardised coordinates.
///
/// Monomials are ordered by total degree, then by decreasing power of the
/// first input: `1, u, v, u², uv, v², ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSurface {
    pub inputs: [Variable; 2],
    pub response: Response,
    pub degree: usize,
    pub means: [f64; 2],
    pub scales: [f64; 2],
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    /// `[[lo0, hi0], [lo1, hi1]]` of the fitted inputs.
    pub domain: [[f64; 2]; 2],
    pub n_samples: usize,
}

pub fn coefficient_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Least-squares fit of `values` over `points` via the normal equations.
pub fn fit_points(
    inputs: [Variable; 2],
    response: Response,
    points: &[[f64; 2]],
    values: &[f64],
    degree: usize,
) -> Result<FittedSurface, StatsError> {
    if inputs[0] == inputs[1] {
        return Err(StatsError::Invalid(
            "surface inputs must be distinct".into(),
        ));
    }
    let fit = poly::fit([inputs[0].name(), inputs[1].name()], points, values, degree)?;
    Ok(FittedSurface {
        inputs,
        response,
        degree,
        means: fit.means,
        scales: fit.scales,
        coefficients: fit.coefficients,
        residual_rms: fit.residual_rms,
        domain: fit.domain,
        n_samples: fit.n_samples,
    })
}

/// Restricts a trivariate fit to `first = value`, giving a surface over the
/// remaining two axes. The residual of the parent fit is carried over and
/// the domain is the parent's domain on those axes.
pub fn slice_first_axis(
    fit: &poly::PolyFit<3>,
    value: f64,
    inputs: [Variable; 2],
    response: Response,
) -> FittedSurface {
    let z0 = (value - fit.means[0]) / fit.scales[0];
    let exps2 = poly::exponents(2, fit.degree);
    let mut coefficients = vec![0.0; exps2.len()];
    for (e, c) in fit.exponents.iter().zip(&fit.coefficients) {
        let k = exps2
            .iter()
            .position(|e2| e2[0] == e[1] && e2[1] == e[2])
            .expect("sub-monomial exists at the same degree");
        coefficients[k] += c * z0.powi(e[0] as i32);
    }
    FittedSurface {
        inputs,
        response,
        degree: fit.degree,
        means: [fit.means[1], fit.means[2]],
        scales: [fit.scales[1], fit.scales[2]],
        coefficients,
        residual_rms: fit.residual_rms,
        domain: [fit.domain[1], fit.domain[2]],
        n_samples: fit.n_samples,
    }
}

/// Fits `response(rul_hours)` over two record features.
pub fn fit_surface(
    records: &[ScenarioRecord],
    inputs: [Variable; 2],
    response: Response,
    degree: usize,
) -> Result<FittedSurface, StatsError> {
    let points: Vec<[f64; 2]> = records
        .iter()
        .map(|r| [inputs[0].of(r), inputs[1].of(r)])
        .collect();
    let values: Vec<f64> = records.iter().map(|r| response.of(r.rul_hours)).collect();
    fit_points(inputs, response, &points, &values, degree)
}

impl FittedSurface {
    pub fn contains(&self, point: [f64; 2]) -> bool {
        (0..2).all(|axis| {
            let [lo, hi] = self.domain[axis];
            let slack = DOMAIN_SLACK * (hi - lo).abs().max(lo.abs().max(hi.abs())).max(1.0);
            point[axis] >= lo - slack && point[axis] <= hi + slack
        })
    }

    /// Evaluates the polynomial in the response's own units (hours or
    /// ln-hours).
    pub fn evaluate(&self, point: [f64; 2]) -> Result<f64, StatsError> {
        if !self.contains(point) {
            return Err(StatsError::OutOfDomain { point });
        }
        Ok(self.evaluate_unchecked(point))
    }

    pub fn evaluate_unchecked(&self, point: [f64; 2]) -> f64 {
        let z = [
            (point[0] - self.means[0]) / self.scales[0],
            (point[1] - self.means[1]) / self.scales[1],
        ];
        poly::exponents(2, self.degree)
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| c * poly::monomial(&z, e))
            .sum()
    }

    /// Predicted RUL in hours.
    pub fn predict_hours(&self, point: [f64; 2]) -> Result<f64, StatsError> {
        Ok(self.response.to_hours(self.evaluate(point)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surface serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, StatsError> {
        let s: Self = serde_json::from_str(text).map_err(|e| StatsError::Invalid(e.to_string()))?;
        if s.coefficients.len() != coefficient_count(s.degree) {
            return Err(StatsError::Invalid(format!(
                "degree {} needs {} coefficients, found {}",
                s.degree,
                coefficient_count(s.degree),
                s.coefficients.len()
            )));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INPUTS: [Variable; 2] = [Variable::ICharge, Variable::IDischarge];

    fn grid() -> Vec<[f64; 2]> {
        let mut pts = Vec::new();
        for i in 0..9 {
            for j in 0..7 {
                pts.push([2.3 + 0.3 * i as f64, 2.3 + 1.5 * j as f64]);
            }
        }
        pts
    }

    fn quad(p: [f64; 2]) -> f64 {
        5.0 - 0.3 * p[0] + 0.07 * p[1] + 0.02 * p[0] * p[0] - 0.011 * p[0] * p[1]
            + 0.004 * p[1] * p[1]
    }

    #[test]
    fn coefficient_counts() {
        assert_eq!(coefficient_count(0), 1);
        assert_eq!(coefficient_count(2), 6);
        assert_eq!(coefficient_count(3), 10);
    }

    #[test]
    fn exact_quadratic_is_recovered() {
        let pts = grid();
        let vals: Vec<f64> = pts.iter().map(|&p| quad(p)).collect();
        let s = fit_points(INPUTS, Response::LnRul, &pts, &vals, 2).unwrap();
        assert!(s.residual_rms < 1e-9, "rms {}", s.residual_rms);
        for (p, v) in pts.iter().zip(&vals) {
            assert!((s.evaluate(*p).unwrap() - v).abs() < 1e-9);
        }
        assert!((s.evaluate([3.33, 7.7]).unwrap() - quad([3.33, 7.7])).abs() < 1e-9);
    }

    #[test]
    fn degree_zero_is_the_mean() {
        let pts = grid();
        let vals: Vec<f64> = pts.iter().map(|&p| quad(p)).collect();
        let s = fit_points(INPUTS, Response::Rul, &pts, &vals, 0).unwrap();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((s.coefficients[0] - mean).abs() < 1e-12);
        assert_eq!(
            s.evaluate([2.3, 2.3]).unwrap(),
            s.evaluate([4.7, 11.3]).unwrap()
        );
    }

    #[test]
    fn residual_non_increasing_in_degree() {
        let pts = grid();
        let vals: Vec<f64> = pts
            .iter()
            .map(|p| (p[0] * 0.7).sin() + (p[1] / 3.0).exp())
            .collect();
        let mut prev = f64::INFINITY;
        for d in 0..=4 {
            let s = fit_points(INPUTS, Response::Rul, &pts, &vals, d).unwrap();
            assert!(s.residual_rms <= prev + 1e-12);
            prev = s.residual_rms;
        }
    }

    #[test]
    fn rank_deficiency_and_domain() {
        let pts: Vec<[f64; 2]> = (0..10).map(|k| [1.0, k as f64]).collect();
        let vals = vec![1.0; 10];
        assert!(matches!(
            fit_points(INPUTS, Response::Rul, &pts, &vals, 1),
            Err(StatsError::RankDeficient(_))
        ));
        // collinear inputs with a cross term
        let pts: Vec<[f64; 2]> = (0..10).map(|k| [k as f64, 2.0 * k as f64]).collect();
        assert!(matches!(
            fit_points(INPUTS, Response::Rul, &pts, &vals, 2),
            Err(StatsError::RankDeficient(_))
        ));
        let pts = grid();
        let vals: Vec<f64> = pts.iter().map(|&p| quad(p)).collect();
        let s = fit_points(INPUTS, Response::Rul, &pts, &vals, 2).unwrap();
        assert!(matches!(
            s.evaluate([1.0, 5.0]),
            Err(StatsError::OutOfDomain { .. })
        ));
        assert!(s.evaluate([2.3, 11.3]).is_ok());
    }

    #[test]
    fn slice_matches_parent_fit() {
        let f = |p: &[f64; 3]| 0.3 * p[0] * p[1] - p[2] * p[2] * 0.1 + p[0] * p[0] * p[2] * 0.01;
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    pts.push([
                        3.5 + 0.04 * i as f64,
                        2.3 + 0.46 * j as f64,
                        2.3 + 1.8 * k as f64,
                    ]);
                }
            }
        }
        let vals: Vec<f64> = pts.iter().map(f).collect();
        let fit3 = poly::fit(["v", "a", "b"], &pts, &vals, 3).unwrap();
        let s = slice_first_axis(&fit3, 3.61, INPUTS, Response::LnRul);
        for p in [[2.3, 2.3], [3.0, 7.0], [4.6, 11.3]] {
            let direct = fit3.evaluate(&[3.61, p[0], p[1]]);
            assert!((s.evaluate(p).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn json_round_trip_evaluates_identically() {
        let pts = grid();
        let vals: Vec<f64> = pts.iter().map(|&p| quad(p)).collect();
        let s = fit_points(INPUTS, Response::LnRul, &pts, &vals, 2).unwrap();
        let back = FittedSurface::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        for p in pts {
            assert_eq!(
                back.evaluate(p).unwrap().to_bits(),
                s.evaluate(p).unwrap().to_bits()
            );
        }
    }
}
