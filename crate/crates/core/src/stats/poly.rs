//! Total-degree multivariate polynomial least squares in standardised
//! coordinates.

use nalgebra::{DMatrix, DVector};

use super::StatsError;

/// Exponent tuples of every monomial of total degree <= `degree` in `dims`
/// variables, ordered by total degree, then lexicographically descending.
pub fn exponents(dims: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut current = vec![0u32; dims];
        compositions(total as u32, 0, &mut current, &mut out);
    }
    out
}

fn compositions(remaining: u32, axis: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if axis == current.len() - 1 {
        current[axis] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[axis] = e;
        compositions(remaining - e, axis + 1, current, out);
    }
}

pub(crate) fn monomial(z: &[f64], exps: &[u32]) -> f64 {
    z.iter().zip(exps).map(|(v, &e)| v.powi(e as i32)).product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit<const D: usize> {
    pub degree: usize,
    pub means: [f64; D],
    pub scales: [f64; D],
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    pub domain: [[f64; 2]; D],
    pub n_samples: usize,
}

impl<const D: usize> PolyFit<D> {
    pub fn standardise(&self, point: &[f64; D]) -> [f64; D] {
        let mut z = [0.0; D];
        for k in 0..D {
            z[k] = (point[k] - self.means[k]) / self.scales[k];
        }
        z
    }

    pub fn evaluate(&self, point: &[f64; D]) -> f64 {
        let z = self.standardise(point);
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| c * monomial(&z, e))
            .sum()
    }
}

/// Fits `values` over `points`; `names` label the axes in error messages.
pub fn fit<const D: usize>(
    names: [&str; D],
    points: &[[f64; D]],
    values: &[f64],
    degree: usize,
) -> Result<PolyFit<D>, StatsError> {
    if points.len() != values.len() {
        return Err(StatsError::Invalid(
            "points and values differ in length".into(),
        ));
    }
    let exps = exponents(D, degree);
    let n = points.len();
    let ncoef = exps.len();
    if n < ncoef {
        return Err(StatsError::RankDeficient(format!(
            "{n} samples for {ncoef} coefficients"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::Invalid("non-finite response value".into()));
    }

    let mut means = [0.0; D];
    let mut scales = [1.0; D];
    let mut domain = [[f64::INFINITY, f64::NEG_INFINITY]; D];
    for axis in 0..D {
        let mean = points.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n as f64;
        means[axis] = mean;
        if degree > 0 {
            if !(var > 0.0) {
                return Err(StatsError::RankDeficient(format!(
                    "{} has zero variance",
                    names[axis]
                )));
            }
            scales[axis] = var.sqrt();
        }
        for p in points {
            domain[axis][0] = domain[axis][0].min(p[axis]);
            domain[axis][1] = domain[axis][1].max(p[axis]);
        }
    }

    let mut design = DMatrix::<f64>::zeros(n, ncoef);
    for (i, p) in points.iter().enumerate() {
        let mut z = [0.0; D];
        for k in 0..D {
            z[k] = (p[k] - means[k]) / scales[k];
        }
        for (j, e) in exps.iter().enumerate() {
            design[(i, j)] = monomial(&z, e);
        }
    }
    let y = DVector::from_column_slice(values);
    let normal = design.transpose() * &design;
    let rhs = design.transpose() * &y;

    let eig = normal.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
            (lo.min(e), hi.max(e))
        });
    if !(lo > hi * 1e-13) {
        return Err(StatsError::RankDeficient(format!(
            "normal matrix condition {:.3e}",
            hi / lo.max(f64::MIN_POSITIVE)
        )));
    }
    let coef = normal
        .cholesky()
        .ok_or_else(|| StatsError::RankDeficient("normal matrix not positive definite".into()))?
        .solve(&rhs);
    let residual = &design * &coef - &y;

    Ok(PolyFit {
        degree,
        means,
        scales,
        exponents: exps,
        coefficients: coef.iter().copied().collect(),
        residual_rms: (residual.norm_squared() / n as f64).sqrt(),
        domain,
        n_samples: n,
    })
}
