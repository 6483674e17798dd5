//! Primal-dual interior-point method for smooth nonlinear programs
//!
//! ```text
//! min f(x)  s.t.  g(x) = 0,  h(x) <= 0
//! ```
//!
//! Inequalities get slacks `z > 0` with `h + z = 0`; each iteration takes a
//! Newton step on the perturbed KKT system, limited by a fraction-to-boundary
//! rule, then re-centres the barrier parameter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constraint values with Jacobians, one row per constraint.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub g: DVector<f64>,
    pub dg: DMatrix<f64>,
    pub h: DVector<f64>,
    pub dh: DMatrix<f64>,
}

pub trait Nlp {
    fn n_vars(&self) -> usize;
    /// Objective and gradient.
    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>);
    fn constraints(&self, x: &DVector<f64>) -> ConstraintEval;
    /// Hessian of `f + lam' g + mu' h`.
    fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmOptions {
    pub feas_tol: f64,
    pub grad_tol: f64,
    pub comp_tol: f64,
    pub cost_tol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor.
    pub xi: f64,
    /// Centering parameter.
    pub sigma: f64,
    pub z0: f64,
}

impl IpmOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            feas_tol: tol,
            grad_tol: tol,
            comp_tol: tol,
            cost_tol: tol,
            ..Self::default()
        }
    }
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            grad_tol: 1e-6,
            comp_tol: 1e-6,
            cost_tol: 1e-6,
            max_iter: 150,
            xi: 0.99995,
            sigma: 0.1,
            z0: 1.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpmError {
    #[error("KKT system is singular at iteration {iteration}")]
    SingularKkt { iteration: usize },
    #[error("numerical failure at iteration {iteration}")]
    Numerical { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    pub feascond: f64,
    pub gradcond: f64,
    pub compcond: f64,
    pub costcond: f64,
}

impl Conditions {
    fn met(&self, o: &IpmOptions) -> bool {
        self.feascond < o.feas_tol
            && self.gradcond < o.grad_tol
            && self.compcond < o.comp_tol
            && self.costcond < o.cost_tol
    }

    fn worst(&self) -> f64 {
        self.feascond.max(self.gradcond).max(self.compcond)
    }
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub lam: DVector<f64>,
    pub mu: DVector<f64>,
    pub h: DVector<f64>,
    pub g: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub conditions: Conditions,
}

fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[allow(clippy::too_many_arguments)]
fn conditions(
    x: &DVector<f64>,
    z: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
    c: &ConstraintEval,
    lx: &DVector<f64>,
    f: f64,
    f0: f64,
) -> Conditions {
    let maxh = c.h.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let feas = norm_inf(&c.g).max(maxh);
    Conditions {
        feascond: feas.max(0.0) / (1.0 + norm_inf(x).max(norm_inf(z))),
        gradcond: norm_inf(lx) / (1.0 + norm_inf(lam).max(norm_inf(mu))),
        compcond: z.dot(mu) / (1.0 + norm_inf(x)),
        costcond: (f - f0).abs() / (1.0 + f0.abs()),
    }
}

/// Runs the method from `x0`. Hitting the iteration cap is not an error:
/// the best iterate seen is returned with `converged == false`.
pub fn solve<P: Nlp>(
    problem: &P,
    x0: DVector<f64>,
    opts: &IpmOptions,
) -> Result<IpmResult, IpmError> {
    let n = problem.n_vars();
    let mut x = x0;
    let (mut f, mut df) = problem.objective(&x);
    let mut c = problem.constraints(&x);
    let (neq, niq) = (c.g.len(), c.h.len());

    let mut gamma = 1.0;
    let mut lam = DVector::zeros(neq);
    let mut z = DVector::from_element(niq, opts.z0);
    let mut mu = DVector::from_element(niq, opts.z0);
    for k in 0..niq {
        if c.h[k] < -opts.z0 {
            z[k] = -c.h[k];
        }
        if gamma / z[k] > opts.z0 {
            mu[k] = gamma / z[k];
        }
    }

    let mut f0 = f;
    let mut lx = &df + c.dg.tr_mul(&lam) + c.dh.tr_mul(&mu);
    let mut cond = conditions(&x, &z, &lam, &mu, &c, &lx, f, f0);
    let snapshot = |x: &DVector<f64>,
                    f,
                    lam: &DVector<f64>,
                    mu: &DVector<f64>,
                    c: &ConstraintEval,
                    it,
                    cond| IpmResult {
        x: x.clone(),
        f,
        lam: lam.clone(),
        mu: mu.clone(),
        h: c.h.clone(),
        g: c.g.clone(),
        iterations: it,
        converged: false,
        conditions: cond,
    };
    let mut best = snapshot(&x, f, &lam, &mu, &c, 0, cond);
    if cond.met(opts) {
        best.converged = true;
        return Ok(best);
    }

    for it in 1..=opts.max_iter {
        let zinv = z.map(|v| 1.0 / v);
        let lxx = problem.lagrangian_hessian(&x, &lam, &mu);
        // dh' diag(mu/z) dh
        let mut scaled = c.dh.clone();
        for (k, mut row) in scaled.row_iter_mut().enumerate() {
            row *= mu[k] * zinv[k];
        }
        let m = lxx + c.dh.tr_mul(&scaled);
        let w = DVector::from_fn(niq, |k, _| (mu[k] * c.h[k] + gamma) * zinv[k]);
        let rhs_n = &lx + c.dh.tr_mul(&w);

        let mut kkt = DMatrix::zeros(n + neq, n + neq);
        kkt.view_mut((0, 0), (n, n)).copy_from(&m);
        kkt.view_mut((0, n), (n, neq)).copy_from(&c.dg.transpose());
        kkt.view_mut((n, 0), (neq, n)).copy_from(&c.dg);
        let mut rhs = DVector::zeros(n + neq);
        rhs.rows_mut(0, n).copy_from(&(-rhs_n));
        rhs.rows_mut(n, neq).copy_from(&(-&c.g));
        let sol = kkt
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(IpmError::SingularKkt { iteration: it })?;
        let dx = sol.rows(0, n).into_owned();
        let dlam = sol.rows(n, neq).into_owned();
        let dz = -&c.h - &z - &c.dh * &dx;
        let dmu = DVector::from_fn(niq, |k, _| -mu[k] + zinv[k] * (gamma - mu[k] * dz[k]));

        let step = |v: &DVector<f64>, dv: &DVector<f64>| {
            let mut a: f64 = 1.0;
            for k in 0..v.len() {
                if dv[k] < 0.0 {
                    a = a.min(opts.xi * v[k] / -dv[k]);
                }
            }
            a
        };
        let alphap = step(&z, &dz);
        let alphad = step(&mu, &dmu);
        x += alphap * dx;
        z += alphap * dz;
        lam += alphad * dlam;
        mu += alphad * dmu;
        if niq > 0 {
            gamma = opts.sigma * z.dot(&mu) / niq as f64;
        }

        (f, df) = problem.objective(&x);
        c = problem.constraints(&x);
        lx = &df + c.dg.tr_mul(&lam) + c.dh.tr_mul(&mu);
        cond = conditions(&x, &z, &lam, &mu, &c, &lx, f, f0);
        f0 = f;

        if !(f.is_finite() && x.iter().all(|v| v.is_finite()) && norm_inf(&x) < 1e10) {
            return Err(IpmError::Numerical { iteration: it });
        }
        if cond.met(opts) {
            let mut done = snapshot(&x, f, &lam, &mu, &c, it, cond);
            done.converged = true;
            return Ok(done);
        }
        if cond.worst() <= best.conditions.worst() {
            best = snapshot(&x, f, &lam, &mu, &c, it, cond);
        }
        best.iterations = it;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x0 - 1)^2 + (x1 - 2)^2  s.t.  x0 + x1 = 2,  x0^2 <= 0.09
    struct Toy;

    impl Nlp for Toy {
        fn n_vars(&self) -> usize {
            2
        }
        fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
            let f = (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2);
            (
                f,
                DVector::from_vec(vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] - 2.0)]),
            )
        }
        fn constraints(&self, x: &DVector<f64>) -> ConstraintEval {
            ConstraintEval {
                g: DVector::from_vec(vec![x[0] + x[1] - 2.0]),
                dg: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
                h: DVector::from_vec(vec![x[0] * x[0] - 0.09]),
                dh: DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 0.0]),
            }
        }
        fn lagrangian_hessian(
            &self,
            _x: &DVector<f64>,
            _lam: &DVector<f64>,
            mu: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[2.0 + 2.0 * mu[0], 0.0, 0.0, 2.0])
        }
    }

    #[test]
    fn toy_problem() {
        // reduced objective (x0 - 1)^2 + x0^2 wants x0 = 0.5; the inequality
        // stops it at 0.3 with multiplier 0.8 / (2 * 0.3)
        let r = solve(
            &Toy,
            DVector::from_vec(vec![0.0, 0.0]),
            &IpmOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 0.3).abs() < 1e-5, "{}", r.x);
        assert!((r.x[1] - 1.7).abs() < 1e-5);
        assert!((r.f - 0.58).abs() < 1e-5);
        assert!((r.mu[0] - 0.8 / 0.6).abs() < 1e-4);
        assert!((r.mu[0] * r.h[0]).abs() < 1e-5);
    }

    #[test]
    fn iteration_cap_flags_result() {
        let opts = IpmOptions {
            max_iter: 2,
            ..IpmOptions::default()
        };
        let r = solve(&Toy, DVector::from_vec(vec![0.0, 0.0]), &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }
}
