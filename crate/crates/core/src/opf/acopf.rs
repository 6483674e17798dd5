//! AC OPF in polar voltage coordinates as an [`Nlp`].
//!
//! Variables, all per-unit: `[Va; Vm; Pg; Qg; Pb]` for buses, in-service
//! generators and batteries. Equalities are nodal P and Q balance plus
//! fixed variables (the reference angle, and any variable whose bounds
//! coincide). Inequalities are squared apparent-power flow limits at both
//! branch ends and the remaining finite variable bounds.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::ipm::{ConstraintEval, Nlp};
use crate::case::{CostModel, NetworkCase};
use crate::powerflow::{ds_dv, Admittance};

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub nb: usize,
    pub ng: usize,
    pub nbat: usize,
}

impl Layout {
    pub fn va(&self) -> usize {
        0
    }
    pub fn vm(&self) -> usize {
        self.nb
    }
    pub fn pg(&self) -> usize {
        2 * self.nb
    }
    pub fn qg(&self) -> usize {
        2 * self.nb + self.ng
    }
    pub fn pb(&self) -> usize {
        2 * self.nb + 2 * self.ng
    }
    pub fn n(&self) -> usize {
        2 * self.nb + 2 * self.ng + self.nbat
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ineq {
    FlowFrom(usize),
    FlowTo(usize),
    Upper(usize),
    Lower(usize),
}

/// Second derivatives of `lam' S` with respect to `[Va; Vm]`, where `S` is
/// the vector of bus injections. Blocks returned as `(aa, av, va, vv)`.
pub fn d2sbus_dv2(
    ybus: &DMatrix<Complex64>,
    v: &[Complex64],
    lam: &[Complex64],
) -> [DMatrix<Complex64>; 4] {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    let ibus = ybus * &vv;
    // C = diag(lam V) conj(Ybus diag(V))
    let c = DMatrix::from_fn(n, n, |i, k| lam[i] * v[i] * (ybus[(i, k)] * v[k]).conj());
    // D = Ybus^H diag(V)
    let d = DMatrix::from_fn(n, n, |i, k| ybus[(k, i)].conj() * v[k]);
    let dlam: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|k| d[(i, k)] * lam[k]).sum())
        .collect();
    let e = DMatrix::from_fn(n, n, |i, k| {
        let mut t = d[(i, k)] * lam[k];
        if i == k {
            t -= dlam[i];
        }
        v[i].conj() * t
    });
    let f = DMatrix::from_fn(n, n, |i, k| {
        let mut t = c[(i, k)];
        if i == k {
            t -= lam[i] * v[i] * ibus[i].conj();
        }
        t
    });
    let inv: Vec<f64> = v.iter().map(|x| 1.0 / x.norm()).collect();
    let gaa = &e + &f;
    let gva = DMatrix::from_fn(n, n, |i, k| J * inv[i] * (e[(i, k)] - f[(i, k)]));
    let gav = gva.transpose();
    let gvv = DMatrix::from_fn(n, n, |i, k| inv[i] * (c[(i, k)] + c[(k, i)]) * inv[k]);
    [gaa, gav, gva, gvv]
}

/// Branch-end power flows and their derivatives with respect to `Va`, `Vm`.
pub fn dsbr_dv(
    ybr: &DMatrix<Complex64>,
    ends: &[usize],
    v: &[Complex64],
) -> (Vec<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>) {
    let (nl, nb) = ybr.shape();
    let vv = DVector::from_column_slice(v);
    let ibr = ybr * &vv;
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    let s: Vec<Complex64> = (0..nl).map(|l| v[ends[l]] * ibr[l].conj()).collect();
    let mut dva = DMatrix::zeros(nl, nb);
    let mut dvm = DMatrix::zeros(nl, nb);
    for l in 0..nl {
        let vf = v[ends[l]];
        for k in 0..nb {
            let y = ybr[(l, k)];
            if y != Complex64::new(0.0, 0.0) {
                dva[(l, k)] = -J * vf * (y * v[k]).conj();
                dvm[(l, k)] = vf * (y * vnorm[k]).conj();
            }
        }
        let f = ends[l];
        dva[(l, f)] += J * ibr[l].conj() * v[f];
        dvm[(l, f)] += ibr[l].conj() * vnorm[f];
    }
    (s, dva, dvm)
}

/// Second derivatives of `lam' S_br` with respect to `[Va; Vm]`.
fn d2sbr_dv2(
    ybr: &DMatrix<Complex64>,
    ends: &[usize],
    v: &[Complex64],
    lam: &[Complex64],
) -> [DMatrix<Complex64>; 4] {
    let (nl, nb) = ybr.shape();
    // A = Ybr^H diag(lam) Cbr
    let mut a = DMatrix::<Complex64>::zeros(nb, nb);
    for l in 0..nl {
        if lam[l] == Complex64::new(0.0, 0.0) {
            continue;
        }
        for i in 0..nb {
            a[(i, ends[l])] += ybr[(l, i)].conj() * lam[l];
        }
    }
    let b = DMatrix::from_fn(nb, nb, |i, k| v[i].conj() * a[(i, k)] * v[k]);
    let av: Vec<Complex64> = (0..nb)
        .map(|i| (0..nb).map(|k| a[(i, k)] * v[k]).sum())
        .collect();
    let atv: Vec<Complex64> = (0..nb)
        .map(|i| (0..nb).map(|k| a[(k, i)] * v[k].conj()).sum())
        .collect();
    let d: Vec<Complex64> = (0..nb).map(|i| av[i] * v[i].conj()).collect();
    let e: Vec<Complex64> = (0..nb).map(|i| atv[i] * v[i]).collect();
    let f = &b + b.transpose();
    let inv: Vec<f64> = v.iter().map(|x| 1.0 / x.norm()).collect();
    let haa = DMatrix::from_fn(nb, nb, |i, k| {
        let mut t = f[(i, k)];
        if i == k {
            t -= d[i] + e[i];
        }
        t
    });
    let hva = DMatrix::from_fn(nb, nb, |i, k| {
        let mut t = b[(i, k)] - b[(k, i)];
        if i == k {
            t += e[i] - d[i];
        }
        J * inv[i] * t
    });
    let hav = hva.transpose();
    let hvv = DMatrix::from_fn(nb, nb, |i, k| inv[i] * f[(i, k)] * inv[k]);
    [haa, hav, hva, hvv]
}

/// `B^T diag(w) conj(C)`, real part.
fn weighted_re(b: &DMatrix<Complex64>, w: &[f64], c: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (nl, nb) = b.shape();
    let mut out = DMatrix::zeros(nb, nb);
    for l in 0..nl {
        if w[l] == 0.0 {
            continue;
        }
        for i in 0..nb {
            let bi = b[(l, i)];
            if bi == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..nb {
                out[(i, k)] += w[l] * (bi * c[(l, k)].conj()).re;
            }
        }
    }
    out
}

pub struct AcOpf<'a> {
    pub case: &'a NetworkCase,
    pub adm: &'a Admittance,
    pub layout: Layout,
    /// Case generator index of each generator variable.
    pub gens: Vec<usize>,
    /// Bus position of each generator and battery variable.
    pub gen_bus: Vec<usize>,
    pub bat_bus: Vec<usize>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// Branches with a finite thermal limit, with the limit in p.u.
    pub limited: Vec<(usize, f64)>,
    pub ineqs: Vec<Ineq>,
    pub fixed: Vec<usize>,
}

impl<'a> AcOpf<'a> {
    pub fn new(
        case: &'a NetworkCase,
        adm: &'a Admittance,
        layout: Layout,
        gens: Vec<usize>,
        x_min: Vec<f64>,
        x_max: Vec<f64>,
    ) -> Self {
        let index = case.bus_index();
        let gen_bus = gens
            .iter()
            .map(|&k| index[&case.generators[k].bus])
            .collect();
        let bat_bus = case.batteries.iter().map(|d| index[&d.bus]).collect();
        let limited: Vec<(usize, f64)> = (0..case.branches.len())
            .filter(|&k| case.branches[k].in_service)
            .filter_map(|k| case.rate_a_pu(k).map(|r| (k, r)))
            .collect();
        let mut ineqs: Vec<Ineq> = limited.iter().map(|&(k, _)| Ineq::FlowFrom(k)).collect();
        ineqs.extend(limited.iter().map(|&(k, _)| Ineq::FlowTo(k)));
        let mut fixed = Vec::new();
        for k in 0..layout.n() {
            if x_min[k] == x_max[k] {
                fixed.push(k);
            }
        }
        for k in 0..layout.n() {
            if x_min[k] != x_max[k] && x_max[k].is_finite() {
                ineqs.push(Ineq::Upper(k));
            }
        }
        for k in 0..layout.n() {
            if x_min[k] != x_max[k] && x_min[k].is_finite() {
                ineqs.push(Ineq::Lower(k));
            }
        }
        Self {
            case,
            adm,
            layout,
            gens,
            gen_bus,
            bat_bus,
            x_min,
            x_max,
            limited,
            ineqs,
            fixed,
        }
    }

    pub fn voltages(&self, x: &DVector<f64>) -> Vec<Complex64> {
        let l = self.layout;
        (0..l.nb)
            .map(|i| Complex64::from_polar(x[l.vm() + i], x[l.va() + i]))
            .collect()
    }

    fn sbus(&self, x: &DVector<f64>) -> Vec<Complex64> {
        let l = self.layout;
        let base = self.case.base_mva;
        let mut s: Vec<Complex64> = self
            .case
            .buses
            .iter()
            .map(|b| -Complex64::new(b.pd, b.qd) / base)
            .collect();
        for (j, &i) in self.gen_bus.iter().enumerate() {
            s[i] += Complex64::new(x[l.pg() + j], x[l.qg() + j]);
        }
        for (j, &i) in self.bat_bus.iter().enumerate() {
            s[i] += x[l.pb() + j];
        }
        s
    }

    fn flow_parts(
        &self,
        v: &[Complex64],
    ) -> [(Vec<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>); 2] {
        [
            dsbr_dv(&self.adm.yf, &self.adm.from, v),
            dsbr_dv(&self.adm.yt, &self.adm.to, v),
        ]
    }
}

impl Nlp for AcOpf<'_> {
    fn n_vars(&self) -> usize {
        self.layout.n()
    }

    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let l = self.layout;
        let base = self.case.base_mva;
        let mut f = 0.0;
        let mut df = DVector::zeros(l.n());
        for (j, &k) in self.gens.iter().enumerate() {
            let CostModel::Polynomial { coefficients } = &self.case.gencost[k].model else {
                unreachable!("checked when the problem is built")
            };
            let p = x[l.pg() + j] * base;
            let (val, d1) = coefficients
                .iter()
                .fold((0.0, 0.0), |(v, d), c| (v * p + c, d * p + v));
            f += val;
            df[l.pg() + j] = d1 * base;
        }
        (f, df)
    }

    fn constraints(&self, x: &DVector<f64>) -> ConstraintEval {
        let l = self.layout;
        let (nb, n) = (l.nb, l.n());
        let v = self.voltages(x);
        let sbus = self.sbus(x);
        let vv = DVector::from_column_slice(&v);
        let ibus = &self.adm.ybus * &vv;
        let neq = 2 * nb + self.fixed.len();
        let mut g = DVector::zeros(neq);
        let mut dg = DMatrix::zeros(neq, n);
        let (dva, dvm) = ds_dv(&self.adm.ybus, &v);
        for i in 0..nb {
            let mis = v[i] * ibus[i].conj() - sbus[i];
            g[i] = mis.re;
            g[nb + i] = mis.im;
            for k in 0..nb {
                dg[(i, l.va() + k)] = dva[(i, k)].re;
                dg[(i, l.vm() + k)] = dvm[(i, k)].re;
                dg[(nb + i, l.va() + k)] = dva[(i, k)].im;
                dg[(nb + i, l.vm() + k)] = dvm[(i, k)].im;
            }
        }
        for (j, &i) in self.gen_bus.iter().enumerate() {
            dg[(i, l.pg() + j)] = -1.0;
            dg[(nb + i, l.qg() + j)] = -1.0;
        }
        for (j, &i) in self.bat_bus.iter().enumerate() {
            dg[(i, l.pb() + j)] = -1.0;
        }
        for (r, &k) in self.fixed.iter().enumerate() {
            g[2 * nb + r] = x[k] - self.x_min[k];
            dg[(2 * nb + r, k)] = 1.0;
        }

        let niq = self.ineqs.len();
        let mut h = DVector::zeros(niq);
        let mut dh = DMatrix::zeros(niq, n);
        let nlim = self.limited.len();
        if nlim > 0 {
            let parts = self.flow_parts(&v);
            for (side, (s, sa, sm)) in parts.iter().enumerate() {
                for (r, &(k, rate)) in self.limited.iter().enumerate() {
                    let row = side * nlim + r;
                    h[row] = s[k].norm_sqr() - rate * rate;
                    for b in 0..nb {
                        dh[(row, l.va() + b)] =
                            2.0 * (s[k].re * sa[(k, b)].re + s[k].im * sa[(k, b)].im);
                        dh[(row, l.vm() + b)] =
                            2.0 * (s[k].re * sm[(k, b)].re + s[k].im * sm[(k, b)].im);
                    }
                }
            }
        }
        for (row, q) in self.ineqs.iter().enumerate().skip(2 * nlim) {
            match *q {
                Ineq::Upper(k) => {
                    h[row] = x[k] - self.x_max[k];
                    dh[(row, k)] = 1.0;
                }
                Ineq::Lower(k) => {
                    h[row] = self.x_min[k] - x[k];
                    dh[(row, k)] = -1.0;
                }
                _ => unreachable!(),
            }
        }
        ConstraintEval { g, dg, h, dh }
    }

    fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DMatrix<f64> {
        let l = self.layout;
        let nb = l.nb;
        let base = self.case.base_mva;
        let mut hess = DMatrix::zeros(l.n(), l.n());
        for (j, &k) in self.gens.iter().enumerate() {
            let CostModel::Polynomial { coefficients } = &self.case.gencost[k].model else {
                unreachable!()
            };
            let p = x[l.pg() + j] * base;
            let (_, _, d2) = coefficients.iter().fold((0.0, 0.0, 0.0), |(v, d, dd), c| {
                (v * p + c, d * p + v, dd * p + 2.0 * d)
            });
            hess[(l.pg() + j, l.pg() + j)] = d2 * base * base;
        }

        let v = self.voltages(x);
        let lp: Vec<Complex64> = (0..nb).map(|i| Complex64::new(lam[i], 0.0)).collect();
        let lq: Vec<Complex64> = (0..nb).map(|i| Complex64::new(lam[nb + i], 0.0)).collect();
        let gp = d2sbus_dv2(&self.adm.ybus, &v, &lp);
        let gq = d2sbus_dv2(&self.adm.ybus, &v, &lq);
        let mut hv = DMatrix::zeros(2 * nb, 2 * nb);
        for (blk, (r0, c0)) in [(0, 0), (0, nb), (nb, 0), (nb, nb)].into_iter().enumerate() {
            for i in 0..nb {
                for k in 0..nb {
                    hv[(r0 + i, c0 + k)] = gp[blk][(i, k)].re + gq[blk][(i, k)].im;
                }
            }
        }

        let nlim = self.limited.len();
        if nlim > 0 {
            let parts = self.flow_parts(&v);
            let ybrs = [(&self.adm.yf, &self.adm.from), (&self.adm.yt, &self.adm.to)];
            for (side, (s, sa, sm)) in parts.iter().enumerate() {
                let nl = s.len();
                let mut w = vec![0.0; nl];
                for (r, &(k, _)) in self.limited.iter().enumerate() {
                    w[k] = mu[side * nlim + r];
                }
                if w.iter().all(|&m| m == 0.0) {
                    continue;
                }
                let lam_c: Vec<Complex64> = (0..nl).map(|k| s[k].conj() * w[k]).collect();
                let (ybr, ends) = ybrs[side];
                let h2 = d2sbr_dv2(ybr, ends, &v, &lam_c);
                let outer = [
                    weighted_re(sa, &w, sa),
                    weighted_re(sa, &w, sm),
                    weighted_re(sm, &w, sa),
                    weighted_re(sm, &w, sm),
                ];
                for (blk, (r0, c0)) in [(0, 0), (0, nb), (nb, 0), (nb, nb)].into_iter().enumerate()
                {
                    for i in 0..nb {
                        for k in 0..nb {
                            hv[(r0 + i, c0 + k)] += 2.0 * (h2[blk][(i, k)].re + outer[blk][(i, k)]);
                        }
                    }
                }
            }
        }
        let mut top = hess.view_mut((0, 0), (2 * nb, 2 * nb));
        top += &hv;
        hess
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerflow::build_ybus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const THREE_BUS: &str = "mpc.baseMVA = 100;\n\
        mpc.bus = [1 3 0 0 0 0 1 1 0 230 1 1.1 0.9; 2 2 20 5 0 0.1 1 1 0 230 1 1.1 0.9; 3 1 90 30 0.02 0 1 1 0 230 1 1.1 0.9];\n\
        mpc.gen = [1 0 0 100 -100 1 100 1 200 0; 2 0 0 100 -100 1 100 1 200 0];\n\
        mpc.branch = [1 2 0.01 0.1 0.02 50 0 0 0 0 1 -360 360; 2 3 0.02 0.15 0.01 80 0 0 0.98 3 1 -360 360; 1 3 0.015 0.12 0.03 60 0 0 0 0 1 -360 360];\n\
        mpc.gencost = [2 0 0 3 0.02 10 5; 2 0 0 3 0.01 20 0];\n";

    fn lagrangian_grad(
        p: &AcOpf,
        x: &DVector<f64>,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DVector<f64> {
        let (_, df) = p.objective(x);
        let c = p.constraints(x);
        df + c.dg.tr_mul(lam) + c.dh.tr_mul(mu)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let case = NetworkCase::parse_matpower(THREE_BUS).unwrap();
        let adm = build_ybus(&case);
        let layout = Layout {
            nb: 3,
            ng: 2,
            nbat: 0,
        };
        let n = layout.n();
        let p = AcOpf::new(
            &case,
            &adm,
            layout,
            vec![0, 1],
            vec![-10.0; n],
            vec![10.0; n],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x = DVector::from_fn(n, |k, _| {
                if k < 3 {
                    rng.gen_range(-0.3..0.3)
                } else if k < 6 {
                    rng.gen_range(0.9..1.1)
                } else {
                    rng.gen_range(0.0..1.5)
                }
            });
            let c = p.constraints(&x);
            let lam = DVector::from_fn(c.g.len(), |_, _| rng.gen_range(-50.0..50.0));
            let mu = DVector::from_fn(c.h.len(), |_, _| rng.gen_range(0.0..20.0));
            let step = 1e-6;
            let mut num_dg = DMatrix::zeros(c.g.len(), n);
            let mut num_dh = DMatrix::zeros(c.h.len(), n);
            let mut num_df = DVector::zeros(n);
            let mut num_hess = DMatrix::zeros(n, n);
            for k in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += step;
                xm[k] -= step;
                let (cp, cm) = (p.constraints(&xp), p.constraints(&xm));
                num_dg.set_column(k, &((cp.g - cm.g) / (2.0 * step)));
                num_dh.set_column(k, &((cp.h - cm.h) / (2.0 * step)));
                num_df[k] = (p.objective(&xp).0 - p.objective(&xm).0) / (2.0 * step);
                let gp = lagrangian_grad(&p, &xp, &lam, &mu);
                let gm = lagrangian_grad(&p, &xm, &lam, &mu);
                num_hess.set_column(k, &((gp - gm) / (2.0 * step)));
            }
            let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax().max(1.0);
            assert!(rel(&c.dg, &num_dg) < 1e-6, "dg {}", rel(&c.dg, &num_dg));
            assert!(rel(&c.dh, &num_dh) < 1e-6, "dh {}", rel(&c.dh, &num_dh));
            let (_, df) = p.objective(&x);
            assert!((df - num_df).amax() < 1e-4);
            let hess = p.lagrangian_hessian(&x, &lam, &mu);
            assert!(
                rel(&hess, &num_hess) < 1e-6,
                "hessian {}",
                rel(&hess, &num_hess)
            );
        }
    }
}
