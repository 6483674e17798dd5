//! Newton-Raphson AC power flow in polar coordinates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{BusType, NetworkCase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error(
        "power flow did not converge in {iterations} iterations (mismatch {mismatch:.3e} p.u.)"
    )]
    Diverged { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
}

/// Bus admittance matrix plus the branch matrices mapping bus voltages to
/// from-end and to-end branch currents. Out-of-service branches have zero
/// rows in `yf` and `yt`.
#[derive(Debug, Clone)]
pub struct Admittance {
    pub ybus: DMatrix<Complex64>,
    pub yf: DMatrix<Complex64>,
    pub yt: DMatrix<Complex64>,
    /// Bus positions of each branch's ends.
    pub from: Vec<usize>,
    pub to: Vec<usize>,
}

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Standard pi model with off-nominal taps, phase shifters, line charging
/// and bus shunts.
pub fn build_ybus(case: &NetworkCase) -> Admittance {
    let index = case.bus_index();
    let nb = case.buses.len();
    let nl = case.branches.len();
    let mut ybus = DMatrix::zeros(nb, nb);
    let mut yf = DMatrix::zeros(nl, nb);
    let mut yt = DMatrix::zeros(nl, nb);
    let mut from = Vec::with_capacity(nl);
    let mut to = Vec::with_capacity(nl);
    for (k, br) in case.branches.iter().enumerate() {
        let (f, t) = (index[&br.from], index[&br.to]);
        from.push(f);
        to.push(t);
        if !br.in_service {
            continue;
        }
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let tap = Complex64::from_polar(br.tap_ratio(), br.shift.to_radians());
        let ytt = ys + J * (br.b / 2.0);
        let yff = ytt / tap.norm_sqr();
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        yf[(k, f)] = yff;
        yf[(k, t)] = yft;
        yt[(k, f)] = ytf;
        yt[(k, t)] = ytt;
        ybus[(f, f)] += yff;
        ybus[(f, t)] += yft;
        ybus[(t, f)] += ytf;
        ybus[(t, t)] += ytt;
    }
    for (i, b) in case.buses.iter().enumerate() {
        ybus[(i, i)] += Complex64::new(b.gs, b.bs) / case.base_mva;
    }
    Admittance {
        ybus,
        yf,
        yt,
        from,
        to,
    }
}

/// Buses whose voltage angle (`pvpq`) and magnitude (`pq`) are unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct BusSets {
    pub slack: usize,
    pub pv: Vec<usize>,
    pub pq: Vec<usize>,
}

impl BusSets {
    pub fn pvpq(&self) -> Vec<usize> {
        self.pv.iter().chain(&self.pq).copied().collect()
    }
}

/// A PV bus without an in-service generator is treated as PQ; isolated
/// buses are left out.
pub fn classify_buses(case: &NetworkCase) -> BusSets {
    let index = case.bus_index();
    let mut has_gen = vec![false; case.buses.len()];
    for g in case.generators.iter().filter(|g| g.in_service) {
        has_gen[index[&g.bus]] = true;
    }
    let mut sets = BusSets {
        slack: case.slack_index(),
        pv: Vec::new(),
        pq: Vec::new(),
    };
    for (i, b) in case.buses.iter().enumerate() {
        match b.bus_type {
            BusType::Slack | BusType::Isolated => {}
            BusType::Pv if has_gen[i] => sets.pv.push(i),
            _ => sets.pq.push(i),
        }
    }
    sets
}

/// Net complex injection per bus in p.u.: in-service generation plus
/// battery discharge minus load.
pub fn bus_injections(case: &NetworkCase) -> Vec<Complex64> {
    let index = case.bus_index();
    let mut s: Vec<Complex64> = case
        .buses
        .iter()
        .map(|b| -Complex64::new(b.pd, b.qd))
        .collect();
    for g in case.generators.iter().filter(|g| g.in_service) {
        s[index[&g.bus]] += Complex64::new(g.pg, g.qg);
    }
    for d in &case.batteries {
        if let Some(kw) = d.dispatch_kw {
            s[index[&d.bus]] += Complex64::new(kw / 1000.0, 0.0);
        }
    }
    s.iter().map(|v| v / case.base_mva).collect()
}

/// `V .* conj(Ybus V) - Sbus`.
pub fn power_mismatch(
    ybus: &DMatrix<Complex64>,
    v: &[Complex64],
    sbus: &[Complex64],
) -> Vec<Complex64> {
    let vv = DVector::from_column_slice(v);
    let i = ybus * &vv;
    v.iter()
        .zip(i.iter())
        .zip(sbus)
        .map(|((vk, ik), sk)| vk * ik.conj() - sk)
        .collect()
}

/// Partial derivatives of bus injections with respect to voltage angle and
/// magnitude: `(dS/dVa, dS/dVm)`.
pub fn ds_dv(
    ybus: &DMatrix<Complex64>,
    v: &[Complex64],
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    let ibus = ybus * &vv;
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    let mut dva = DMatrix::zeros(n, n);
    let mut dvm = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let y = ybus[(i, k)];
            if y == Complex64::new(0.0, 0.0) && i != k {
                continue;
            }
            // -j V_i conj(Y_ik V_k) off the diagonal
            dva[(i, k)] = -J * v[i] * (y * v[k]).conj();
            dvm[(i, k)] = v[i] * (y * vnorm[k]).conj();
        }
        dva[(i, i)] += J * v[i] * ibus[i].conj();
        dvm[(i, i)] += ibus[i].conj() * vnorm[i];
    }
    (dva, dvm)
}

/// Real mismatch vector `[Re(mis[pvpq]); Im(mis[pq])]`.
pub fn mismatch_vector(mis: &[Complex64], sets: &BusSets) -> DVector<f64> {
    let pvpq = sets.pvpq();
    DVector::from_iterator(
        pvpq.len() + sets.pq.len(),
        pvpq.iter()
            .map(|&i| mis[i].re)
            .chain(sets.pq.iter().map(|&i| mis[i].im)),
    )
}

/// Jacobian of [`mismatch_vector`] with respect to `[Va[pvpq]; Vm[pq]]`.
pub fn newton_jacobian(ybus: &DMatrix<Complex64>, v: &[Complex64], sets: &BusSets) -> DMatrix<f64> {
    let (dva, dvm) = ds_dv(ybus, v);
    let pvpq = sets.pvpq();
    let (npvpq, npq) = (pvpq.len(), sets.pq.len());
    let mut jac = DMatrix::zeros(npvpq + npq, npvpq + npq);
    for (r, &i) in pvpq.iter().enumerate() {
        for (c, &k) in pvpq.iter().enumerate() {
            jac[(r, c)] = dva[(i, k)].re;
        }
        for (c, &k) in sets.pq.iter().enumerate() {
            jac[(r, npvpq + c)] = dvm[(i, k)].re;
        }
    }
    for (r, &i) in sets.pq.iter().enumerate() {
        for (c, &k) in pvpq.iter().enumerate() {
            jac[(npvpq + r, c)] = dva[(i, k)].im;
        }
        for (c, &k) in sets.pq.iter().enumerate() {
            jac[(npvpq + r, npvpq + c)] = dvm[(i, k)].im;
        }
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Switch PV buses to PQ when a generator leaves its reactive range.
    pub enforce_q_limits: bool,
    /// Start from Vm = 1, Va = 0 instead of the case's voltages. Generator
    /// buses always start at their setpoint.
    pub flat_start: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
            enforce_q_limits: true,
            flat_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<usize>,
    pub vm: Vec<f64>,
    /// Radians, slack at zero.
    pub va: Vec<f64>,
    /// Branch flows in MW / MVAr at the from and to ends.
    pub pf: Vec<f64>,
    pub qf: Vec<f64>,
    pub pt: Vec<f64>,
    pub qt: Vec<f64>,
    pub gen_pg: Vec<f64>,
    pub gen_qg: Vec<f64>,
    /// Net generation at the slack bus, MW / MVAr.
    pub slack_p: f64,
    pub slack_q: f64,
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Generators held at a reactive limit.
    pub q_limited: Vec<usize>,
}

fn newton(
    adm: &Admittance,
    sbus: &[Complex64],
    v0: &[Complex64],
    sets: &BusSets,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<Complex64>, usize, f64), PfError> {
    let pvpq = sets.pvpq();
    let npvpq = pvpq.len();
    let mut va: Vec<f64> = v0.iter().map(|x| x.arg()).collect();
    let mut vm: Vec<f64> = v0.iter().map(|x| x.norm()).collect();
    let mut v = v0.to_vec();
    let mut f = mismatch_vector(&power_mismatch(&adm.ybus, &v, sbus), sets);
    let mut norm = f.amax();
    let mut it = 0;
    while norm > tol {
        if it == max_iter {
            return Err(PfError::Diverged {
                iterations: it,
                mismatch: norm,
            });
        }
        it += 1;
        let jac = newton_jacobian(&adm.ybus, &v, sets);
        let dx = jac
            .lu()
            .solve(&(-&f))
            .filter(|dx| dx.iter().all(|x| x.is_finite()))
            .ok_or(PfError::SingularJacobian { iteration: it })?;
        for (r, &i) in pvpq.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in sets.pq.iter().enumerate() {
            vm[i] += dx[npvpq + r];
        }
        v = vm
            .iter()
            .zip(&va)
            .map(|(m, a)| Complex64::from_polar(*m, *a))
            .collect();
        f = mismatch_vector(&power_mismatch(&adm.ybus, &v, sbus), sets);
        norm = f.amax();
        if !norm.is_finite() {
            return Err(PfError::Diverged {
                iterations: it,
                mismatch: norm,
            });
        }
    }
    Ok((v, it, norm))
}

pub fn solve_powerflow(case: &NetworkCase, opts: &PfOptions) -> Result<PowerFlowSolution, PfError> {
    let adm = build_ybus(case);
    let index = case.bus_index();
    let mut sets = classify_buses(case);
    let mut work = case.clone();

    let mut v: Vec<Complex64> = case
        .buses
        .iter()
        .map(|b| {
            if opts.flat_start {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(b.vm, b.va.to_radians())
            }
        })
        .collect();
    for g in case.generators.iter().filter(|g| g.in_service) {
        let i = index[&g.bus];
        if i == sets.slack || sets.pv.contains(&i) {
            v[i] = Complex64::from_polar(g.vg, v[i].arg());
        }
    }

    let mut iterations = 0;
    let mut q_limited = Vec::new();
    loop {
        let sbus = bus_injections(&work);
        let (vs, it, mis) = newton(
            &adm,
            &sbus,
            &v,
            &sets,
            opts.tol,
            opts.max_iter - iterations.min(opts.max_iter),
        )
        .map_err(|e| match e {
            PfError::Diverged {
                iterations: i,
                mismatch,
            } => PfError::Diverged {
                iterations: iterations + i,
                mismatch,
            },
            PfError::SingularJacobian { iteration } => PfError::SingularJacobian {
                iteration: iterations + iteration,
            },
        })?;
        v = vs;
        iterations += it;
        let mut sol = finish(case, &work, &adm, &sets, &v, iterations, mis);
        if !opts.enforce_q_limits {
            sol.q_limited = q_limited;
            return Ok(sol);
        }
        let mut switched = Vec::new();
        for (k, g) in case.generators.iter().enumerate() {
            let i = index[&g.bus];
            if !g.in_service || !sets.pv.contains(&i) {
                continue;
            }
            let q = sol.gen_qg[k];
            let limit = if q > g.q_max + opts.tol * case.base_mva {
                g.q_max
            } else if q < g.q_min - opts.tol * case.base_mva {
                g.q_min
            } else {
                continue;
            };
            q_limited.push(k);
            switched.push(i);
            work.generators[k].qg = limit;
        }
        if switched.is_empty() {
            sol.q_limited = q_limited;
            return Ok(sol);
        }
        // remaining generators at a switched bus keep their solved output
        for (k, g) in case.generators.iter().enumerate() {
            if switched.contains(&index[&g.bus]) && !q_limited.contains(&k) {
                work.generators[k].qg = sol.gen_qg[k];
            }
        }
        sets.pv.retain(|i| !switched.contains(i));
        sets.pq.extend(switched);
        sets.pq.sort_unstable();
    }
}

fn finish(
    case: &NetworkCase,
    work: &NetworkCase,
    adm: &Admittance,
    sets: &BusSets,
    v: &[Complex64],
    iterations: usize,
    max_mismatch: f64,
) -> PowerFlowSolution {
    let base = case.base_mva;
    let index = case.bus_index();
    let vv = DVector::from_column_slice(v);
    let ibus = &adm.ybus * &vv;
    let sinj: Vec<Complex64> = v
        .iter()
        .zip(ibus.iter())
        .map(|(a, b)| a * b.conj() * base)
        .collect();
    let i_f = &adm.yf * &vv;
    let i_t = &adm.yt * &vv;
    let sf: Vec<Complex64> = (0..case.branches.len())
        .map(|k| v[adm.from[k]] * i_f[k].conj() * base)
        .collect();
    let st: Vec<Complex64> = (0..case.branches.len())
        .map(|k| v[adm.to[k]] * i_t[k].conj() * base)
        .collect();

    // generation needed at each bus = injection + load - battery
    let mut battery = vec![0.0; case.buses.len()];
    for d in &case.batteries {
        battery[index[&d.bus]] += d.dispatch_kw.unwrap_or(0.0) / 1000.0;
    }
    let mut gen_pg: Vec<f64> = work
        .generators
        .iter()
        .map(|g| if g.in_service { g.pg } else { 0.0 })
        .collect();
    let mut gen_qg: Vec<f64> = work
        .generators
        .iter()
        .map(|g| if g.in_service { g.qg } else { 0.0 })
        .collect();
    for (i, b) in case.buses.iter().enumerate() {
        let gens: Vec<usize> = work
            .generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.in_service && index[&g.bus] == i)
            .map(|(k, _)| k)
            .collect();
        if gens.is_empty() {
            continue;
        }
        let need = sinj[i] + Complex64::new(b.pd - battery[i], b.qd);
        if i == sets.slack {
            let others: f64 = gens[1..].iter().map(|&k| gen_pg[k]).sum();
            gen_pg[gens[0]] = need.re - others;
        }
        if i == sets.slack || sets.pv.contains(&i) {
            // reactive output shared equally between units at the bus
            let share = need.im / gens.len() as f64;
            for &k in &gens {
                gen_qg[k] = share;
            }
        }
    }
    let slack_gen: Complex64 = work
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| g.in_service && index[&g.bus] == sets.slack)
        .map(|(k, _)| Complex64::new(gen_pg[k], gen_qg[k]))
        .sum();

    PowerFlowSolution {
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        vm: v.iter().map(|x| x.norm()).collect(),
        va: v.iter().map(|x| x.arg() - v[sets.slack].arg()).collect(),
        pf: sf.iter().map(|s| s.re).collect(),
        qf: sf.iter().map(|s| s.im).collect(),
        pt: st.iter().map(|s| s.re).collect(),
        qt: st.iter().map(|s| s.im).collect(),
        gen_pg,
        gen_qg,
        slack_p: slack_gen.re,
        slack_q: slack_gen.im,
        iterations,
        max_mismatch,
        q_limited: Vec::new(),
    }
}

pub fn write_bus_csv<W: Write>(
    sol: &PowerFlowSolution,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "bus_id,vm_pu,va_rad")?;
    for k in 0..sol.bus_ids.len() {
        writeln!(out, "{},{},{}", sol.bus_ids[k], sol.vm[k], sol.va[k])?;
    }
    Ok(())
}

pub fn write_branch_csv<W: Write>(
    case: &NetworkCase,
    sol: &PowerFlowSolution,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "branch,from,to,pf_mw,qf_mvar,pt_mw,qt_mvar")?;
    for (k, br) in case.branches.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            k + 1,
            br.from,
            br.to,
            sol.pf[k],
            sol.qf[k],
            sol.pt[k],
            sol.qt[k]
        )?;
    }
    Ok(())
}
