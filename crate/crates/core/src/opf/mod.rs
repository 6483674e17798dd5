//! Single-period AC optimal power flow with battery injections.
//!
//! Case 1 bounds each battery by its pack rating; Case 2 replaces those with
//! limits derived from its RUL box and caps the battery bus voltage.

mod acopf;
pub mod ipm;

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{BatteryDevice, CostModel, NetworkCase};
use crate::cell::{simulate_to_eol, state_from_efc, CellError, CellParams, OperatingLimits};
use crate::montecarlo::SamplingSpec;
use crate::powerflow::{build_ybus, Admittance};
use crate::region::{box_at_efc, BatteryConstraints, RegionError, RulTarget, SweepOptions};

pub use acopf::{AcOpf, Ineq, Layout};
use ipm::{Conditions, IpmError, IpmOptions};

/// Pack rating used in Case 1, as C-rates.
pub const NAMEPLATE_C_CHARGE: f64 = 2.0;
pub const NAMEPLATE_C_DISCHARGE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("battery at bus {bus} has no box constraints")]
    MissingConstraints { bus: usize },
    #[error("generator {gen} uses a piecewise-linear cost, which is not supported")]
    UnsupportedCost { gen: usize },
    #[error(transparent)]
    Solver(#[from] IpmError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Region(#[from] RegionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpfMode {
    Case1,
    Case2,
}

impl OpfMode {
    pub fn label(&self) -> &'static str {
        match self {
            OpfMode::Case1 => "case1",
            OpfMode::Case2 => "case2",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub case: NetworkCase,
    pub mode: OpfMode,
    /// Power limits applied to each battery; `v_bus_max_pu` is the box value
    /// in Case 2 and the bus limit in Case 1.
    pub battery_bounds: Vec<BatteryConstraints>,
    pub layout: Layout,
    /// Case index of each in-service generator.
    pub gens: Vec<usize>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    adm: Admittance,
}

/// Builds the NLP for `case` with its attached batteries.
pub fn build_problem(
    case: &NetworkCase,
    params: &CellParams,
    mode: OpfMode,
) -> Result<OpfProblem, OpfError> {
    let gens: Vec<usize> = (0..case.generators.len())
        .filter(|&k| case.generators[k].in_service)
        .collect();
    if let Some(&k) = gens
        .iter()
        .find(|&&k| !matches!(case.gencost[k].model, CostModel::Polynomial { .. }))
    {
        return Err(OpfError::UnsupportedCost { gen: k });
    }
    let layout = Layout {
        nb: case.buses.len(),
        ng: gens.len(),
        nbat: case.batteries.len(),
    };
    let base = case.base_mva;
    let index = case.bus_index();
    let n = layout.n();
    let mut x_min = vec![f64::NEG_INFINITY; n];
    let mut x_max = vec![f64::INFINITY; n];
    let slack = case.slack_index();
    x_min[layout.va() + slack] = case.buses[slack].va.to_radians();
    x_max[layout.va() + slack] = case.buses[slack].va.to_radians();
    for (i, b) in case.buses.iter().enumerate() {
        x_min[layout.vm() + i] = b.v_min;
        x_max[layout.vm() + i] = b.v_max;
    }
    for (j, &k) in gens.iter().enumerate() {
        let g = &case.generators[k];
        x_min[layout.pg() + j] = g.p_min / base;
        x_max[layout.pg() + j] = g.p_max / base;
        x_min[layout.qg() + j] = g.q_min / base;
        x_max[layout.qg() + j] = g.q_max / base;
    }
    let mut battery_bounds = Vec::with_capacity(layout.nbat);
    for (j, d) in case.batteries.iter().enumerate() {
        let i = index[&d.bus];
        let bound = match mode {
            OpfMode::Case1 => BatteryConstraints {
                v_bus_max_pu: case.buses[i].v_max,
                ..d.nameplate(params, NAMEPLATE_C_CHARGE, NAMEPLATE_C_DISCHARGE)
            },
            OpfMode::Case2 => {
                let c = d
                    .constraints
                    .ok_or(OpfError::MissingConstraints { bus: d.bus })?;
                x_max[layout.vm() + i] = x_max[layout.vm() + i].min(c.v_bus_max_pu);
                c
            }
        };
        x_min[layout.pb() + j] = -bound.p_ch_max_kw / 1000.0 / base;
        x_max[layout.pb() + j] = bound.p_disc_max_kw / 1000.0 / base;
        battery_bounds.push(bound);
    }
    Ok(OpfProblem {
        case: case.clone(),
        mode,
        battery_bounds,
        layout,
        gens,
        x_min,
        x_max,
        adm: build_ybus(case),
    })
}

impl OpfProblem {
    fn nlp(&self) -> AcOpf<'_> {
        AcOpf::new(
            &self.case,
            &self.adm,
            self.layout,
            self.gens.clone(),
            self.x_min.clone(),
            self.x_max.clone(),
        )
    }

    fn var_name(&self, k: usize) -> String {
        let l = self.layout;
        let bus = |i: usize| self.case.buses[i].id;
        if k < l.vm() {
            format!("va bus {}", bus(k))
        } else if k < l.pg() {
            format!("vm bus {}", bus(k - l.vm()))
        } else if k < l.qg() {
            format!("pg gen {}", self.gens[k - l.pg()] + 1)
        } else if k < l.pb() {
            format!("qg gen {}", self.gens[k - l.qg()] + 1)
        } else {
            format!("pb bus {}", self.case.batteries[k - l.pb()].bus)
        }
    }

    /// Midpoint of each variable's bounds, with every angle at the reference
    /// angle.
    fn initial_point(&self) -> DVector<f64> {
        let l = self.layout;
        let va_ref = self.x_min[l.va() + self.case.slack_index()];
        DVector::from_fn(l.n(), |k, _| {
            if k < l.vm() {
                return va_ref;
            }
            let lo = self.x_min[k].max(-1e10);
            let hi = self.x_max[k].min(1e10);
            0.5 * (lo + hi)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub mode: OpfMode,
    pub converged: bool,
    pub iterations: usize,
    /// Generation cost, $/h.
    pub objective: f64,
    pub conditions: Conditions,
    /// Largest of the feasibility, gradient and complementarity measures.
    pub kkt_residual: f64,
    pub bus_ids: Vec<usize>,
    pub vm: Vec<f64>,
    /// Radians.
    pub va: Vec<f64>,
    /// Case index of each dispatched generator.
    pub gen_index: Vec<usize>,
    pub gen_pg_mw: Vec<f64>,
    pub gen_qg_mvar: Vec<f64>,
    pub battery_bus: Vec<usize>,
    pub battery_kw: Vec<f64>,
    pub battery_vm: Vec<f64>,
    /// Effective voltage ceiling at each battery bus.
    pub battery_vm_max: Vec<f64>,
    pub battery_bounds: Vec<BatteryConstraints>,
    /// Largest power-balance mismatch, p.u.
    pub max_mismatch: f64,
    /// Largest inequality violation (zero when feasible).
    pub max_violation: f64,
    /// Largest `|mu_i h_i|`.
    pub max_complementarity: f64,
    pub binding: Vec<String>,
}

/// Solves the problem. Non-convergence is reported through
/// `converged == false` on the best iterate rather than as an error.
pub fn solve_opf(problem: &OpfProblem, opts: &IpmOptions) -> Result<OpfSolution, OpfError> {
    let nlp = problem.nlp();
    let r = ipm::solve(&nlp, problem.initial_point(), opts)?;
    let l = problem.layout;
    let base = problem.case.base_mva;
    // fixed variables are only met to solver precision
    let mut x = r.x.clone();
    for &k in &nlp.fixed {
        x[k] = problem.x_min[k];
    }
    let index = problem.case.bus_index();

    let binding = nlp
        .ineqs
        .iter()
        .enumerate()
        .filter(|&(k, _)| r.h[k] > -1e-5 && r.mu[k] > 1e-6)
        .map(|(_, q)| match *q {
            Ineq::FlowFrom(b) => format!("branch {} from-end flow", b + 1),
            Ineq::FlowTo(b) => format!("branch {} to-end flow", b + 1),
            Ineq::Upper(k) => format!("{} upper", problem.var_name(k)),
            Ineq::Lower(k) => format!("{} lower", problem.var_name(k)),
        })
        .collect();
    let battery_bus: Vec<usize> = problem.case.batteries.iter().map(|d| d.bus).collect();
    let c = r.conditions;
    Ok(OpfSolution {
        mode: problem.mode,
        converged: r.converged,
        iterations: r.iterations,
        objective: r.f,
        conditions: c,
        kkt_residual: c.feascond.max(c.gradcond).max(c.compcond),
        bus_ids: problem.case.buses.iter().map(|b| b.id).collect(),
        vm: (0..l.nb).map(|i| x[l.vm() + i]).collect(),
        va: (0..l.nb).map(|i| x[l.va() + i]).collect(),
        gen_index: problem.gens.clone(),
        gen_pg_mw: (0..l.ng).map(|j| x[l.pg() + j] * base).collect(),
        gen_qg_mvar: (0..l.ng).map(|j| x[l.qg() + j] * base).collect(),
        battery_kw: (0..l.nbat).map(|j| x[l.pb() + j] * base * 1000.0).collect(),
        battery_vm: battery_bus.iter().map(|b| x[l.vm() + index[b]]).collect(),
        battery_vm_max: battery_bus
            .iter()
            .map(|b| problem.x_max[l.vm() + index[b]])
            .collect(),
        battery_bus,
        battery_bounds: problem.battery_bounds.clone(),
        max_mismatch: r.g.rows(0, 2 * l.nb).amax(),
        max_violation: r.h.iter().fold(0.0f64, |m, &v| m.max(v)),
        max_complementarity: r
            .mu
            .iter()
            .zip(r.h.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a * b).abs())),
        binding,
    })
}

pub fn write_bus_table_csv<W: Write>(
    solution: &OpfSolution,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "bus,vm_pu,va_deg")?;
    for ((id, vm), va) in solution.bus_ids.iter().zip(&solution.vm).zip(&solution.va) {
        writeln!(out, "{id},{vm},{}", va.to_degrees())?;
    }
    Ok(())
}

/// Generators followed by batteries; battery rows have an empty `gen` field
/// and zero reactive output.
pub fn write_gen_table_csv<W: Write>(
    problem: &OpfProblem,
    solution: &OpfSolution,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "kind,gen,bus,p_mw,q_mvar")?;
    for ((&k, p), q) in solution
        .gen_index
        .iter()
        .zip(&solution.gen_pg_mw)
        .zip(&solution.gen_qg_mvar)
    {
        writeln!(
            out,
            "generator,{},{},{p},{q}",
            k + 1,
            problem.case.generators[k].bus
        )?;
    }
    for (bus, kw) in solution.battery_bus.iter().zip(&solution.battery_kw) {
        writeln!(out, "battery,,{bus},{},0", kw / 1000.0)?;
    }
    Ok(())
}

/// Builds each battery's box from its own ageing state and attaches the
/// derived limits.
pub fn fit_battery_boxes(
    devices: &[BatteryDevice],
    params: &CellParams,
    spec: &SamplingSpec,
    options: &SweepOptions,
) -> Result<Vec<BatteryDevice>, OpfError> {
    devices
        .iter()
        .map(|d| {
            let target = RulTarget::new(d.target_hours)?;
            let region = box_at_efc(params, spec, d.initial_efc, target, options)?;
            Ok(d.clone().with_region(region, params))
        })
        .collect()
}

/// Operating limits a battery would cycle under to deliver `kw`: the same
/// current in both directions, each capped by the applicable limit, over
/// the SOC window allowed by the voltage ceiling.
pub fn dispatch_limits(
    device: &BatteryDevice,
    kw: f64,
    mode: OpfMode,
    params: &CellParams,
) -> Result<OperatingLimits, OpfError> {
    let amps = kw.abs() * 1000.0 / (device.n_cells as f64 * params.nominal_voltage);
    let (ch_cap, dis_cap, soc_max) = match (mode, device.region) {
        (OpfMode::Case2, Some(r)) => {
            let i_ch = amps.min(r.i_charge_max);
            let soc = params
                .ocv_curve
                .soc_at(r.v_max_bound - i_ch * params.r_eol)
                .clamp(0.0, 1.0);
            (r.i_charge_max, r.i_discharge_max, soc)
        }
        _ => (
            params.c_rate_to_amperes(NAMEPLATE_C_CHARGE),
            params.c_rate_to_amperes(NAMEPLATE_C_DISCHARGE),
            1.0,
        ),
    };
    Ok(OperatingLimits::new(
        0.0,
        soc_max,
        amps.min(ch_cap),
        amps.min(dis_cap),
        params,
    )?)
}

/// Realised RUL of each battery if it kept cycling at its dispatched power.
/// An idle battery does not age and reports infinity.
pub fn verify_rul(
    solution: &OpfSolution,
    batteries: &[BatteryDevice],
    params: &CellParams,
) -> Result<Vec<f64>, OpfError> {
    batteries
        .iter()
        .zip(&solution.battery_kw)
        .map(|(d, &kw)| {
            if kw.abs() < 1e-9 {
                return Ok(f64::INFINITY);
            }
            let limits = dispatch_limits(d, kw, solution.mode, params)?;
            let state = state_from_efc(d.initial_efc, params)?;
            Ok(simulate_to_eol(&state, params, &limits)?.rul_hours)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySummary {
    pub bus: usize,
    pub hi: f64,
    pub p_kw: f64,
    pub p_ch_max_kw: f64,
    pub p_disc_max_kw: f64,
    pub vm: f64,
    pub vm_max: f64,
    /// Box voltage ceiling before clipping to the network limit.
    pub v_box_pu: Option<f64>,
    pub rul_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: OpfMode,
    pub converged: bool,
    pub objective: f64,
    pub batteries: Vec<BatterySummary>,
}

pub fn summarize(
    problem: &OpfProblem,
    solution: &OpfSolution,
    params: &CellParams,
) -> Result<ModeSummary, OpfError> {
    let ruls = verify_rul(solution, &problem.case.batteries, params)?;
    let batteries = problem
        .case
        .batteries
        .iter()
        .enumerate()
        .map(|(j, d)| BatterySummary {
            bus: d.bus,
            hi: d.hi,
            p_kw: solution.battery_kw[j],
            p_ch_max_kw: problem.battery_bounds[j].p_ch_max_kw,
            p_disc_max_kw: problem.battery_bounds[j].p_disc_max_kw,
            vm: solution.battery_vm[j],
            vm_max: solution.battery_vm_max[j],
            v_box_pu: match problem.mode {
                OpfMode::Case2 => Some(problem.battery_bounds[j].v_bus_max_pu),
                OpfMode::Case1 => None,
            },
            rul_hours: ruls[j],
        })
        .collect();
    Ok(ModeSummary {
        mode: problem.mode,
        converged: solution.converged,
        objective: solution.objective,
        batteries,
    })
}

/// Side-by-side table with one row per quantity and battery.
pub fn write_comparison_csv<W: Write>(
    case1: &ModeSummary,
    case2: &ModeSummary,
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "quantity,bus,case1,case2")?;
    writeln!(
        out,
        "cost_usd_per_h,,{},{}",
        case1.objective, case2.objective
    )?;
    type Row = (&'static str, fn(&BatterySummary) -> f64);
    let rows: [Row; 7] = [
        ("hi", |b| b.hi),
        ("battery_power_kw", |b| b.p_kw),
        ("discharge_bound_kw", |b| b.p_disc_max_kw),
        ("charge_bound_kw", |b| b.p_ch_max_kw),
        ("bus_voltage_pu", |b| b.vm),
        ("bus_voltage_bound_pu", |b| b.vm_max),
        ("rul_hours", |b| b.rul_hours),
    ];
    for (name, get) in rows {
        for (a, b) in case1.batteries.iter().zip(&case2.batteries) {
            writeln!(out, "{name},{},{},{}", a.bus, get(a), get(b))?;
        }
    }
    for b in &case2.batteries {
        if let Some(v) = b.v_box_pu {
            writeln!(out, "box_voltage_bound_pu,{},,{v}", b.bus)?;
        }
    }
    Ok(())
}
