//! Network model read from MATPOWER case files, plus battery devices
//! co-located at network buses.
//!
//! All quantities are kept in the units of the file: MW, MVAr, MVA, p.u. for
//! impedances and voltages, degrees for angles.

mod parse;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{health_indicator, state_from_efc, CellError, CellParams};
use crate::region::{BatteryConstraints, BoxRegion};

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}, column {column}: expected {expected}, found {found}")]
    Parse {
        line: usize,
        column: usize,
        expected: String,
        found: String,
    },
    #[error("schema: {0}")]
    Schema(String),
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("no bus {0} in case")]
    UnknownBus(usize),
    #[error("battery config: {0}")]
    Config(String),
    #[error(transparent)]
    Cell(#[from] CellError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusType {
    Pq,
    Pv,
    Slack,
    Isolated,
}

impl BusType {
    fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            1 if code == 1.0 => Some(BusType::Pq),
            2 if code == 2.0 => Some(BusType::Pv),
            3 if code == 3.0 => Some(BusType::Slack),
            4 if code == 4.0 => Some(BusType::Isolated),
            _ => None,
        }
    }

    fn code(self) -> u8 {
        match self {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Slack => 3,
            BusType::Isolated => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub bus_type: BusType,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub area: f64,
    pub vm: f64,
    /// Degrees.
    pub va: f64,
    pub base_kv: f64,
    pub zone: f64,
    pub v_max: f64,
    pub v_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    /// Long-term thermal rating, MVA. Zero means unlimited.
    pub rate_a: f64,
    pub rate_b: f64,
    pub rate_c: f64,
    /// Off-nominal tap ratio; zero in the file means a line (ratio 1).
    pub tap: f64,
    /// Phase shift, degrees.
    pub shift: f64,
    pub in_service: bool,
    pub ang_min: f64,
    pub ang_max: f64,
}

impl Branch {
    pub fn tap_ratio(&self) -> f64 {
        if self.tap == 0.0 {
            1.0
        } else {
            self.tap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub vg: f64,
    pub m_base: f64,
    pub in_service: bool,
    pub p_max: f64,
    pub p_min: f64,
    /// Columns beyond `Pmin` (capability curve, ramp rates, apf), kept
    /// verbatim for round-tripping.
    pub extra: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CostModel {
    /// `(MW, $/h)` breakpoints.
    PiecewiseLinear { points: Vec<[f64; 2]> },
    /// Coefficients highest order first, in $/h for P in MW.
    Polynomial { coefficients: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenCost {
    pub startup: f64,
    pub shutdown: f64,
    pub model: CostModel,
    /// Trailing zero padding in the file row.
    pub padding: usize,
}

impl GenCost {
    /// Cost in $/h at `pg` MW. Piecewise-linear costs are interpolated and
    /// extended linearly past the end points.
    pub fn cost(&self, pg: f64) -> f64 {
        match &self.model {
            CostModel::Polynomial { coefficients } => {
                coefficients.iter().fold(0.0, |acc, c| acc * pg + c)
            }
            CostModel::PiecewiseLinear { points } => {
                if points.len() == 1 {
                    return points[0][1];
                }
                let k = points
                    .windows(2)
                    .position(|w| pg <= w[1][0])
                    .unwrap_or(points.len() - 2);
                let ([x0, y0], [x1, y1]) = (points[k], points[k + 1]);
                y0 + (y1 - y0) * (pg - x0) / (x1 - x0)
            }
        }
    }
}

/// A battery pack co-located with a network bus. Active power only;
/// dispatch is positive when discharging into the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryDevice {
    pub bus: usize,
    pub n_cells: usize,
    pub initial_efc: f64,
    pub hi: f64,
    /// RUL requirement, hours.
    pub target_hours: f64,
    /// Box-derived limits; present only when a box has been built.
    pub constraints: Option<BatteryConstraints>,
    pub region: Option<BoxRegion>,
    /// Dispatched power, kW.
    pub dispatch_kw: Option<f64>,
}

impl BatteryDevice {
    pub fn new(
        bus: usize,
        n_cells: usize,
        initial_efc: f64,
        target_hours: f64,
        params: &CellParams,
    ) -> Result<Self, CaseError> {
        if n_cells == 0 {
            return Err(CaseError::Config(format!(
                "battery at bus {bus} has no cells"
            )));
        }
        let state = state_from_efc(initial_efc, params)?;
        Ok(Self {
            bus,
            n_cells,
            initial_efc,
            hi: health_indicator(&state, params)?,
            target_hours,
            constraints: None,
            region: None,
            dispatch_kw: None,
        })
    }

    pub fn with_region(mut self, region: BoxRegion, params: &CellParams) -> Self {
        self.constraints = Some(crate::region::box_to_grid_constraints(
            &region,
            params,
            self.n_cells,
        ));
        self.region = Some(region);
        self
    }

    /// Pack rating: `c_charge` / `c_discharge` C-rates at nominal voltage.
    pub fn nameplate(
        &self,
        params: &CellParams,
        c_charge: f64,
        c_discharge: f64,
    ) -> BatteryConstraints {
        let kw = |c: f64| {
            self.n_cells as f64 * params.nominal_voltage * params.c_rate_to_amperes(c) / 1000.0
        };
        BatteryConstraints {
            p_ch_max_kw: kw(c_charge),
            p_disc_max_kw: kw(c_discharge),
            v_bus_max_pu: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub gencost: Vec<GenCost>,
    #[serde(default)]
    pub batteries: Vec<BatteryDevice>,
}

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_MIN_COLS: usize = 11;

fn take_matrix(
    a: &mut parse::Assignments,
    field: &str,
    min_cols: usize,
) -> Result<Vec<Vec<f64>>, CaseError> {
    let (value, line) = a
        .fields
        .remove(field)
        .ok_or_else(|| CaseError::Schema(format!("missing mpc.{field}")))?;
    let rows = match value {
        parse::Value::Matrix(rows) => rows,
        _ => {
            return Err(CaseError::Schema(format!(
                "mpc.{field} (line {line}) must be a matrix"
            )))
        }
    };
    if let Some(first) = rows.first() {
        if first.len() < min_cols {
            return Err(CaseError::Schema(format!(
                "mpc.{field} (line {line}) needs at least {min_cols} columns, found {}",
                first.len()
            )));
        }
        if let Some(k) = rows.iter().position(|r| r.len() != first.len()) {
            return Err(CaseError::Schema(format!(
                "mpc.{field} (line {line}) row {} has {} columns, expected {}",
                k + 1,
                rows[k].len(),
                first.len()
            )));
        }
    }
    Ok(rows)
}

fn as_id(v: f64, what: &str) -> Result<usize, CaseError> {
    if v >= 1.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CaseError::Schema(format!(
            "{what} must be a positive integer, got {v}"
        )))
    }
}

fn gencost_row(row: &[f64], k: usize) -> Result<GenCost, CaseError> {
    let bad = |msg: String| CaseError::Schema(format!("gencost row {}: {msg}", k + 1));
    if row.len() < 4 {
        return Err(bad("needs at least 4 columns".into()));
    }
    let n = row[3];
    if !(n >= 0.0 && n.fract() == 0.0) {
        return Err(bad(format!("invalid coefficient count {n}")));
    }
    let n = n as usize;
    let (model, used) = match row[0] {
        1.0 => {
            if row.len() < 4 + 2 * n {
                return Err(bad(format!("needs {} breakpoint values", 2 * n)));
            }
            let points = row[4..4 + 2 * n].chunks(2).map(|c| [c[0], c[1]]).collect();
            (CostModel::PiecewiseLinear { points }, 4 + 2 * n)
        }
        2.0 => {
            if row.len() < 4 + n {
                return Err(bad(format!("needs {n} coefficients")));
            }
            (
                CostModel::Polynomial {
                    coefficients: row[4..4 + n].to_vec(),
                },
                4 + n,
            )
        }
        m => return Err(bad(format!("unknown cost model {m}"))),
    };
    Ok(GenCost {
        startup: row[1],
        shutdown: row[2],
        model,
        padding: row.len() - used,
    })
}

impl NetworkCase {
    pub fn parse_matpower(text: &str) -> Result<Self, CaseError> {
        let mut a = parse::parse_assignments(text)?;
        let base_mva = match a.fields.remove("baseMVA") {
            Some((parse::Value::Scalar(v), _)) => v,
            Some((_, line)) => {
                return Err(CaseError::Schema(format!(
                    "mpc.baseMVA (line {line}) must be a number"
                )))
            }
            None => return Err(CaseError::Schema("missing mpc.baseMVA".into())),
        };
        let bus_rows = take_matrix(&mut a, "bus", BUS_COLS)?;
        let gen_rows = take_matrix(&mut a, "gen", GEN_COLS)?;
        let branch_rows = take_matrix(&mut a, "branch", BRANCH_MIN_COLS)?;
        let cost_rows = take_matrix(&mut a, "gencost", 4)?;

        let buses = bus_rows
            .iter()
            .map(|r| {
                Ok(Bus {
                    id: as_id(r[0], "bus id")?,
                    bus_type: BusType::from_code(r[1])
                        .ok_or_else(|| CaseError::Schema(format!("bus type {}", r[1])))?,
                    pd: r[2],
                    qd: r[3],
                    gs: r[4],
                    bs: r[5],
                    area: r[6],
                    vm: r[7],
                    va: r[8],
                    base_kv: r[9],
                    zone: r[10],
                    v_max: r[11],
                    v_min: r[12],
                })
            })
            .collect::<Result<Vec<_>, CaseError>>()?;
        let generators = gen_rows
            .iter()
            .map(|r| {
                Ok(Generator {
                    bus: as_id(r[0], "generator bus")?,
                    pg: r[1],
                    qg: r[2],
                    q_max: r[3],
                    q_min: r[4],
                    vg: r[5],
                    m_base: r[6],
                    in_service: r[7] > 0.0,
                    p_max: r[8],
                    p_min: r[9],
                    extra: r[GEN_COLS..].to_vec(),
                })
            })
            .collect::<Result<Vec<_>, CaseError>>()?;
        let branches = branch_rows
            .iter()
            .map(|r| {
                Ok(Branch {
                    from: as_id(r[0], "branch from-bus")?,
                    to: as_id(r[1], "branch to-bus")?,
                    r: r[2],
                    x: r[3],
                    b: r[4],
                    rate_a: r[5],
                    rate_b: r[6],
                    rate_c: r[7],
                    tap: r[8],
                    shift: r[9],
                    in_service: r[10] > 0.0,
                    ang_min: r.get(11).copied().unwrap_or(-360.0),
                    ang_max: r.get(12).copied().unwrap_or(360.0),
                })
            })
            .collect::<Result<Vec<_>, CaseError>>()?;
        let gencost = cost_rows
            .iter()
            .enumerate()
            .map(|(k, r)| gencost_row(r, k))
            .collect::<Result<Vec<_>, CaseError>>()?;

        let case = Self {
            name: a.name.unwrap_or_else(|| "case".into()),
            base_mva,
            buses,
            generators,
            branches,
            gencost,
            batteries: Vec::new(),
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        let fail = |m: String| Err(CaseError::Validation(m));
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return fail(format!("baseMVA must be positive, got {}", self.base_mva));
        }
        if self.buses.is_empty() {
            return fail("no buses".into());
        }
        let mut seen = HashMap::new();
        for (k, b) in self.buses.iter().enumerate() {
            if seen.insert(b.id, k).is_some() {
                return fail(format!("duplicate bus id {}", b.id));
            }
            if b.v_min > b.v_max {
                return fail(format!("bus {} has v_min > v_max", b.id));
            }
        }
        let slack = self
            .buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .count();
        if slack != 1 {
            return fail(format!("expected exactly one slack bus, found {slack}"));
        }
        for (k, br) in self.branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if !seen.contains_key(&end) {
                    return fail(format!("branch {} references unknown bus {end}", k + 1));
                }
            }
            if br.in_service && br.r.hypot(br.x) == 0.0 {
                return fail(format!("branch {} has zero impedance", k + 1));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            if !seen.contains_key(&g.bus) {
                return fail(format!("generator {} at unknown bus {}", k + 1, g.bus));
            }
        }
        if self.gencost.len() != self.generators.len() {
            return fail(format!(
                "{} cost rows for {} generators",
                self.gencost.len(),
                self.generators.len()
            ));
        }
        for d in &self.batteries {
            if !seen.contains_key(&d.bus) {
                return Err(CaseError::UnknownBus(d.bus));
            }
        }
        Ok(())
    }

    /// Map from bus id to position in `buses`.
    pub fn bus_index(&self) -> HashMap<usize, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(k, b)| (b.id, k))
            .collect()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.bus_type == BusType::Slack)
            .expect("validated case has a slack bus")
    }

    /// Thermal limit of branch `k` in p.u. on `base_mva`; `None` if unlimited.
    pub fn rate_a_pu(&self, k: usize) -> Option<f64> {
        let r = self.branches[k].rate_a;
        (r > 0.0 && r.is_finite()).then(|| r / self.base_mva)
    }

    /// Writes the case back in MATPOWER syntax. Batteries are not part of
    /// the file format and are dropped.
    pub fn to_matpower(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, vals: &[f64]| {
            s.push('\t');
            let cells: Vec<String> = vals.iter().map(|v| fmt_num(*v)).collect();
            s.push_str(&cells.join("\t"));
            s.push_str(";\n");
        };
        writeln!(s, "function mpc = {}", self.name).unwrap();
        writeln!(s, "mpc.version = '2';").unwrap();
        writeln!(s, "mpc.baseMVA = {};", fmt_num(self.base_mva)).unwrap();
        s.push_str("\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n");
        for b in &self.buses {
            row(
                &mut s,
                &[
                    b.id as f64,
                    b.bus_type.code() as f64,
                    b.pd,
                    b.qd,
                    b.gs,
                    b.bs,
                    b.area,
                    b.vm,
                    b.va,
                    b.base_kv,
                    b.zone,
                    b.v_max,
                    b.v_min,
                ],
            );
        }
        s.push_str(
            "];\n\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\t...\nmpc.gen = [\n",
        );
        for g in &self.generators {
            let mut vals = vec![
                g.bus as f64,
                g.pg,
                g.qg,
                g.q_max,
                g.q_min,
                g.vg,
                g.m_base,
                if g.in_service { 1.0 } else { 0.0 },
                g.p_max,
                g.p_min,
            ];
            vals.extend(&g.extra);
            row(&mut s, &vals);
        }
        s.push_str("];\n\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\nmpc.branch = [\n");
        for br in &self.branches {
            row(
                &mut s,
                &[
                    br.from as f64,
                    br.to as f64,
                    br.r,
                    br.x,
                    br.b,
                    br.rate_a,
                    br.rate_b,
                    br.rate_c,
                    br.tap,
                    br.shift,
                    if br.in_service { 1.0 } else { 0.0 },
                    br.ang_min,
                    br.ang_max,
                ],
            );
        }
        s.push_str("];\n\nmpc.gencost = [\n");
        for c in &self.gencost {
            let mut vals = match &c.model {
                CostModel::PiecewiseLinear { points } => {
                    let mut v = vec![1.0, c.startup, c.shutdown, points.len() as f64];
                    v.extend(points.iter().flatten());
                    v
                }
                CostModel::Polynomial { coefficients } => {
                    let mut v = vec![2.0, c.startup, c.shutdown, coefficients.len() as f64];
                    v.extend(coefficients);
                    v
                }
            };
            vals.extend(std::iter::repeat_n(0.0, c.padding));
            row(&mut s, &vals);
        }
        s.push_str("];\n");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        let case: Self =
            serde_json::from_str(text).map_err(|e| CaseError::Schema(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "Inf" } else { "-Inf" }.to_string()
    } else if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Registers `devices` on a copy of `case`.
pub fn attach_batteries(
    case: &NetworkCase,
    devices: &[BatteryDevice],
) -> Result<NetworkCase, CaseError> {
    let index = case.bus_index();
    if let Some(d) = devices.iter().find(|d| !index.contains_key(&d.bus)) {
        return Err(CaseError::UnknownBus(d.bus));
    }
    let mut out = case.clone();
    out.batteries.extend(devices.iter().cloned());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub bus: usize,
    pub n_cells: usize,
    pub initial_efc: f64,
    /// Overrides the config-wide target.
    #[serde(default)]
    pub target_hours: Option<f64>,
}

/// Battery experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub target_hours: f64,
    pub batteries: Vec<BatterySpec>,
}

impl BatteryConfig {
    /// Three packs of 1500 cells at buses 36, 37 and 38, aged 100, 500 and
    /// 700 cycles, with a 120 h requirement.
    pub fn ieee39() -> Self {
        let spec = |bus, efc| BatterySpec {
            bus,
            n_cells: 1500,
            initial_efc: efc,
            target_hours: None,
        };
        Self {
            target_hours: 120.0,
            batteries: vec![spec(36, 100.0), spec(37, 500.0), spec(38, 700.0)],
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CaseError::Config(e.to_string()))?;
        if !(cfg.target_hours.is_finite() && cfg.target_hours > 0.0) {
            return Err(CaseError::Config(format!(
                "target_hours must be positive, got {}",
                cfg.target_hours
            )));
        }
        Ok(cfg)
    }

    pub fn devices(&self, params: &CellParams) -> Result<Vec<BatteryDevice>, CaseError> {
        self.batteries
            .iter()
            .map(|b| {
                BatteryDevice::new(
                    b.bus,
                    b.n_cells,
                    b.initial_efc,
                    b.target_hours.unwrap_or(self.target_hours),
                    params,
                )
            })
            .collect()
    }
}
