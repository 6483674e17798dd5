//! Conversion of an RUL target into box constraints on charge current,
//! discharge current and the charging voltage ceiling.
//!
//! Campaign data are summarised as a [`SurfaceFamily`]: one ln-RUL surface
//! over `(i_charge, i_discharge)` per level of a voltage grid. The box is
//! anchored at the low-current corner of the sampled domain. Stage one keeps
//! the highest voltage level whose anchor still meets the target; stage two
//! bisects a common scale on both current spans until the whole rectangle is
//! feasible at that level and every level below it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{health_indicator, state_from_efc, CellError, CellParams};
use crate::montecarlo::{run_campaign, Interval, McError, SamplingSpec, ScenarioRecord};
use crate::stats::{poly, slice_first_axis, FittedSurface, Response, StatsError, Variable};

pub const DEFAULT_LEVELS: usize = 9;
pub const DEFAULT_DEGREE: usize = 2;
pub const VALIDATION_GRID: usize = 32;
const SCALE_REL_TOL: f64 = 1e-3;
const MAX_BISECTIONS: usize = 40;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("RUL target must be positive and finite, got {0}")]
    Target(f64),
    #[error("no operating point meets the {t_hours} h target")]
    Infeasible { t_hours: f64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("invalid surface family: {0}")]
    Family(String),
}

/// Required remaining useful life, hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulTarget(f64);

impl RulTarget {
    pub fn new(t_hours: f64) -> Result<Self, RegionError> {
        if t_hours.is_finite() && t_hours > 0.0 {
            Ok(Self(t_hours))
        } else {
            Err(RegionError::Target(t_hours))
        }
    }

    pub fn hours(&self) -> f64 {
        self.0
    }
}

/// ln-RUL surfaces over `(i_charge, i_discharge)` on an ascending grid of
/// charging-voltage ceilings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFamily {
    pub levels: Vec<f64>,
    pub surfaces: Vec<FittedSurface>,
    pub i_charge: Interval,
    pub i_discharge: Interval,
}

impl SurfaceFamily {
    /// Fits ln RUL over `(v_max, i_charge, i_discharge)` with a total-degree
    /// polynomial and slices it at `n_levels` evenly spaced voltages across
    /// the observed `v_max` range.
    pub fn from_records(
        records: &[ScenarioRecord],
        n_levels: usize,
        degree: usize,
    ) -> Result<Self, RegionError> {
        if n_levels < 2 {
            return Err(RegionError::Family(
                "need at least two voltage levels".into(),
            ));
        }
        let points: Vec<[f64; 3]> = records
            .iter()
            .map(|r| [r.v_max, r.limits.i_charge, r.limits.i_discharge])
            .collect();
        let values: Vec<f64> = records.iter().map(|r| r.rul_hours.ln()).collect();
        let fit = poly::fit(
            ["v_max", "i_charge", "i_discharge"],
            &points,
            &values,
            degree,
        )?;
        let [v_lo, v_hi] = fit.domain[0];
        let levels: Vec<f64> = (0..n_levels)
            .map(|k| v_lo + (v_hi - v_lo) * k as f64 / (n_levels - 1) as f64)
            .collect();
        let surfaces = levels
            .iter()
            .map(|&v| {
                slice_first_axis(
                    &fit,
                    v,
                    [Variable::ICharge, Variable::IDischarge],
                    Response::LnRul,
                )
            })
            .collect();
        Ok(Self {
            levels,
            surfaces,
            i_charge: Interval::new(fit.domain[1][0], fit.domain[1][1]),
            i_discharge: Interval::new(fit.domain[2][0], fit.domain[2][1]),
        })
    }

    /// Assembles a family from pre-built surfaces. Every surface must be over
    /// `(i_charge, i_discharge)`; the current domain is their common box.
    pub fn from_surfaces(
        levels: Vec<f64>,
        surfaces: Vec<FittedSurface>,
    ) -> Result<Self, RegionError> {
        if levels.is_empty() || levels.len() != surfaces.len() {
            return Err(RegionError::Family("one surface per level required".into()));
        }
        if !levels.windows(2).all(|w| w[0] < w[1]) {
            return Err(RegionError::Family(
                "levels must be strictly ascending".into(),
            ));
        }
        if surfaces
            .iter()
            .any(|s| s.inputs != [Variable::ICharge, Variable::IDischarge])
        {
            return Err(RegionError::Family(
                "surfaces must be over (i_charge, i_discharge)".into(),
            ));
        }
        let mut ch = Interval::new(f64::NEG_INFINITY, f64::INFINITY);
        let mut dis = ch;
        for s in &surfaces {
            ch = Interval::new(ch.lo.max(s.domain[0][0]), ch.hi.min(s.domain[0][1]));
            dis = Interval::new(dis.lo.max(s.domain[1][0]), dis.hi.min(s.domain[1][1]));
        }
        if !(ch.is_valid() && dis.is_valid()) {
            return Err(RegionError::Family("surface domains do not overlap".into()));
        }
        Ok(Self {
            levels,
            surfaces,
            i_charge: ch,
            i_discharge: dis,
        })
    }

    pub fn v_min_domain(&self) -> f64 {
        self.levels[0]
    }

    pub fn v_max_domain(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("family serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, RegionError> {
        let raw: Self =
            serde_json::from_str(text).map_err(|e| RegionError::Family(e.to_string()))?;
        Self::from_surfaces(raw.levels, raw.surfaces)
    }
}

/// Whether the predicted RUL at `point = (i_charge, i_discharge)` meets the
/// target.
pub fn feasibility(
    surface: &FittedSurface,
    point: [f64; 2],
    target: RulTarget,
) -> Result<bool, RegionError> {
    Ok(surface.predict_hours(point)? >= target.hours())
}

/// Axis-aligned operating box. A box with `feasible == false` has zero size
/// and means the target cannot be met at this health state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub feasible: bool,
    pub t_hours: f64,
    /// Health indicator of the cell the box was built for, when known.
    pub hi: Option<f64>,
    pub i_charge_min: f64,
    pub i_charge_max: f64,
    pub i_discharge_min: f64,
    pub i_discharge_max: f64,
    pub v_min_domain: f64,
    pub v_max_bound: f64,
    /// Common scale applied to both current spans.
    pub scale: f64,
    /// Discharge-axis length.
    pub i_length: f64,
    pub i_charge_length: f64,
    pub v_width: f64,
}

impl BoxRegion {
    fn with_scale(family: &SurfaceFamily, level: usize, scale: f64, target: RulTarget) -> Self {
        let ch = family.i_charge;
        let dis = family.i_discharge;
        let i_charge_max = ch.lo + scale * ch.span();
        let i_discharge_max = dis.lo + scale * dis.span();
        Self {
            feasible: true,
            t_hours: target.hours(),
            hi: None,
            i_charge_min: ch.lo,
            i_charge_max,
            i_discharge_min: dis.lo,
            i_discharge_max,
            v_min_domain: family.v_min_domain(),
            v_max_bound: family.levels[level],
            scale,
            i_length: i_discharge_max - dis.lo,
            i_charge_length: i_charge_max - ch.lo,
            v_width: family.levels[level] - family.v_min_domain(),
        }
    }

    /// Zero-size box anchored at the domain's low corner.
    pub fn infeasible(
        i_charge: Interval,
        i_discharge: Interval,
        v_min_domain: f64,
        t_hours: f64,
        hi: Option<f64>,
    ) -> Self {
        Self {
            feasible: false,
            t_hours,
            hi,
            i_charge_min: i_charge.lo,
            i_charge_max: i_charge.lo,
            i_discharge_min: i_discharge.lo,
            i_discharge_max: i_discharge.lo,
            v_min_domain,
            v_max_bound: v_min_domain,
            scale: 0.0,
            i_length: 0.0,
            i_charge_length: 0.0,
            v_width: 0.0,
        }
    }

    pub fn with_hi(mut self, hi: f64) -> Self {
        self.hi = Some(hi);
        self
    }

    /// `n x n` points spanning the box's current rectangle, edges included.
    pub fn grid(&self, n: usize) -> Vec<[f64; 2]> {
        rectangle_grid(
            [self.i_charge_min, self.i_charge_max],
            [self.i_discharge_min, self.i_discharge_max],
            n,
        )
    }

    /// Whether `other` lies inside `self` in all three dimensions.
    pub fn contains(&self, other: &BoxRegion) -> bool {
        if !other.feasible {
            return true;
        }
        self.feasible
            && other.i_charge_max <= self.i_charge_max
            && other.i_discharge_max <= self.i_discharge_max
            && other.v_max_bound <= self.v_max_bound
            && other.i_charge_min >= self.i_charge_min
            && other.i_discharge_min >= self.i_discharge_min
    }
}

fn rectangle_grid(ch: [f64; 2], dis: [f64; 2], n: usize) -> Vec<[f64; 2]> {
    let n = n.max(2);
    let at = |r: [f64; 2], k: usize| {
        if k == n - 1 {
            r[1]
        } else {
            r[0] + (r[1] - r[0]) * k as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            out.push([at(ch, a), at(dis, b)]);
        }
    }
    out
}

/// Record of the stage-two bisection, kept for inspection.
#[derive(Debug, Clone, Default)]
pub struct BoxSearchTrace {
    pub stage_one_level: Option<usize>,
    pub candidates: Vec<(BoxRegion, bool)>,
}

fn rectangle_feasible(
    family: &SurfaceFamily,
    level: usize,
    candidate: &BoxRegion,
    target: RulTarget,
) -> Result<bool, RegionError> {
    let grid = candidate.grid(VALIDATION_GRID);
    for surface in &family.surfaces[..=level] {
        for &p in &grid {
            if !feasibility(surface, p, target)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Builds the inner-approximating box for `target`.
pub fn build_box(family: &SurfaceFamily, target: RulTarget) -> Result<BoxRegion, RegionError> {
    build_box_traced(family, target, &mut BoxSearchTrace::default())
}

pub fn build_box_traced(
    family: &SurfaceFamily,
    target: RulTarget,
    trace: &mut BoxSearchTrace,
) -> Result<BoxRegion, RegionError> {
    let anchor = [family.i_charge.lo, family.i_discharge.lo];
    // stage one: highest level whose anchor is feasible there and below
    let mut level = None;
    for (k, surface) in family.surfaces.iter().enumerate() {
        if feasibility(surface, anchor, target)? {
            level = Some(k);
        } else {
            break;
        }
    }
    let Some(level) = level else {
        return Err(RegionError::Infeasible {
            t_hours: target.hours(),
        });
    };
    trace.stage_one_level = Some(level);

    let full = BoxRegion::with_scale(family, level, 1.0, target);
    let full_ok = rectangle_feasible(family, level, &full, target)?;
    trace.candidates.push((full, full_ok));
    if full_ok {
        return Ok(full);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= SCALE_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let candidate = BoxRegion::with_scale(family, level, mid, target);
        let ok = rectangle_feasible(family, level, &candidate, target)?;
        trace.candidates.push((candidate, ok));
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BoxRegion::with_scale(family, level, lo, target))
}

/// Device-level limits derived from a box for a series string of cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryConstraints {
    pub p_ch_max_kw: f64,
    pub p_disc_max_kw: f64,
    pub v_bus_max_pu: f64,
}

/// Constant-current power bounds at nominal voltage, and the voltage ceiling
/// in per-unit of nominal cell voltage.
pub fn box_to_grid_constraints(
    region: &BoxRegion,
    params: &CellParams,
    n_cells: usize,
) -> BatteryConstraints {
    let v_bus_max_pu = region.v_max_bound / params.nominal_voltage;
    if !region.feasible {
        return BatteryConstraints {
            p_ch_max_kw: 0.0,
            p_disc_max_kw: 0.0,
            v_bus_max_pu,
        };
    }
    let kw = |amps: f64| n_cells as f64 * params.nominal_voltage * amps / 1000.0;
    BatteryConstraints {
        p_ch_max_kw: kw(region.i_charge_max),
        p_disc_max_kw: kw(region.i_discharge_max),
        v_bus_max_pu,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Scenarios simulated per ageing state.
    pub inner_samples: usize,
    pub levels: usize,
    pub degree: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            inner_samples: 400,
            levels: DEFAULT_LEVELS,
            degree: DEFAULT_DEGREE,
        }
    }
}

/// Surfaces for a cell that has already run `efc` reference cycles. The
/// inner campaign reuses `spec.master_seed`, so every ageing state sees the
/// same operating-limit draws.
pub fn family_at_efc(
    params: &CellParams,
    spec: &SamplingSpec,
    efc: f64,
    options: &SweepOptions,
) -> Result<SurfaceFamily, RegionError> {
    let inner = SamplingSpec {
        n_samples: options.inner_samples,
        ..spec.at_efc(efc)
    };
    let records = run_campaign(&inner, params)?;
    SurfaceFamily::from_records(&records, options.levels, options.degree)
}

/// Box for a cell at `efc`; a dead cell or an unattainable target gives a
/// zero-size box rather than an error.
pub fn box_at_efc(
    params: &CellParams,
    spec: &SamplingSpec,
    efc: f64,
    target: RulTarget,
    options: &SweepOptions,
) -> Result<BoxRegion, RegionError> {
    let state = state_from_efc(efc, params)?;
    let hi = health_indicator(&state, params)?;
    let dead = state.capacity_ratio(params) <= params.eol_capacity_fraction;
    let zero = || {
        let ch = spec.i_charge_range.to_amperes(params);
        let dis = spec.i_discharge_range.to_amperes(params);
        let v_floor = params.ocv(spec.soc_max_range.lo) + ch.lo * params.r_eol;
        BoxRegion::infeasible(ch, dis, v_floor, target.hours(), Some(hi))
    };
    if dead {
        return Ok(zero());
    }
    let family = family_at_efc(params, spec, efc, options)?;
    match build_box(&family, target) {
        Ok(b) => Ok(b.with_hi(hi)),
        Err(RegionError::Infeasible { .. }) => Ok(BoxRegion::infeasible(
            family.i_charge,
            family.i_discharge,
            family.v_min_domain(),
            target.hours(),
            Some(hi),
        )),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub scenario_id: usize,
    pub initial_efc: f64,
    pub hi: f64,
    pub region: BoxRegion,
}

/// Samples ageing states from `spec.initial_efc_range` and builds a box for
/// each. Output is sorted by scenario id.
pub fn hi_sweep(
    params: &CellParams,
    spec: &SamplingSpec,
    target: RulTarget,
    options: &SweepOptions,
) -> Result<Vec<SweepEntry>, RegionError> {
    spec.validate(params)?;
    let results: Vec<Result<SweepEntry, RegionError>> = (0..spec.n_samples)
        .into_par_iter()
        .map(|id| {
            let (_, efc) = crate::montecarlo::sample_scenario(spec, params, id)?;
            let region = box_at_efc(params, spec, efc, target, options)?;
            Ok(SweepEntry {
                scenario_id: id,
                initial_efc: efc,
                hi: region.hi.unwrap_or(f64::NAN),
                region,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Medians of `(v_width, i_length)` after binning entries by HI into
/// `bins` equal-width bins over [0, 1]. Empty bins are `None`.
pub fn binned_medians(entries: &[SweepEntry], bins: usize) -> Vec<Option<(f64, f64)>> {
    let mut buckets: Vec<Vec<&SweepEntry>> = vec![Vec::new(); bins];
    for e in entries {
        let k = ((e.hi * bins as f64).floor() as usize).min(bins - 1);
        buckets[k].push(e);
    }
    buckets
        .into_iter()
        .map(|b| {
            if b.is_empty() {
                return None;
            }
            let median = |mut v: Vec<f64>| {
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            };
            Some((
                median(b.iter().map(|e| e.region.v_width).collect()),
                median(b.iter().map(|e| e.region.i_length).collect()),
            ))
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(
    entries: &[SweepEntry],
    mut out: W,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(
        out,
        "scenario_id,initial_efc,hi,feasible,v_width,i_length,i_charge_length,v_max_bound,i_charge_max,i_discharge_max"
    )?;
    for e in entries {
        let r = &e.region;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.scenario_id,
            e.initial_efc,
            e.hi,
            r.feasible,
            r.v_width,
            r.i_length,
            r.i_charge_length,
            r.v_max_bound,
            r.i_charge_max,
            r.i_discharge_max
        )?;
    }
    Ok(())
}

/// Predicted RUL over an `n x n` grid of the full current domain at the
/// voltage level closest to `v_level`.
pub fn write_contour_csv<W: Write>(
    family: &SurfaceFamily,
    v_level: f64,
    target: RulTarget,
    n: usize,
    mut out: W,
    comment: Option<&str>,
) -> Result<(), RegionError> {
    let k = family
        .levels
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - v_level).abs().total_cmp(&(b.1 - v_level).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let surface = &family.surfaces[k];
    let io = |e: std::io::Error| RegionError::Family(e.to_string());
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(io)?;
    }
    writeln!(
        out,
        "v_level,i_charge,i_discharge,predicted_rul_hours,feasible"
    )
    .map_err(io)?;
    let grid = rectangle_grid(
        [family.i_charge.lo, family.i_charge.hi],
        [family.i_discharge.lo, family.i_discharge.hi],
        n,
    );
    for p in grid {
        let rul = surface.predict_hours(p)?;
        writeln!(
            out,
            "{},{},{},{},{}",
            family.levels[k],
            p[0],
            p[1],
            rul,
            rul >= target.hours()
        )
        .map_err(io)?;
    }
    Ok(())
}
