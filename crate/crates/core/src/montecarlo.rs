//! Seeded Monte Carlo campaigns over operating limits.
//!
//! Every scenario draws from its own ChaCha stream selected by
//! `(master_seed, scenario_id)`, so a scenario can be regenerated in
//! isolation and a campaign gives the same records whatever the thread count.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{
    health_indicator, simulate_to_eol, state_from_efc, CellError, CellParams, OperatingLimits,
};

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid sampling spec: {0}")]
    Spec(String),
    #[error("scenario {id} out of range for {n} samples")]
    Index { id: usize, n: usize },
    #[error("scenario {scenario_id}: {source}")]
    Cell {
        scenario_id: usize,
        #[source]
        source: CellError,
    },
    #[error("campaign csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("campaign io: {0}")]
    Io(#[from] std::io::Error),
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.gen();
        if self.lo == self.hi {
            self.lo
        } else {
            // u < 1, but rounding can still land on hi; keep it in range
            (self.lo + u * (self.hi - self.lo)).min(self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentUnit {
    #[default]
    Amperes,
    CRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentRange {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub unit: CurrentUnit,
}

impl CurrentRange {
    pub const fn amperes(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            unit: CurrentUnit::Amperes,
        }
    }

    pub const fn c_rate(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            unit: CurrentUnit::CRate,
        }
    }

    pub fn to_amperes(&self, params: &CellParams) -> Interval {
        match self.unit {
            CurrentUnit::Amperes => Interval::new(self.lo, self.hi),
            CurrentUnit::CRate => Interval::new(
                params.c_rate_to_amperes(self.lo),
                params.c_rate_to_amperes(self.hi),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub n_samples: usize,
    pub soc_max_range: Interval,
    pub soc_min_range: Interval,
    pub i_charge_range: CurrentRange,
    pub i_discharge_range: CurrentRange,
    pub initial_efc_range: Interval,
    pub master_seed: u64,
}

impl SamplingSpec {
    pub fn from_json(text: &str) -> Result<Self, McError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| McError::Spec(e.to_string()))?;
        Ok(spec)
    }

    pub fn validate(&self, params: &CellParams) -> Result<(), McError> {
        if self.n_samples == 0 {
            return Err(McError::Spec("n_samples must be at least 1".into()));
        }
        let named = [
            ("soc_max_range", self.soc_max_range),
            ("soc_min_range", self.soc_min_range),
            ("i_charge_range", self.i_charge_range.to_amperes(params)),
            (
                "i_discharge_range",
                self.i_discharge_range.to_amperes(params),
            ),
            ("initial_efc_range", self.initial_efc_range),
        ];
        for (name, range) in named {
            if !range.is_valid() {
                return Err(McError::Spec(format!("{name} is empty or unordered")));
            }
        }
        let unit = Interval::new(0.0, 1.0);
        if !(unit.contains(self.soc_min_range.lo) && unit.contains(self.soc_max_range.hi)) {
            return Err(McError::Spec("soc ranges must lie in [0, 1]".into()));
        }
        if !(self.soc_min_range.hi < self.soc_max_range.lo) {
            return Err(McError::Spec(
                "soc_min_range must lie entirely below soc_max_range".into(),
            ));
        }
        if self.i_charge_range.to_amperes(params).lo <= 0.0
            || self.i_discharge_range.to_amperes(params).lo <= 0.0
        {
            return Err(McError::Spec("currents must be positive".into()));
        }
        if self.initial_efc_range.lo < 0.0 || self.initial_efc_range.hi > params.rated_life_efc {
            return Err(McError::Spec(format!(
                "initial_efc_range must lie in [0, {}]",
                params.rated_life_efc
            )));
        }
        Ok(())
    }

    /// Same ranges with the initial ageing pinned to one value.
    pub fn at_efc(&self, efc: f64) -> Self {
        Self {
            initial_efc_range: Interval::point(efc),
            ..self.clone()
        }
    }
}

/// Per-scenario random stream: the master seed keys the generator and the
/// scenario id selects the stream.
pub fn scenario_rng(master_seed: u64, scenario_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(scenario_id as u64);
    rng
}

/// Draws one scenario. Dimensions are drawn in a fixed order: soc_max,
/// soc_min, charge current, discharge current, initial cycles.
pub fn sample_scenario(
    spec: &SamplingSpec,
    params: &CellParams,
    scenario_id: usize,
) -> Result<(OperatingLimits, f64), McError> {
    if scenario_id >= spec.n_samples {
        return Err(McError::Index {
            id: scenario_id,
            n: spec.n_samples,
        });
    }
    let mut rng = scenario_rng(spec.master_seed, scenario_id);
    let soc_max = spec.soc_max_range.sample(&mut rng);
    let soc_min = spec.soc_min_range.sample(&mut rng);
    let i_charge = spec.i_charge_range.to_amperes(params).sample(&mut rng);
    let i_discharge = spec.i_discharge_range.to_amperes(params).sample(&mut rng);
    let initial_efc = spec.initial_efc_range.sample(&mut rng);
    let limits = OperatingLimits::new(soc_min, soc_max, i_charge, i_discharge, params).map_err(
        |source| McError::Cell {
            scenario_id,
            source,
        },
    )?;
    Ok((limits, initial_efc))
}

/// One Monte Carlo sample with its simulated outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub scenario_id: usize,
    pub limits: OperatingLimits,
    pub initial_efc: f64,
    pub hi_initial: f64,
    pub rul_hours: f64,
    pub v_max: f64,
    pub v_min: f64,
}

pub fn run_scenario(
    spec: &SamplingSpec,
    params: &CellParams,
    scenario_id: usize,
) -> Result<ScenarioRecord, McError> {
    let (limits, initial_efc) = sample_scenario(spec, params, scenario_id)?;
    let wrap = |source| McError::Cell {
        scenario_id,
        source,
    };
    let state = state_from_efc(initial_efc, params).map_err(wrap)?;
    let hi_initial = health_indicator(&state, params).map_err(wrap)?;
    let result = simulate_to_eol(&state, params, &limits).map_err(wrap)?;
    Ok(ScenarioRecord {
        scenario_id,
        limits,
        initial_efc,
        hi_initial,
        rul_hours: result.rul_hours,
        v_max: result.v_max_observed,
        v_min: result.v_min_observed,
    })
}

/// Runs every scenario of `spec` on the current rayon pool. Records come
/// back sorted by id; when several scenarios fail, the lowest id's error is
/// reported.
pub fn run_campaign(
    spec: &SamplingSpec,
    params: &CellParams,
) -> Result<Vec<ScenarioRecord>, McError> {
    params.validate().map_err(|source| McError::Cell {
        scenario_id: 0,
        source,
    })?;
    spec.validate(params)?;
    let results: Vec<Result<ScenarioRecord, McError>> = (0..spec.n_samples)
        .into_par_iter()
        .map(|id| run_scenario(spec, params, id))
        .collect();
    results.into_iter().collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    scenario_id: usize,
    soc_min: f64,
    soc_max: f64,
    #[serde(rename = "i_charge_A")]
    i_charge: f64,
    #[serde(rename = "i_discharge_A")]
    i_discharge: f64,
    initial_efc: f64,
    hi_initial: f64,
    rul_hours: f64,
    v_max: f64,
    v_min: f64,
}

/// Writes records as CSV. An optional `comment` is emitted first as a
/// `# ...` line.
pub fn write_campaign_csv<W: Write>(
    records: &[ScenarioRecord],
    mut out: W,
    comment: Option<&str>,
) -> Result<(), McError> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow {
            scenario_id: r.scenario_id,
            soc_min: r.limits.soc_min,
            soc_max: r.limits.soc_max,
            i_charge: r.limits.i_charge,
            i_discharge: r.limits.i_discharge,
            initial_efc: r.initial_efc,
            hi_initial: r.hi_initial,
            rul_hours: r.rul_hours,
            v_max: r.v_max,
            v_min: r.v_min,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records written by [`write_campaign_csv`]; `#` lines are skipped.
pub fn read_campaign_csv<R: Read>(input: R) -> Result<Vec<ScenarioRecord>, McError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    reader
        .deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(ScenarioRecord {
                scenario_id: row.scenario_id,
                limits: OperatingLimits {
                    soc_min: row.soc_min,
                    soc_max: row.soc_max,
                    i_charge: row.i_charge,
                    i_discharge: row.i_discharge,
                    v_max: row.v_max,
                    v_min: row.v_min,
                },
                initial_efc: row.initial_efc,
                hi_initial: row.hi_initial,
                rul_hours: row.rul_hours,
                v_max: row.v_max,
                v_min: row.v_min,
            })
        })
        .collect()
}
