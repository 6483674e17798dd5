//! Event-based LiFePO4 cell model.
//!
//! A cell is cycled between the SOC bounds of an [`OperatingLimits`] at
//! constant current. Each half-cycle is resolved analytically (no time
//! stepping): its duration follows from the charge moved, and capacity fade
//! plus resistance growth are applied once at the end of the half-cycle.
//!
//! Sign convention for currents passed to [`terminal_voltage`]: positive is
//! charging.

mod ocv;
mod simulate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ocv::OcvCurve;
pub use simulate::{run_half_cycle, simulate_to_eol, Direction, RulResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error("invalid cell parameters: {0}")]
    Param(String),
    #[error("invalid operating limits: {0}")]
    Limits(String),
    #[error("current must be positive and finite, got {0} A")]
    Current(f64),
    #[error("cell is already at end of life (capacity ratio {ratio:.4})")]
    AlreadyDead { ratio: f64 },
    #[error("simulation did not reach end of life after {efc:.1} equivalent full cycles")]
    NonTerminating { efc: f64 },
    #[error("equivalent full cycles {efc} outside [0, {max}]")]
    Range { efc: f64, max: f64 },
}

/// Stress multipliers of the per-throughput capacity-fade law.
///
/// Loss per half-cycle is
/// `C_I * (1 - eol_fraction) / rated_life_efc * d_efc * s_dod * s_rate * s_soc`
/// with `s_dod = dod^dod_exponent`, `s_rate = exp(rate_coefficient * (c_rate - 1))`
/// and `s_soc = 1 + mean_soc_coefficient * (soc_mean - 0.5)`. All three equal 1
/// under the reference duty (1C, full depth, mean SOC 0.5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadeCoefficients {
    pub dod_exponent: f64,
    pub rate_coefficient: f64,
    pub mean_soc_coefficient: f64,
}

impl Default for FadeCoefficients {
    fn default() -> Self {
        Self {
            dod_exponent: 0.5,
            rate_coefficient: 0.5,
            mean_soc_coefficient: 0.45,
        }
    }
}

/// Static description of one cell. Units: ampere-hours, volts, ohms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Initial (beginning-of-life) capacity C_I, Ah.
    pub nominal_capacity: f64,
    /// Nominal voltage used for power conversion, V.
    pub nominal_voltage: f64,
    pub ocv_curve: OcvCurve,
    /// Internal resistance at beginning of life, ohm.
    pub r_bol: f64,
    /// Internal resistance at end of life, ohm.
    pub r_eol: f64,
    /// Discharge cut-off floor, V.
    pub cutoff_voltage: f64,
    /// Absolute OCV ceiling, V.
    pub max_cell_voltage: f64,
    /// End of life when remaining/initial capacity drops to this ratio.
    pub eol_capacity_fraction: f64,
    /// Equivalent full cycles to end of life under the reference duty.
    pub rated_life_efc: f64,
    #[serde(default)]
    pub fade: FadeCoefficients,
}

impl Default for CellParams {
    fn default() -> Self {
        Self::lfp()
    }
}

impl CellParams {
    /// 2.3 Ah / 3.3 V LiFePO4 cell rated for 1000 equivalent full cycles.
    pub fn lfp() -> Self {
        Self {
            nominal_capacity: 2.3,
            nominal_voltage: 3.3,
            ocv_curve: OcvCurve::lfp(),
            r_bol: 0.010,
            r_eol: 0.020,
            cutoff_voltage: 2.0,
            max_cell_voltage: 3.65,
            eol_capacity_fraction: 0.8,
            rated_life_efc: 1000.0,
            fade: FadeCoefficients::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CellError> {
        let params: Self =
            serde_json::from_str(text).map_err(|e| CellError::Param(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), CellError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.nominal_capacity) || !positive(self.nominal_voltage) {
            return Err(CellError::Param(
                "nominal capacity and voltage must be positive".into(),
            ));
        }
        if !(positive(self.r_bol) && self.r_eol > self.r_bol && self.r_eol.is_finite()) {
            return Err(CellError::Param("require 0 < r_bol < r_eol".into()));
        }
        if !(self.eol_capacity_fraction > 0.0 && self.eol_capacity_fraction < 1.0) {
            return Err(CellError::Param(
                "eol_capacity_fraction must lie in (0, 1)".into(),
            ));
        }
        if !positive(self.rated_life_efc) {
            return Err(CellError::Param("rated_life_efc must be positive".into()));
        }
        if self.ocv_curve.min_voltage() < self.cutoff_voltage {
            return Err(CellError::Param(
                "ocv(0) is below the cut-off voltage".into(),
            ));
        }
        if self.ocv_curve.max_voltage() > self.max_cell_voltage {
            return Err(CellError::Param(
                "ocv(1) exceeds the cell voltage ceiling".into(),
            ));
        }
        let f = self.fade;
        if !(f.dod_exponent.is_finite() && f.rate_coefficient.is_finite())
            || f.mean_soc_coefficient.abs() >= 2.0
        {
            return Err(CellError::Param("fade coefficients out of range".into()));
        }
        Ok(())
    }

    pub fn ocv(&self, soc: f64) -> f64 {
        self.ocv_curve.voltage(soc)
    }

    /// Converts a C-rate to amperes against the nominal capacity.
    pub fn c_rate_to_amperes(&self, c_rate: f64) -> f64 {
        c_rate * self.nominal_capacity
    }

    pub fn eol_capacity(&self) -> f64 {
        self.eol_capacity_fraction * self.nominal_capacity
    }

    /// Resistance implied by a remaining capacity: linear in lost capacity,
    /// reaching `r_eol` exactly at the end-of-life capacity.
    pub fn resistance_for_capacity(&self, capacity: f64) -> f64 {
        let lost = (self.nominal_capacity - capacity)
            / ((1.0 - self.eol_capacity_fraction) * self.nominal_capacity);
        (self.r_bol + (self.r_eol - self.r_bol) * lost).clamp(self.r_bol, self.r_eol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub soc: f64,
    /// Remaining capacity C_R, Ah.
    pub capacity: f64,
    /// Internal resistance R_X, ohm.
    pub resistance: f64,
    /// Accumulated equivalent full cycles.
    pub efc: f64,
    /// Hours of cycling since the state was created.
    pub elapsed: f64,
}

impl CellState {
    pub fn fresh(params: &CellParams) -> Self {
        Self {
            soc: 0.0,
            capacity: params.nominal_capacity,
            resistance: params.r_bol,
            efc: 0.0,
            elapsed: 0.0,
        }
    }

    pub fn capacity_ratio(&self, params: &CellParams) -> f64 {
        self.capacity / params.nominal_capacity
    }
}

/// SOC window, constant-current magnitudes and the terminal-voltage bounds
/// they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingLimits {
    pub soc_min: f64,
    pub soc_max: f64,
    /// Charge current magnitude, A.
    pub i_charge: f64,
    /// Discharge current magnitude, A.
    pub i_discharge: f64,
    /// Terminal voltage at `soc_max` under charge current, V.
    pub v_max: f64,
    /// Terminal voltage at `soc_min` under discharge current, V.
    pub v_min: f64,
}

impl OperatingLimits {
    /// Derives the voltage bounds at end-of-life resistance, the values a
    /// simulation to end of life reports.
    pub fn new(
        soc_min: f64,
        soc_max: f64,
        i_charge: f64,
        i_discharge: f64,
        params: &CellParams,
    ) -> Result<Self, CellError> {
        let limits = Self {
            soc_min,
            soc_max,
            i_charge,
            i_discharge,
            v_max: charge_voltage_bound(params, soc_max, i_charge, params.r_eol),
            v_min: discharge_voltage_bound(params, soc_min, i_discharge, params.r_eol),
        };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<(), CellError> {
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(CellError::Limits(format!(
                "require 0 <= soc_min < soc_max <= 1, got [{}, {}]",
                self.soc_min, self.soc_max
            )));
        }
        for current in [self.i_charge, self.i_discharge] {
            if !(current.is_finite() && current > 0.0) {
                return Err(CellError::Current(current));
            }
        }
        if !(self.v_min < self.v_max) {
            return Err(CellError::Limits("v_min must be below v_max".into()));
        }
        Ok(())
    }
}

pub(crate) fn charge_voltage_bound(
    params: &CellParams,
    soc_max: f64,
    i_charge: f64,
    resistance: f64,
) -> f64 {
    params.ocv(soc_max) + i_charge * resistance
}

pub(crate) fn discharge_voltage_bound(
    params: &CellParams,
    soc_min: f64,
    i_discharge: f64,
    resistance: f64,
) -> f64 {
    (params.ocv(soc_min) - i_discharge * resistance).max(params.cutoff_voltage)
}

/// Terminal voltage of the equivalent circuit: OCV plus the resistive drop.
/// `current` is signed, positive when charging.
pub fn terminal_voltage(state: &CellState, params: &CellParams, current: f64) -> f64 {
    params.ocv(state.soc) + current * state.resistance
}

/// Normalised resistance health indicator: 1 at beginning of life, 0 at end
/// of life, clamped to [0, 1].
pub fn health_indicator(state: &CellState, params: &CellParams) -> Result<f64, CellError> {
    if !(params.r_eol > params.r_bol) {
        return Err(CellError::Param(
            "health indicator needs r_eol > r_bol".into(),
        ));
    }
    Ok(((params.r_eol - state.resistance) / (params.r_eol - params.r_bol)).clamp(0.0, 1.0))
}

/// State of a fresh cell after `efc` equivalent full cycles of the reference
/// duty (1C, full depth). Under that duty every stress multiplier is 1, so
/// capacity falls linearly in throughput. SOC is left at 0 (fully
/// discharged) and the elapsed clock starts at zero.
pub fn state_from_efc(efc: f64, params: &CellParams) -> Result<CellState, CellError> {
    if !(efc.is_finite() && (0.0..=params.rated_life_efc).contains(&efc)) {
        return Err(CellError::Range {
            efc,
            max: params.rated_life_efc,
        });
    }
    let fade_per_efc =
        (1.0 - params.eol_capacity_fraction) * params.nominal_capacity / params.rated_life_efc;
    let capacity = params.nominal_capacity - fade_per_efc * efc;
    Ok(CellState {
        soc: 0.0,
        capacity,
        resistance: params.resistance_for_capacity(capacity),
        efc,
        elapsed: 0.0,
    })
}

/// Inverse of [`health_indicator`] composed with [`state_from_efc`] under the
/// reference duty.
pub fn efc_for_health_indicator(hi: f64, params: &CellParams) -> f64 {
    (1.0 - hi.clamp(0.0, 1.0)) * params.rated_life_efc
}
