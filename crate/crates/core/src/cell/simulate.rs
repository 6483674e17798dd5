use serde::{Deserialize, Serialize};

use super::{
    charge_voltage_bound, discharge_voltage_bound, CellError, CellParams, CellState,
    OperatingLimits,
};

/// Guard multiple of `rated_life_efc` after which a simulation is declared
/// non-terminating.
const NON_TERMINATING_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Charge,
    Discharge,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Charge => Direction::Discharge,
            Direction::Discharge => Direction::Charge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulResult {
    /// Hours of cycling from the initial state until end of life.
    pub rul_hours: f64,
    pub v_max_observed: f64,
    pub v_min_observed: f64,
    pub final_state: CellState,
}

/// Moves the SOC to the bound of `limits` in `direction` at constant current
/// and applies one fade event for the charge moved.
pub fn run_half_cycle(
    state: &CellState,
    params: &CellParams,
    limits: &OperatingLimits,
    direction: Direction,
) -> Result<CellState, CellError> {
    if !(0.0 <= limits.soc_min && limits.soc_min < limits.soc_max && limits.soc_max <= 1.0) {
        return Err(CellError::Limits(format!(
            "require 0 <= soc_min < soc_max <= 1, got [{}, {}]",
            limits.soc_min, limits.soc_max
        )));
    }
    let (target, current) = match direction {
        Direction::Charge => (limits.soc_max, limits.i_charge),
        Direction::Discharge => (limits.soc_min, limits.i_discharge),
    };
    if !(current.is_finite() && current > 0.0) {
        return Err(CellError::Current(current));
    }
    Ok(advance(state, params, target, current))
}

fn advance(state: &CellState, params: &CellParams, target: f64, current: f64) -> CellState {
    let swing = (target - state.soc).abs();
    if swing == 0.0 {
        return *state;
    }
    let charge_moved = swing * state.capacity;
    let d_efc = charge_moved / (2.0 * params.nominal_capacity);

    let f = params.fade;
    let s_dod = swing.powf(f.dod_exponent);
    let c_rate = current / params.nominal_capacity;
    let s_rate = (f.rate_coefficient * (c_rate - 1.0)).exp();
    let soc_mean = 0.5 * (state.soc + target);
    let s_soc = 1.0 + f.mean_soc_coefficient * (soc_mean - 0.5);
    let fade_per_efc =
        (1.0 - params.eol_capacity_fraction) * params.nominal_capacity / params.rated_life_efc;
    let loss = fade_per_efc * d_efc * s_dod * s_rate * s_soc;

    let capacity = state.capacity - loss;
    CellState {
        soc: target,
        capacity,
        resistance: params.resistance_for_capacity(capacity),
        efc: state.efc + d_efc,
        elapsed: state.elapsed + charge_moved / current,
    }
}

/// Alternates charge and discharge half-cycles until the remaining capacity
/// reaches the end-of-life fraction.
///
/// The crossing inside the final half-cycle is located by linear
/// interpolation of the fade accrued over that half-cycle, so `rul_hours` is
/// continuous in the inputs.
pub fn simulate_to_eol(
    state: &CellState,
    params: &CellParams,
    limits: &OperatingLimits,
) -> Result<RulResult, CellError> {
    let ratio = state.capacity_ratio(params);
    if ratio <= params.eol_capacity_fraction {
        return Err(CellError::AlreadyDead { ratio });
    }
    // surfaces bad windows/currents before the loop
    run_half_cycle(state, params, limits, Direction::Charge)?;

    let eol_capacity = params.eol_capacity();
    let efc_guard = NON_TERMINATING_FACTOR * params.rated_life_efc;
    let mut current = *state;
    let mut direction = if state.soc < limits.soc_max {
        Direction::Charge
    } else {
        Direction::Discharge
    };

    loop {
        let (target, amps) = match direction {
            Direction::Charge => (limits.soc_max, limits.i_charge),
            Direction::Discharge => (limits.soc_min, limits.i_discharge),
        };
        let next = advance(&current, params, target, amps);
        if next.capacity <= eol_capacity {
            let frac = (current.capacity - eol_capacity) / (current.capacity - next.capacity);
            let rul_hours =
                current.elapsed + frac * (next.elapsed - current.elapsed) - state.elapsed;
            return Ok(RulResult {
                rul_hours,
                v_max_observed: charge_voltage_bound(
                    params,
                    limits.soc_max,
                    limits.i_charge,
                    next.resistance,
                ),
                v_min_observed: discharge_voltage_bound(
                    params,
                    limits.soc_min,
                    limits.i_discharge,
                    next.resistance,
                ),
                final_state: next,
            });
        }
        if next.efc > efc_guard {
            return Err(CellError::NonTerminating { efc: next.efc });
        }
        current = next;
        direction = direction.flip();
    }
}
