//! Named experiment configurations.

use crate::montecarlo::{CurrentRange, Interval, SamplingSpec};

pub const DEFAULT_SEED: u64 = 20_210_927;

/// Voltage-bound study: fixed 4.3 A / 11.7 A currents, sampled SOC window,
/// cells starting at 500 equivalent full cycles.
pub fn fig2() -> SamplingSpec {
    SamplingSpec {
        n_samples: 500,
        soc_max_range: Interval::new(0.6, 1.0),
        soc_min_range: Interval::new(0.0, 0.4),
        i_charge_range: CurrentRange::amperes(4.3, 4.3),
        i_discharge_range: CurrentRange::amperes(11.7, 11.7),
        initial_efc_range: Interval::point(500.0),
        master_seed: DEFAULT_SEED,
    }
}

/// Current and upper-voltage study: SOC_min pinned at 0, charge 1C-2C,
/// discharge 1C-5C.
pub fn fig3() -> SamplingSpec {
    SamplingSpec {
        n_samples: 10_000,
        soc_max_range: Interval::new(0.6, 1.0),
        soc_min_range: Interval::point(0.0),
        i_charge_range: CurrentRange::c_rate(1.0, 2.0),
        i_discharge_range: CurrentRange::c_rate(1.0, 5.0),
        initial_efc_range: Interval::point(500.0),
        master_seed: DEFAULT_SEED,
    }
}

/// Health-indicator sweep: ageing sampled over the whole rated life,
/// SOC_max in 90-100 %.
pub fn fig5() -> SamplingSpec {
    SamplingSpec {
        n_samples: 100,
        soc_max_range: Interval::new(0.9, 1.0),
        soc_min_range: Interval::point(0.0),
        i_charge_range: CurrentRange::c_rate(1.0, 2.0),
        i_discharge_range: CurrentRange::c_rate(1.0, 5.0),
        initial_efc_range: Interval::new(0.0, 1000.0),
        master_seed: DEFAULT_SEED,
    }
}

pub fn by_name(name: &str) -> Option<SamplingSpec> {
    match name {
        "fig2" => Some(fig2()),
        "fig3" => Some(fig3()),
        "fig5" => Some(fig5()),
        _ => None,
    }
}

pub const NAMES: [&str; 3] = ["fig2", "fig3", "fig5"];
