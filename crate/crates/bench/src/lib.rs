//! Fixtures shared by the benchmarks.

use hirul_core::case::NetworkCase;
use hirul_core::cell::CellParams;
use hirul_core::montecarlo::{run_campaign, ScenarioRecord};
use hirul_core::presets;

pub const CASE39: &str = include_str!("../../../data/case39.m");

pub fn case39() -> NetworkCase {
    NetworkCase::parse_matpower(CASE39).expect("bundled case parses")
}

/// The fig3 campaign cut down to `n` scenarios.
pub fn fig3_records(n: usize) -> Vec<ScenarioRecord> {
    let spec = hirul_core::montecarlo::SamplingSpec {
        n_samples: n,
        ..presets::fig3()
    };
    run_campaign(&spec, &CellParams::lfp()).expect("preset campaign runs")
}
