#![allow(dead_code)]

use std::path::PathBuf;

use hirul_core::case::NetworkCase;
use hirul_core::powerflow::{solve_powerflow, PfOptions};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

pub fn load_case(name: &str) -> NetworkCase {
    let text = std::fs::read_to_string(data_path(name)).unwrap();
    NetworkCase::parse_matpower(&text).unwrap()
}

/// Cheapest feasible dispatch of the second generator found by stepping its
/// output over `[p_min, p_max]` and solving a power flow at each step.
/// Returns `(cost, pg2_mw)`.
pub fn brute_force_dispatch(case: &NetworkCase, step_mw: f64) -> (f64, f64) {
    let opts = PfOptions {
        enforce_q_limits: false,
        ..PfOptions::default()
    };
    let g2 = &case.generators[1];
    let steps = ((g2.p_max - g2.p_min) / step_mw).round() as usize;
    let mut best = (f64::INFINITY, f64::NAN);
    let mut c = case.clone();
    for s in 0..=steps {
        let pg2 = g2.p_min + s as f64 * step_mw;
        c.generators[1].pg = pg2;
        let Ok(pf) = solve_powerflow(&c, &opts) else {
            continue;
        };
        let pg1 = pf.slack_p;
        let ok_gen = c
            .generators
            .iter()
            .zip([pg1, pg2])
            .zip(&pf.gen_qg)
            .all(|((g, p), &q)| {
                p >= g.p_min - 1e-9
                    && p <= g.p_max + 1e-9
                    && q >= g.q_min - 1e-9
                    && q <= g.q_max + 1e-9
            });
        let ok_v = c
            .buses
            .iter()
            .zip(&pf.vm)
            .all(|(b, &v)| v >= b.v_min - 1e-9 && v <= b.v_max + 1e-9);
        let ok_flow = c.branches.iter().enumerate().all(|(k, br)| {
            br.rate_a <= 0.0
                || (pf.pf[k].hypot(pf.qf[k]) <= br.rate_a && pf.pt[k].hypot(pf.qt[k]) <= br.rate_a)
        });
        if !(ok_gen && ok_v && ok_flow) {
            continue;
        }
        let cost = c.gencost[0].cost(pg1) + c.gencost[1].cost(pg2);
        if cost < best.0 {
            best = (cost, pg2);
        }
    }
    best
}
