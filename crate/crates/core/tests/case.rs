mod common;

use common::load_case;
use hirul_core::case::{BusType, CaseError, NetworkCase};
use proptest::prelude::*;

#[test]
fn case39_counts() {
    let c = load_case("case39.m");
    assert_eq!(c.base_mva, 100.0);
    assert_eq!(c.buses.len(), 39);
    assert_eq!(c.generators.len(), 10);
    assert_eq!(c.branches.len(), 46);
    assert_eq!(c.gencost.len(), 10);
    assert_eq!(
        c.buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .count(),
        1
    );
    assert_eq!(c.buses[c.slack_index()].id, 31);
    let load: f64 = c.buses.iter().map(|b| b.pd).sum();
    assert!((load - 6254.23).abs() < 1e-6);
    c.validate().unwrap();
}

#[test]
fn parse_error_has_location() {
    let text = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 230 1 1.1 0.9\n  2 1 x];\n";
    match NetworkCase::parse_matpower(text) {
        Err(CaseError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn json_round_trip() {
    let c = load_case("case39.m");
    assert_eq!(NetworkCase::from_json(&c.to_json()).unwrap(), c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn matpower_round_trip(
        pd in prop::collection::vec(-500.0f64..1500.0, 39),
        r in prop::collection::vec(0.0f64..0.05, 46),
        tap in prop::collection::vec(prop::option::of(0.9f64..1.1), 46),
        pg in prop::collection::vec(0.0f64..1000.0, 10),
    ) {
        let mut c = load_case("case39.m");
        for (b, v) in c.buses.iter_mut().zip(&pd) {
            b.pd = *v;
        }
        for ((br, v), t) in c.branches.iter_mut().zip(&r).zip(&tap) {
            br.r = *v;
            br.tap = t.unwrap_or(0.0);
        }
        for (g, v) in c.generators.iter_mut().zip(&pg) {
            g.pg = *v;
        }
        let back = NetworkCase::parse_matpower(&c.to_matpower()).unwrap();
        prop_assert_eq!(back, c);
    }
}
