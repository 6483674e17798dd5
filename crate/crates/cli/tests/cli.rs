use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hirul_core::region::{BoxRegion, SurfaceFamily};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn hirul(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hirul"))
        .args(args)
        .output()
        .unwrap()
}

fn run_in(dir: &Path, sub: &str, args: &[&str]) -> Output {
    let out = dir.join(sub);
    let mut all = vec!["--out", out.to_str().unwrap()];
    all.extend_from_slice(args);
    hirul(&all)
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .display()
        .to_string()
}

/// Data rows of a CSV written by the tool, comment and header removed.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    lines.next().expect("header");
    lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn cycle_sim_fresh_cell() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), "a", &["cycle-sim"]);
    ok(&o);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/rul.json")).unwrap()).unwrap();
    // 1C moves half a full cycle per hour
    let hours = v["result"]["rul_hours"].as_f64().unwrap();
    assert!((hours / 2.0 - 1000.0).abs() < 1.0, "{hours}");
    let first = fs::read(dir.path().join("a/rul.json")).unwrap();
    ok(&run_in(dir.path(), "a", &["cycle-sim"]));
    assert_eq!(fs::read(dir.path().join("a/rul.json")).unwrap(), first);
}

#[test]
fn cycle_sim_dead_cell_is_runtime_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("dead.json");
    fs::write(
        &cfg,
        r#"{"state": {"soc": 0.0, "capacity": 1.8, "resistance": 0.02, "efc": 1100.0, "elapsed": 0.0}}"#,
    )
    .unwrap();
    let o = run_in(
        dir.path(),
        "d",
        &["--config", cfg.to_str().unwrap(), "cycle-sim"],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("end of life"));
}

#[test]
fn mc_presets_and_manifest() {
    let dir = TempDir::new().unwrap();
    ok(&run_in(dir.path(), "f2", &["mc", "--preset", "fig2"]));
    let csv = dir.path().join("f2/campaign.csv");
    assert_eq!(rows(&csv).len(), 500);
    let manifest = fs::read(dir.path().join("f2/manifest.json")).unwrap();
    let first = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(first, format!("# manifest-sha256: {}", sha_hex(&manifest)));
    let m: serde_json::Value = serde_json::from_slice(&manifest).unwrap();
    assert_eq!(m["subcommand"], "mc");
    assert_eq!(m["master_seed"], hirul_core::presets::DEFAULT_SEED);

    ok(&run_in(dir.path(), "f3", &["mc", "--preset", "fig3"]));
    let r = rows(&dir.path().join("f3/campaign.csv"));
    assert_eq!(r.len(), 10_000);
    assert!(r.iter().all(|row| row[1].parse::<f64>().unwrap() == 0.0));

    let o = run_in(
        dir.path(),
        "z",
        &["mc", "--preset", "fig2", "--samples", "0"],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = run_in(dir.path(), "u", &["mc", "--preset", "fig9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_do_not_depend_on_threads() {
    let dir = TempDir::new().unwrap();
    ok(&run_in(
        dir.path(),
        "t",
        &["--threads", "1", "mc", "--preset", "fig5"],
    ));
    let one = fs::read(dir.path().join("t/campaign.csv")).unwrap();
    ok(&run_in(
        dir.path(),
        "t",
        &["--threads", "4", "mc", "--preset", "fig5"],
    ));
    assert_eq!(fs::read(dir.path().join("t/campaign.csv")).unwrap(), one);
    ok(&run_in(
        dir.path(),
        "t",
        &["--threads", "4", "--seed", "7", "mc", "--preset", "fig5"],
    ));
    assert_ne!(fs::read(dir.path().join("t/campaign.csv")).unwrap(), one);
}

#[test]
fn analyze_signs_and_surface_round_trip() {
    let dir = TempDir::new().unwrap();
    ok(&run_in(dir.path(), "f2", &["mc", "--preset", "fig2"]));
    let input = dir.path().join("f2/campaign.csv");
    ok(&run_in(
        dir.path(),
        "a2",
        &["analyze", "--input", input.to_str().unwrap()],
    ));
    let table = rows(&dir.path().join("a2/correlation.csv"));
    assert_eq!(table.len(), 3);
    let signs: Vec<bool> = table
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap() > 0.0)
        .collect();
    assert_eq!(signs, [false, true, false]);

    ok(&run_in(
        dir.path(),
        "f3",
        &["mc", "--preset", "fig3", "--samples", "800"],
    ));
    let input = dir.path().join("f3/campaign.csv");
    ok(&run_in(
        dir.path(),
        "a3",
        &["analyze", "--input", input.to_str().unwrap()],
    ));
    let text = fs::read_to_string(dir.path().join("a3/surface.json")).unwrap();
    let family = SurfaceFamily::from_json(&text).unwrap();
    let again = SurfaceFamily::from_json(&family.to_json()).unwrap();
    let p = [3.0, 6.0];
    for (a, b) in family.surfaces.iter().zip(&again.surfaces) {
        assert_eq!(a.predict_hours(p).unwrap(), b.predict_hours(p).unwrap());
    }

    let short = dir.path().join("short.csv");
    let text = fs::read_to_string(&input).unwrap();
    let head: Vec<&str> = text.lines().take(4).collect();
    fs::write(&short, head.join("\n")).unwrap();
    let o = run_in(
        dir.path(),
        "s",
        &["analyze", "--input", short.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
}

fn read_box(path: &Path) -> BoxRegion {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn box_targets_and_ageing() {
    let dir = TempDir::new().unwrap();
    ok(&run_in(
        dir.path(),
        "f3",
        &["mc", "--preset", "fig3", "--samples", "800"],
    ));
    let input = dir.path().join("f3/campaign.csv");
    ok(&run_in(
        dir.path(),
        "a",
        &["analyze", "--input", input.to_str().unwrap()],
    ));
    let surface = dir.path().join("a/surface.json");
    let s = surface.to_str().unwrap();

    ok(&run_in(
        dir.path(),
        "low",
        &["box", "--surface", s, "--target", "1"],
    ));
    let full = read_box(&dir.path().join("low/box.json"));
    assert!(full.feasible);
    assert_eq!(full.scale, 1.0);

    let o = run_in(
        dir.path(),
        "high",
        &["box", "--surface", s, "--target", "1e6"],
    );
    ok(&o);
    assert!(!read_box(&dir.path().join("high/box.json")).feasible);
    assert!(String::from_utf8_lossy(&o.stdout).contains("infeasible"));

    ok(&run_in(
        dir.path(),
        "young",
        &["box", "--efc", "100", "--target", "120"],
    ));
    ok(&run_in(
        dir.path(),
        "old",
        &["box", "--efc", "700", "--target", "120"],
    ));
    let young = read_box(&dir.path().join("young/box.json"));
    let old = read_box(&dir.path().join("old/box.json"));
    assert!(young.contains(&old));
    assert!(old.i_length < young.i_length);
    assert!(rows(&dir.path().join("old/contour.csv")).len() > 100);
}

#[test]
fn hi_sweep_writes_tables() {
    let dir = TempDir::new().unwrap();
    ok(&run_in(
        dir.path(),
        "h",
        &[
            "hi-sweep",
            "--samples",
            "12",
            "--inner-samples",
            "200",
            "--bins",
            "4",
        ],
    ));
    assert_eq!(rows(&dir.path().join("h/sweep.csv")).len(), 12);
    let medians = rows(&dir.path().join("h/medians.csv"));
    assert_eq!(medians.len(), 4);
    let total: usize = medians.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 12);
}

#[test]
fn opf_case39_both_modes() {
    let dir = TempDir::new().unwrap();
    let case = data("case39.m");
    ok(&run_in(
        dir.path(),
        "o",
        &["opf", "--case", &case, "--fit-boxes"],
    ));
    let table = rows(&dir.path().join("o/comparison.csv"));
    let get = |q: &str| -> Vec<(f64, f64)> {
        table
            .iter()
            .filter(|r| r[0] == q)
            .map(|r| (r[2].parse().unwrap(), r[3].parse().unwrap()))
            .collect()
    };
    let cost = get("cost_usd_per_h")[0];
    assert!(cost.1 >= cost.0 - 1e-6);
    assert!(get("rul_hours").iter().all(|&(_, c2)| c2 >= 120.0));
    for f in [
        "opf_case1.json",
        "opf_case2.json",
        "bus_case2.csv",
        "gen_case1.csv",
    ] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
    assert_eq!(rows(&dir.path().join("o/bus_case1.csv")).len(), 39);
}

#[test]
fn opf_input_errors() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.m");
    fs::write(&bad, "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0;\n 2 x];\n").unwrap();
    let o = run_in(dir.path(), "b", &["opf", "--case", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = run_in(
        dir.path(),
        "c",
        &["opf", "--case", &data("case39.m"), "--mode", "case2"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no box constraints"));
}
