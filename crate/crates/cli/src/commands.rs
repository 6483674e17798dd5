use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hirul_core::case::{attach_batteries, BatteryConfig, NetworkCase};
use hirul_core::cell::{
    health_indicator, simulate_to_eol, state_from_efc, CellParams, CellState, OperatingLimits,
    RulResult,
};
use hirul_core::montecarlo::{
    read_campaign_csv, run_campaign, write_campaign_csv, SamplingSpec, ScenarioRecord,
};
use hirul_core::opf::ipm::IpmOptions;
use hirul_core::opf::{self, OpfMode, OpfSolution};
use hirul_core::presets;
use hirul_core::region::{
    binned_medians, box_at_efc, build_box, family_at_efc, write_contour_csv, write_sweep_csv,
    BoxRegion, RegionError, RulTarget, SurfaceFamily, SweepOptions,
};
use hirul_core::stats::{correlation_table, write_correlation_csv};

use crate::failure::{config_error, Classify, Outcome};
use crate::manifest::RunManifest;
use crate::{AnalyzeArgs, BoxArgs, Cli, McArgs, ModeArg, OpfArgs, SweepArgs};

const CONTOUR_POINTS: usize = 41;

pub struct Context {
    manifest: RunManifest,
    params: CellParams,
    config: Option<String>,
    seed: Option<u64>,
    hash: Option<String>,
}

impl Context {
    pub fn new(cli: &Cli) -> Outcome<Self> {
        let mut manifest = RunManifest {
            subcommand: cli.command.name().to_string(),
            config: cli.config.clone(),
            master_seed: cli.seed,
            out_dir: cli.out.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            arguments: serde_json::to_value(&cli.command).runtime()?,
            inputs: BTreeMap::new(),
        };
        let params = match &cli.cell {
            Some(path) => {
                let bytes = manifest.hash_input(path).config()?;
                CellParams::from_json(&String::from_utf8_lossy(&bytes))?
            }
            None => CellParams::lfp(),
        };
        let config = match &cli.config {
            Some(path) => Some(String::from_utf8(manifest.hash_input(path).config()?).config()?),
            None => None,
        };
        Ok(Self {
            manifest,
            params,
            config,
            seed: cli.seed,
            hash: None,
        })
    }

    fn read_input(&mut self, path: &Path) -> Outcome<String> {
        let bytes = self.manifest.hash_input(path).config()?;
        String::from_utf8(bytes).config()
    }

    /// Writes the manifest; call once all inputs are hashed.
    fn begin(&mut self, master_seed: Option<u64>) -> Outcome<()> {
        self.manifest.master_seed = master_seed;
        self.hash = Some(self.manifest.write().runtime()?);
        Ok(())
    }

    fn comment(&self) -> String {
        format!(
            "manifest-sha256: {}",
            self.hash.as_deref().unwrap_or("unwritten")
        )
    }

    fn path(&self, name: &str) -> PathBuf {
        self.manifest.out_dir.join(name)
    }

    fn create(&self, name: &str) -> Outcome<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name)).runtime()?))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Outcome<()> {
        let mut text = serde_json::to_string_pretty(value).runtime()?;
        text.push('\n');
        fs::write(self.path(name), text).runtime()
    }

    /// Sampling spec from `--config`, else the named preset, with `--seed`
    /// applied.
    fn spec(&self, preset: Option<&str>) -> Outcome<SamplingSpec> {
        let mut spec = match (&self.config, preset) {
            (Some(text), _) => SamplingSpec::from_json(text)?,
            (None, Some(name)) => presets::by_name(name).ok_or_else(|| {
                config_error(format!(
                    "unknown preset {name:?}; expected one of {:?}",
                    presets::NAMES
                ))
            })?,
            (None, None) => return Err(config_error("give --preset or --config")),
        };
        if let Some(seed) = self.seed {
            spec.master_seed = seed;
        }
        Ok(spec)
    }
}

fn finish<W: Write>(mut w: W) -> Outcome<()> {
    w.flush().runtime()
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CycleConfig {
    initial_efc: f64,
    /// Explicit starting state; overrides `initial_efc`.
    state: Option<CellState>,
    soc_min: f64,
    soc_max: f64,
    charge_c_rate: f64,
    discharge_c_rate: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            initial_efc: 0.0,
            state: None,
            soc_min: 0.0,
            soc_max: 1.0,
            charge_c_rate: 1.0,
            discharge_c_rate: 1.0,
        }
    }
}

#[derive(Debug, Serialize)]
struct CycleReport {
    limits: OperatingLimits,
    initial_state: CellState,
    hi_initial: f64,
    result: RulResult,
}

pub fn cycle_sim(ctx: &mut Context) -> Outcome<()> {
    let cfg: CycleConfig = match &ctx.config {
        Some(text) => serde_json::from_str(text).config()?,
        None => CycleConfig::default(),
    };
    let params = ctx.params.clone();
    let p = &params;
    let limits = OperatingLimits::new(
        cfg.soc_min,
        cfg.soc_max,
        p.c_rate_to_amperes(cfg.charge_c_rate),
        p.c_rate_to_amperes(cfg.discharge_c_rate),
        p,
    )?;
    let state = match cfg.state {
        Some(s) => s,
        None => state_from_efc(cfg.initial_efc, p)?,
    };
    ctx.begin(None)?;
    let result = simulate_to_eol(&state, p, &limits)?;
    let report = CycleReport {
        limits,
        initial_state: state,
        hi_initial: health_indicator(&state, p)?,
        result,
    };
    ctx.write_json("rul.json", &report)?;
    println!("rul_hours {}", result.rul_hours);
    Ok(())
}

pub fn mc(ctx: &mut Context, args: &McArgs) -> Outcome<()> {
    let mut spec = ctx.spec(args.preset.as_deref())?;
    if let Some(n) = args.samples {
        spec.n_samples = n;
    }
    spec.validate(&ctx.params)?;
    ctx.begin(Some(spec.master_seed))?;
    let records = run_campaign(&spec, &ctx.params)?;
    let mut w = ctx.create("campaign.csv")?;
    write_campaign_csv(&records, &mut w, Some(&ctx.comment())).runtime()?;
    finish(w)?;
    println!("{} scenarios", records.len());
    Ok(())
}

pub fn analyze(ctx: &mut Context, args: &AnalyzeArgs) -> Outcome<()> {
    let text = ctx.read_input(&args.input)?;
    let records = read_campaign_csv(text.as_bytes())?;
    if records.len() < 3 {
        return Err(config_error(format!(
            "need at least 3 scenarios, got {}",
            records.len()
        )));
    }
    let target = RulTarget::new(args.target)?;
    ctx.begin(None)?;
    let table = correlation_table(&records)?;
    let mut w = ctx.create("correlation.csv")?;
    write_correlation_csv(&table, &mut w, Some(&ctx.comment())).runtime()?;
    finish(w)?;
    for r in &table {
        println!("{} r={:.4} p={:.3e}", r.variable, r.pearson_r, r.p_value);
    }
    // campaigns with pinned currents (fig2) have nothing to fit over
    let fixed = |f: fn(&ScenarioRecord) -> f64| records.iter().all(|r| f(r) == f(&records[0]));
    if fixed(|r| r.limits.i_charge) || fixed(|r| r.limits.i_discharge) {
        println!("currents do not vary; no surface fitted");
        return Ok(());
    }
    let family = SurfaceFamily::from_records(&records, args.levels, args.degree)?;
    fs::write(ctx.path("surface.json"), family.to_json()).runtime()?;
    let mid = family.levels[family.levels.len() / 2];
    let mut w = ctx.create("contour.csv")?;
    write_contour_csv(
        &family,
        mid,
        target,
        CONTOUR_POINTS,
        &mut w,
        Some(&ctx.comment()),
    )?;
    finish(w)?;
    Ok(())
}

fn box_from_family(family: &SurfaceFamily, target: RulTarget) -> Outcome<BoxRegion> {
    match build_box(family, target) {
        Ok(b) => Ok(b),
        Err(RegionError::Infeasible { .. }) => Ok(BoxRegion::infeasible(
            family.i_charge,
            family.i_discharge,
            family.v_min_domain(),
            target.hours(),
            None,
        )),
        Err(e) => Err(e.into()),
    }
}

pub fn boxes(ctx: &mut Context, args: &BoxArgs) -> Outcome<()> {
    let target = RulTarget::new(args.target)?;
    let options = SweepOptions {
        inner_samples: args.inner_samples,
        ..SweepOptions::default()
    };
    let (region, family) = if let Some(path) = &args.surface {
        let text = ctx.read_input(path)?;
        let family = SurfaceFamily::from_json(&text)?;
        ctx.begin(None)?;
        let mut region = box_from_family(&family, target)?;
        region.hi = args.hi;
        (region, Some(family))
    } else {
        let efc = args.efc.expect("clap requires --surface or --efc");
        let spec = ctx.spec(Some(&args.preset))?;
        spec.validate(&ctx.params)?;
        ctx.begin(Some(spec.master_seed))?;
        let region = box_at_efc(&ctx.params, &spec, efc, target, &options)?;
        let alive = state_from_efc(efc, &ctx.params)?.capacity_ratio(&ctx.params)
            > ctx.params.eol_capacity_fraction;
        let family = if alive {
            Some(family_at_efc(&ctx.params, &spec, efc, &options)?)
        } else {
            None
        };
        (region, family)
    };
    ctx.write_json("box.json", &region)?;
    if let Some(family) = family {
        let mut w = ctx.create("contour.csv")?;
        write_contour_csv(
            &family,
            region.v_max_bound,
            target,
            CONTOUR_POINTS,
            &mut w,
            Some(&ctx.comment()),
        )?;
        finish(w)?;
    }
    if region.feasible {
        println!(
            "feasible: v_max <= {:.4} V, i_charge <= {:.4} A, i_discharge <= {:.4} A",
            region.v_max_bound, region.i_charge_max, region.i_discharge_max
        );
    } else {
        println!("infeasible: no operating point meets {} h", target.hours());
    }
    Ok(())
}

pub fn hi_sweep(ctx: &mut Context, args: &SweepArgs) -> Outcome<()> {
    let mut spec = ctx.spec(Some(&args.preset))?;
    if let Some(n) = args.samples {
        spec.n_samples = n;
    }
    if args.bins == 0 {
        return Err(config_error("--bins must be at least 1"));
    }
    let target = RulTarget::new(args.target)?;
    spec.validate(&ctx.params)?;
    ctx.begin(Some(spec.master_seed))?;
    let options = SweepOptions {
        inner_samples: args.inner_samples,
        ..SweepOptions::default()
    };
    let entries = hirul_core::region::hi_sweep(&ctx.params, &spec, target, &options)?;
    let mut w = ctx.create("sweep.csv")?;
    write_sweep_csv(&entries, &mut w, Some(&ctx.comment())).runtime()?;
    finish(w)?;

    let mut w = ctx.create("medians.csv")?;
    let io = |r: std::io::Result<()>| r.runtime();
    io(writeln!(w, "# {}", ctx.comment()))?;
    io(writeln!(
        w,
        "hi_lo,hi_hi,count,v_width_median,i_length_median"
    ))?;
    let n = args.bins as f64;
    for (k, m) in binned_medians(&entries, args.bins).into_iter().enumerate() {
        let count = entries
            .iter()
            .filter(|e| ((e.hi * n).floor() as usize).min(args.bins - 1) == k)
            .count();
        let (v, i) = m.map_or((String::new(), String::new()), |(v, i)| {
            (v.to_string(), i.to_string())
        });
        io(writeln!(
            w,
            "{},{},{count},{v},{i}",
            k as f64 / n,
            (k + 1) as f64 / n
        ))?;
    }
    finish(w)?;
    println!("{} ageing states", entries.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct OpfReport<'a> {
    solution: &'a OpfSolution,
    summary: &'a opf::ModeSummary,
}

pub fn opf(ctx: &mut Context, args: &OpfArgs) -> Outcome<()> {
    let text = ctx.read_input(&args.case)?;
    let base = NetworkCase::parse_matpower(&text)?;
    let cfg = match &ctx.config {
        Some(text) => BatteryConfig::from_json(text)?,
        None => BatteryConfig::ieee39(),
    };
    let mut devices = cfg.devices(&ctx.params)?;
    if let Some(path) = &args.boxes {
        let text = ctx.read_input(path)?;
        let regions: Vec<BoxRegion> = serde_json::from_str(&text).config()?;
        if regions.len() != devices.len() {
            return Err(config_error(format!(
                "{} boxes for {} batteries",
                regions.len(),
                devices.len()
            )));
        }
        devices = devices
            .into_iter()
            .zip(regions)
            .map(|(d, r)| d.with_region(r, &ctx.params))
            .collect();
    }
    let modes = match args.mode {
        ModeArg::Case1 => vec![OpfMode::Case1],
        ModeArg::Case2 => vec![OpfMode::Case2],
        ModeArg::Both => vec![OpfMode::Case1, OpfMode::Case2],
    };
    let spec = SamplingSpec {
        master_seed: ctx.seed.unwrap_or(presets::DEFAULT_SEED),
        ..presets::fig5()
    };
    ctx.begin(args.fit_boxes.then_some(spec.master_seed))?;
    if args.fit_boxes {
        let options = SweepOptions {
            inner_samples: args.inner_samples,
            ..SweepOptions::default()
        };
        devices = opf::fit_battery_boxes(&devices, &ctx.params, &spec, &options)?;
    }
    let case = attach_batteries(&base, &devices)?;
    let problems = modes
        .iter()
        .map(|&m| opf::build_problem(&case, &ctx.params, m))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = IpmOptions {
        max_iter: args.max_iter,
        ..IpmOptions::with_tol(args.tol)
    };
    let solved: Vec<Result<OpfSolution, opf::OpfError>> = {
        use rayon::prelude::*;
        problems
            .par_iter()
            .map(|p| opf::solve_opf(p, &opts))
            .collect()
    };
    let mut summaries = Vec::new();
    for (prob, sol) in problems.iter().zip(solved) {
        let sol = sol?;
        let summary = opf::summarize(prob, &sol, &ctx.params)?;
        let label = prob.mode.label();
        ctx.write_json(
            &format!("opf_{label}.json"),
            &OpfReport {
                solution: &sol,
                summary: &summary,
            },
        )?;
        let mut w = ctx.create(&format!("bus_{label}.csv"))?;
        opf::write_bus_table_csv(&sol, &mut w, Some(&ctx.comment())).runtime()?;
        finish(w)?;
        let mut w = ctx.create(&format!("gen_{label}.csv"))?;
        opf::write_gen_table_csv(prob, &sol, &mut w, Some(&ctx.comment())).runtime()?;
        finish(w)?;
        println!(
            "{label}: cost {:.4} $/h, converged {}, {} iterations",
            sol.objective, sol.converged, sol.iterations
        );
        summaries.push(summary);
    }
    if let [c1, c2] = &summaries[..] {
        let mut w = ctx.create("comparison.csv")?;
        opf::write_comparison_csv(c1, c2, &mut w, Some(&ctx.comment())).runtime()?;
        finish(w)?;
    }
    Ok(())
}
