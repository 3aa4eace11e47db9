use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use porecarbon::analysis::{
    agg2, attractor_report, conservation_audit, export_trajectory, import_trajectory, AttractorReport, Trajectory,
};
use porecarbon::config::RunConfig;
use porecarbon::fixtures;
use porecarbon::image_io::{load_volume, save_volume, synth_volume, CropRegion, SynthSpec, VolumeImage};
use porecarbon::integrator::Integrator;
use porecarbon::kinetics::SystemState;
use porecarbon::network::{export_network, extract_network, import_network, PoreNetwork};
use porecarbon::oracle::{
    assign_voxels, compare_with_network, max_stable_dt, prolong, split_state, ComparisonConfig, GridState, VoxelGrid,
};
use porecarbon::scenario::{export_state, generate, import_state, DomMode, ScenarioSpec, ScenarioSummary};
use porecarbon::{Error, Result};

/// Microbial decomposition of organic matter in 3D pore space.
///
/// Settings come from built-in defaults, then the `--config` JSON file, then
/// command-line flags; later sources win.
#[derive(Parser)]
#[command(name = "porecarbon", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic volume (raw bytes plus JSON sidecar).
    Synth(SynthArgs),
    /// Extract the ball network of a volume.
    Extract(ExtractArgs),
    /// Draw a random initial state on a network.
    Scenario(ScenarioArgs),
    /// Integrate one scenario and write its trajectory and diagnostics.
    Simulate(SimulateArgs),
    /// Integrate a series of seeded scenarios.
    Batch(BatchArgs),
    /// Compare the network model with the voxel solver on a small volume.
    Oracle(OracleArgs),
    /// Recompute diagnostics from a trajectory CSV.
    Analyze(AnalyzeArgs),
    /// Print the effective configuration as JSON.
    Config(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Lattice,
    Sphere,
    Tube,
    Dumbbell,
    NeckedDumbbell,
    SeparatePores,
}

impl Fixture {
    fn volume(self) -> VolumeImage {
        match self {
            Fixture::Lattice => fixtures::lattice(),
            Fixture::Sphere => fixtures::sphere(6.0),
            Fixture::Tube => fixtures::thin_tube(20),
            Fixture::Dumbbell => fixtures::dumbbell(),
            Fixture::NeckedDumbbell => fixtures::necked_dumbbell(),
            Fixture::SeparatePores => fixtures::separate_pores(),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in geometry.
    #[arg(long, conflicts_with = "spec")]
    fixture: Option<Fixture>,
    /// JSON description of shapes to rasterize.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Byte value written for pore voxels; solid gets its complement.
    #[arg(long, default_value_t = 0)]
    pore_value: u8,
    /// Output raw file; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VolumeArgs {
    /// Raw 8-bit volume.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// JSON sidecar with nx, ny, nz, resolution_um and pore_value.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Sub-volume `x0:x1,y0:y1,z0:z1`, lower bounds inclusive.
    #[arg(long)]
    crop: Option<CropRegion>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    volume: VolumeArgs,
    /// Network JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Homogeneous,
    Heterogeneous,
    Random,
}

impl From<Mode> for DomMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Homogeneous => DomMode::Homogeneous,
            Mode::Heterogeneous => DomMode::Heterogeneous,
            Mode::Random => DomMode::Random,
        }
    }
}

#[derive(Args, Clone)]
struct ScenarioFlags {
    /// Scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// DOM placement.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// DOM diffusion coefficient, μm²/day.
    #[arg(long)]
    d_n: Option<f64>,
    /// Step, days.
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon, days.
    #[arg(long)]
    t_end: Option<f64>,
    /// Steps between trajectory records.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Network JSON.
    #[arg(long)]
    network: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioFlags,
    /// Output directory for `state.json` and `scenario.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Network JSON.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Initial state JSON; a scenario is drawn when absent.
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioFlags,
    #[command(flatten)]
    model: ModelFlags,
    /// Output directory for `trajectory.csv` and `report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Network JSON.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Number of scenarios.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Scenarios run at once.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    scenario: ScenarioFlags,
    #[command(flatten)]
    model: ModelFlags,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    /// Random scenario drawn on the extracted network, spread over ball regions.
    Scenario,
    /// DOM in the lower x half, MB and FOM everywhere.
    Split,
    /// Same densities everywhere.
    Uniform,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    volume: VolumeArgs,
    /// Built-in geometry instead of a volume file.
    #[arg(long, conflicts_with_all = ["raw", "meta"])]
    fixture: Option<Fixture>,
    /// Initial densities.
    #[arg(long, value_enum, default_value = "scenario")]
    initial: Layout,
    #[command(flatten)]
    scenario: ScenarioFlags,
    /// DOM diffusion coefficient, μm²/day.
    #[arg(long)]
    d_n: Option<f64>,
    /// Horizon, days.
    #[arg(long)]
    t_end: Option<f64>,
    /// Network step, days.
    #[arg(long)]
    network_dt: Option<f64>,
    /// Voxel solver step, days.
    #[arg(long)]
    oracle_dt: Option<f64>,
    /// Days between compared records.
    #[arg(long)]
    record_interval: Option<f64>,
    /// Fail when the final MB or DOM discrepancy exceeds this fraction.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Report JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trajectory CSV.
    #[arg(long)]
    trajectory: PathBuf,
    /// Extinction threshold as a fraction of initial total carbon.
    #[arg(long)]
    threshold: Option<f64>,
    /// Trailing window, days.
    #[arg(long)]
    window: Option<f64>,
    /// Report JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a check that does not come from a library error.
#[derive(Debug)]
struct Failed(String);

enum CliError {
    Lib(Error),
    Check(Failed),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult = std::result::Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Scenario(a) => scenario(a),
        Command::Simulate(a) => simulate(a),
        Command::Batch(a) => batch(a),
        Command::Oracle(a) => oracle(a),
        Command::Analyze(a) => analyze(a),
        Command::Config(a) => RunConfig::load_or_default(a.config.as_deref())
            .map(|c| print_document(&c.to_json()))
            .map_err(CliError::from),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
        Err(CliError::Check(Failed(msg))) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn missing(what: &str, flag: &str) -> Error {
    Error::Input(format!("no {what} given: pass {flag} or set it in the config file"))
}

/// Prints a JSON document; a closed pipe (`| head`) is not an error.
fn print_document(text: &str) {
    use std::io::Write as _;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Input(format!("cannot create {}: {e}", dir.display())))
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| missing("output directory", "--out"))?;
    create_dir(&dir)?;
    Ok(dir)
}

fn load_network(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PoreNetwork> {
    let path = flag
        .or_else(|| cfg.paths.network.clone())
        .ok_or_else(|| missing("network", "--network"))?;
    import_network(path)
}

fn load_image(v: &VolumeArgs, cfg: &RunConfig) -> Result<VolumeImage> {
    let raw = v
        .raw
        .clone()
        .or_else(|| cfg.paths.image.clone())
        .ok_or_else(|| missing("image", "--raw"))?;
    let meta = v
        .meta
        .clone()
        .or_else(|| cfg.paths.meta.clone())
        .ok_or_else(|| missing("sidecar", "--meta"))?;
    let img = load_volume(raw, meta)?;
    match &v.crop {
        Some(region) => img.crop(region),
        None => Ok(img),
    }
}

fn apply_scenario_flags(cfg: &mut RunConfig, f: &ScenarioFlags) {
    if let Some(seed) = f.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(mode) = f.mode {
        cfg.scenario.dom_mode = mode.into();
    }
}

fn apply_model_flags(cfg: &mut RunConfig, f: &ModelFlags) -> Result<()> {
    if let Some(d) = f.d_n {
        cfg.bio.d_n = d;
    }
    if let Some(dt) = f.dt {
        cfg.solver.dt = dt;
    }
    if let Some(t) = f.t_end {
        cfg.solver.t_end = t;
    }
    if let Some(s) = f.stride {
        cfg.solver.snapshot_stride = s;
    }
    cfg.validate()
}

fn synth(a: SynthArgs) -> CliResult {
    let img = match (a.fixture, &a.spec) {
        (Some(f), _) => f.volume(),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
            let spec: SynthSpec =
                serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
            synth_volume(&spec)?
        }
        (None, None) => return Err(Error::Input("pass --fixture or --spec".into()).into()),
    };
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let meta = a.out.with_extension("json");
    save_volume(&img, &a.out, &meta, a.pore_value)?;
    let [nx, ny, nz] = img.dims();
    println!(
        "volume {nx}x{ny}x{nz} at {} um, porosity {:.6}, written to {} and {}",
        img.resolution(),
        img.porosity(),
        a.out.display(),
        meta.display()
    );
    Ok(())
}

fn extract(a: ExtractArgs) -> CliResult {
    let cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    let img = load_image(&a.volume, &cfg)?;
    let source = a
        .volume
        .raw
        .as_ref()
        .or(cfg.paths.image.as_ref())
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    let net = extract_network(&img, source)?;
    let out = a
        .out
        .or_else(|| cfg.paths.network.clone())
        .ok_or_else(|| missing("network output path", "--out"))?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    export_network(&net, &out)?;
    println!(
        "nodes {} edges {} porosity {:.6} components {}",
        net.node_count(),
        net.edge_count(),
        img.porosity(),
        net.components().1
    );
    Ok(())
}

fn scenario(a: ScenarioArgs) -> CliResult {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_scenario_flags(&mut cfg, &a.scenario);
    cfg.validate()?;
    let net = load_network(a.network, &cfg)?;
    let dir = out_dir(a.out, &cfg)?;
    let (state, summary) = generate(&net, &cfg.scenario)?;
    export_state(&state, dir.join("state.json"))?;
    write_json(&summary, &dir.join("scenario.json"))?;
    println!(
        "seed {} mode {:?} DOM {:e} MB {:e} patches {}",
        summary.seed,
        summary.dom_mode,
        summary.initial_dom,
        summary.initial_mb,
        summary.patch_centers.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct RunReport {
    scenario: Option<ScenarioSummary>,
    nodes: usize,
    records: usize,
    t_end: f64,
    conservation_error: f64,
    conservation_ok: bool,
    min_component: f64,
    /// Absent when the run is shorter than the analysis window.
    attractor: Option<AttractorReport>,
}

fn run_one(
    net: &PoreNetwork,
    cfg: &RunConfig,
    state0: &SystemState,
    scenario: Option<ScenarioSummary>,
) -> Result<(Trajectory, RunReport)> {
    let integrator = Integrator::new(net, cfg.bio, cfg.solver)?;
    let traj = integrator.run(state0, &mut [])?;
    let audit = conservation_audit(&traj);
    let span = traj.last().map_or(0.0, |r| r.t) - traj.records[0].t;
    let attractor = if span >= cfg.analysis.window {
        Some(attractor_report(&traj, &cfg.analysis)?)
    } else {
        None
    };
    let report = RunReport {
        scenario,
        nodes: net.node_count(),
        records: traj.records.len(),
        t_end: traj.last().map_or(state0.time, |r| r.t),
        conservation_error: audit,
        conservation_ok: audit <= cfg.conservation_tolerance,
        min_component: traj.min_component,
        attractor,
    };
    Ok((traj, report))
}

fn simulate(a: SimulateArgs) -> CliResult {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_scenario_flags(&mut cfg, &a.scenario);
    apply_model_flags(&mut cfg, &a.model)?;
    let net = load_network(a.network, &cfg)?;
    let dir = out_dir(a.out, &cfg)?;
    let (state0, summary) = match &a.state {
        Some(path) => (import_state(path)?, None),
        None => {
            let (s, sum) = generate(&net, &cfg.scenario)?;
            (s, Some(sum))
        }
    };
    let (traj, report) = run_one(&net, &cfg, &state0, summary)?;
    export_trajectory(&traj, dir.join("trajectory.csv"))?;
    write_json(&report, &dir.join("report.json"))?;
    println!(
        "records {} conservation error {:e} converged {}",
        report.records,
        report.conservation_error,
        report
            .attractor
            .as_ref()
            .map_or("n/a (run shorter than window)".to_string(), |r| r.converged.to_string())
    );
    if !report.conservation_ok {
        return Err(CliError::Check(Failed(format!(
            "conservation error {:e} above tolerance {:e}",
            report.conservation_error, cfg.conservation_tolerance
        ))));
    }
    Ok(())
}

const BATCH_HEADER: &str = "seed,dom_mode,initial_dom,initial_mb,mb_fraction,patches,status,conservation_error,\
converged,time_to_mb_extinction,terminal_B,terminal_organic,terminal_C";

fn batch_row(out: &mut String, seed: u64, result: &std::result::Result<RunReport, String>) {
    match result {
        Ok(r) => {
            let s = r.scenario.as_ref().expect("batch runs draw scenarios");
            let mode = match s.dom_mode {
                DomMode::Homogeneous => "homogeneous",
                DomMode::Heterogeneous => "heterogeneous",
                DomMode::Random => "random",
            };
            let _ = write!(
                out,
                "{seed},{mode},{},{},{},{},ok,{},",
                s.initial_dom,
                s.initial_mb,
                s.mb_fraction,
                s.patch_centers.len(),
                r.conservation_error
            );
            match &r.attractor {
                Some(at) => {
                    let ext = at.time_to_mb_extinction.map_or(String::new(), |t| t.to_string());
                    let p = at.terminal_point;
                    let _ = writeln!(out, "{},{ext},{},{},{}", at.converged, p[0], p[1], p[2]);
                }
                None => {
                    let _ = writeln!(out, ",,,,");
                }
            }
        }
        Err(msg) => {
            let _ = writeln!(out, "{seed},,,,,,\"failed: {}\",,,,,,", msg.replace('"', "'"));
        }
    }
}

fn batch(a: BatchArgs) -> CliResult {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_scenario_flags(&mut cfg, &a.scenario);
    apply_model_flags(&mut cfg, &a.model)?;
    if a.count == 0 || a.jobs == 0 {
        return Err(Error::Input("--count and --jobs must be >= 1".into()).into());
    }
    let net = load_network(a.network, &cfg)?;
    let dir = out_dir(a.out, &cfg)?;
    let base = cfg.scenario.seed;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::Input(e.to_string()))?;
    let run = |k: usize| -> std::result::Result<RunReport, String> {
        let seed = base.wrapping_add(k as u64);
        let spec = ScenarioSpec {
            seed,
            ..cfg.scenario.clone()
        };
        let go = || -> Result<RunReport> {
            let (s0, summary) = generate(&net, &spec)?;
            let (traj, report) = run_one(&net, &cfg, &s0, Some(summary))?;
            export_trajectory(&traj, dir.join(format!("scenario_{seed}.csv")))?;
            Ok(report)
        };
        go().map_err(|e| e.to_string()).and_then(|r| {
            if r.conservation_ok {
                Ok(r)
            } else {
                Err(format!("conservation error {:e}", r.conservation_error))
            }
        })
    };
    let results: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        (0..a.count).into_par_iter().map(run).collect()
    });

    let mut table = String::from(BATCH_HEADER);
    table.push('\n');
    let mut failures = 0;
    let mut not_converged = 0;
    for (k, r) in results.iter().enumerate() {
        let seed = base.wrapping_add(k as u64);
        batch_row(&mut table, seed, r);
        match r {
            Err(msg) => {
                failures += 1;
                eprintln!("scenario {seed} failed: {msg}");
            }
            Ok(rep) => {
                if rep.attractor.as_ref().is_some_and(|at| !at.converged) {
                    not_converged += 1;
                }
            }
        }
    }
    let path = dir.join("summary.csv");
    fs::write(&path, table).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
    println!(
        "{} scenarios, {} failed, {} not converged; summary in {}",
        a.count,
        failures,
        not_converged,
        path.display()
    );
    if failures > 0 {
        return Err(CliError::Check(Failed(format!(
            "{failures} of {} scenarios failed",
            a.count
        ))));
    }
    Ok(())
}

/// Explicit steps allowed in one oracle run.
const MAX_ORACLE_STEPS: f64 = 1e7;

fn oracle(a: OracleArgs) -> CliResult {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    apply_scenario_flags(&mut cfg, &a.scenario);
    if let Some(d) = a.d_n {
        cfg.bio.d_n = d;
    }
    let o = &mut cfg.oracle;
    o.t_end = a.t_end.unwrap_or(o.t_end);
    o.record_interval = a.record_interval.unwrap_or(o.record_interval);
    o.network_dt = a.network_dt.or(o.network_dt);
    o.oracle_dt = a.oracle_dt.or(o.oracle_dt);
    cfg.validate()?;

    let img = match a.fixture {
        Some(f) => f.volume(),
        None => load_image(&a.volume, &cfg)?,
    };
    let grid = VoxelGrid::new(&img)?;
    let interval = cfg.oracle.record_interval;
    let network_dt = cfg.oracle.network_dt.unwrap_or(cfg.solver.dt).min(interval);
    let oracle_dt = cfg.oracle.oracle_dt.unwrap_or_else(|| {
        let limit = max_stable_dt(&cfg.bio, img.resolution()).min(network_dt);
        interval / (interval / limit).ceil()
    });
    let oracle_steps = cfg.oracle.t_end / oracle_dt;
    if oracle_steps > MAX_ORACLE_STEPS {
        return Err(Error::Input(format!(
            "voxel solver would need {oracle_steps:.3e} steps of {oracle_dt:e} days (limit {MAX_ORACLE_STEPS:e}); \
             lower --d-n, shorten --t-end or use coarser voxels"
        ))
        .into());
    }
    let initial = match a.initial {
        Layout::Uniform => {
            let vol = grid.voxel_volume() * grid.len() as f64;
            GridState::uniform(grid.len(), [0.1 / vol, 1.0 / vol, 0.0, 0.5 / vol, 0.0])
        }
        Layout::Split => split_state(&grid, 1.0, 0.01, 0.5),
        Layout::Scenario => {
            let net = extract_network(&img, "oracle")?;
            let (state, _) = generate(&net, &cfg.scenario)?;
            prolong(&state, &assign_voxels(&grid, &net), grid.voxel_volume())
        }
    };
    let cmp = ComparisonConfig {
        bio: cfg.bio,
        t_end: cfg.oracle.t_end,
        network_dt,
        oracle_dt,
        record_interval: interval,
    };
    let report = compare_with_network(&img, &initial, &cmp)?;
    let out = a.out.unwrap_or_else(|| {
        cfg.paths
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("."))
            .join("oracle_report.json")
    });
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_json(&report, &out)?;
    println!(
        "nodes {} voxels {} max totals discrepancy {:e} final MB {:e} final DOM {:e}",
        report.nodes,
        report.pore_voxels,
        report.max_totals_discrepancy,
        report.final_mb_discrepancy,
        report.final_dom_discrepancy
    );
    if let Some(tol) = a.tolerance {
        let worst = report.final_mb_discrepancy.max(report.final_dom_discrepancy);
        if worst > tol {
            return Err(CliError::Check(Failed(format!("discrepancy {worst:e} above {tol:e}"))));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalysisReport {
    records: usize,
    conservation_error: f64,
    conservation_ok: bool,
    terminal_agg2: Option<[f64; 3]>,
    attractor: Option<AttractorReport>,
}

fn analyze(a: AnalyzeArgs) -> CliResult {
    let mut cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    if let Some(t) = a.threshold {
        cfg.analysis.mb_threshold_fraction = t;
    }
    if let Some(w) = a.window {
        cfg.analysis.window = w;
    }
    cfg.validate()?;
    let traj = import_trajectory(&a.trajectory)?;
    let audit = conservation_audit(&traj);
    let span = traj.last().map_or(0.0, |r| r.t) - traj.records.first().map_or(0.0, |r| r.t);
    let attractor = if !traj.records.is_empty() && span >= cfg.analysis.window {
        Some(attractor_report(&traj, &cfg.analysis)?)
    } else {
        None
    };
    let report = AnalysisReport {
        records: traj.records.len(),
        conservation_error: audit,
        conservation_ok: audit <= cfg.conservation_tolerance,
        terminal_agg2: traj.last().map(|r| agg2(&r.agg1)),
        attractor,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    match &a.out {
        Some(path) => write_json(&report, path)?,
        None => print_document(&text),
    }
    if !report.conservation_ok {
        return Err(CliError::Check(Failed(format!("conservation error {audit:e}"))));
    }
    Ok(())
}
