//! `sewer-ccmpc` command line: validate network configs, run single
//! closed-loop simulations and duration × intensity sweeps, and summarize
//! sweep results.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use sewer_ccmpc::ccmpc::GammaSchedule;
use sewer_ccmpc::mpc::MpcConfig;
use sewer_ccmpc::network::{validate_topology, NetworkTopology, BUNDLED_TEN_TANK};
use sewer_ccmpc::scenarios::{
    feasibility_lines, make_step_scenario, read_sweep_csv, run_sweep, sweep_records, write_sweep_csv,
    ControllerKind, Experiment, RealizationKey, SweepGrid,
};
use sewer_ccmpc::simulator::fmt_num;

pub mod report;
pub mod summary;
pub mod svg;

pub const OUT_ENV: &str = "SEWER_CCMPC_OUT";
const DEFAULT_OUT: &str = "sewer-ccmpc-out";
const DEFAULT_GAMMAS: [f64; 5] = [0.95, 0.90, 0.80, 0.70, 0.60];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io { .. } => 2,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "sewer-ccmpc", version, about = "Deterministic and chance-constrained MPC of a sewer network")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Network config (JSON); the bundled ten-tank network when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Sweep the full grid instead of the coarse one.
    #[arg(long, global = true)]
    pub full_grid: bool,
    /// Run manifest (JSON) supplying defaults for the flags above.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a network config; diagnostics go to standard error.
    Validate,
    /// Run one closed-loop simulation of a step rain.
    Simulate(SimulateArgs),
    /// Run a duration × intensity sweep.
    Sweep(SweepArgs),
    /// Tabulate one or more sweep CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// perfect, imperfect or ccmpc.
    #[arg(long, default_value = "perfect")]
    pub controller: String,
    /// Rain duration in minutes.
    #[arg(long, default_value_t = 90.0)]
    pub duration_min: f64,
    /// Step intensity above the dry flow (μm/s).
    #[arg(long, default_value_t = 0.7)]
    pub intensity: f64,
    /// Probability schedule of the chance-constrained controller.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GAMMAS)]
    pub gammas: Vec<f64>,
    /// Forecast realization used by the imperfect controller.
    #[arg(long, default_value_t = 0)]
    pub realization: u64,
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Controllers besides the perfect-forecast benchmark: any of
    /// imperfect, ccmpc.
    #[arg(long, value_delimiter = ',', default_values_t = ["imperfect".to_string(), "ccmpc".to_string()])]
    pub controllers: Vec<String>,
    /// One chance-constrained run per probability level.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GAMMAS)]
    pub gammas: Vec<f64>,
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
    /// Replace the grid durations (hours).
    #[arg(long, value_delimiter = ',')]
    pub durations_h: Option<Vec<f64>>,
    /// Replace the grid intensities (um/s).
    #[arg(long, value_delimiter = ',')]
    pub intensities: Option<Vec<f64>>,
    /// Replace the number of realizations per cell.
    #[arg(long)]
    pub realizations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Sweep CSVs; `<out>/sweep.csv` when omitted.
    pub csv: Vec<PathBuf>,
}

/// Flag values a manifest file may supply.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDefaults {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub full_grid: bool,
}

/// Global settings after merging flags over the manifest file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub full_grid: bool,
}

impl Settings {
    pub fn resolve(global: &GlobalArgs) -> Result<Self, CliError> {
        let file = match &global.manifest {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                serde_json::from_str::<ManifestDefaults>(&text).map_err(|e| domain(format!("{}: {e}", path.display())))?
            }
            None => ManifestDefaults::default(),
        };
        let jobs = global.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            return Err(domain("--jobs must be at least 1"));
        }
        Ok(Self {
            config: global.config.clone().or(file.config),
            out: global.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            seed: global.seed.or(file.seed).unwrap_or(1),
            jobs,
            full_grid: global.full_grid || file.full_grid,
        })
    }
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: String,
    pub config_sha256: String,
    pub out: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
}

impl RunManifest {
    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Config text, its label and SHA-256.
pub fn load_config(path: Option<&Path>) -> Result<(NetworkTopology, String, String), CliError> {
    let (text, label) = match path {
        Some(p) => (fs::read_to_string(p).map_err(|e| CliError::io(p, e))?, p.display().to_string()),
        None => (BUNDLED_TEN_TANK.to_string(), "bundled:ten_tank.json".to_string()),
    };
    let topology = sewer_ccmpc::network::load_topology(&text).map_err(domain)?;
    Ok((topology, label, hex(&Sha256::digest(text.as_bytes()))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

/// Run a parsed command, writing human-readable output to `stdout` and
/// diagnostics to `stderr`. Returns the process exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = Settings::resolve(&cli.global).and_then(|settings| match &cli.command {
        Command::Validate => cmd_validate(&settings, stdout, stderr),
        Command::Simulate(args) => cmd_simulate(&settings, args, stdout),
        Command::Sweep(args) => cmd_sweep(&settings, args, stdout),
        Command::Report(args) => cmd_report(&settings, args, stdout),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, stdout, stderr),
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                1
            } else {
                let _ = write!(stdout, "{e}");
                0
            }
        }
    }
}

fn cmd_validate(settings: &Settings, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let (text, label) = match &settings.config {
        Some(p) => (fs::read_to_string(p).map_err(|e| CliError::io(p, e))?, p.display().to_string()),
        None => (BUNDLED_TEN_TANK.to_string(), "bundled:ten_tank.json".to_string()),
    };
    let topology: NetworkTopology =
        serde_json::from_str(&text).map_err(|e| domain(format!("{label}: malformed network document: {e}")))?;
    let diagnostics = validate_topology(&topology);
    if diagnostics.is_empty() {
        let _ = writeln!(
            stdout,
            "{label}: ok ({} tanks, {} gates, {} rain inputs)",
            topology.tanks.len(),
            topology.gates.len(),
            topology.rain_inputs.len()
        );
        return Ok(());
    }
    for d in &diagnostics {
        let _ = writeln!(stderr, "{label}: {d}");
    }
    Err(domain(format!("{label}: {} problem(s)", diagnostics.len())))
}

fn schedule(gammas: &[f64]) -> Result<GammaSchedule, CliError> {
    GammaSchedule::new(gammas.to_vec()).map_err(domain)
}

fn mpc_config(horizon: usize) -> MpcConfig {
    MpcConfig {
        horizon,
        ..MpcConfig::default()
    }
}

fn cmd_simulate(settings: &Settings, args: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (topology, label, config_hash) = load_config(settings.config.as_deref())?;
    let kind = match args.controller.as_str() {
        "perfect" | "perfect_mpc" => ControllerKind::PerfectMpc,
        "imperfect" | "imperfect_mpc" => ControllerKind::ImperfectMpc,
        "ccmpc" | "cc" => ControllerKind::CcMpc(schedule(&args.gammas)?),
        other => return Err(domain(format!("unknown controller '{other}' (perfect, imperfect, ccmpc)"))),
    };
    let scenario = make_step_scenario(args.duration_min * 60.0, args.intensity).map_err(domain)?;
    let experiment = Experiment::new(&topology, &mpc_config(args.horizon)).map_err(domain)?;
    let key = RealizationKey {
        seed: settings.seed,
        cell: 0,
        realization: args.realization,
    };
    let manifest = RunManifest {
        tool: "sewer-ccmpc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "simulate".into(),
        config: label,
        config_sha256: config_hash,
        out: settings.out.display().to_string(),
        seed: settings.seed,
        parameters: serde_json::json!({
            "controller": kind.label(),
            "gammas": kind.gamma_field(),
            "duration_s": scenario.rain_duration,
            "intensity_ums": scenario.rain_intensity,
            "realization": args.realization,
            "horizon": args.horizon,
            "delta_t": topology.delta_t,
        }),
    };
    let trace = experiment.run(&scenario, &kind, key).map_err(domain)?;
    let hash = manifest.sha256();
    prepare_out(&settings.out)?;
    let stem = format!("simulate_{}", kind.display_name());
    write_file(&settings.out.join(format!("{stem}_manifest.json")), manifest.to_json().as_bytes())?;
    let mut csv_bytes = Vec::new();
    trace
        .write_csv(&mut csv_bytes, &[format!("manifest_sha256={hash}")])
        .map_err(domain)?;
    write_file(&settings.out.join(format!("{stem}_trace.csv")), &csv_bytes)?;
    let summary = summary::summarize(&trace, &hash);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&settings.out.join(format!("{stem}_summary.json")), json.as_bytes())?;
    let _ = writeln!(
        stdout,
        "{}: {} steps, outcome {}, overflow {} m3",
        kind.display_name(),
        trace.steps.len(),
        summary.outcome,
        fmt_num(summary.total_overflow_m3)
    );
    Ok(())
}

/// Controllers of a sweep: the benchmark first, then the requested ones.
pub fn sweep_kinds(controllers: &[String], gammas: &[f64]) -> Result<Vec<ControllerKind>, CliError> {
    let mut kinds = vec![ControllerKind::PerfectMpc];
    for c in controllers {
        match c.as_str() {
            "perfect" | "perfect_mpc" => {}
            "imperfect" | "imperfect_mpc" => kinds.push(ControllerKind::ImperfectMpc),
            "ccmpc" | "cc" => {
                for &g in gammas {
                    GammaSchedule::fixed(g).map_err(domain)?;
                    kinds.push(ControllerKind::cc(g));
                }
            }
            other => return Err(domain(format!("unknown controller '{other}' (imperfect, ccmpc)"))),
        }
    }
    let mut unique: Vec<ControllerKind> = Vec::new();
    for k in kinds {
        if !unique.contains(&k) {
            unique.push(k);
        }
    }
    Ok(unique)
}

fn cmd_sweep(settings: &Settings, args: &SweepArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (topology, label, config_hash) = load_config(settings.config.as_deref())?;
    let kinds = sweep_kinds(&args.controllers, &args.gammas)?;
    let mut grid = if settings.full_grid {
        SweepGrid::full(settings.seed)
    } else {
        SweepGrid::coarse(settings.seed)
    };
    if let Some(d) = &args.durations_h {
        grid.durations = d.iter().map(|h| h * 3600.0).collect();
    }
    if let Some(i) = &args.intensities {
        grid.intensities = i.clone();
    }
    if let Some(r) = args.realizations {
        grid.realizations_per_cell = r;
    }
    grid.validate().map_err(domain)?;
    let config = mpc_config(args.horizon);
    let experiment = Experiment::new(&topology, &config).map_err(domain)?;
    let manifest = RunManifest {
        tool: "sewer-ccmpc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "sweep".into(),
        config: label,
        config_sha256: config_hash,
        out: settings.out.display().to_string(),
        seed: settings.seed,
        parameters: serde_json::json!({
            "grid": &grid,
            "controllers": kinds.iter().map(|k| k.display_name()).collect::<Vec<_>>(),
            "horizon": config.horizon,
            "delta_t": topology.delta_t,
        }),
    };
    let hash = manifest.sha256();
    let cells = run_sweep(&experiment, &grid, &kinds, settings.jobs).map_err(domain)?;

    prepare_out(&settings.out)?;
    write_file(&settings.out.join("sweep_manifest.json"), manifest.to_json().as_bytes())?;
    let mut csv_bytes = format!("# manifest_sha256={hash}\n").into_bytes();
    write_sweep_csv(&mut csv_bytes, &sweep_records(&cells)).map_err(domain)?;
    write_file(&settings.out.join("sweep.csv"), &csv_bytes)?;

    let lines = feasibility_lines(&cells);
    let mut lines_csv = format!("# manifest_sha256={hash}\ncontroller,duration_s,max_feasible_intensity\n");
    for l in &lines {
        lines_csv.push_str(&format!(
            "{},{},{}\n",
            l.controller,
            fmt_num(l.duration_s),
            fmt_num(l.max_feasible_intensity)
        ));
    }
    write_file(&settings.out.join("feasibility_lines.csv"), lines_csv.as_bytes())?;

    for kind in &kinds {
        let name = kind.display_name();
        let own: Vec<_> = cells.iter().filter(|c| &c.controller == kind).cloned().collect();
        let heat_name = if *kind == ControllerKind::PerfectMpc {
            "benchmark".to_string()
        } else {
            name.clone()
        };
        let title = format!("Feasible realizations: {heat_name}");
        write_file(
            &settings.out.join(format!("heatmap_{heat_name}.svg")),
            svg::feasibility_heatmap(&grid, &own, &title, &hash).as_bytes(),
        )?;
        if *kind != ControllerKind::PerfectMpc {
            let title = format!("False-positive overflow: {name}");
            write_file(
                &settings.out.join(format!("false_positive_{name}.svg")),
                svg::false_positive_overlay(&grid, &own, &title, &hash).as_bytes(),
            )?;
        }
    }
    let _ = writeln!(stdout, "{} cells, {} controllers -> {}", grid.n_cells(), kinds.len(), settings.out.display());
    for l in &lines {
        let _ = writeln!(
            stdout,
            "  {:<16} {:>5} h  line {}",
            l.controller,
            fmt_num(l.duration_s / 3600.0),
            fmt_num(l.max_feasible_intensity)
        );
    }
    Ok(())
}

fn cmd_report(settings: &Settings, args: &ReportArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let paths = if args.csv.is_empty() {
        vec![settings.out.join("sweep.csv")]
    } else {
        args.csv.clone()
    };
    let mut records = Vec::new();
    for p in &paths {
        let file = fs::File::open(p).map_err(|e| CliError::io(p, e))?;
        records.extend(read_sweep_csv(file).map_err(|e| domain(format!("{}: {e}", p.display())))?);
    }
    let rep = report::build(&records).map_err(domain)?;
    prepare_out(&settings.out)?;
    write_file(&settings.out.join("report_cells.csv"), report::cells_csv(&rep).as_bytes())?;
    write_file(
        &settings.out.join("report_false_positives.csv"),
        report::false_positive_csv(&rep).as_bytes(),
    )?;
    let _ = stdout.write_all(report::render_text(&rep).as_bytes());
    Ok(())
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
