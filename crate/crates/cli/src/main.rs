//! `cotwave`: estimate conditional optimal transport values from CSV data,
//! bootstrap their confidence intervals and run the simulation studies.

mod config;
mod dataset;
mod error;
mod rescale;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cotwave::cot::{CotDiagnostics, SampleSize};
use cotwave::infer::IntervalMethod;
use cotwave::simbench::{self, ExperimentMode, ExperimentReport, ExperimentSettings};
use cotwave::{bootstrap_ci, builtin_scenario, estimate_cot, ConfidenceInterval};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{read_dataset, read_table, Dataset};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "cotwave", version, about = "Wavelet-based conditional optimal transport estimation")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this value.
    #[arg(long, global = true, env = "COTWAVE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct EstimatorArgs {
    /// TOML file with `seed`, `[estimator]`, `[monte_carlo]`, `[bootstrap]` and `[simulation]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    wavelet_order: Option<usize>,
    /// Resolution level of the joint density estimate.
    #[arg(long)]
    j_joint: Option<u32>,
    /// Resolution level of the separate covariate estimate.
    #[arg(long)]
    j_z: Option<u32>,
    /// Evaluation cells per outcome axis.
    #[arg(long)]
    grid_ny: Option<usize>,
    /// Evaluation cells per covariate axis.
    #[arg(long)]
    grid_nz: Option<usize>,
    /// Covariate draws: a count or `auto`.
    #[arg(long, value_parser = parse_sample_size)]
    nz: Option<SampleSize>,
    /// Outcome draws per covariate and arm: a count or `auto`.
    #[arg(long, value_parser = parse_sample_size)]
    ny: Option<SampleSize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    /// Bootstrap resamples.
    #[arg(long = "bootstrap-b", visible_alias = "B")]
    bootstrap_b: Option<usize>,
    /// Confidence level in (0, 1).
    #[arg(long)]
    level: Option<f64>,
    /// Percentile intervals instead of `point +- z * sd`.
    #[arg(long)]
    percentile: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Rates,
    Coverage,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    scenario: String,
    #[arg(value_enum)]
    mode: Mode,
    #[command(flatten)]
    est: EstimatorArgs,
    #[command(flatten)]
    boot: BootstrapArgs,
    /// Comma-separated sample sizes per arm.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Quadrature points for the closed-form reference value.
    #[arg(long)]
    oracle_points: Option<usize>,
    /// Output directory for the CSV and JSON reports.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write per-size aggregates as a tidy CSV for plotting.
    #[arg(long)]
    emit_plot_data: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point estimate from a `w,y1..yK,z1..zL` CSV file.
    Estimate {
        data: PathBuf,
        #[command(flatten)]
        est: EstimatorArgs,
        /// Output JSON path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Point estimate with a bootstrap confidence interval.
    Infer {
        data: PathBuf,
        #[command(flatten)]
        est: EstimatorArgs,
        #[command(flatten)]
        boot: BootstrapArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rate or coverage study on a built-in Gaussian scenario.
    Simulate(SimulateArgs),
    /// Min-max rescale outcome and covariate columns into `[margin, 1 - margin]`.
    Rescale {
        data: PathBuf,
        /// Rescaled CSV; the affine metadata goes to `<out>.affine.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = rescale::DEFAULT_MARGIN)]
        margin: f64,
        /// Apply the inverse map stored in this metadata file instead.
        #[arg(long)]
        inverse: Option<PathBuf>,
    },
}

fn parse_sample_size(s: &str) -> Result<SampleSize, String> {
    if s == "auto" {
        return Ok(SampleSize::Auto);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive integer or 'auto', got '{s}'")),
        Ok(k) => Ok(SampleSize::Fixed(k)),
    }
}

/// Layers the config file and flags over the defaults.
fn run_config(est: &EstimatorArgs, boot: Option<&BootstrapArgs>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(est.config.as_deref())?;
    let e = &mut cfg.estimator;
    if let Some(v) = est.wavelet_order {
        e.wavelet_order = v;
    }
    if let Some(v) = est.j_joint {
        e.j_joint = v;
    }
    if let Some(v) = est.j_z {
        e.j_z = v;
    }
    if let Some(v) = est.grid_ny {
        e.grid_ny = v;
    }
    if let Some(v) = est.grid_nz {
        e.grid_nz = v;
    }
    if est.nz.is_some() {
        cfg.monte_carlo.n_z = est.nz;
    }
    if est.ny.is_some() {
        cfg.monte_carlo.n_y = est.ny;
    }
    if let Some(v) = est.seed {
        cfg.seed = v;
    }
    if let Some(b) = boot {
        if let Some(v) = b.bootstrap_b {
            cfg.bootstrap.b = v;
        }
        if let Some(v) = b.level {
            cfg.bootstrap.level = v;
        }
        if b.percentile {
            cfg.bootstrap.method = IntervalMethod::Percentile;
        }
    }
    cfg.cot_config().validate()?;
    Ok(cfg)
}

/// Envelope shared by every JSON artifact.
#[derive(Serialize)]
struct Output<'a, R: Serialize, D: Serialize> {
    result: R,
    config: &'a RunConfig,
    seed: u64,
    diagnostics: D,
    version: &'static str,
}

fn envelope<R: Serialize, D: Serialize>(result: R, config: &RunConfig, diagnostics: D) -> CliResult<String> {
    let out = Output { result, config, seed: config.seed, diagnostics, version: env!("CARGO_PKG_VERSION") };
    serde_json::to_string_pretty(&out).map(|s| s + "\n").map_err(|e| CliError::Internal(e.to_string()))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Output { path: path.to_owned(), source })
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct DataDiagnostics<'a> {
    input: String,
    d_y: usize,
    d_z: usize,
    estimator: &'a CotDiagnostics,
}

fn data_diagnostics<'a>(path: &Path, data: &Dataset, est: &'a CotDiagnostics) -> DataDiagnostics<'a> {
    DataDiagnostics { input: path.display().to_string(), d_y: data.d_y, d_z: data.d_z, estimator: est }
}

#[derive(Serialize)]
struct EstimateResult {
    value: f64,
    mc_std_error: f64,
}

fn cmd_estimate(data_path: &Path, est: &EstimatorArgs, out: Option<&Path>) -> CliResult<()> {
    let cfg = run_config(est, None)?;
    let data = read_dataset(data_path)?;
    let estimate = estimate_cot(&data.control, &data.treated, &cfg.cot_config())?;
    let result = EstimateResult { value: estimate.value, mc_std_error: estimate.mc_std_error };
    let text = envelope(result, &cfg, data_diagnostics(data_path, &data, &estimate.diagnostics))?;
    emit(out, &text)
}

#[derive(Serialize)]
struct InferResult<'a> {
    point: f64,
    lower: f64,
    upper: f64,
    sd_hat: f64,
    b_used: usize,
    level: f64,
    method: IntervalMethod,
    mc_std_error: f64,
    replicates: &'a [f64],
}

fn cmd_infer(data_path: &Path, est: &EstimatorArgs, boot: &BootstrapArgs, out: Option<&Path>) -> CliResult<()> {
    let cfg = run_config(est, Some(boot))?;
    let boot_cfg = cfg.bootstrap_config();
    boot_cfg.validate()?;
    let data = read_dataset(data_path)?;
    let cot = cfg.cot_config();
    let estimate = estimate_cot(&data.control, &data.treated, &cot)?;
    let ci: ConfidenceInterval = bootstrap_ci(&data.control, &data.treated, &cot, &boot_cfg)?;
    let result = InferResult {
        point: ci.point,
        lower: ci.lower,
        upper: ci.upper,
        sd_hat: ci.sd_hat,
        b_used: ci.b_used,
        level: ci.level,
        method: ci.method,
        mc_std_error: estimate.mc_std_error,
        replicates: &ci.replicates,
    };
    let text = envelope(result, &cfg, data_diagnostics(data_path, &data, &estimate.diagnostics))?;
    emit(out, &text)
}

#[derive(Serialize)]
struct SimulateDiagnostics {
    published_parameters: bool,
    mean_clamp_fraction: f64,
    max_clamp_fraction: f64,
    rows: usize,
}

#[derive(Serialize)]
struct PlotRow {
    scenario: String,
    n: usize,
    reps: usize,
    mean_error: f64,
    error_se: f64,
    mean_estimate: f64,
    true_value: f64,
    coverage: Option<f64>,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(path, &bytes)
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let SimulateArgs { scenario, mode, est, boot, n, reps, oracle_points, out, emit_plot_data } = args;
    let out = out.as_path();
    let model = builtin_scenario(&scenario)?;
    let mode = match mode {
        Mode::Rates => ExperimentMode::Rates,
        Mode::Coverage => ExperimentMode::Coverage,
    };
    let mut cfg = run_config(&est, Some(&boot))?;
    if n.is_some() {
        cfg.simulation.n = n;
    }
    if reps.is_some() {
        cfg.simulation.reps = reps;
    }
    if let Some(m) = oracle_points {
        cfg.simulation.oracle_points = m;
    }
    cfg.resolve_simulation(&model, mode);
    let settings = ExperimentSettings {
        mode,
        n_list: cfg.simulation.n.clone().unwrap_or_default(),
        reps: cfg.simulation.reps.unwrap_or_default(),
        seed: cfg.seed,
        oracle_points: cfg.simulation.oracle_points,
        cot: cfg.cot_config(),
        bootstrap: (mode == ExperimentMode::Coverage).then(|| cfg.bootstrap_config()),
    };
    let report: ExperimentReport = simbench::run_experiment(&model, settings)?;

    std::fs::create_dir_all(out).map_err(|source| CliError::Output { path: out.to_owned(), source })?;
    let mode_name = match mode {
        ExperimentMode::Rates => "rates",
        ExperimentMode::Coverage => "coverage",
    };
    let stem = format!("{}_{mode_name}", model.name());
    write_csv(&out.join(format!("{stem}.csv")), &report.rows)?;
    if emit_plot_data {
        let plot = report.summaries.iter().map(|s| PlotRow {
            scenario: model.name().to_owned(),
            n: s.n,
            reps: s.reps,
            mean_error: s.mean_error,
            error_se: s.error_se,
            mean_estimate: s.mean_estimate,
            true_value: report.oracle.value,
            coverage: s.coverage,
        });
        write_csv(&out.join(format!("{stem}_plot.csv")), plot)?;
    }
    let fractions = &report.clamp_fractions;
    let diagnostics = SimulateDiagnostics {
        published_parameters: model.published_parameters(),
        mean_clamp_fraction: fractions.iter().sum::<f64>() / fractions.len().max(1) as f64,
        max_clamp_fraction: fractions.iter().copied().fold(0.0, f64::max),
        rows: report.rows.len(),
    };
    let text = envelope(&report, &cfg, diagnostics)?;
    write_file(&out.join(format!("{stem}.json")), text.as_bytes())?;
    for s in &report.summaries {
        let coverage = s.coverage.map(|c| format!(", coverage {:.1}%", 100.0 * c)).unwrap_or_default();
        eprintln!("n = {}: mean error {:.3e} (se {:.1e}){coverage}", s.n, s.mean_error, s.error_se);
    }
    if let Some(slope) = report.log_log_slope {
        eprintln!("log-log slope {slope:.3}");
    }
    Ok(())
}

fn cmd_rescale(data: &Path, out: &Path, margin: f64, inverse: Option<&Path>) -> CliResult<()> {
    let table = read_table(data)?;
    let meta = match inverse {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => rescale::fit(&table, margin)?,
    };
    let rows = rescale::apply(&table, &meta, inverse.is_some())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Internal(e.to_string());
    w.write_record(&table.header).map_err(io)?;
    for row in &rows {
        let mut fields = vec![format!("{}", row[0] as u8)];
        fields.extend(row[1..].iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(out, &bytes)?;
    if inverse.is_none() {
        for warning in &meta.warnings {
            eprintln!("warning: {warning}");
        }
        let mut meta_path = out.as_os_str().to_owned();
        meta_path.push(".affine.json");
        let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Internal(e.to_string()))? + "\n";
        write_file(Path::new(&meta_path), text.as_bytes())?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Estimate { data, est, out } => cmd_estimate(&data, &est, out.as_deref()),
        Command::Infer { data, est, boot, out } => cmd_infer(&data, &est, &boot, out.as_deref()),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Rescale { data, out, margin, inverse } => cmd_rescale(&data, &out, margin, inverse.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
