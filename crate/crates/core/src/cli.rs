//! The `forte` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Every failure also prints one JSON object to stderr with the fields
//! `error`, `message` and `exit_code`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{raw_feature_baseline, run_battery, write_battery_csv, BatteryParams};
use crate::density::{BandwidthRule, EstimatorConfig, GammaRule, GmmParams, OcsvmParams};
use crate::embedding::{is_csv_path, load_any, save_binary, save_csv, three_way_split};
use crate::error::ForteError;
use crate::par;
use crate::pipeline::{run_forte_sweep, run_forte_sweep_on, ForteRun, PipelineConfig, PipelineSettings, SpaceData};
use crate::prdc::{DensityNormalization, PrdcConfig, RadiusSource};
use crate::theory::{curse_experiment, monte_carlo_verify, write_curse_csv, CurseConfig, SimulationConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "forte", version, about = "Per-point PRDC out-of-distribution detection on embeddings")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "FORTE_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit on in-distribution embeddings and score OOD embeddings.
    Detect(DetectArgs),
    /// Monte Carlo check of the expected per-point statistics.
    Simulate(SimulateArgs),
    /// Per-point statistics and geometry across dimensionalities.
    Curse(CurseArgs),
    /// Classical tests, divergences and detectors, plus a raw-feature baseline.
    Baseline(BaselineArgs),
    /// Convert embeddings between CSV and the binary format.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorKind {
    Gmm,
    Kde,
    Ocsvm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RadiusArg {
    WithinTestSet,
    FromReferenceSet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizationArg {
    OneOverK,
    OneOverKm,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value = "gmm")]
    pub estimator: EstimatorKind,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub gmm_components: Option<u64>,
    #[arg(long)]
    pub gmm_max_iter: Option<usize>,
    #[arg(long)]
    pub gmm_tol: Option<f64>,
    /// scott, silverman or a positive number.
    #[arg(long, value_parser = parse_bandwidth)]
    pub kde_bandwidth: Option<BandwidthRule>,
    #[arg(long)]
    pub ocsvm_nu: Option<f64>,
    /// scale or a positive number.
    #[arg(long, value_parser = parse_gamma)]
    pub ocsvm_gamma: Option<GammaRule>,
}

impl EstimatorArgs {
    pub fn config(&self) -> EstimatorConfig {
        match self.estimator {
            EstimatorKind::Gmm => {
                let mut p = GmmParams::default();
                if let Some(c) = self.gmm_components {
                    p.n_components = c as usize;
                }
                p.max_iter = self.gmm_max_iter.unwrap_or(p.max_iter);
                p.tol = self.gmm_tol.unwrap_or(p.tol);
                EstimatorConfig::Gmm(p)
            }
            EstimatorKind::Kde => EstimatorConfig::Kde {
                bandwidth: self.kde_bandwidth.unwrap_or_default(),
            },
            EstimatorKind::Ocsvm => {
                let mut p = OcsvmParams::default();
                p.nu = self.ocsvm_nu.unwrap_or(p.nu);
                p.gamma = self.ocsvm_gamma.unwrap_or(p.gamma);
                EstimatorConfig::Ocsvm(p)
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// In-distribution embeddings, one file per representation space.
    #[arg(long = "id", required_unless_present = "config")]
    pub id: Vec<PathBuf>,
    /// OOD embeddings, in the same space order as --id.
    #[arg(long = "ood", required_unless_present = "config")]
    pub ood: Vec<PathBuf>,
    /// Space names, in the same order as --id.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long, required_unless_present = "config", value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[arg(long, value_enum, default_value = "within-test-set")]
    pub radius_source: RadiusArg,
    #[arg(long, value_enum, default_value = "one-over-k")]
    pub normalization: NormalizationArg,
    /// Comma-separated seeds and inclusive ranges, e.g. `0-9` or `1,4,7`.
    #[arg(long, default_value = "0-9", value_parser = parse_seed_list)]
    pub seeds: SeedList,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// TOML sweep configuration; replaces the data and model flags.
    #[arg(long, conflicts_with_all = ["id", "ood", "k", "labels"])]
    pub config: Option<PathBuf>,
    /// Report JSON. A sweep writes an array of reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-point score dump (CSV); only for single runs.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Treat estimator non-convergence as a failure (exit 3).
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 2000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Per-coordinate mean of the OOD sample.
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
    #[arg(long, default_value = "0-9", value_parser = parse_seed_list)]
    pub seeds: SeedList,
    /// Output directory; receives report.json and metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurseArgs {
    #[arg(long, default_value_t = 2)]
    pub d_min: usize,
    #[arg(long, default_value_t = 200)]
    pub d_max: usize,
    #[arg(long, default_value_t = 5)]
    pub d_step: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_in: usize,
    #[arg(long, default_value_t = 100)]
    pub n_out: usize,
    #[arg(long, default_value_t = 3.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV, one row per dimensionality.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// In-distribution embeddings (the reference sample).
    #[arg(long = "id")]
    pub id: PathBuf,
    /// One or more query sets; each becomes a CSV row.
    #[arg(long = "ood", required = true)]
    pub ood: Vec<PathBuf>,
    /// Row names, in the same order as --ood (default: file stems).
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub lof_k: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub if_trees: u64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(2..))]
    pub if_subsample: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Battery CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also fit the estimator on raw ID embeddings against the first --ood
    /// set and write its report JSON here.
    #[arg(long)]
    pub raw_report: Option<PathBuf>,
    #[arg(long, default_value = "0-9", value_parser = parse_seed_list)]
    pub seeds: SeedList,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Source file; `.csv`/`.txt` is read as CSV, anything else as binary.
    #[arg(long)]
    pub input: PathBuf,
    /// Destination; the format follows the extension in the same way.
    #[arg(long)]
    pub output: PathBuf,
}

fn parse_bandwidth(s: &str) -> std::result::Result<BandwidthRule, String> {
    s.parse::<BandwidthRule>().map_err(|e| e.to_string())
}

fn parse_gamma(s: &str) -> std::result::Result<GammaRule, String> {
    s.parse::<GammaRule>().map_err(|e| e.to_string())
}

/// Seeds as given on the command line, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seed_list(s: &str) -> std::result::Result<SeedList, String> {
    parse_seeds(s).map(SeedList)
}

/// Parses `0-9`, `1,4,7` or mixtures such as `0-2,10`. Duplicates are
/// rejected.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        let bad = || format!("invalid seed list {s:?}");
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    let mut sorted = out.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(format!("seed list {s:?} repeats a seed"));
    }
    Ok(out)
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }

    fn kind(&self) -> &'static str {
        match self.code {
            EXIT_USAGE => "usage",
            EXIT_DATA => "data",
            _ => "numeric",
        }
    }
}

impl From<ForteError> for CliError {
    fn from(e: ForteError) -> Self {
        let code = match &e {
            e if e.is_data_error() => EXIT_DATA,
            ForteError::InvalidK { .. } | ForteError::InvalidParameter(_) => EXIT_USAGE,
            ForteError::Degenerate(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches the offending path to load failures that do not carry one.
fn load(path: &Path) -> CliResult<crate::embedding::EmbeddingMatrix> {
    load_any(path).map_err(|e| {
        let mut err = CliError::from(e);
        let shown = path.display().to_string();
        if !err.message.contains(&shown) {
            err.message = format!("{shown}: {}", err.message);
        }
        err
    })
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| ForteError::io(path, e).into())
}

fn prdc_config(k: u64, radius: RadiusArg, norm: NormalizationArg) -> PrdcConfig {
    PrdcConfig {
        k: k as usize,
        radius_source: match radius {
            RadiusArg::WithinTestSet => RadiusSource::WithinTestSet,
            RadiusArg::FromReferenceSet => RadiusSource::FromReferenceSet,
        },
        density_normalization: match norm {
            NormalizationArg::OneOverK => DensityNormalization::OneOverK,
            NormalizationArg::OneOverKm => DensityNormalization::OneOverKm,
        },
    }
}

fn stem(path: &Path, fallback: String) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(fallback)
}

fn report_runs(runs: &[ForteRun], strict: bool) -> CliResult<()> {
    for r in runs {
        for w in &r.report.warnings {
            log::warn!("{w}");
        }
        println!("{}", r.report.summary_line());
    }
    if strict && runs.iter().any(|r| r.numeric_failure) {
        return Err(CliError::numeric("an estimator did not converge (--strict)"));
    }
    Ok(())
}

fn reports_json(runs: &[ForteRun]) -> String {
    if let [one] = runs {
        return one.report.to_json();
    }
    let reports: Vec<_> = runs.iter().map(|r| &r.report).collect();
    let mut s = serde_json::to_string_pretty(&reports).expect("reports serialize");
    s.push('\n');
    s
}

pub fn cmd_detect(a: &DetectArgs) -> CliResult<()> {
    let runs = if let Some(path) = &a.config {
        let cfg = PipelineConfig::load(path).map_err(|e| {
            let mut err = CliError::from(e);
            err.message = format!("{}: {}", path.display(), err.message);
            err
        })?;
        run_forte_sweep(&cfg)?
    } else {
        if a.id.len() != a.ood.len() {
            return Err(CliError::usage(format!(
                "--id and --ood must be given once per space; got {} and {}",
                a.id.len(),
                a.ood.len()
            )));
        }
        if !a.labels.is_empty() && a.labels.len() != a.id.len() {
            return Err(CliError::usage("--label must be given once per --id, or not at all"));
        }
        let settings = PipelineSettings {
            prdc: prdc_config(a.k.expect("required by clap"), a.radius_source, a.normalization),
            estimator: a.estimator.config(),
            seeds: a.seeds.0.clone(),
        };
        settings.prdc.validate()?;
        let spaces = a
            .id
            .iter()
            .zip(&a.ood)
            .enumerate()
            .map(|(i, (id, ood))| {
                Ok(SpaceData {
                    label: a.labels.get(i).cloned().unwrap_or_else(|| stem(id, format!("space{i}"))),
                    id: load(id)?,
                    ood: load(ood)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        run_forte_sweep_on(&spaces, &settings, &[settings.prdc.k], &[settings.estimator])?
    };
    if let Some(p) = &a.scores {
        match runs.as_slice() {
            [one] => one.write_scores_csv(p)?,
            _ => return Err(CliError::usage("--scores needs a single run, not a sweep")),
        }
    }
    write(&a.out, &reports_json(&runs))?;
    report_runs(&runs, a.strict)
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let cfg = SimulationConfig {
        k: a.k as usize,
        n_train: a.n_train,
        n_test: a.n_test,
        dim: a.dim,
        sigma: a.sigma,
        shift: a.shift,
        seeds: a.seeds.0.clone(),
        ..Default::default()
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let report = monte_carlo_verify(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::from(ForteError::io(&a.out, e)))?;
    write(&a.out.join("report.json"), &report.to_json())?;
    report.write_csv(a.out.join("metrics.csv"))?;
    for c in &report.checks {
        println!(
            "{} {}: empirical {:.6}, target {:.6} (tolerance {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.empirical,
            c.target,
            c.tolerance
        );
    }
    let failed = report.failed_checks();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "{} of {} checks failed",
            failed.len(),
            report.checks.len()
        )))
    }
}

pub fn cmd_curse(a: &CurseArgs) -> CliResult<()> {
    let cfg = CurseConfig {
        d_min: a.d_min,
        d_max: a.d_max,
        d_step: a.d_step,
        n_in: a.n_in,
        n_out: a.n_out,
        shift: a.shift,
        prdc: PrdcConfig::with_k(a.k as usize),
        seed: a.seed,
    };
    if cfg.d_min == 0 || cfg.d_step == 0 || cfg.d_max < cfg.d_min || cfg.n_in < 3 || cfg.n_out == 0 {
        return Err(CliError::usage(
            "need 1 <= --d-min <= --d-max, --d-step >= 1, --n-in >= 3 and --n-out >= 1",
        ));
    }
    if cfg.prdc.k >= cfg.n_in {
        return Err(CliError::usage(format!("--k {} must be below --n-in {}", cfg.prdc.k, cfg.n_in)));
    }
    let rows = curse_experiment(&cfg)?;
    write_curse_csv(&rows, &a.out)?;
    println!("{} dimensionalities written to {}", rows.len(), a.out.display());
    Ok(())
}

pub fn cmd_baseline(a: &BaselineArgs) -> CliResult<()> {
    if !a.labels.is_empty() && a.labels.len() != a.ood.len() {
        return Err(CliError::usage("--label must be given once per --ood, or not at all"));
    }
    let params = BatteryParams {
        lof_k: a.lof_k as usize,
        if_trees: a.if_trees as usize,
        if_subsample: a.if_subsample as usize,
        bins: a.bins as usize,
        seed: a.seed,
    };
    let refs = load(&a.id)?;
    let queries = a.ood.iter().map(|p| load(p)).collect::<CliResult<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(queries.len());
    for (i, (q, path)) in queries.iter().zip(&a.ood).enumerate() {
        let label = a.labels.get(i).cloned().unwrap_or_else(|| stem(path, format!("set{i}")));
        rows.push(run_battery(&label, &refs, q, &params)?);
    }
    let raw = match &a.raw_report {
        Some(_) => {
            let first = *a.seeds.0.first().ok_or_else(|| CliError::usage("--seeds is empty"))?;
            let split = three_way_split(&refs, first)?;
            Some(raw_feature_baseline(
                &split.reference,
                &split.held_out,
                &queries[0],
                &a.estimator.config(),
                &a.seeds.0,
            )?)
        }
        None => None,
    };
    write_battery_csv(&rows, &a.out)?;
    for r in &rows {
        println!(
            "{}: KS {:.4}, MW p {}, JSD {:.4}",
            r.label,
            r.ks.statistic,
            r.mann_whitney.p_value.map_or("undefined".into(), |p| format!("{p:.4}")),
            r.divergences.js
        );
    }
    if let (Some(report), Some(path)) = (raw, &a.raw_report) {
        write(path, &report.to_json())?;
        println!("raw {}", report.summary_line());
    }
    Ok(())
}

pub fn cmd_convert(a: &ConvertArgs) -> CliResult<()> {
    let m = load(&a.input)?;
    if is_csv_path(&a.output) {
        save_csv(&m, None, &a.output)?;
    } else {
        save_binary(&m, &a.output)?;
    }
    println!("{} rows x {} columns written to {}", m.n(), m.d(), a.output.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if !par::init_thread_pool(usize::from(t)) {
            log::debug!("worker pool already configured");
        }
    }
    match &cli.command {
        Command::Detect(a) => cmd_detect(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Curse(a) => cmd_curse(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Convert(a) => cmd_convert(a),
    }
}

fn emit_error(e: &CliError) {
    let obj = serde_json::json!({
        "error": e.kind(),
        "message": e.message,
        "exit_code": e.code,
    });
    eprintln!("{obj}");
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let _ = e.print();
            emit_error(&CliError::usage(e.kind().to_string()));
            return EXIT_USAGE;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            emit_error(&e);
            e.code
        }
    }
}
