//! `psboot` command-line runner.
//!
//! Every command reads one TOML (or `.json`) config file, writes its
//! artifacts into `--out`, and finishes by writing `manifest.json`. A failed
//! run leaves no manifest behind.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use psboot::fda::{self, FdaExperimentConfig};
use psboot::model::{self, CovarianceModel, CovarianceModelSpec, EllChoice, NoiseKind, SampleMatrix};
use psboot::multinomial::{self, MultinomialExperimentConfig};
use psboot::ratelab::{self, RateStudyConfig};
use psboot::sci::{self, TauRule};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const CONFIG_HELP: &str = "\
Config files are TOML, or JSON when the name ends in .json. Omitted fields
take the defaults below.

gen-data
  model   covariance model {p, corr = {kind, params}, sigma = {kind, ...}} (required)
  n       number of rows (required)
  noise   gaussian | scaled-uniform | symmetric-exponential (default gaussian)
  mu      mean vector (default zeros)
  -> data.csv (header 1..p)

sci
  data    CSV path, relative to the config file (required)
  tau     {kind = \"fixed\", tau} | {kind = \"select\", grid} (default select over 0, 0.1, ..., 1)
  b       bootstrap draws (default 1000)
  rho     significance level (default 0.05)
  mu0     optional null mean; adds a test decision to the summary
  -> intervals.csv (j, lo, hi, sigma_hat, width), tau_widths.csv, summary.json

fda-experiment
  n (50), p (100), b (1000), rho (0.05), tau (select), n_sims (1000),
  alternative = {omega, rho, theta} (all 0), grid_size (101), nu (0.1)
  -> report.json, sims.csv

multinomial-experiment
  model = {kind = \"zipf\", p, eta} | {kind = \"explicit\", pi}  (zipf p=1000 eta=1)
  n (500), b (1000), rho (0.05), tau (select), n_sims (1000),
  rule = {kind = \"min_count\", threshold} | {kind = \"theoretical\"}  (min_count 5)
  -> report.json, sims.csv

rate-study
  corr (autoregressive rho0=0.5), sigma (power c=1 alpha=0.7), p_rule (fixed p=500),
  noise (symmetric-exponential), ns ([100, 200, 400, 800]), tau (0.8),
  ref_draws (20000), outer_reps (50), b (2000)
  -> rate.csv, rate.json

diagnostics
  either a covariance model spec, or {model | data, n, ell}
  ell = {kind = \"theory\", a} | {kind = \"fixed\", ell}  (theory a=0.25)
  -> diagnostics.json

Exit status: 0 success, 1 invalid input, 2 numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "psboot", version, about = "Partially standardized bootstrap experiments", after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides any seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads: a positive count or "auto".
    #[arg(long, global = true, default_value = "auto")]
    threads: Threads,
}

#[derive(Subcommand, Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Command {
    /// Simulate a data matrix from a covariance model.
    GenData,
    /// Simultaneous confidence intervals for the mean of a data CSV.
    Sci,
    /// Type-I error or power of the functional mean test.
    FdaExperiment,
    /// Coverage of the multinomial proportion intervals.
    MultinomialExperiment,
    /// Kolmogorov-distance rate study.
    RateStudy,
    /// Variance-decay and correlation diagnostics.
    Diagnostics,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Sci => "sci",
            Command::FdaExperiment => "fda-experiment",
            Command::MultinomialExperiment => "multinomial-experiment",
            Command::RateStudy => "rate-study",
            Command::Diagnostics => "diagnostics",
        }
    }

    fn stochastic(self) -> bool {
        self != Command::Diagnostics
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Threads {
    Auto,
    Count(usize),
}

impl std::str::FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Threads::Count(n)),
            _ => Err(format!("expected a positive integer or \"auto\", got {s:?}")),
        }
    }
}

impl Serialize for Threads {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threads::Auto => s.serialize_str("auto"),
            Threads::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDataConfig {
    model: CovarianceModelSpec,
    n: usize,
    #[serde(default)]
    noise: NoiseKind,
    #[serde(default)]
    mu: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SciConfig {
    data: PathBuf,
    #[serde(default)]
    tau: TauRule,
    #[serde(default = "default_b")]
    b: usize,
    #[serde(default = "default_rho")]
    rho: f64,
    #[serde(default)]
    mu0: Option<Vec<f64>>,
}

fn default_b() -> usize {
    sci::DEFAULT_B
}

fn default_rho() -> f64 {
    0.05
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum DiagnosticsConfig {
    Model(CovarianceModelSpec),
    Full(DiagnosticsRequest),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnosticsRequest {
    #[serde(default)]
    model: Option<CovarianceModelSpec>,
    #[serde(default)]
    data: Option<PathBuf>,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    ell: EllChoice,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    seed: Option<u64>,
    threads: Threads,
    version: &'a str,
    started_at: String,
    duration_s: f64,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
    };
    Ok(parsed)
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(out.join(name), text).with_context(|| format!("writing {name}"))?;
    Ok(())
}

fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
}

fn read_data(path: &Path) -> Result<SampleMatrix> {
    let file = File::open(path).with_context(|| format!("opening data {}", path.display()))?;
    Ok(SampleMatrix::read_csv(file)?)
}

/// Runs one command and returns the effective config for the manifest.
fn execute(cmd: Command, config: &Path, out: &Path, seed: Option<u64>) -> Result<serde_json::Value> {
    let seed_or_zero = seed.unwrap_or(0);
    match cmd {
        Command::GenData => {
            let cfg: GenDataConfig = read_config(config)?;
            let model = CovarianceModel::from_spec(cfg.model.clone())?;
            let mu = cfg.mu.clone().unwrap_or_else(|| vec![0.0; model.p()]);
            let x = model::generate_sample(&mu, &model, cfg.n, cfg.noise, seed_or_zero)?;
            x.write_csv(create(out, "data.csv")?)?;
            Ok(serde_json::to_value(&cfg)?)
        }
        Command::Sci => {
            let cfg: SciConfig = read_config(config)?;
            let x = read_data(&relative_to(config, &cfg.data))?;
            let selection = sci::select_tau(&x, &cfg.tau.grid(), cfg.b, cfg.rho, seed_or_zero)?;
            let set = selection.sci();
            set.write_csv(create(out, "intervals.csv")?)?;
            let mut widths = create(out, "tau_widths.csv")?;
            {
                use std::io::Write;
                writeln!(widths, "tau,mean_width,q_lo,q_hi")?;
                for c in &selection.candidates {
                    writeln!(
                        widths,
                        "{},{},{},{}",
                        psboot::report::fmt_f64(c.tau),
                        psboot::report::fmt_f64(c.mean_width()),
                        psboot::report::fmt_f64(c.q_lo),
                        psboot::report::fmt_f64(c.q_hi)
                    )?;
                }
                widths.flush()?;
            }
            let extra = match &cfg.mu0 {
                Some(mu0) => {
                    if mu0.len() != x.p() {
                        return Err(psboot::Error::Validation(format!(
                            "mu0 has length {}, data have {} columns",
                            mu0.len(),
                            x.p()
                        ))
                        .into());
                    }
                    let test = sci::MeanTest::from_sci(set.clone(), mu0);
                    let offending: Vec<usize> = test.offending.iter().map(|j| j + 1).collect();
                    Some(serde_json::json!({ "reject": test.reject, "offending_j": offending }))
                }
                None => None,
            };
            write_json(out, "summary.json", &set.summary_json(extra.as_ref())?)?;
            Ok(serde_json::to_value(&cfg)?)
        }
        Command::FdaExperiment => {
            let mut cfg: FdaExperimentConfig = read_config(config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            let report = fda::run_fda_experiment(&cfg)?;
            report.write_sims_csv(create(out, "sims.csv")?)?;
            write_json(out, "report.json", &report)?;
            Ok(serde_json::to_value(&cfg)?)
        }
        Command::MultinomialExperiment => {
            let mut cfg: MultinomialExperimentConfig = read_config(config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            let report = multinomial::run_multinomial_experiment(&cfg)?;
            report.write_sims_csv(create(out, "sims.csv")?)?;
            write_json(out, "report.json", &report)?;
            Ok(serde_json::to_value(&cfg)?)
        }
        Command::RateStudy => {
            let mut cfg: RateStudyConfig = read_config(config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            let result = ratelab::run_rate_study(&cfg)?;
            result.write_csv(create(out, "rate.csv")?)?;
            write_json(out, "rate.json", &result)?;
            Ok(serde_json::to_value(&cfg)?)
        }
        Command::Diagnostics => {
            let cfg: DiagnosticsConfig = read_config(config)?;
            let diag = match &cfg {
                DiagnosticsConfig::Model(spec) => {
                    let model = CovarianceModel::from_spec(spec.clone())?;
                    model::model_diagnostics(&model, spec.p.max(2), EllChoice::default())?
                }
                DiagnosticsConfig::Full(req) => match (&req.model, &req.data) {
                    (Some(spec), None) => {
                        let model = CovarianceModel::from_spec(spec.clone())?;
                        model::model_diagnostics(&model, req.n.unwrap_or(spec.p.max(2)), req.ell)?
                    }
                    (None, Some(data)) => model::sample_diagnostics(&read_data(&relative_to(config, data))?, req.ell)?,
                    _ => bail!(usage("diagnostics config needs exactly one of `model` or `data`")),
                },
            };
            write_json(out, "diagnostics.json", &diag)?;
            Ok(serde_json::to_value(&cfg)?)
        }
    }
}

fn configure_threads(threads: Threads) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Threads::Count(n) = threads {
        builder = builder.num_threads(n);
    }
    builder.build_global().context("configuring the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cmd = cli.command;
    let config = cli.config.ok_or_else(|| usage("--config is required"))?;
    let out = cli.out.ok_or_else(|| usage("--out is required"))?;
    if cmd.stochastic() && cli.seed.is_none() {
        bail!(usage(format!("{} needs --seed", cmd.name())));
    }
    configure_threads(cli.threads)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let effective = execute(cmd, &config, &out, cli.seed)?;
    let manifest = Manifest {
        command: cmd.name(),
        config: effective,
        seed: cli.seed,
        threads: cli.threads,
        version: env!("CARGO_PKG_VERSION"),
        started_at,
        duration_s: clock.elapsed().as_secs_f64(),
    };
    write_json(&out, "manifest.json", &manifest)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<psboot::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
