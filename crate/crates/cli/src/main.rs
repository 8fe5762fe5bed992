//! `riskval`: batch validation of logistic risk models on cohort files.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 statistical
//! degeneracy (no cases, separation, ...), 4 internal failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use thiserror::Error;

use riskval_core::error::ErrorClass;
use riskval_core::ingest::normalize::MinMaxMode;
use riskval_core::ingest::{load_cohort, LoadOptions, LoadedCohort, RawCohort, RuleSet};
use riskval_core::longitudinal::VarianceMethod;
use riskval_core::model::{MedianCutoffs, ModelSpec};
use riskval_core::report::{
    calibration_svg, recalibration_report, score_subjects, scores_csv, validate, InputDigest, ValidateOptions,
};
use riskval_core::robustness::repeated_holdout;
use riskval_core::simulate::{generate_cohort, preset, SimConfig};
use riskval_core::summary::summarize;

/// Seed used when `--seed` is not given.
const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Parser)]
#[command(name = "riskval", version, about = "External validation of logistic risk-prediction models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VcMethod {
    Moments,
    Reml,
}

impl From<VcMethod> for VarianceMethod {
    fn from(m: VcMethod) -> Self {
        match m {
            VcMethod::Moments => VarianceMethod::Moments,
            VcMethod::Reml => VarianceMethod::Reml,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MinMax {
    Literal,
    Range,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Model specification (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Cohort CSV: subject_id, sex, outcome and raw predictor columns.
    #[arg(long)]
    cohort: PathBuf,
    /// Long-format CSV of repeated measures: subject_id, predictor, wave, age, value.
    #[arg(long)]
    longitudinal: Option<PathBuf>,
    /// Normalization rules (JSON), one per model predictor.
    #[arg(long)]
    rules: PathBuf,
    /// Default divisor for min-max rules.
    #[arg(long, value_enum, default_value = "literal")]
    minmax_mode: MinMax,
    /// Variance-component estimator for random-intercept predictors.
    #[arg(long, value_enum, default_value = "moments")]
    variance_method: VcMethod,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-subject linear predictor, probability, risk group and count score.
    Score {
        #[command(flatten)]
        inputs: Inputs,
        /// Count-score cutoffs (JSON); cohort medians when omitted.
        #[arg(long)]
        cutoffs: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        quantiles: usize,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Discrimination and calibration report with plot data.
    Validate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long, default_value_t = 5)]
        quantiles: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Update only the model intercept so predictions match the cohort.
    Recalibrate {
        #[command(flatten)]
        inputs: Inputs,
        /// Updated model file.
        #[arg(long)]
        out: PathBuf,
        /// Before/after report; defaults to recalibration.json next to the model.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Repeated stratified 50/50 holdout check of the intercept update.
    Robustness {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        reps: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean (SD) of each predictor for all subjects, cases and controls.
    Summarize {
        #[command(flatten)]
        inputs: Inputs,
        /// Output CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic cohort with known ground truth.
    Simulate {
        /// Built-in configuration (mls_like or chds_like).
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// Simulation config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the preset seed; ignored with --config.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Overrides the number of subjects.
        #[arg(long)]
        n: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] riskval_core::Error),
    #[error("cannot read `{path}`: {message}")]
    Read { path: String, message: String },
    #[error("cannot write `{path}`: {message}")]
    Write { path: String, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Degenerate => 3,
                ErrorClass::Internal => 4,
            },
            CliError::Read { .. } | CliError::Usage(_) => 2,
            CliError::Write { .. } => 4,
        }
    }
}

fn core<E: Into<riskval_core::Error>>(e: E) -> CliError {
    CliError::Core(e.into())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Read { path: path.display().to_string(), message: e.to_string() })
}

fn digest(role: &str, path: &Path) -> Result<InputDigest, CliError> {
    let bytes = read_bytes(path)?;
    Ok(InputDigest {
        role: role.into(),
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let err = |e: &dyn std::fmt::Display| CliError::Write { path: path.display().to_string(), message: e.to_string() };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| err(&e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| err(&e))?;
    tmp.write_all(contents).map_err(|e| err(&e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644)).map_err(|e| err(&e))?;
    }
    tmp.as_file().sync_all().map_err(|e| err(&e))?;
    tmp.persist(path).map_err(|e| err(&e.error))?;
    Ok(())
}

struct Loaded {
    model: ModelSpec,
    cohort: LoadedCohort,
    digests: Vec<InputDigest>,
}

fn load(inputs: &Inputs) -> Result<Loaded, CliError> {
    let mut digests = vec![digest("model", &inputs.model)?, digest("rules", &inputs.rules)?, digest("cohort", &inputs.cohort)?];
    if let Some(l) = &inputs.longitudinal {
        digests.push(digest("longitudinal", l)?);
    }
    let model = ModelSpec::from_path(&inputs.model).map_err(core)?;
    let rules = RuleSet::from_path(&inputs.rules).map_err(core)?;
    let raw = RawCohort::from_paths(&inputs.cohort, inputs.longitudinal.as_deref()).map_err(core)?;
    let options = LoadOptions {
        minmax_mode: match inputs.minmax_mode {
            MinMax::Literal => MinMaxMode::Literal,
            MinMax::Range => MinMaxMode::Range,
        },
        variance_method: inputs.variance_method.into(),
    };
    let cohort = load_cohort(&raw, &model, &rules, options).map_err(core)?;
    Ok(Loaded { model, cohort, digests })
}

fn json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s.into_bytes()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score { inputs, cutoffs, quantiles, out } => {
            let l = load(&inputs)?;
            let cohort = &l.cohort.cohort;
            let cutoffs = match cutoffs {
                Some(p) => MedianCutoffs::from_path(&p).map_err(core)?,
                None => MedianCutoffs::from_features(&l.model, &cohort.features()).map_err(core)?,
            };
            let rows = score_subjects(&l.model, cohort, &cutoffs, quantiles)?;
            write_atomic(&out, scores_csv(&rows).as_bytes())?;
            eprintln!("scored {} subjects -> {}", rows.len(), out.display());
        }
        Command::Validate { inputs, bins, quantiles, out } => {
            let l = load(&inputs)?;
            let options = ValidateOptions { quantiles, bins, ..ValidateOptions::default() };
            let v = validate(&l.model, &l.cohort, options, l.digests)?;
            write_atomic(&out.join("report.json"), v.report.to_json_pretty().as_bytes())?;
            write_atomic(&out.join("eo_table.csv"), v.report.eo_table_csv().as_bytes())?;
            write_atomic(&out.join("roc.csv"), v.roc.to_csv().as_bytes())?;
            write_atomic(&out.join("calibration_curve.csv"), v.curve.curve_csv().as_bytes())?;
            write_atomic(&out.join("histogram.csv"), v.curve.histogram_csv().as_bytes())?;
            write_atomic(&out.join("calibration.svg"), calibration_svg(&v.curve, Some((v.report.calibration.line_intercept, v.report.calibration.slope))).as_bytes())?;
            let r = &v.report;
            println!(
                "n={} cases={} ({:.2}%) AUC={:.3} ({:.3}-{:.3}) E/O={} intercept={:.3} slope={:.3}",
                r.cohort.n,
                r.cohort.cases,
                r.cohort.prevalence_percent,
                r.auc.auc,
                r.auc.ci_low,
                r.auc.ci_high,
                r.overall.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NA".into()),
                r.calibration.intercept,
                r.calibration.slope
            );
        }
        Command::Recalibrate { inputs, out, report } => {
            let l = load(&inputs)?;
            let (updated, delta) = recalibration_report(&l.model, &l.cohort.cohort)?;
            let report = report.unwrap_or_else(|| {
                out.parent().map(Path::to_path_buf).unwrap_or_default().join("recalibration.json")
            });
            if report == out {
                return Err(CliError::Usage("--report and --out name the same file".into()));
            }
            write_atomic(&out, updated.to_json_pretty().as_bytes())?;
            write_atomic(&report, &json(&delta))?;
            println!(
                "a={:.4} E/O before={} after={}",
                delta.calibration_intercept,
                delta.eo_before.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NA".into()),
                delta.eo_after.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NA".into())
            );
        }
        Command::Robustness { inputs, reps, seed, out } => {
            let l = load(&inputs)?;
            let summary = repeated_holdout(&l.cohort.cohort, &l.model, reps as usize, seed).map_err(core)?;
            write_atomic(&out, &json(&summary))?;
            println!(
                "reps={} failed={} mean AUC={:.3} mean E/O={:.3} mean a={:.3}",
                summary.reps, summary.failed_reps, summary.mean_auc, summary.mean_eo, summary.mean_intercept
            );
        }
        Command::Summarize { inputs, out } => {
            let l = load(&inputs)?;
            let table = summarize(&l.model, &l.cohort.cohort).to_csv();
            match out {
                Some(p) => write_atomic(&p, table.as_bytes())?,
                None => print!("{table}"),
            }
        }
        Command::Simulate { preset: name, config, seed, n, out } => {
            let mut cfg: SimConfig = match (name, config) {
                (Some(name), _) => preset(&name, seed).map_err(core)?,
                (None, Some(path)) => serde_json::from_slice(&read_bytes(&path)?)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
                (None, None) => return Err(CliError::Usage("give --preset or --config".into())),
            };
            if let Some(n) = n {
                cfg.n = n;
            }
            let sim = generate_cohort(&cfg).map_err(core)?;
            write_atomic(&out.join("cohort.csv"), sim.raw.to_cohort_csv().as_bytes())?;
            write_atomic(&out.join("longitudinal.csv"), sim.raw.to_longitudinal_csv().as_bytes())?;
            write_atomic(&out.join("rules.json"), sim.rules.to_json_pretty().as_bytes())?;
            write_atomic(&out.join("model.json"), cfg.model.to_json_pretty().as_bytes())?;
            write_atomic(&out.join("config.json"), &json(&cfg))?;
            write_atomic(&out.join("truth.json"), &json(&sim.truth))?;
            println!("n={} cases={} -> {}", sim.cohort.n, sim.cohort.case_count, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
