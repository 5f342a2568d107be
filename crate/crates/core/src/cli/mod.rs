//! The `sdore` command line: `run`, `gradcheck` and `list`.
//!
//! Exit codes are 0 on success, 1 on a runtime failure and 2 on a
//! configuration error (bad flags, unreadable or invalid config).

mod config;
pub mod gradcheck;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{ModelConfig, PenaltyPoints, ProblemOverrides, ResolvedRun, RunConfig, VariantConfig};
pub use gradcheck::{run_gradcheck, CheckResult, GradcheckOptions};

use crate::error::{Result, SdoreError};
use crate::experiments::{curve_csv, curve_points, registry, run_experiment, ExperimentReport, Problem};
use crate::model::save_checkpoint;
use crate::training::{LossSpec, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const DEFAULT_OUTPUT_DIR: &str = "sdore-output";

#[derive(Debug, Parser)]
#[command(name = "sdore", version, about = "Semi-supervised deep Sobolev regression")]
struct Cli {
    /// Directory for run artifacts; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads for independent (variant, seed) cells.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config file.
    Run { config: PathBuf },
    /// Check derivatives against finite differences and the ridge closed form.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random networks per derivative check.
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, hide = true)]
        corrupt_requ_prime: bool,
    },
    /// Print the built-in experiments and their defaults.
    List,
}

fn exit_code(e: &SdoreError) -> i32 {
    match e {
        SdoreError::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, cli.output_dir.as_deref(), cli.threads, out),
        Command::Gradcheck {
            seed,
            cases,
            corrupt_requ_prime,
        } => cmd_gradcheck(
            GradcheckOptions {
                seed: *seed,
                cases: *cases,
                corrupt_requ_prime: *corrupt_requ_prime,
            },
            out,
        ),
        Command::List => {
            cmd_list(out);
            Ok(EXIT_OK)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    match threads {
        None => f(),
        Some(0) => Err(SdoreError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SdoreError::Numerical(format!("cannot start thread pool: {e}")))?
            .install(f),
    }
}

pub fn cmd_list(out: &mut dyn Write) {
    let entries = registry();
    let _ = writeln!(out, "{} built-in experiments:", entries.len());
    for e in entries {
        let _ = writeln!(out, "{e}");
    }
}

pub fn cmd_gradcheck(opts: GradcheckOptions, out: &mut dyn Write) -> Result<i32> {
    let results = run_gradcheck(opts)?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{:<11} cases={:<3} max_rel_err={:.3e} tol={:.0e} {status}",
            r.name, r.cases, r.max_rel_err, r.tolerance
        );
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        let _ = writeln!(out, "all checks passed");
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(out, "failing checks: {}", failed.join(", "));
        Ok(EXIT_RUNTIME)
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    library_version: &'static str,
    experiment: &'a str,
    runtime_seconds: f64,
    threads: Option<usize>,
    sigma: Option<f64>,
    sigma_provenance: &'a str,
    penalty_points: Vec<String>,
    config: &'a RunConfig,
    config_toml: String,
    report: &'a ExperimentReport,
}

fn penalty_source(spec: &LossSpec, problem: &Problem) -> String {
    let m = match problem {
        Problem::Synthetic(p) => p.m,
        Problem::Dataset { .. } => 0,
    };
    let what = match (spec.variant, &spec.nu_points) {
        _ if spec.lambda == 0.0 => "none (lambda = 0)".to_string(),
        (Variant::Ls, _) => "none (least squares)".to_string(),
        (Variant::Dore, Some(p)) => format!("configured point set of {} points", p.nrows()),
        (Variant::Dore, None) => "labeled covariates of each minibatch".to_string(),
        (Variant::Sdore, _) if m > 0 => format!("unlabeled sample of {m} points"),
        (Variant::Sdore, _) => "unlabeled covariates (held-out rows)".to_string(),
        (Variant::SdorePooled, _) => "labeled and unlabeled covariates pooled".to_string(),
    };
    format!("{}(lambda={:?}): {what}", spec.variant.name(), spec.lambda)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| SdoreError::io(path, e))
}

pub fn cmd_run(
    config_path: &Path,
    output_override: Option<&Path>,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> Result<i32> {
    if threads == Some(0) {
        return Err(SdoreError::Config("--threads must be at least 1".into()));
    }
    let config = RunConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let run = config.resolve(base)?;
    let dir = output_override
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    fs::create_dir_all(&dir).map_err(|e| SdoreError::io(&dir, e))?;

    let started = Instant::now();
    let outcome = with_threads(threads, || {
        run_experiment(&run.problem, &run.variants, &config.seeds, &run.experiment)
    })?;
    outcome.report.verify_aggregates()?;
    let runtime = started.elapsed().as_secs_f64();
    let report = &outcome.report;

    let file = ReportFile {
        library_version: env!("CARGO_PKG_VERSION"),
        experiment: &report.experiment,
        runtime_seconds: runtime,
        threads,
        sigma: report.sigma,
        sigma_provenance: &report.sigma_provenance,
        penalty_points: run.variants.iter().map(|v| penalty_source(v, &run.problem)).collect(),
        config: &config,
        config_toml: config.to_toml(),
        report,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| SdoreError::Numerical(format!("cannot serialize report: {e}")))?;
    write_file(&dir.join("report.json"), json)?;
    write_file(&dir.join("report.csv"), report.to_csv())?;
    write_file(&dir.join("config.toml"), config.to_toml())?;

    let mut history = String::from("variant,lambda,seed,");
    history.push_str(crate::training::History::CSV_HEADER);
    history.push('\n');
    let points = curve_points(&run.problem, &run.experiment)?;
    let mut curve = String::new();
    for fit in &outcome.fits {
        let spec = &run.variants[fit.variant_index];
        let prefix = format!("{},{:?},{}", spec.variant.name(), spec.lambda, fit.seed);
        for r in &fit.history.epochs {
            history.push_str(&format!(
                "{prefix},{},{:?},{:?},{:?}\n",
                r.epoch, r.total_loss, r.fit_term, r.penalty_term
            ));
        }
        let body = curve_csv(&fit.model, &run.problem, &points)?;
        let mut lines = body.lines();
        let header = lines.next().unwrap_or_default();
        if curve.is_empty() {
            curve.push_str(&format!("variant,lambda,seed,{header}\n"));
        }
        for line in lines {
            curve.push_str(&format!("{prefix},{line}\n"));
        }
        let ckpt = dir.join(format!(
            "model_v{}_{}_seed{}.ckpt",
            fit.variant_index,
            spec.variant.name(),
            fit.seed
        ));
        save_checkpoint(&fit.model, &ckpt)?;
    }
    write_file(&dir.join("history.csv"), history)?;
    write_file(&dir.join("curve.csv"), curve)?;

    let _ = writeln!(
        out,
        "{}: {} rows in {:.1}s, artifacts in {}",
        report.experiment,
        report.rows.len(),
        runtime,
        dir.display()
    );
    for agg in &report.aggregates {
        let metrics: Vec<String> = agg
            .metrics
            .iter()
            .map(|m| format!("{}={:.4e}±{:.1e}", m.metric, m.mean, m.std))
            .collect();
        let _ = writeln!(out, "  {}(lambda={:e}) {}", agg.variant.name(), agg.lambda, metrics.join(" "));
    }
    Ok(EXIT_OK)
}
