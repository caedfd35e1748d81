//! `padic-lab`: runs the identity suites and writes a deterministic report.
//!
//! Exit status is 0 when every row passes, 1 when any row fails (or the
//! report cannot be written) and 2 for configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use padic_lab::suites::{emit_report, run, RunConfig};
use padic_lab::Error;

#[derive(Parser, Debug)]
#[command(
    name = "padic-lab",
    version,
    about = "Exact verification suites for microlocal kernels on PGL2(Q_p)"
)]
struct Args {
    /// Flat key = value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Residue characteristic.
    #[arg(long)]
    p: Option<u64>,
    /// Working precision M (digits); must satisfy the precision policy.
    #[arg(long)]
    precision: Option<u32>,
    /// Kernel levels, comma separated.
    #[arg(long = "N", value_delimiter = ',')]
    n: Vec<u32>,
    /// Character conductor level N0
    #[arg(long = "N0")]
    n0: Option<u32>,
    /// Smoothing level of U = K[m].
    #[arg(long)]
    m: Option<u32>,
    /// Exponent ξ selecting the class σ.
    #[arg(long)]
    sigma: Option<u64>,
    /// exact or float.
    #[arg(long)]
    backend: Option<String>,
    /// Relative tolerance for float comparisons
    #[arg(long)]
    tolerance: Option<f64>,
    /// Suites to run, comma separated: fourier-kernel, main-term, stability,
    /// specrep, characters, constants or all.
    #[arg(long, value_delimiter = ',')]
    suite: Vec<String>,
    /// json, md or csv.
    #[arg(long)]
    format: Option<String>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: PADIC_LAB_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Record wall-clock micros per row (makes reports non-reproducible).
    #[arg(long)]
    timings: bool,
}

fn build_config(args: &Args) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if args.threads.is_none() && cfg.threads == 0 {
        if let Ok(v) = std::env::var("PADIC_LAB_THREADS") {
            cfg.set("threads", &v)?;
        }
    }
    let mut flags: Vec<(&str, String)> = Vec::new();
    let join = |v: &[String]| v.join(",");
    if let Some(v) = args.p {
        flags.push(("p", v.to_string()));
    }
    if let Some(v) = args.precision {
        flags.push(("precision", v.to_string()));
    }
    if !args.n.is_empty() {
        flags.push((
            "N",
            join(&args.n.iter().map(u32::to_string).collect::<Vec<_>>()),
        ));
    }
    if let Some(v) = args.n0 {
        flags.push(("N0", v.to_string()));
    }
    if let Some(v) = args.m {
        flags.push(("m", v.to_string()));
    }
    if let Some(v) = args.sigma {
        flags.push(("sigma", v.to_string()));
    }
    if let Some(v) = &args.backend {
        flags.push(("backend", v.clone()));
    }
    if let Some(v) = args.tolerance {
        flags.push(("tolerance", v.to_string()));
    }
    if !args.suite.is_empty() {
        flags.push(("suite", join(&args.suite)));
    }
    if let Some(v) = &args.format {
        flags.push(("format", v.clone()));
    }
    if let Some(v) = &args.out {
        flags.push(("out", v.display().to_string()));
    }
    if let Some(v) = args.threads {
        flags.push(("threads", v.to_string()));
    }
    if args.timings {
        flags.push(("timings", "true".into()));
    }
    for (k, v) in flags {
        cfg.set(k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cfg: &RunConfig) -> Result<bool, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let report = pool.install(|| run(cfg))?;
    let bytes = emit_report(&report, cfg.format)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, &bytes)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
        }
    }
    let failed: Vec<_> = report.failures().collect();
    eprintln!("{} rows, {} failed", report.rows.len(), failed.len());
    for r in &failed {
        eprintln!(
            "FAIL {} {} [{}]: {} vs {}",
            r.suite, r.id, r.inputs, r.lhs, r.rhs
        );
    }
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("padic-lab: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("padic-lab: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("padic-lab: {e}");
            ExitCode::from(1)
        }
    }
}
