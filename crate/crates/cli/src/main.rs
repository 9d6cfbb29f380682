//! Command-line front end: runs configured experiments and summarizes their
//! reports.
//!
//! Exit codes: 0 = all runs passed; 2 = configuration/validation problem
//! (nothing written); 3 = a solver failed to converge or a pass criterion was
//! missed (partial results are still written).

mod config;
mod experiments;
mod report;

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "hodgelab", version, about = "Numerical laboratory for the BB stratification of the Hodge moduli space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiment configs (JSON).
    Run {
        /// Config files; independent configs can run concurrently.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Number of configs to run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Condense finished reports into a one-line-per-experiment CSV table.
    ReportSummary {
        /// Report files produced by `run`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { configs, jobs } => run_many(&configs, jobs.max(1)),
        Command::ReportSummary { reports, out } => report_summary(&reports, out.as_deref()),
    };
    std::process::exit(code);
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Runs every config, fanning out over `jobs` worker threads, and combines
/// the per-run exit codes (validation failures dominate).
fn run_many(configs: &[PathBuf], jobs: usize) -> i32 {
    let codes: Vec<i32> = if jobs <= 1 || configs.len() <= 1 {
        configs.iter().map(|p| run_one(p)).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let codes = std::sync::Mutex::new(vec![0i32; configs.len()]);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(configs.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= configs.len() {
                        break;
                    }
                    let c = run_one(&configs[i]);
                    codes.lock().unwrap()[i] = c;
                });
            }
        });
        codes.into_inner().unwrap()
    };
    if codes.contains(&2) {
        2
    } else if codes.iter().any(|&c| c != 0) {
        3
    } else {
        0
    }
}

fn run_one(path: &PathBuf) -> i32 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: cannot read config: {e}", path.display());
            return 2;
        }
    };
    let cfg: RunConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: malformed config: {e}", path.display());
            return 2;
        }
    };
    if let Err(msg) = cfg.validate() {
        eprintln!("{}: invalid config: {msg}", path.display());
        return 2;
    }
    let started = now_ms();
    let t0 = std::time::Instant::now();
    match experiments::run_experiment(&cfg, &cfg.output.report) {
        Ok(outcome) => {
            let rep = report::report_from(&cfg, &outcome);
            if let Err(e) = report::write_outputs(&cfg, &rep, started, t0.elapsed().as_millis()) {
                eprintln!("{}: cannot write outputs: {e}", path.display());
                return 2;
            }
            println!(
                "{}: {} {} ({})",
                path.display(),
                cfg.experiment.name(),
                rep.status,
                rep.headline
            );
            if outcome.pass { 0 } else { 3 }
        }
        Err(e) if e.exit_code() == 3 => {
            // Convergence/numeric failure: still write a (partial) report.
            let outcome = experiments::Outcome {
                pass: false,
                headline: "did not converge".into(),
                metrics: Default::default(),
                columns: vec![],
                rows: vec![],
                failure: Some(e.to_string()),
            };
            let rep = report::report_from(&cfg, &outcome);
            if let Err(err) = report::write_outputs(&cfg, &rep, started, t0.elapsed().as_millis()) {
                eprintln!("{}: cannot write outputs: {err}", path.display());
                return 2;
            }
            eprintln!("{}: {e}", path.display());
            3
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            2
        }
    }
}

fn report_summary(reports: &[PathBuf], out: Option<&std::path::Path>) -> i32 {
    let mut buf: Vec<u8> = Vec::new();
    if let Err(e) = report::summarize(reports, &mut buf) {
        eprintln!("report-summary: {e}");
        return 2;
    }
    match out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, &buf) {
                eprintln!("report-summary: cannot write {}: {e}", p.display());
                return 2;
            }
        }
        None => {
            use std::io::Write;
            let _ = std::io::stdout().write_all(&buf);
        }
    }
    0
}
