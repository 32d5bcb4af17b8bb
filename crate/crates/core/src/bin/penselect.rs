use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use penselect::bounds::{chaining_h, oracle_constant, ChainingParams};
use penselect::harness::{self, ExperimentConfig, Kind, Report};
use penselect::{Error, KAPPA};

#[derive(Parser)]
#[command(name = "penselect", version, about = "Penalized model selection under sub-gamma noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify a noise family and check its Laplace transform and Bernstein sums.
    VerifyNoise(RunArgs),
    /// Monte Carlo check of the χ²-type deviation bounds.
    DeviationChi(RunArgs),
    /// Monte Carlo check of the supremum deviation bounds.
    DeviationSup(RunArgs),
    /// Monte Carlo risk of the selected estimator against the risk bound.
    Oracle(RunArgs),
    /// Select a model for one noisy observation and write the result.
    Select(RunArgs),
    /// Print κ, C(K) and the chaining series.
    Constants,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration; defaults to the built-in one for the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output JSON path; a CSV with the same stem is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(args: &RunArgs, kind: Kind) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => harness::default_suite()
            .into_iter()
            .find(|c| c.kind == kind)
            .ok_or_else(|| Failure::Config(format!("{} needs --config", kind.name())))?,
    };
    if cfg.kind != kind && !(kind == Kind::SelectOnce && cfg.kind == Kind::Oracle) {
        return Err(Failure::Config(format!(
            "config kind {} does not match subcommand {}",
            cfg.kind.name(),
            kind.name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn emit_report(report: &Report, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            write(path, &report.to_json())?;
            write(&path.with_extension("csv"), &report.to_csv())?;
            for r in &report.records {
                println!(
                    "{} {}{} x={} u={} empirical={} bound={} stderr={}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.experiment,
                    r.model.as_deref().map(|m| format!("/{m}")).unwrap_or_default(),
                    r.x.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                    r.u.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                    r.empirical,
                    r.bound,
                    r.stderr
                );
            }
        }
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn print_constants() -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "kappa = {KAPPA}")?;
    writeln!(out)?;
    for k in [1.25, 1.5, 2.0, 3.0, 4.0, 5.0, 10.0] {
        writeln!(out, "C({k})={}", oracle_constant(k).expect("K > 1"))?;
    }
    writeln!(out)?;
    writeln!(out, "{:>3} {:>12} {:>12} {:>12} {:>12}", "D", "H(1,0)", "14*sqrt(D)", "H(0,1)", "18*D")?;
    for d in 1..=20 {
        let hv = chaining_h(&ChainingParams::new(1.0, 0.0, d));
        let hb = chaining_h(&ChainingParams::new(0.0, 1.0, d));
        writeln!(
            out,
            "{d:>3} {hv:>12.6} {:>12.6} {hb:>12.6} {:>12}",
            14.0 * (d as f64).sqrt(),
            18 * d
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let (args, kind) = match &cli.command {
        Command::Constants => {
            // a closed pipe is not an error worth reporting
            let _ = print_constants();
            return Ok(true);
        }
        Command::VerifyNoise(a) => (a, Kind::VerifyNoise),
        Command::DeviationChi(a) => (a, Kind::DeviationChi),
        Command::DeviationSup(a) => (a, Kind::DeviationSup),
        Command::Oracle(a) => (a, Kind::Oracle),
        Command::Select(a) => (a, Kind::SelectOnce),
    };
    if kind == Kind::SelectOnce && args.config.is_none() {
        return Err(Failure::Config("select needs --config".into()));
    }
    let cfg = load_config(args, kind)?;
    if kind == Kind::SelectOnce {
        let result = harness::select_once(&cfg)?;
        let text = serde_json::to_string_pretty(&result).expect("selection serializes");
        match &args.out {
            Some(path) => {
                write(path, &text)?;
                println!("chosen {} (crit {})", result.chosen_id, result.crit);
            }
            None => println!("{text}"),
        }
        return Ok(true);
    }
    let report = harness::run_experiment(&cfg)?;
    emit_report(&report, args.out.as_deref())?;
    Ok(report.all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
