use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vservo::audit::run_audit;
use vservo::config::{preset_source, ExperimentConfig};
use vservo::output::{write_run_artifacts, SummaryFile, SNAPSHOT_FILE};
use vservo::sim::run;
use vservo::sweep::{sweep, write_sweep_csv, SweepRow};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAULT: u8 = 3;
const EXIT_AUDIT: u8 = 4;

/// Adaptive visual tracking with an uncalibrated fixed camera: simulation,
/// audits and parameter sweeps.
#[derive(Parser, Debug)]
#[command(name = "vservo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one experiment and write its artifacts.
    Run(Common),
    /// Run the rank, identity, gain-condition and workspace audits.
    Audit(Common),
    /// Run one simulation per value of a parameter, in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted or unique bare configuration key to vary.
        #[arg(long)]
        param: String,
        /// Values, comma separated or repeated.
        #[arg(long, num_args = 0.., value_delimiter = ',')]
        values: Vec<String>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a configuration with the same validator `run` uses.
    ValidateConfig(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Shipped configuration to start from (default: paper-sec4).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Configuration file to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, default_value = "out")]
    outdir: PathBuf,
    /// `key=value` overrides applied after loading, in order.
    #[arg(long = "override", num_args = 1.., action = clap::ArgAction::Append)]
    overrides: Vec<String>,
    /// Accept gains with alpha <= gamma/3.
    #[arg(long)]
    allow_theorem_violation: bool,
}

impl Common {
    fn source(&self) -> Result<String, String> {
        match (&self.config, &self.preset) {
            (Some(path), _) => std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display())),
            (None, name) => preset_source(name.as_deref().unwrap_or("paper-sec4")).map(str::to_string).map_err(|e| e.to_string()),
        }
    }

    fn load(&self) -> Result<ExperimentConfig, String> {
        ExperimentConfig::parse(&self.source()?, &self.overrides).map_err(|e| e.to_string())
    }
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    let msg = msg.to_string();
    // core errors already carry the prefix
    if msg.starts_with("config error") {
        eprintln!("{msg}");
    } else {
        eprintln!("config error: {msg}");
    }
    ExitCode::from(EXIT_CONFIG)
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> ExitCode {
    eprintln!("cannot write to {}: {e}", path.display());
    ExitCode::from(EXIT_CONFIG)
}

fn cmd_run(c: &Common) -> ExitCode {
    let setup = match c.load().and_then(|cfg| cfg.to_setup(c.allow_theorem_violation).map_err(|e| e.to_string())) {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    let log = match run(&setup) {
        Ok(l) => l,
        Err(e) => return config_error(e),
    };
    if let Err(e) = write_run_artifacts(&log, &c.outdir) {
        return io_failure(&c.outdir, e);
    }
    print!("{}", SummaryFile::from_log(&log).to_toml());
    match &log.fault {
        Some(e) => {
            eprintln!("runtime fault: {e}; state written to {}", c.outdir.join(SNAPSHOT_FILE).display());
            ExitCode::from(EXIT_FAULT)
        }
        None => ExitCode::SUCCESS,
    }
}

fn cmd_audit(c: &Common) -> ExitCode {
    let cfg = match c.load() {
        Ok(cfg) => cfg,
        Err(e) => return config_error(e),
    };
    let report = match run_audit(&cfg) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    let text = report.to_text();
    let written = std::fs::create_dir_all(&c.outdir)
        .and_then(|_| std::fs::write(c.outdir.join("audit_report.txt"), &text))
        .and_then(|_| std::fs::write(c.outdir.join("audit_summary.toml"), report.to_toml()));
    if let Err(e) = written {
        return io_failure(&c.outdir, e);
    }
    print!("{text}");
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_AUDIT)
    }
}

fn cmd_sweep(c: &Common, param: &str, values: &[String], threads: Option<usize>) -> ExitCode {
    let values: Vec<String> = values.iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    let source = match c.source() {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = match sweep(&source, &c.overrides, param, &values, c.allow_theorem_violation, threads) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    let path = c.outdir.join("sweep.csv");
    let file = std::fs::create_dir_all(&c.outdir).and_then(|_| std::fs::File::create(&path));
    match file {
        Ok(f) => {
            if let Err(e) = write_sweep_csv(param, &rows, std::io::BufWriter::new(f)) {
                return io_failure(&path, e);
            }
        }
        Err(e) => return io_failure(&path, e),
    }
    for r in &rows {
        let status = if r.succeeded() { "ok".to_string() } else { r.fault.clone().or_else(|| r.outcome.clone().err()).unwrap_or_default() };
        println!("{param} = {}: {status}", r.value);
    }
    if rows.iter().any(SweepRow::succeeded) {
        ExitCode::SUCCESS
    } else {
        eprintln!("every run in the sweep failed");
        ExitCode::from(EXIT_FAULT)
    }
}

fn cmd_validate(c: &Common) -> ExitCode {
    match c.load().and_then(|cfg| cfg.to_setup(c.allow_theorem_violation).map(|_| cfg).map_err(|e| e.to_string())) {
        Ok(cfg) => {
            print!("{}", cfg.to_flat_string());
            eprintln!("configuration is valid");
            ExitCode::SUCCESS
        }
        Err(e) => config_error(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Audit(c) => cmd_audit(c),
        Command::Sweep { common, param, values, threads } => cmd_sweep(common, param, values, *threads),
        Command::ValidateConfig(c) => cmd_validate(c),
    }
}
