use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoflow_cli::config::Format;
use geoflow_cli::{run_config, CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "geoflow", version, about = "Curve shortening and closed geodesic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Persistence of a nondegenerate closed geodesic under a conformal perturbation.
    Stability(Common),
    /// Simple closed geodesic meeting both cap equators twice.
    TheoremC(Common),
    /// One curve shortening run with intersection tracking.
    Flow(Common),
    /// Closed geodesics in a flat-knot class.
    Spectrum(Common),
    /// Morse index and nullity of one closed geodesic.
    Index(Common),
    /// Birkhoff return-time scan.
    Scan(Common),
    /// Focusing cap construction and rotation checks.
    Cap(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "GEOFLOW_THREADS")]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Stability(c) => ("stability", c),
            Command::TheoremC(c) => ("theorem_c", c),
            Command::Flow(c) => ("flow", c),
            Command::Spectrum(c) => ("spectrum", c),
            Command::Index(c) => ("index", c),
            Command::Scan(c) => ("scan", c),
            Command::Cap(c) => ("cap", c),
        }
    }
}

fn execute(cli: Cli) -> CliResult<bool> {
    let (kind, args) = cli.command.parts();
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(CliError::Usage)?;
    if cfg.experiment.name() != kind {
        return Err(CliError::Usage(format!("config describes a {} experiment, not {kind}", cfg.experiment.name())));
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(f) = args.format {
        cfg.output.format = f;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let rec = run_config(&cfg, &out)?;
    println!("{}", serde_json::json!({ "passed": rec.passed, "verdict": rec.verdict, "dir": rec.dir }));
    Ok(rec.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
