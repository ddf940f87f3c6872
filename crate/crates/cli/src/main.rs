mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use commands::{Failure, Outcome};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "collapse", version, about = "Neural collapse experiments under the renormalized MSE flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration entry; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Loss decomposition along a simulated flow.
    Decompose(RunArgs),
    /// Flow trajectory with NC metrics per snapshot.
    Flow(RunArgs),
    /// Closed-form singular values on a log-spaced time grid.
    Closedform(RunArgs),
    /// Simulated flow against the closed form, at two step sizes.
    Compare(RunArgs),
}

const EXIT_TOLERANCE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn write_summary(out: &Path, summary: &Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(out.join("summary.json"), text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Decompose(a) => ("decompose", a),
        Command::Flow(a) => ("flow", a),
        Command::Closedform(a) => ("closedform", a),
        Command::Compare(a) => ("compare", a),
    };

    let env_seed = std::env::var("COLLAPSE_SEED").ok();
    let cfg = match ExperimentConfig::from_file(&args.config, &args.set, env_seed.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("cannot create {}: {e}", args.out.display());
        return ExitCode::from(EXIT_CONFIG);
    }

    let result = match &cli.command {
        Command::Decompose(_) => commands::decompose_cmd(&cfg, &args.out),
        Command::Flow(_) => commands::flow_cmd(&cfg, &args.out),
        Command::Closedform(_) => commands::closedform_cmd(&cfg, &args.out),
        Command::Compare(_) => commands::compare_cmd(&cfg, &args.out),
    };

    let (status, code, body) = match result {
        Ok(Outcome { summary, violations }) => {
            let (status, code) = if violations.is_empty() {
                ("ok", 0)
            } else {
                ("tolerance_violation", EXIT_TOLERANCE)
            };
            for v in &violations {
                eprintln!("tolerance violation: {v}");
            }
            (status, code, json!({ "results": summary, "violations": violations }))
        }
        Err(e) => {
            eprintln!("{e}");
            let (status, code) = match e {
                Failure::Config(_) | Failure::Io(_) => ("invalid_config", EXIT_CONFIG),
                Failure::Numerical(_) => ("numerical_failure", EXIT_NUMERICAL),
            };
            (status, code, json!({ "error": e.to_string() }))
        }
    };

    let mut summary = json!({
        "command": name,
        "status": status,
        "exit_code": code,
        "config": commands::config_summary(&cfg),
    });
    summary
        .as_object_mut()
        .unwrap()
        .extend(body.as_object().unwrap().clone());
    if let Err(e) = write_summary(&args.out, &summary) {
        eprintln!("cannot write summary.json: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    ExitCode::from(code)
}
