use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kslab::config::ExperimentConfig;
use kslab::pipeline::{run_pipeline, Command, EXIT_CONFIG};

/// Self-similar blow-up profiles and radial blow-up simulation.
#[derive(Parser, Debug)]
#[command(name = "kslab", version, trailing_var_arg = true)]
struct Cli {
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` pairs.
    #[arg(allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| format!("expected --key, got {a:?}"))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let v = it.next().ok_or_else(|| format!("--{key} needs a value"))?;
        out.push((key.to_string(), v.clone()));
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = parse_overrides(&cli.overrides).map_err(kslab::KsError::InvalidInput).and_then(|mut ov| {
        // `--config` may also follow the overrides.
        let mut config = cli.config.clone();
        if let Some(i) = ov.iter().position(|(k, _)| k == "config") {
            config = Some(PathBuf::from(ov.remove(i).1));
        }
        let base = match &config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        base.with_overrides(&ov)
    });
    let code = match cfg {
        Ok(cfg) => run_pipeline(cli.command, &cfg),
        Err(e) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
    };
    ExitCode::from(code as u8)
}
