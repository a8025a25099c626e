//! The complete pipeline driven by a preset, as the CLI runs it.
//!
//! Usage: `blowup_report [preset] [output dir]`.

use std::path::{Path, PathBuf};

use kslab::config::ExperimentConfig;
use kslab::pipeline::{run_stage, Command};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "flat-n3".into());
    let out = std::env::args().nth(2).map_or_else(|| std::env::temp_dir().join(format!("kslab-{name}")), PathBuf::from);
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.conf"));
    let cfg = ExperimentConfig::from_file(&preset).expect("preset");
    println!("config hash {}", cfg.hash());
    match run_stage(Command::Verify, &cfg, &out) {
        Ok(outcome) => {
            println!("{}", std::fs::read_to_string(out.join("report.json")).expect("report"));
            for n in &outcome.notes {
                println!("note: {n}");
            }
            for f in &outcome.failures {
                println!("failed: {f}");
            }
            println!("{} artifacts in {}", outcome.artifacts.len(), out.display());
        }
        Err(e) => eprintln!("{e}"),
    }
}
