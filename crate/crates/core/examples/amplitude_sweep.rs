//! Sweep the amplitude of Gaussian data in the unit ball and tabulate T_est.

use kslab::config::ExperimentConfig;
use kslab::pipeline::{run_sweep, t_est_nonincreasing};

fn main() {
    let cfg = ExperimentConfig::from_text(
        "data = gaussian\nm_stop_factor = 1e5\nt_max = 5\nh0 = 1e-5\nsweep.amplitude = 8,16,24,32\n",
    )
    .expect("config");
    let dir = std::env::temp_dir().join("kslab-amplitude-sweep");
    let rows = run_sweep(&cfg, &dir).expect("sweep");
    for row in &rows {
        let t = row.report.as_ref().map_or("no blow-up".to_string(), |r| format!("T_est = {:.6}", r.t_est));
        println!("amplitude {}: {t}", row.overrides[0].1);
    }
    println!("T_est nonincreasing in amplitude: {}", t_est_nonincreasing(&rows));
    println!("summary in {}", dir.join("summary.csv").display());
}
