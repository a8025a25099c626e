//! Gaussian data in the unit ball: blow-up time, rate and mass conservation.
//!
//! Usage: `gaussian_blowup [amplitude]` (default 16).

use kslab::asymptotics::{type_one_check, AsymptoticsConfig};
use kslab::radial::{build_mass_from_u0, check_conservation_and_monotonicity, check_i2, run_to_blowup, InitialData, RunOutcome, SolverConfig};

fn main() -> kslab::Result<()> {
    let amplitude: f64 = std::env::args().nth(1).map_or(16.0, |a| a.parse().expect("amplitude"));
    let cfg = SolverConfig { h0: 2e-6, uniform_extent: 1e-4, m_stop_factor: 1e6, t_max: 10.0, ..SolverConfig::default() };
    let grid = cfg.build_grid()?;
    let data = InitialData::Gaussian { amplitude, width: 1.0 };
    let u0 = data.sample(&grid);
    println!("{} nodes, monotonicity condition: {:?}", grid.len(), check_i2(&u0, data.derivative(&grid).as_deref(), &grid)?);
    let (traj, outcome) = run_to_blowup(build_mass_from_u0(&u0, &grid)?, &grid, &cfg)?;
    let mono = check_conservation_and_monotonicity(&traj, cfg.tol);
    println!("mass drift until m = 1e3 m(0): {:.2e}", mono.mass_drift_until(1e3));
    match outcome {
        RunOutcome::Blowup(est) => {
            let t1 = type_one_check(&traj, est.t_est, &AsymptoticsConfig::default().with_guard(&est, 1000.0))?;
            println!("T_est = {:.6} +- {:.1e}, slope of log m vs log(T - t) = {:.4}", est.t_est, est.t_err, est.slope);
            println!("(T - t) u(0, t) in [{:.4}, {:.4}], type I: {}", t1.lower, t1.m_fit, t1.type_one);
        }
        other => println!("no blow-up: {other:?}"),
    }
    Ok(())
}
