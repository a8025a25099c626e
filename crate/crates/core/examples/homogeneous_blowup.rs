//! Constant data blow up at T = 1/c with (T - t) u(0, t) = 1.

use kslab::asymptotics::{type_one_check, AsymptoticsConfig};
use kslab::radial::{build_mass_from_u0, run_to_blowup, InitialData, Mode, SolverConfig};

fn main() -> kslab::Result<()> {
    for c in [0.5, 1.0, 4.0] {
        let cfg = SolverConfig { mode: Mode::Homogeneous, h0: 1e-4, uniform_extent: 1e-2, growth: 1.05, ..SolverConfig::default() };
        let grid = cfg.build_grid()?;
        let u0 = InitialData::Constant { c }.sample(&grid);
        let (traj, outcome) = run_to_blowup(build_mass_from_u0(&u0, &grid)?, &grid, &cfg)?;
        let est = outcome.estimate().expect("constant data blow up");
        let t1 = type_one_check(&traj, est.t_est, &AsymptoticsConfig::default())?;
        println!(
            "c = {c}: T_est = {:.6} (1/c = {:.6}, error bar {:.1e}), sup (T - t) u = {:.6}",
            est.t_est,
            1.0 / c,
            est.t_err,
            t1.m_fit
        );
    }
    Ok(())
}
