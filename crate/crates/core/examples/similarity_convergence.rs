//! Rescale a blow-up run around T and watch phi(0, s) approach a profile.

use kslab::profiles::{integrate_profile, ProfileParams};
use kslab::radial::{build_mass_from_u0, run_to_blowup, InitialData, Mode, SolverConfig};
use kslab::similarity::{analyze, profile_distance, SteadyConfig};

fn main() -> kslab::Result<()> {
    let cfg = SolverConfig {
        mode: Mode::TruncatedWholeSpace,
        radius: 10.0,
        h0: 2e-6,
        uniform_extent: 1e-4,
        m_stop_factor: 1e8,
        ..SolverConfig::default()
    };
    let grid = cfg.build_grid()?;
    let u0 = InitialData::ScaledProfile { kappa: 1.05 }.sample(&grid);
    let (traj, outcome) = run_to_blowup(build_mass_from_u0(&u0, &grid)?, &grid, &cfg)?;
    let est = *outcome.estimate().expect("blow-up");
    let profiles: Vec<_> = [1.0 / 3.0, 2.0]
        .iter()
        .map(|a| integrate_profile(ProfileParams::new(3, *a, 25.0, 1e-10)?))
        .collect::<kslab::Result<_>>()?;
    let sc = SteadyConfig::default();
    let analysis = analyze(&traj, &est, &profiles, &sc)?;
    println!("T_est = {:.6}", est.t_est);
    println!("{:>8} {:>10} {:>12} {:>12}", "s", "phi(0)", "|phi-1/3|", "|phi-Psi0|");
    let mut next = f64::NEG_INFINITY;
    for st in &analysis.states {
        if st.s < next {
            continue;
        }
        next = st.s + 1.0;
        let d: Vec<f64> = profiles.iter().map(|p| profile_distance(st, p, sc.y_check).unwrap_or(f64::NAN)).collect();
        println!("{:8.3} {:10.6} {:12.4e} {:12.4e}", st.s, st.origin_value, d[0], d[1]);
    }
    println!("{:?}", analysis.verdict);
    Ok(())
}
