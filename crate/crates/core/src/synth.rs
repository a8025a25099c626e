//! Exact self-similar trajectories `w(r, t) = (T - t)^-1 psi(r / sqrt(T - t))`
//! sampled on a radial grid, used as oracles for the analysis code.

use crate::error::{KsError, Result};
use crate::radial::{MassState, Mode, RadialGrid, SolverConfig, StepRecord, Trajectory};

/// `count` values of `T - t` from `tau_start` down to `tau_end`, equally spaced
/// in `log(T - t)`.
pub fn geometric_taus(tau_start: f64, tau_end: f64, count: usize) -> Result<Vec<f64>> {
    if !(tau_start > tau_end && tau_end > 0.0) || count < 2 {
        return Err(KsError::InvalidInput(format!(
            "need tau_start > tau_end > 0 and >= 2 frames, got {tau_start}, {tau_end}, {count}"
        )));
    }
    let ratio = (tau_end / tau_start).ln() / (count - 1) as f64;
    Ok((0..count).map(|k| tau_start * (ratio * k as f64).exp()).collect())
}

/// Frames of the self-similar solution with mass profile `psi` at the times
/// `T - taus[k]`. `taus` must be decreasing.
pub fn self_similar_trajectory<F: Fn(f64) -> f64>(
    grid: &RadialGrid,
    t_blowup: f64,
    taus: &[f64],
    psi: F,
) -> Result<Trajectory> {
    if taus.is_empty() || taus.windows(2).any(|w| !(w[1] < w[0])) || !(taus[taus.len() - 1] > 0.0) {
        return Err(KsError::InvalidInput("taus must be positive and decreasing".into()));
    }
    let frames: Vec<MassState> = taus
        .iter()
        .map(|&tau| {
            let root = tau.sqrt();
            let w = grid.nodes().iter().map(|r| psi(r / root) / tau).collect();
            MassState::new(t_blowup - tau, w)
        })
        .collect();
    let steps = frames
        .iter()
        .enumerate()
        .map(|(k, f)| StepRecord { t: f.t, m: f.m, dt: if k == 0 { 0.0 } else { f.t - frames[k - 1].t } })
        .collect();
    let config = SolverConfig {
        n: grid.n(),
        radius: grid.radius(),
        mode: Mode::TruncatedWholeSpace,
        ..SolverConfig::default()
    };
    Ok(Trajectory { frames, steps, events: Vec::new(), config, grid: grid.clone() })
}

/// The spatially constant solution `u = (1/c - t)^-1`, i.e. `psi = 1/n` with
/// `T = 1/c`.
pub fn flat_trajectory(grid: &RadialGrid, c: f64, taus: &[f64]) -> Result<Trajectory> {
    if !(c > 0.0) {
        return Err(KsError::InvalidInput(format!("c={c} must be > 0")));
    }
    let n = grid.n() as f64;
    let mut traj = self_similar_trajectory(grid, 1.0 / c, taus, |_| 1.0 / n)?;
    traj.config.mode = Mode::Homogeneous;
    Ok(traj)
}
