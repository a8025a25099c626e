//! Similarity variables `y = r / sqrt(T - t)`, `s = -log(T - t)` and
//! `phi(y, s) = (T - t) w(y sqrt(T - t), t)`.
//!
//! In these variables a self-similar blow-up is a steady state of
//!
//! ```text
//! phi_s = phi_yy + ((n+1)/y - y/2) phi_y - phi + n phi^2 + y phi phi_y.
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::interp::Pchip;
use crate::profiles::{ProfileSolution, SteadyStatePair};
use crate::radial::{density_from_mass, BlowupEstimate, MassState, RadialGrid, Trajectory};
use crate::tridiag;

pub const DEFAULT_Y_MAX: f64 = 20.0;
pub const DEFAULT_Y_CHECK: f64 = 10.0;
pub const DEFAULT_DY: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledState {
    pub n: u32,
    pub s: f64,
    pub y: Vec<f64>,
    pub phi: Vec<f64>,
    pub origin_value: f64,
    /// Blow-up time used for the rescaling (NaN for evolved states).
    pub t_est: f64,
    pub source_frame: Option<usize>,
    /// The requested `y_max` reached past the frame's domain and was cut.
    pub truncated: bool,
}

impl RescaledState {
    pub fn new(n: u32, s: f64, y: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if y.len() != phi.len() || y.len() < 3 || y[0] != 0.0 {
            return Err(KsError::InvalidInput("rescaled state needs >= 3 samples starting at y = 0".into()));
        }
        if let Some(i) = phi.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(KsError::InvalidInput(format!("phi={} at y={} is not a finite non-negative value", phi[i], y[i])));
        }
        let origin_value = phi[0];
        Ok(RescaledState { n, s, y, phi, origin_value, t_est: f64::NAN, source_frame: None, truncated: false })
    }

    pub fn y_max(&self) -> f64 {
        *self.y.last().expect("non-empty")
    }

    /// Value at `y` by linear interpolation; `None` past the sampled range.
    pub fn phi_at(&self, y: f64) -> Option<f64> {
        if !(y >= 0.0) || y > self.y_max() {
            return None;
        }
        let k = self.y.partition_point(|v| *v <= y).clamp(1, self.y.len() - 1) - 1;
        let t = (y - self.y[k]) / (self.y[k + 1] - self.y[k]);
        Some(self.phi[k] + t * (self.phi[k + 1] - self.phi[k]))
    }

    /// `U = n phi + y phi_y`, the rescaled density.
    pub fn density(&self) -> Vec<f64> {
        density_from_mass(&self.y, &self.phi, self.n)
    }

    /// Right side of the rescaled equation at the nodes, with the
    /// finite-volume Laplacian; the last node is left at 0.
    pub fn steady_defect(&self) -> Result<Vec<f64>> {
        let grid = RadialGrid::from_nodes(self.n, self.y.clone())?;
        let lap = grid.laplacian(&self.phi);
        let u = self.density();
        let m = self.y.len();
        Ok((0..m)
            .map(|i| {
                if i + 1 == m {
                    return 0.0;
                }
                let drift = if i == 0 { 0.0 } else { central(&self.y, &self.phi, i) };
                lap[i] - 0.5 * self.y[i] * drift - self.phi[i] + self.phi[i] * u[i]
            })
            .collect())
    }
}

fn central(y: &[f64], f: &[f64], i: usize) -> f64 {
    (f[i + 1] - f[i - 1]) / (y[i + 1] - y[i - 1])
}

fn uniform_nodes(y_max: f64, dy: f64) -> Vec<f64> {
    let cells = (y_max / dy).round().max(2.0) as usize;
    (0..=cells).map(|k| y_max * k as f64 / cells as f64).collect()
}

/// Rescale `frame` on a uniform `y` grid of spacing `dy` over `[0, y_max]`.
/// If `y_max sqrt(T - t)` exceeds the radius, the grid is cut at the last node
/// inside and the state is flagged as truncated.
pub fn rescale_frame(frame: &MassState, grid: &RadialGrid, t_est: f64, y_max: f64, dy: f64) -> Result<RescaledState> {
    let tau = t_est - frame.t;
    if !(tau > 0.0) {
        return Err(KsError::InvalidInput(format!("frame time {} is not before T_est={t_est}", frame.t)));
    }
    if !(y_max > 0.0 && dy > 0.0 && dy < y_max) {
        return Err(KsError::InvalidInput(format!("bad y window: y_max={y_max}, dy={dy}")));
    }
    if frame.w.len() != grid.len() {
        return Err(KsError::InvalidInput("frame and grid sizes differ".into()));
    }
    let root = tau.sqrt();
    let mut y = uniform_nodes(y_max, dy);
    let reach = grid.radius() / root;
    let truncated = y_max > reach * (1.0 + 1e-12);
    if truncated {
        y.retain(|v| *v <= reach);
        if y.len() < 3 {
            return Err(KsError::InvalidInput(format!(
                "frame at t={} covers only y <= {reach:.3e}; too early to rescale",
                frame.t
            )));
        }
    }
    let interp = Pchip::new(grid.nodes(), &frame.w);
    let phi = y.iter().map(|v| (tau * interp.eval(v * root)).max(0.0)).collect();
    let mut st = RescaledState::new(grid.n(), -tau.ln(), y, phi)?;
    st.t_est = t_est;
    st.truncated = truncated;
    Ok(st)
}

/// Rescale `frame` on its own nodes `y_i = r_i / sqrt(T - t)` up to `y_max`,
/// without interpolation. Second differences of these samples are those of the
/// solver, which interpolated samples do not reproduce.
pub fn rescale_frame_native(frame: &MassState, grid: &RadialGrid, t_est: f64, y_max: f64) -> Result<RescaledState> {
    let tau = t_est - frame.t;
    if !(tau > 0.0) {
        return Err(KsError::InvalidInput(format!("frame time {} is not before T_est={t_est}", frame.t)));
    }
    if frame.w.len() != grid.len() {
        return Err(KsError::InvalidInput("frame and grid sizes differ".into()));
    }
    let root = tau.sqrt();
    let keep = grid.nodes().partition_point(|r| r / root <= y_max);
    if keep < 3 {
        return Err(KsError::InvalidInput(format!("frame at t={} has < 3 nodes in the window", frame.t)));
    }
    let y = grid.nodes()[..keep].iter().map(|r| r / root).collect();
    let phi = frame.w[..keep].iter().map(|w| tau * w).collect();
    let mut st = RescaledState::new(grid.n(), -tau.ln(), y, phi)?;
    st.t_est = t_est;
    st.truncated = keep == grid.len() && grid.radius() / root < y_max * (1.0 - 1e-12);
    Ok(st)
}

/// One IMEX step of the rescaled equation: diffusion, drift and `-phi`
/// implicit, the quadratic reaction `phi U` explicit, and `phi(y_max)` held.
pub fn step_rescaled(state: &RescaledState, ds: f64) -> Result<RescaledState> {
    if !(ds > 0.0) || !ds.is_finite() {
        return Err(KsError::InvalidInput(format!("ds={ds} must be > 0")));
    }
    let grid = RadialGrid::from_nodes(state.n, state.y.clone())?;
    let (g, v) = (grid.conductance(), grid.volume());
    let y = &state.y;
    let m = y.len();
    let u = state.density();
    let mut lower = vec![0.0; m];
    let mut diag = vec![1.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs: Vec<f64> = state.phi.iter().zip(&u).map(|(p, u)| p + ds * p * u).collect();
    for i in 0..m - 1 {
        let left = if i > 0 { g[i - 1] / v[i] } else { 0.0 };
        let right = g[i] / v[i];
        let (mut lo, mut up) = (left, right);
        if i > 0 {
            let c = 0.5 * y[i] / (y[i + 1] - y[i - 1]);
            lo += c;
            up -= c;
        }
        lower[i] = -ds * lo;
        upper[i] = -ds * up;
        diag[i] = 1.0 + ds * (left + right + 1.0);
    }
    rhs[m - 1] = state.phi[m - 1];
    let phi = tridiag::solve(&lower, &diag, &upper, &rhs)
        .map_err(|e| KsError::SolverDiverged { t: state.s, reason: e.to_string() })?;
    if let Some(i) = phi.iter().position(|p| !p.is_finite()) {
        return Err(KsError::SolverDiverged { t: state.s, reason: format!("non-finite phi at y={:.4e}", y[i]) });
    }
    let origin_value = phi[0];
    Ok(RescaledState { s: state.s + ds, phi, origin_value, t_est: f64::NAN, source_frame: None, ..state.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledRun {
    pub states: Vec<RescaledState>,
    /// Largest relative change of `phi` at `y_max/2`, where the frozen outer
    /// value starts to matter.
    pub influence: f64,
}

/// Evolve with steps of at most `ds` until `s_end`, keeping every
/// `save_every`-th state and the last.
pub fn evolve_rescaled(initial: &RescaledState, s_end: f64, ds: f64, save_every: usize) -> Result<RescaledRun> {
    let probe = initial.y.partition_point(|v| *v < 0.5 * initial.y_max()).min(initial.y.len() - 1);
    let reference = initial.phi[probe];
    let mut states = vec![initial.clone()];
    let mut state = initial.clone();
    let mut influence = 0.0f64;
    let mut k = 0usize;
    while state.s < s_end - 1e-12 * s_end.abs().max(1.0) {
        let h = ds.min(s_end - state.s);
        state = step_rescaled(&state, h)?;
        k += 1;
        influence = influence.max((state.phi[probe] - reference).abs() / reference.abs().max(f64::MIN_POSITIVE));
        if k.is_multiple_of(save_every.max(1)) || state.s >= s_end - 1e-12 * s_end.abs().max(1.0) {
            states.push(state.clone());
        }
    }
    if states.last().map(|s| s.s) != Some(state.s) {
        states.push(state);
    }
    Ok(RescaledRun { states, influence })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyConfig {
    pub y_max: f64,
    pub y_check: f64,
    pub dy: f64,
    /// Minimal spacing in `s` of the rescaled frames kept.
    pub ds_min: f64,
    /// Frames with `T_est - t < guard * t_err_fit` are dropped.
    pub guard: f64,
    /// Bound on the total variation of `phi(0, .)` over the last unit of `s`,
    /// relative to `phi(0)`.
    pub tv_tol: f64,
    pub residual_tol: f64,
    pub match_tol: f64,
}

impl Default for SteadyConfig {
    fn default() -> Self {
        SteadyConfig {
            y_max: DEFAULT_Y_MAX,
            y_check: DEFAULT_Y_CHECK,
            dy: DEFAULT_DY,
            ds_min: 0.02,
            guard: 1000.0,
            tv_tol: 0.05,
            residual_tol: 0.05,
            match_tol: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyVerdict {
    pub converged: bool,
    /// Total variation of `phi(0, s)` over the last unit of `s`.
    pub tv_origin: f64,
    /// `|phi(0, s_end) - phi(0, s_end - 1)|`; equal to `tv_origin` when the
    /// origin value is monotone.
    pub net_change_origin: f64,
    /// Max-norm of the steady defect of the last state on `[0, y_check]`.
    pub steady_residual: f64,
    pub matched_alpha: Option<f64>,
    pub match_error: f64,
    /// `None` until checked against perturbed blow-up times.
    pub t_sensitivity_stable: Option<bool>,
    /// Why the verdict is inconclusive, if it is.
    pub inconclusive: Option<String>,
}

impl SteadyVerdict {
    fn inconclusive(reason: String) -> Self {
        SteadyVerdict {
            converged: false,
            tv_origin: f64::NAN,
            net_change_origin: f64::NAN,
            steady_residual: f64::NAN,
            matched_alpha: None,
            match_error: f64::NAN,
            t_sensitivity_stable: None,
            inconclusive: Some(reason),
        }
    }
}

/// `max |phi - psi_alpha|` on `[0, y_check]` at the nodes of `state`.
pub fn profile_distance(state: &RescaledState, profile: &ProfileSolution, y_check: f64) -> Option<f64> {
    let mut worst = 0.0f64;
    for (y, p) in state.y.iter().zip(&state.phi).take_while(|(y, _)| **y <= y_check) {
        worst = worst.max((p - profile.psi_at(*y)?).abs());
    }
    Some(worst)
}

/// Nonoscillation, steady defect and nearest profile of a rescaled history.
pub fn detect_steady(history: &[RescaledState], profiles: &[ProfileSolution], cfg: &SteadyConfig) -> SteadyVerdict {
    if history.len() < 10 {
        return SteadyVerdict::inconclusive(format!("{} states, need at least 10", history.len()));
    }
    let (s0, s1) = (history[0].s, history[history.len() - 1].s);
    if !(s1 - s0 >= 3.0) {
        return SteadyVerdict::inconclusive(format!("history spans {:.3} in s, need 3", s1 - s0));
    }
    let last = &history[history.len() - 1];
    let tail: Vec<f64> = history.iter().filter(|h| h.s >= s1 - 1.0).map(|h| h.origin_value).collect();
    let tv_origin: f64 = tail.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let net_change_origin = (tail[tail.len() - 1] - tail[0]).abs();
    let y_check = cfg.y_check.min(last.y_max());
    let steady_residual = match last.steady_defect() {
        Ok(d) => last.y.iter().zip(&d).filter(|(y, _)| **y <= y_check).map(|(_, v)| v.abs()).fold(0.0, f64::max),
        Err(e) => return SteadyVerdict::inconclusive(e.to_string()),
    };
    let mut best: Option<(f64, f64)> = None;
    for p in profiles {
        let Some(d) = profile_distance(last, p, y_check) else { continue };
        let a = p.alpha();
        let better = match best {
            None => true,
            Some((ba, bd)) => {
                d < bd || (d == bd && (last.origin_value - a).abs() < (last.origin_value - ba).abs())
            }
        };
        if better {
            best = Some((a, d));
        }
    }
    let scale = last.origin_value.abs().max(f64::MIN_POSITIVE);
    let (matched_alpha, match_error) = best.map_or((None, f64::INFINITY), |(a, d)| (Some(a), d));
    let converged = tv_origin <= cfg.tv_tol * scale
        && steady_residual <= cfg.residual_tol * scale
        && match_error <= cfg.match_tol * scale;
    SteadyVerdict {
        converged,
        tv_origin,
        net_change_origin,
        steady_residual,
        matched_alpha,
        match_error,
        t_sensitivity_stable: None,
        inconclusive: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// Uniform grid of spacing `SteadyConfig::dy` by monotone interpolation.
    Uniform,
    /// The frame's own nodes.
    Native,
}

/// Rescale every frame with `guard * t_err_fit <= T_est - t`, thinned to a
/// spacing of at least `ds_min` in `s` (the last admissible frame is kept).
pub fn rescale_trajectory(
    traj: &Trajectory,
    t_est: f64,
    t_err_fit: f64,
    cfg: &SteadyConfig,
    sampling: Sampling,
) -> Result<Vec<RescaledState>> {
    let min_tau = cfg.guard * t_err_fit;
    let admissible: Vec<usize> =
        (0..traj.frames.len()).filter(|&i| t_est - traj.frames[i].t > min_tau.max(0.0)).collect();
    let mut out: Vec<RescaledState> = Vec::new();
    for (k, &i) in admissible.iter().enumerate() {
        let s = -(t_est - traj.frames[i].t).ln();
        let is_last = k + 1 == admissible.len();
        if !is_last && out.last().is_some_and(|p| s - p.s < cfg.ds_min) {
            continue;
        }
        let rescaled = match sampling {
            Sampling::Uniform => rescale_frame(&traj.frames[i], &traj.grid, t_est, cfg.y_max, cfg.dy),
            Sampling::Native => rescale_frame_native(&traj.frames[i], &traj.grid, t_est, cfg.y_max),
        };
        let mut st = match rescaled {
            Ok(st) => st,
            // Early frames do not yet cover three nodes of the window.
            Err(KsError::InvalidInput(_)) if out.is_empty() => continue,
            Err(e) => return Err(e),
        };
        st.source_frame = Some(i);
        if is_last && out.last().is_some_and(|p| s - p.s < cfg.ds_min) {
            out.pop();
        }
        out.push(st);
    }
    Ok(out)
}

/// Rescaled states restricted to the untruncated ones, where the full window
/// `[0, y_max]` is available.
pub fn full_window(states: &[RescaledState]) -> Vec<RescaledState> {
    states.iter().filter(|s| !s.truncated).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityAnalysis {
    pub t_est: f64,
    pub t_err_fit: f64,
    pub states: Vec<RescaledState>,
    pub verdict: SteadyVerdict,
    /// Verdicts at `T_est - t_err_fit` and `T_est + t_err_fit`.
    pub perturbed: [SteadyVerdict; 2],
}

/// Rescale on the frames' own nodes, detect a steady state, and repeat at
/// `T_est -+ t_err_fit`. The verdict is stable if convergence and the matched
/// profile do not change.
pub fn analyze(
    traj: &Trajectory,
    est: &BlowupEstimate,
    profiles: &[ProfileSolution],
    cfg: &SteadyConfig,
) -> Result<SimilarityAnalysis> {
    let run = |t: f64| -> Result<(Vec<RescaledState>, SteadyVerdict)> {
        let states = full_window(&rescale_trajectory(traj, t, est.t_err_fit, cfg, Sampling::Native)?);
        let v = detect_steady(&states, profiles, cfg);
        Ok((states, v))
    };
    let (states, mut verdict) = run(est.t_est)?;
    let (_, lo) = run(est.t_est - est.t_err_fit)?;
    let (_, hi) = run(est.t_est + est.t_err_fit)?;
    let same = |v: &SteadyVerdict| v.converged == verdict.converged && v.matched_alpha == verdict.matched_alpha;
    verdict.t_sensitivity_stable = Some(verdict.inconclusive.is_none() && same(&lo) && same(&hi));
    Ok(SimilarityAnalysis { t_est: est.t_est, t_err_fit: est.t_err_fit, states, verdict, perturbed: [lo, hi] })
}

/// `max |w(r / sqrt(m)) / m - W1(r)|` over `r` in `[0, r_window]` (sampled on
/// the nodes of `w1`), skipping radii mapped outside the frame.
pub fn type_two_rescaling(frame: &MassState, grid: &RadialGrid, w1: &SteadyStatePair, r_window: f64) -> Result<f64> {
    if !(frame.m > 0.0) {
        return Err(KsError::InvalidInput(format!("m={} must be > 0", frame.m)));
    }
    let root = frame.m.sqrt();
    let interp = Pchip::new(grid.nodes(), &frame.w);
    let mut worst = 0.0f64;
    for (r, w) in w1.w1.r.iter().zip(&w1.w1.value) {
        if *r > r_window || r / root > grid.radius() {
            break;
        }
        worst = worst.max((interp.eval(r / root) / frame.m - w).abs());
    }
    Ok(worst)
}

/// Largest `|phi_a - phi_b|` at the nodes of `a` with `y <= window`, `b`
/// interpolated monotonically.
pub fn window_distance(a: &RescaledState, b: &RescaledState, window: f64) -> f64 {
    let interp = Pchip::new(&b.y, &b.phi);
    let reach = window.min(b.y_max());
    a.y.iter()
        .zip(&a.phi)
        .take_while(|(y, _)| **y <= reach)
        .map(|(y, p)| (p - interp.eval(*y)).abs())
        .fold(0.0, f64::max)
}

pub fn write_rescaled<W: Write>(mut out: W, state: &RescaledState, config_hash: &str) -> Result<()> {
    writeln!(out, "# s={:e}", state.s)?;
    writeln!(out, "# T_est={:e}", state.t_est)?;
    match state.source_frame {
        Some(i) => writeln!(out, "# source_frame={i}")?,
        None => writeln!(out, "# source_frame=-")?,
    }
    writeln!(out, "# truncated={}", state.truncated)?;
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "y,phi")?;
    for (y, p) in state.y.iter().zip(&state.phi) {
        writeln!(out, "{y:e},{p:e}")?;
    }
    Ok(())
}
