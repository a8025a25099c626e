//! Averaged-mass formulation of radial blow-up.
//!
//! The unknown is `w(r, t) = r^-n int_0^r u(s, t) s^(n-1) ds`, which solves
//! `w_t = Lap_{n+2} w + u w` with `u = n w + r w_r`. The Laplacian is the
//! radial Laplacian in `n + 2` dimensions, discretised by finite volumes on a
//! graded grid. Diffusion is implicit, the reaction `u w` explicit, and the
//! time step is tied to the centre value `m = w(0, t)` through
//! `dt = cfl / (n m)`.

mod diagnostics;
mod grid;
mod io;

pub use diagnostics::{
    check_conservation_and_monotonicity, check_i2, track_wt_diagnostics, FrameDiagnostics, I2Check,
    MonotonicityReport, WtSample,
};
pub use grid::{RadialGrid, MAX_CELL_RATIO};
pub use io::{read_frame, read_samples, write_frame, write_index, FrameFile, FrameMeta};

pub(crate) use grid::power_difference;

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::tridiag;

/// Outer boundary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Dirichlet `w(R) = mu` with `mu = R^-n int_0^R u0 s^(n-1) ds`.
    Ball,
    /// Dirichlet value frozen at its initial value, with a boundary-influence
    /// monitor at `R/2`.
    TruncatedWholeSpace,
    /// Zero flux at `R`; spatially constant data stay constant.
    Homogeneous,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Ball => "ball",
            Mode::TruncatedWholeSpace => "whole",
            Mode::Homogeneous => "homogeneous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ball" => Ok(Mode::Ball),
            "whole" | "whole-space" | "truncated" => Ok(Mode::TruncatedWholeSpace),
            "homogeneous" | "flat" => Ok(Mode::Homogeneous),
            _ => Err(KsError::InvalidInput(format!("unknown mode {s:?} (ball|whole|homogeneous)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n: u32,
    pub radius: f64,
    /// Spacing near the origin.
    pub h0: f64,
    /// Extent of the uniformly spaced core.
    pub uniform_extent: f64,
    /// Cell growth ratio beyond the core.
    pub growth: f64,
    /// Upper bound on the time step.
    pub dt_max: f64,
    pub cfl: f64,
    /// Stop once `m >= m_stop_factor * m(0)`.
    pub m_stop_factor: f64,
    pub save_every: usize,
    pub max_steps: usize,
    pub t_max: f64,
    pub tol: f64,
    pub mode: Mode,
    /// Diffusion on/off. Off only in tests of the reaction step.
    pub diffusion: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n: 3,
            radius: 1.0,
            h0: 2e-5,
            uniform_extent: 1e-3,
            growth: 1.01,
            dt_max: 1e-2,
            cfl: 5e-4,
            m_stop_factor: 1e6,
            save_every: 50,
            max_steps: 2_000_000,
            t_max: 1e3,
            tol: 1e-6,
            mode: Mode::Ball,
            diffusion: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KsError::InvalidInput(m));
        if self.n < 3 {
            return bad(format!("dimension n={} must be >= 3", self.n));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl={} must lie in (0, 1]", self.cfl));
        }
        if !(self.m_stop_factor > 1.0) {
            return bad(format!("m_stop_factor={} must exceed 1", self.m_stop_factor));
        }
        if !(self.radius > 0.0 && self.h0 > 0.0 && self.h0 <= 1e-3 * self.radius) {
            return bad(format!("need radius > 0 and 0 < h0 <= radius/1000, got R={} h0={}", self.radius, self.h0));
        }
        if !(self.dt_max > 0.0 && self.t_max > 0.0) || self.save_every == 0 || self.max_steps == 0 {
            return bad("dt_max, t_max, save_every and max_steps must be positive".into());
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol={} must lie in (0, 1)", self.tol));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<RadialGrid> {
        RadialGrid::graded(self.n, self.radius, self.h0, self.uniform_extent, self.growth)
    }

    /// Same run with every cell halved and half the time-step factor.
    pub fn refined(&self) -> Self {
        SolverConfig {
            h0: 0.5 * self.h0,
            uniform_extent: self.uniform_extent,
            growth: self.growth.sqrt(),
            cfl: 0.5 * self.cfl,
            save_every: 2 * self.save_every,
            max_steps: 2 * self.max_steps,
            ..self.clone()
        }
    }
}

/// The averaged mass `w` at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassState {
    pub t: f64,
    pub w: Vec<f64>,
    /// Boundary value `w(R)`.
    pub mu: f64,
    /// Centre value `w(0)`.
    pub m: f64,
}

impl MassState {
    pub fn new(t: f64, w: Vec<f64>) -> Self {
        let m = w[0];
        let mu = *w.last().expect("non-empty state");
        MassState { t, w, mu, m }
    }
}

/// `int_a^b (u_a + (u_b - u_a)(s - a)/(b - a)) s^(n-1) ds`.
fn linear_segment_moment(a: f64, b: f64, ua: f64, ub: f64, n: u32) -> f64 {
    let nf = n as f64;
    let p0 = power_difference(b, a, n) / nf;
    // int_a^b (s - a) s^(n-1) ds = int_0^h x (a + x)^(n-1) dx, summed termwise
    // by the binomial theorem so it stays accurate for h << a.
    let h = b - a;
    let mut p1 = 0.0;
    let mut binom = 1.0;
    for j in 0..n {
        // C(n-1, j) a^(n-1-j) h^(j+2) / (j+2)
        p1 += binom * a.powi((n - 1 - j) as i32) * h.powi(j as i32 + 2) / (j as f64 + 2.0);
        binom = binom * (nf - 1.0 - j as f64) / (j as f64 + 1.0);
    }
    ua * p0 + (ub - ua) / h * p1
}

/// `w(r_i) = r_i^-n int_0^{r_i} u s^(n-1) ds` for `u` linear between nodes,
/// with `w(0) = u(0)/n`.
pub fn mass_from_density(nodes: &[f64], u: &[f64], n: u32) -> Result<Vec<f64>> {
    if nodes.len() != u.len() || nodes.is_empty() || nodes[0] != 0.0 {
        return Err(KsError::InvalidInput("density samples must match a grid starting at 0".into()));
    }
    if let Some(i) = u.iter().position(|v| !(*v >= 0.0)) {
        return Err(KsError::InvalidInput(format!("negative or non-finite density {} at r={}", u[i], nodes[i])));
    }
    let mut w = Vec::with_capacity(u.len());
    w.push(u[0] / n as f64);
    let mut integral = 0.0;
    for i in 1..nodes.len() {
        integral += linear_segment_moment(nodes[i - 1], nodes[i], u[i - 1], u[i], n);
        w.push(integral / nodes[i].powi(n as i32));
    }
    Ok(w)
}

pub fn build_mass_from_u0(u0: &[f64], grid: &RadialGrid) -> Result<MassState> {
    Ok(MassState::new(0.0, mass_from_density(grid.nodes(), u0, grid.n())?))
}

/// Second-order derivative on arbitrary nodes: central three-point in the
/// interior, one-sided three-point at the ends, and zero at `r = 0`.
pub fn radial_derivative(nodes: &[f64], f: &[f64]) -> Vec<f64> {
    let m = nodes.len();
    let three = |i: usize, j: usize, k: usize, at: usize| -> f64 {
        // Derivative at nodes[at] of the quadratic through i, j, k.
        let (x0, x1, x2) = (nodes[i], nodes[j], nodes[k]);
        let x = nodes[at];
        f[i] * ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2))
            + f[j] * ((x - x0) + (x - x2)) / ((x1 - x0) * (x1 - x2))
            + f[k] * ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1))
    };
    (0..m)
        .map(|i| {
            if m < 3 {
                return if m == 2 { (f[1] - f[0]) / (nodes[1] - nodes[0]) } else { 0.0 };
            }
            if i == 0 {
                if nodes[0] == 0.0 {
                    0.0
                } else {
                    three(0, 1, 2, 0)
                }
            } else if i == m - 1 {
                three(m - 3, m - 2, m - 1, m - 1)
            } else {
                three(i - 1, i, i + 1, i)
            }
        })
        .collect()
}

/// `u = n w + r w_r` on arbitrary nodes; `u(0) = n w(0)` exactly.
pub fn density_from_mass(nodes: &[f64], w: &[f64], n: u32) -> Vec<f64> {
    let dw = radial_derivative(nodes, w);
    nodes.iter().zip(w.iter().zip(&dw)).map(|(r, (wi, di))| n as f64 * wi + r * di).collect()
}

pub fn recover_u(state: &MassState, grid: &RadialGrid) -> Vec<f64> {
    density_from_mass(grid.nodes(), &state.w, grid.n())
}

/// `int_0^R u s^(n-1) ds` by the trapezoidal rule.
pub fn mass_integral(nodes: &[f64], u: &[f64], n: u32) -> f64 {
    nodes
        .windows(2)
        .zip(u.windows(2))
        .map(|(r, v)| 0.5 * (r[1] - r[0]) * (v[0] * r[0].powi(n as i32 - 1) + v[1] * r[1].powi(n as i32 - 1)))
        .sum()
}

/// Time step `cfl / max(n m, max u)` bounded by `dt_max`.
pub fn stable_dt(state: &MassState, u: &[f64], cfg: &SolverConfig) -> f64 {
    let rate = u.iter().fold(cfg.n as f64 * state.m, |a, b| a.max(*b));
    if rate > 0.0 {
        (cfg.cfl / rate).min(cfg.dt_max)
    } else {
        cfg.dt_max
    }
}

/// One step with the time step chosen by [`stable_dt`].
pub fn step(state: &MassState, grid: &RadialGrid, cfg: &SolverConfig) -> Result<MassState> {
    let u = recover_u(state, grid);
    let dt = stable_dt(state, &u, cfg);
    step_with(state, &u, grid, cfg, dt)
}

/// One IMEX step of size `dt`; `u` is the density recovered from `state`.
pub fn step_with(state: &MassState, u: &[f64], grid: &RadialGrid, cfg: &SolverConfig, dt: f64) -> Result<MassState> {
    let m = grid.len();
    let mut rhs: Vec<f64> = state.w.iter().zip(u).map(|(w, u)| w + dt * u * w).collect();
    let dirichlet = cfg.mode != Mode::Homogeneous;
    if dirichlet {
        rhs[m - 1] = state.mu;
    }
    let w_new = if cfg.diffusion {
        let (g, v) = (grid.conductance(), grid.volume());
        let mut lower = vec![0.0; m];
        let mut diag = vec![1.0; m];
        let mut upper = vec![0.0; m];
        for i in 0..m {
            if dirichlet && i == m - 1 {
                break;
            }
            let left = if i > 0 { g[i - 1] } else { 0.0 };
            let right = if i + 1 < m { g[i] } else { 0.0 };
            lower[i] = -dt * left / v[i];
            upper[i] = -dt * right / v[i];
            diag[i] = 1.0 + dt * (left + right) / v[i];
        }
        tridiag::solve(&lower, &diag, &upper, &rhs)
            .map_err(|e| KsError::SolverDiverged { t: state.t, reason: e.to_string() })?
    } else {
        rhs
    };
    if let Some(i) = w_new.iter().position(|v| !v.is_finite()) {
        return Err(KsError::SolverDiverged {
            t: state.t,
            reason: format!("non-finite value at r={:.6e}", grid.nodes()[i]),
        });
    }
    let mut next = MassState::new(state.t + dt, w_new);
    next.mu = if dirichlet { state.mu } else { next.mu };
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub m: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// `m` passed `10^k m(0)`.
    Decade(u32),
    /// The step bound switched between `dt_max` and the reaction clock.
    StepLimit { capped: bool },
    /// Whole-space boundary influence exceeded the tolerance.
    BoundaryInfluence { change: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<MassState>,
    pub steps: Vec<StepRecord>,
    pub events: Vec<Event>,
    pub config: SolverConfig,
    pub grid: RadialGrid,
}

impl Trajectory {
    pub fn n(&self) -> u32 {
        self.grid.n()
    }

    pub fn last(&self) -> &MassState {
        self.frames.last().expect("trajectory has frames")
    }

    /// `(t, m)` history: every step if recorded, else the frames.
    pub fn history(&self) -> (Vec<f64>, Vec<f64>) {
        if self.steps.is_empty() {
            (self.frames.iter().map(|f| f.t).collect(), self.frames.iter().map(|f| f.m).collect())
        } else {
            (self.steps.iter().map(|s| s.t).collect(), self.steps.iter().map(|s| s.m).collect())
        }
    }

    pub fn densities(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| recover_u(f, &self.grid)).collect()
    }
}

/// Blow-up time from the type-I ansatz `1/m = a (T - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupEstimate {
    pub t_est: f64,
    /// Uncertainty of the fitted blow-up time of this trajectory.
    pub t_err_fit: f64,
    /// `t_err_fit` plus the first-order time-stepping bias `cfl * T`.
    pub t_err: f64,
    pub slope: f64,
    /// RMS of the relative fit residual of `1/m`.
    pub residual: f64,
    pub window_start: f64,
    pub points: usize,
}

impl BlowupEstimate {
    /// `a` within `[n/M, n]`, the bracket implied by
    /// `1 <= (T - t) u(0, t) <= M`.
    pub fn slope_in_bracket(&self, n: u32, m_fit: f64) -> bool {
        let nf = n as f64;
        self.slope >= nf / m_fit * (1.0 - 1e-9) && self.slope <= nf * (1.0 + 1e-9)
    }
}

fn line_fit(t: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let k = t.len() as f64;
    if t.len() < 3 {
        return None;
    }
    let tm = t.iter().sum::<f64>() / k;
    let ym = y.iter().sum::<f64>() / k;
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    if stt == 0.0 {
        return None;
    }
    let slope = sty / stt;
    if !(slope < 0.0) {
        return None;
    }
    // Root of the fitted line, T = tm - ym / slope.
    let root = tm - ym / slope;
    let res = (t.iter().zip(y).map(|(a, b)| ((ym + slope * (a - tm) - b) / b).powi(2)).sum::<f64>() / k).sqrt();
    Some((root, -slope, res))
}

/// Least-squares fit of `1/m` against `t` over the last decade of growth of
/// `m`. The fit uncertainty is the shift of the root when the window is
/// halved.
pub fn fit_blowup_time(t: &[f64], m: &[f64], cfl: f64) -> Option<BlowupEstimate> {
    let m_last = *m.last()?;
    let start = m.iter().position(|v| *v >= 0.1 * m_last)?;
    let (tw, mw) = (&t[start..], &m[start..]);
    let inv: Vec<f64> = mw.iter().map(|v| 1.0 / v).collect();
    let (root, slope, residual) = line_fit(tw, &inv)?;
    let half = tw.len() / 2;
    let (root_half, _, _) = line_fit(&tw[half..], &inv[half..]).unwrap_or((root, slope, residual));
    let t_err_fit = (root - root_half).abs();
    Some(BlowupEstimate {
        t_est: root,
        t_err_fit,
        t_err: t_err_fit + cfl * root.abs(),
        slope,
        residual,
        window_start: tw[0],
        points: tw.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunOutcome {
    Blowup(BlowupEstimate),
    NoBlowup { t_end: f64, m_end: f64, reason: String },
    Diverged { error: KsError },
}

impl RunOutcome {
    pub fn estimate(&self) -> Option<&BlowupEstimate> {
        match self {
            RunOutcome::Blowup(e) => Some(e),
            _ => None,
        }
    }
}

/// Node closest to `x`.
fn nearest(grid: &RadialGrid, x: f64) -> usize {
    let i = grid.locate(x);
    if i + 1 < grid.len() && (grid.nodes()[i + 1] - x).abs() < (x - grid.nodes()[i]).abs() {
        i + 1
    } else {
        i
    }
}

/// Step until `m >= m_stop_factor m(0)`, `t >= t_max` or `max_steps`.
pub fn run_to_blowup(initial: MassState, grid: &RadialGrid, cfg: &SolverConfig) -> Result<(Trajectory, RunOutcome)> {
    cfg.validate()?;
    if initial.w.len() != grid.len() {
        return Err(KsError::InvalidInput("state and grid sizes differ".into()));
    }
    let m0 = initial.m;
    let m_stop = cfg.m_stop_factor * m0;
    let probe = nearest(grid, 0.5 * grid.radius());
    let probe_ref = initial.w[probe];
    let mut traj = Trajectory {
        frames: vec![initial.clone()],
        steps: vec![StepRecord { t: initial.t, m: initial.m, dt: 0.0 }],
        events: Vec::new(),
        config: cfg.clone(),
        grid: grid.clone(),
    };
    let mut state = initial;
    let mut decade = 0u32;
    let mut capped: Option<bool> = None;
    let mut influence_flagged = false;
    let mut k = 0usize;
    let outcome = loop {
        if m0 > 0.0 && state.m >= m_stop {
            if traj.frames.last().map(|f| f.t) != Some(state.t) {
                traj.frames.push(state.clone());
            }
            let (t, m) = traj.history();
            break match fit_blowup_time(&t, &m, cfg.cfl) {
                Some(est) => RunOutcome::Blowup(est),
                None => RunOutcome::NoBlowup {
                    t_end: state.t,
                    m_end: state.m,
                    reason: "growth did not fit the type-I ansatz".into(),
                },
            };
        }
        if k >= cfg.max_steps || state.t >= cfg.t_max || !(m0 > 0.0) {
            if traj.frames.last().map(|f| f.t) != Some(state.t) {
                traj.frames.push(state.clone());
            }
            break RunOutcome::NoBlowup {
                t_end: state.t,
                m_end: state.m,
                reason: if m0 > 0.0 { "stop level not reached".into() } else { "zero data".into() },
            };
        }
        let u = recover_u(&state, grid);
        let dt = stable_dt(&state, &u, cfg);
        let is_capped = dt >= cfg.dt_max;
        if capped != Some(is_capped) {
            traj.events.push(Event { step: k, t: state.t, kind: EventKind::StepLimit { capped: is_capped } });
            capped = Some(is_capped);
        }
        let next = match step_with(&state, &u, grid, cfg, dt) {
            Ok(s) => s,
            Err(error) => {
                if traj.frames.last().map(|f| f.t) != Some(state.t) {
                    traj.frames.push(state.clone());
                }
                break RunOutcome::Diverged { error };
            }
        };
        state = next;
        k += 1;
        traj.steps.push(StepRecord { t: state.t, m: state.m, dt });
        while m0 > 0.0 && state.m >= m0 * 10f64.powi(decade as i32 + 1) {
            decade += 1;
            traj.events.push(Event { step: k, t: state.t, kind: EventKind::Decade(decade) });
        }
        if cfg.mode == Mode::TruncatedWholeSpace && !influence_flagged {
            let change = (state.w[probe] - probe_ref).abs() / probe_ref.abs().max(f64::MIN_POSITIVE);
            if change > cfg.tol {
                influence_flagged = true;
                traj.events.push(Event { step: k, t: state.t, kind: EventKind::BoundaryInfluence { change } });
            }
        }
        if k.is_multiple_of(cfg.save_every) {
            traj.frames.push(state.clone());
        }
    };
    Ok((traj, outcome))
}

/// Initial densities `u0(|x|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialData {
    Constant { c: f64 },
    /// `amplitude * exp(-r^2 / width^2)`.
    Gaussian { amplitude: f64, width: f64 },
    /// `kappa * U0(r)` with the explicit self-similar profile.
    ScaledProfile { kappa: f64 },
    /// Samples interpolated linearly, constant beyond the last sample.
    Samples { r: Vec<f64>, u: Vec<f64> },
}

impl InitialData {
    pub fn sample(&self, grid: &RadialGrid) -> Vec<f64> {
        let n = grid.n();
        grid.nodes()
            .iter()
            .map(|&r| match self {
                InitialData::Constant { c } => *c,
                InitialData::Gaussian { amplitude, width } => amplitude * (-(r / width).powi(2)).exp(),
                InitialData::ScaledProfile { kappa } => kappa * crate::profiles::eval_u0(n, r),
                InitialData::Samples { r: xs, u } => {
                    let i = xs.partition_point(|x| *x <= r);
                    if i == 0 {
                        u[0]
                    } else if i >= xs.len() {
                        *u.last().expect("non-empty samples")
                    } else {
                        let s = (r - xs[i - 1]) / (xs[i] - xs[i - 1]);
                        u[i - 1] + s * (u[i] - u[i - 1])
                    }
                }
            })
            .collect()
    }

    /// Analytic derivative where available.
    pub fn derivative(&self, grid: &RadialGrid) -> Option<Vec<f64>> {
        let n = grid.n();
        match self {
            InitialData::Constant { .. } => Some(vec![0.0; grid.len()]),
            InitialData::Gaussian { amplitude, width } => Some(
                grid.nodes().iter().map(|r| -2.0 * r / (width * width) * amplitude * (-(r / width).powi(2)).exp()).collect(),
            ),
            InitialData::ScaledProfile { kappa } => {
                // U0 = 4(n-2)(2n + r^2)/(a + r^2)^2, a = 2(n-2)
                let nf = n as f64;
                let a = 2.0 * (nf - 2.0);
                Some(
                    grid.nodes()
                        .iter()
                        .map(|r| {
                            let d = a + r * r;
                            kappa * 4.0 * (nf - 2.0) * (2.0 * r * d - 4.0 * r * (2.0 * nf + r * r)) / d.powi(3)
                        })
                        .collect(),
                )
            }
            InitialData::Samples { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            InitialData::Constant { c } => *c >= 0.0 && c.is_finite(),
            InitialData::Gaussian { amplitude, width } => *amplitude >= 0.0 && *width > 0.0,
            InitialData::ScaledProfile { kappa } => *kappa >= 0.0 && kappa.is_finite(),
            InitialData::Samples { r, u } => {
                r.len() == u.len() && !r.is_empty() && r.windows(2).all(|w| w[1] > w[0]) && u.iter().all(|v| *v >= 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(KsError::InvalidInput(format!("invalid initial data {self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{eval_u0, psi0};

    fn grid(n: u32) -> RadialGrid {
        RadialGrid::graded(n, 4.0, 1e-3, 0.05, 1.02).unwrap()
    }

    #[test]
    fn constant_density_gives_constant_mass() {
        let g = grid(3);
        let w = build_mass_from_u0(&vec![2.5; g.len()], &g).unwrap();
        assert!(w.w.iter().all(|v| (v - 2.5 / 3.0).abs() < 1e-14));
        let u = recover_u(&w, &g);
        assert!(u.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn zero_and_negative_data() {
        let g = grid(4);
        let w = build_mass_from_u0(&vec![0.0; g.len()], &g).unwrap();
        assert!(w.w.iter().all(|v| *v == 0.0));
        let mut u = vec![1.0; g.len()];
        u[7] = -1e-3;
        assert!(matches!(build_mass_from_u0(&u, &g), Err(KsError::InvalidInput(_))));
    }

    #[test]
    fn explicit_profile_mass_function() {
        let err = |g: &RadialGrid| {
            let u0: Vec<f64> = g.nodes().iter().map(|r| eval_u0(3, *r)).collect();
            let w = build_mass_from_u0(&u0, g).unwrap();
            g.nodes().iter().zip(&w.w).map(|(r, v)| (v - psi0(3, *r)).abs()).fold(0.0, f64::max)
        };
        let g = grid(3);
        let (coarse, fine) = (err(&g), err(&g.refined()));
        assert!(coarse < 1e-4, "{coarse}");
        assert!(fine < coarse / 3.5, "{coarse} {fine}");
    }

    #[test]
    fn segment_moment_is_exact_for_linear_densities() {
        // Brute-force Simpson with many panels as the reference.
        for n in [3u32, 5, 9] {
            let (a, b, ua, ub) = (0.7, 0.9, 2.0, -1.0);
            let f = |s: f64| (ua + (ub - ua) * (s - a) / (b - a)) * s.powi(n as i32 - 1);
            let k = 2000;
            let h = (b - a) / k as f64;
            let mut acc = f(a) + f(b);
            for i in 1..k {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
            }
            let reference = acc * h / 3.0;
            assert!((linear_segment_moment(a, b, ua, ub, n) - reference).abs() < 1e-13);
        }
    }

    #[test]
    fn chandrasekhar_mass_recovers_singular_density() {
        for n in 3..=9 {
            let nodes: Vec<f64> = (0..=400).map(|k| 0.1 + 2.0 * k as f64 / 400.0).collect();
            let w: Vec<f64> = nodes.iter().map(|r| 2.0 / (r * r)).collect();
            let u = density_from_mass(&nodes, &w, n);
            for (r, v) in nodes.iter().zip(&u) {
                let exact = 2.0 * (n as f64 - 2.0) / (r * r);
                assert!((v - exact).abs() < 2e-2 * exact, "n={n} r={r} {v} {exact}");
            }
        }
    }

    #[test]
    fn homogeneous_reaction_matches_riccati_solution() {
        let g = grid(3);
        let cfg = SolverConfig { mode: Mode::Homogeneous, diffusion: false, ..SolverConfig::default() };
        let c = 1.0;
        let mut s = build_mass_from_u0(&vec![c; g.len()], &g).unwrap();
        let mut worst_local = 0.0f64;
        for _ in 0..200 {
            let next = step(&s, &g, &cfg).unwrap();
            let dt = next.t - s.t;
            // Exact flow of w' = n w^2 over one step from s.
            let exact = s.m / (1.0 - 3.0 * s.m * dt);
            worst_local = worst_local.max((next.m - exact).abs() / (dt * dt * s.m.powi(3)));
            s = next;
        }
        assert!(worst_local < 20.0, "{worst_local}");
        let exact = (c / 3.0) / (1.0 - c * s.t);
        assert!((s.m - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = grid(3);
        let cfg = SolverConfig::default();
        let mut s = build_mass_from_u0(&vec![0.0; g.len()], &g).unwrap();
        for _ in 0..10 {
            s = step(&s, &g, &cfg).unwrap();
        }
        assert!(s.w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_diffusion_obeys_maximum_principle() {
        let g = grid(5);
        let cfg = SolverConfig { n: 5, dt_max: 1e-3, ..SolverConfig::default() };
        let u0: Vec<f64> = g.nodes().iter().map(|r| 1.0 + (3.0 * r).sin().powi(2)).collect();
        let mut s = MassState::new(0.0, u0);
        let zero_u = vec![0.0; g.len()];
        for _ in 0..50 {
            let (lo, hi) = s.w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            let next = step_with(&s, &zero_u, &g, &cfg, 1e-3).unwrap();
            let (lo2, hi2) = next.w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            assert!(lo2 >= lo - 1e-14 && hi2 <= hi + 1e-14);
            s = next;
        }
    }

    #[test]
    fn fit_recovers_exact_type_one_history() {
        let t: Vec<f64> = (0..200).map(|k| 0.5 - 0.5 * 0.97f64.powi(k)).collect();
        let m: Vec<f64> = t.iter().map(|t| 2.0 / (0.5 - t)).collect();
        let e = fit_blowup_time(&t, &m, 0.0).unwrap();
        assert!((e.t_est - 0.5).abs() < 1e-12);
        assert!((e.slope - 0.5).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { cfl: 0.0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { m_stop_factor: 1.0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { h0: 0.01, ..SolverConfig::default() }.validate().is_err());
    }
}
