use serde::{Deserialize, Serialize};

use super::{density_from_mass, linear_segment_moment, mass_integral, radial_derivative, Mode, RadialGrid, Trajectory};
use crate::error::{KsError, Result};
use crate::zeros::count_intersections;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub t: f64,
    pub m: f64,
    /// `int_0^R u s^(n-1) ds` (trapezoidal, from the recovered density).
    pub mass: f64,
    /// Relative change of `mass` against frame 0.
    pub mass_drift: f64,
    /// Largest positive forward difference of `w`.
    pub max_pos_wr: f64,
    /// Largest positive forward difference of `u`.
    pub max_pos_ur: f64,
    /// Largest `|w_r|` and `|u_r|`, for scale.
    pub max_abs_wr: f64,
    pub max_abs_ur: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub frames: Vec<FrameDiagnostics>,
    /// Whether mass drift is meaningful (Dirichlet ball).
    pub conserving: bool,
    /// Largest relative positive part of `w_r` / `u_r` over all frames.
    pub worst_wr: f64,
    pub worst_ur: f64,
    pub monotone_w: bool,
    pub monotone_u: bool,
}

impl MonotonicityReport {
    /// Largest mass drift over frames with `m <= factor * m(0)`.
    pub fn mass_drift_until(&self, factor: f64) -> f64 {
        let m0 = self.frames.first().map_or(0.0, |f| f.m);
        self.frames.iter().filter(|f| f.m <= factor * m0).map(|f| f.mass_drift.abs()).fold(0.0, f64::max)
    }
}

fn positive_slope(nodes: &[f64], f: &[f64]) -> (f64, f64) {
    nodes.windows(2).zip(f.windows(2)).fold((0.0f64, 0.0f64), |(pos, abs), (r, v)| {
        let d = (v[1] - v[0]) / (r[1] - r[0]);
        (pos.max(d), abs.max(d.abs()))
    })
}

/// Mass drift and monotonicity per frame. `tol` bounds the relative positive
/// part of `w_r` and `u_r` accepted as monotone.
pub fn check_conservation_and_monotonicity(traj: &Trajectory, tol: f64) -> MonotonicityReport {
    let nodes = traj.grid.nodes();
    let n = traj.n();
    let mut frames = Vec::with_capacity(traj.frames.len());
    let mut mass0 = None;
    for f in &traj.frames {
        let u = density_from_mass(nodes, &f.w, n);
        let mass = mass_integral(nodes, &u, n);
        let m0 = *mass0.get_or_insert(mass);
        let (max_pos_wr, max_abs_wr) = positive_slope(nodes, &f.w);
        let (max_pos_ur, max_abs_ur) = positive_slope(nodes, &u);
        frames.push(FrameDiagnostics {
            t: f.t,
            m: f.m,
            mass,
            mass_drift: if m0 != 0.0 { (mass - m0) / m0 } else { 0.0 },
            max_pos_wr,
            max_pos_ur,
            max_abs_wr,
            max_abs_ur,
        });
    }
    // Slopes are compared with the larger of the steepest slope and the
    // amplitude over the radius, so flat data is not judged on rounding noise.
    let radius = traj.grid.radius();
    let rel = |p: f64, a: f64, amp: f64| {
        let scale = a.max(amp / radius);
        if scale > 0.0 { p / scale } else { 0.0 }
    };
    let worst_wr = frames.iter().map(|f| rel(f.max_pos_wr, f.max_abs_wr, f.m)).fold(0.0, f64::max);
    let worst_ur = frames
        .iter()
        .zip(&traj.frames)
        .map(|(f, fr)| rel(f.max_pos_ur, f.max_abs_ur, traj.n() as f64 * fr.m))
        .fold(0.0, f64::max);
    MonotonicityReport {
        frames,
        conserving: traj.config.mode == Mode::Ball,
        worst_wr,
        worst_ur,
        monotone_w: worst_wr <= tol,
        monotone_u: worst_ur <= tol,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct I2Check {
    pub holds: bool,
    /// Minimum of `r^(n-1) u0'(r) + u0(r) int_0^r u0 s^(n-1) ds`.
    pub min_margin: f64,
    pub at: f64,
}

/// Evaluate `r^(n-1) u0' + u0 int_0^r u0 s^(n-1) ds >= 0` at every node.
/// Without `derivative` the slope is differenced.
pub fn check_i2(u0: &[f64], derivative: Option<&[f64]>, grid: &RadialGrid) -> Result<I2Check> {
    let nodes = grid.nodes();
    if u0.len() != nodes.len() || derivative.is_some_and(|d| d.len() != nodes.len()) {
        return Err(KsError::InvalidInput("samples do not match the grid".into()));
    }
    let n = grid.n();
    let owned;
    let du = match derivative {
        Some(d) => d,
        None => {
            owned = radial_derivative(nodes, u0);
            &owned
        }
    };
    let mut integral = 0.0;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..nodes.len() {
        if i > 0 {
            integral += linear_segment_moment(nodes[i - 1], nodes[i], u0[i - 1], u0[i], n);
        }
        let r = nodes[i];
        let margin = r.powi(n as i32 - 1) * du[i] + u0[i] * integral;
        if margin < best.0 {
            best = (margin, r);
        }
    }
    Ok(I2Check { holds: best.0 >= 0.0, min_margin: best.0, at: best.1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WtSample {
    /// Midpoint of the frame pair.
    pub t: f64,
    /// Difference quotient of `m` between consecutive frames.
    pub wt_origin: f64,
    /// Sign changes of `w - 2/r^2` on `[r1, R]` in the later frame; `None`
    /// when a near-tangency could not be resolved.
    pub zero_count: Option<usize>,
}

/// `w_t(0, t)` between consecutive frames and the zero count of
/// `w(., t) - 2/r^2` on `[r1, R]`, counted through the scaled gap
/// `r^2 w - 2`.
pub fn track_wt_diagnostics(traj: &Trajectory, r1: f64) -> Result<Vec<WtSample>> {
    if traj.frames.len() < 3 {
        return Err(KsError::InvalidInput(format!("need >= 3 frames, got {}", traj.frames.len())));
    }
    let nodes = traj.grid.nodes();
    let zero = vec![0.0; nodes.len()];
    let radius = traj.grid.radius();
    Ok(traj
        .frames
        .windows(2)
        .map(|f| {
            let gap: Vec<f64> = nodes.iter().zip(&f[1].w).map(|(r, w)| r * r * w - 2.0).collect();
            let zero_count = count_intersections(nodes, &gap, &zero, (r1, radius), 1e-12, None).ok();
            WtSample { t: 0.5 * (f[0].t + f[1].t), wt_origin: (f[1].m - f[0].m) / (f[1].t - f[0].t), zero_count }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::{build_mass_from_u0, run_to_blowup, SolverConfig};

    fn grid() -> RadialGrid {
        RadialGrid::graded(3, 1.0, 1e-3, 0.02, 1.05).unwrap()
    }

    #[test]
    fn constant_data_margin() {
        let g = grid();
        let c = 1.7;
        let chk = check_i2(&vec![c; g.len()], Some(&vec![0.0; g.len()]), &g).unwrap();
        assert!(chk.holds);
        assert_eq!(chk.min_margin, 0.0);
        assert_eq!(chk.at, 0.0);
    }

    #[test]
    fn steep_small_bump_fails() {
        let g = grid();
        let u: Vec<f64> = g.nodes().iter().map(|r| 0.1 * (-(r / 0.1).powi(2)).exp()).collect();
        let chk = check_i2(&u, None, &g).unwrap();
        assert!(!chk.holds);
        assert!(chk.at < 0.3);
    }

    #[test]
    fn non_monotone_bump_is_flagged() {
        let g = grid();
        let u: Vec<f64> = g.nodes().iter().map(|r| 1.0 + 4.0 * (-((r - 0.5) / 0.1).powi(2)).exp()).collect();
        let cfg = SolverConfig { max_steps: 20, save_every: 5, ..SolverConfig::default() };
        let (traj, _) = run_to_blowup(build_mass_from_u0(&u, &g).unwrap(), &g, &cfg).unwrap();
        let rep = check_conservation_and_monotonicity(&traj, 1e-8);
        assert!(!rep.monotone_u);
    }

    #[test]
    fn too_few_frames() {
        let g = grid();
        let cfg = SolverConfig { max_steps: 1, ..SolverConfig::default() };
        let (traj, _) = run_to_blowup(build_mass_from_u0(&vec![1.0; g.len()], &g).unwrap(), &g, &cfg).unwrap();
        assert!(track_wt_diagnostics(&traj, 0.1).is_err());
    }
}
