//! The regular steady state `W1` of the mass equation and its intersections
//! with the singular steady state `W* = 2/r^2`.
//!
//! Near the origin `W1` is integrated in `r`. From `r = 1` on, the scaled gap
//! `omega = r^2 W1 - 2` is integrated in `s = log r`, where the equation is
//! autonomous,
//!
//! ```text
//! omega'' + (n - 2 + omega) omega' + (n-2)(omega + 2) omega = 0,
//! ```
//!
//! so the sign of `W1 - W*` keeps full relative precision as the gap decays.

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::ode::{brent, Dopri5, Step, Tolerance};
use crate::profiles::START_RADIUS;
use crate::zeros::count_intersections;

/// Radius where the integration switches to the log variable.
const LOG_SWITCH: f64 = 1.0;
const DR_OUT: f64 = 0.01;
/// Output spacing in `s = log r`.
pub const DS_OUT: f64 = 0.02;

/// Samples `(r, value, derivative)` of a radial function.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampledCurve {
    pub r: Vec<f64>,
    pub value: Vec<f64>,
    pub derivative: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyStatePair {
    pub n: u32,
    pub r_max: f64,
    pub w1: SampledCurve,
    /// `2/r^2` at the nodes of `w1`; NaN at `r = 0`.
    pub wstar_values: Vec<f64>,
    /// `r^2 (W1 - W*)`, same sign as `W1 - W*`, accurate where the gap is tiny.
    pub scaled_gap: Vec<f64>,
    /// Sign-change radii of `W1 - W*`, increasing.
    pub zeros: Vec<f64>,
    #[serde(skip)]
    dense: Option<DenseW1>,
}

#[derive(Debug, Clone)]
struct DenseW1 {
    inner: Vec<Step<2>>,
    outer: Vec<Step<2>>,
}

impl DenseW1 {
    /// `r^2 W1(r) - 2`.
    fn gap(&self, n: u32, r: f64) -> f64 {
        if r <= LOG_SWITCH || self.outer.is_empty() {
            let w = if r <= START_RADIUS || self.inner.is_empty() {
                1.0 - n as f64 / (2.0 * (n as f64 + 2.0)) * r * r
            } else {
                let k = self.inner.partition_point(|s| s.t1 < r).min(self.inner.len() - 1);
                self.inner[k].eval(r)[0]
            };
            return r * r * w - 2.0;
        }
        let s = r.ln();
        let k = self.outer.partition_point(|st| st.t1 < s).min(self.outer.len() - 1);
        self.outer[k].eval(s)[0]
    }
}

impl SteadyStatePair {
    /// `r^2 (W1 - W*)(r)` from the dense solution.
    pub fn gap_at(&self, r: f64) -> Option<f64> {
        self.dense.as_ref().map(|d| d.gap(self.n, r))
    }

    /// `W1(r)` from the dense solution.
    pub fn w1_at(&self, r: f64) -> Option<f64> {
        let g = self.gap_at(r)?;
        Some(if r == 0.0 { 1.0 } else { (g + 2.0) / (r * r) })
    }

    /// Zero count of `W1 - W*` on `[a, b]`.
    pub fn zero_count(&self, a: f64, b: f64, refine_tol: f64) -> Result<usize> {
        let zero = vec![0.0; self.scaled_gap.len()];
        let n = self.n;
        let refine = self.dense.as_ref().map(|d| move |r: f64| d.gap(n, r));
        count_intersections(
            &self.w1.r,
            &self.scaled_gap,
            &zero,
            (a, b),
            refine_tol,
            refine.as_ref().map(|f| f as &dyn Fn(f64) -> f64),
        )
    }
}

/// Integrate `W1'' + (n+1)/r W1' + n W1^2 + r W1 W1' = 0`, `W1(0) = 1`,
/// `W1'(0) = 0` on `[0, r_max]`.
pub fn integrate_w1(n: u32, r_max: f64, tol: f64) -> Result<SteadyStatePair> {
    integrate_w1_sampled(n, r_max, tol, DS_OUT)
}

/// As [`integrate_w1`] with output spacing `ds` in `log r` (and `ds/2` in `r`
/// below the switch radius).
pub fn integrate_w1_sampled(n: u32, r_max: f64, tol: f64, ds: f64) -> Result<SteadyStatePair> {
    if n < 3 {
        return Err(KsError::InvalidInput(format!("dimension n={n} must be >= 3")));
    }
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(KsError::InvalidInput(format!("r_max={r_max} must be > 0")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(KsError::InvalidInput(format!("tol={tol} must lie in (0, 1)")));
    }
    let nf = n as f64;
    let c2 = -nf / (2.0 * (nf + 2.0));
    let r0 = START_RADIUS.min(0.5 * r_max);
    let inner_end = r_max.min(LOG_SWITCH);
    let rhs = move |r: f64, z: &[f64; 2]| {
        let (w, dw) = (z[0], z[1]);
        [dw, -(nf + 1.0) / r * dw - nf * w * w - r * w * dw]
    };
    let mut solver = Dopri5::new(rhs, r0, [1.0 + c2 * r0 * r0, 2.0 * c2 * r0], 1e-3, Tolerance::split(tol));
    solver.h_max = 0.05;
    let mut inner = Vec::new();
    while solver.t < inner_end {
        inner.push(solver.step(inner_end)?);
    }
    let mut outer = Vec::new();
    if r_max > LOG_SWITCH {
        let [w, dw] = solver.y;
        // omega = r^2 W - 2, omega' = 2 r^2 W + r^3 W' at r = 1.
        let start = [w - 2.0, 2.0 * w + dw];
        let orhs = move |_s: f64, z: &[f64; 2]| {
            let (o, d) = (z[0], z[1]);
            [d, -(nf - 2.0 + o) * d - (nf - 2.0) * (o + 2.0) * o]
        };
        let tol_log = Tolerance { rtol: tol, atol: tol * 1e-8 };
        let mut s_solver = Dopri5::new(orhs, 0.0, start, 1e-2, tol_log);
        s_solver.h_max = 0.1;
        let s_end = r_max.ln();
        while s_solver.t < s_end {
            outer.push(s_solver.step(s_end)?);
        }
    }
    let dense = DenseW1 { inner, outer };

    let mut r_nodes: Vec<f64> = Vec::new();
    let dr = (0.5 * ds).min(DR_OUT);
    let m_in = (inner_end / dr).ceil() as usize;
    r_nodes.extend((0..=m_in).map(|k| inner_end * k as f64 / m_in as f64));
    if r_max > LOG_SWITCH {
        let s_end = r_max.ln();
        let m_out = (s_end / ds).ceil().max(1.0) as usize;
        r_nodes.extend((1..=m_out).map(|k| (s_end * k as f64 / m_out as f64).exp()));
    }

    let mut curve = SampledCurve::default();
    let mut wstar = Vec::with_capacity(r_nodes.len());
    let mut gap = Vec::with_capacity(r_nodes.len());
    for &r in &r_nodes {
        let (w, dw, g) = if r <= inner_end && (r <= LOG_SWITCH || dense.outer.is_empty()) {
            let v = if r <= r0 {
                [1.0 + c2 * r * r, 2.0 * c2 * r]
            } else {
                let k = dense.inner.partition_point(|s| s.t1 < r).min(dense.inner.len() - 1);
                dense.inner[k].eval(r)
            };
            (v[0], v[1], r * r * v[0] - 2.0)
        } else {
            let s = r.ln();
            let k = dense.outer.partition_point(|st| st.t1 < s).min(dense.outer.len() - 1);
            let [o, d] = dense.outer[k].eval(s);
            let w = (o + 2.0) / (r * r);
            // d = 2 r^2 W + r^3 W'
            (w, (d - 2.0 * (o + 2.0)) / (r * r * r), o)
        };
        curve.r.push(r);
        curve.value.push(w);
        curve.derivative.push(dw);
        wstar.push(if r == 0.0 { f64::NAN } else { 2.0 / (r * r) });
        gap.push(g);
    }

    for (i, (&w, &dw)) in curve.value.iter().zip(&curve.derivative).enumerate() {
        let slack = 10.0 * tol * (w.abs() + curve.r[i] * dw.abs()).max(tol);
        if !(w > 0.0) || dw > slack {
            return Err(KsError::NumericalInconsistency(format!(
                "W1 positivity/monotonicity violated at r={:.6e}: W1={w:.6e}, W1'={dw:.6e}",
                curve.r[i]
            )));
        }
    }

    let mut zeros = Vec::new();
    for i in 1..gap.len() {
        if gap[i - 1] != 0.0 && gap[i] != 0.0 && (gap[i - 1] > 0.0) != (gap[i] > 0.0) {
            let (a, b) = (curve.r[i - 1], curve.r[i]);
            zeros.push(brent(|r| dense.gap(n, r), a, b, 1e-12 * b, 200));
        }
    }
    Ok(SteadyStatePair { n, r_max, w1: curve, wstar_values: wstar, scaled_gap: gap, zeros, dense: Some(dense) })
}
