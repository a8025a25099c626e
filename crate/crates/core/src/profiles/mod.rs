//! Backward self-similar profiles.
//!
//! A profile is a global positive solution of
//!
//! ```text
//! psi'' + ((n+1)/y - y/2) psi' - psi + psi (y psi' + n psi) = 0,   psi'(0) = 0,
//! ```
//!
//! and the blow-up profile of the density is `U = n psi + y psi'`. Profiles
//! are parameterised by the shooting value `alpha = psi(0)`.
//!
//! Forward shooting is only well conditioned up to a stability horizon: past
//! it, every solution picks up a mode growing like `exp(y^2/4) y^-n`. At the
//! horizon the forward state is compared with the two families of global
//! solutions that exist far out: the constant `1/n`, and the decaying branch
//! `psi ~ Lambda / y^2`, which is integrated backward from far out in
//! `s = log y` (where it is stable) and matched on `psi`. A forward state that
//! agrees with one of them to within the matching tolerance is classified
//! `GlobalPositive` and continued along it; otherwise forward integration
//! resumes and the first event decides the classification.

mod atlas;
mod steady;

pub use atlas::{build_atlas, read_atlas, write_atlas, AtlasEntry, ATLAS_VERSION};
pub use steady::{integrate_w1, integrate_w1_sampled, SampledCurve, SteadyStatePair, DS_OUT as W1_DS_OUT};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::ode::{brent, Dopri5, Step, Tolerance};

/// Radius at which integration leaves the singular point `y = 0`.
pub const START_RADIUS: f64 = 1e-6;
/// `|psi|` above this value is declared an ODE blow-up.
pub const DIVERGENCE_CAP: f64 = 1e6;
/// Default far-field start for the decaying branch, `s = log(100)`.
pub const DEFAULT_S_MAX: f64 = 4.605_170_185_988_092;
/// Amplification of the growing mode tolerated up to the stability horizon.
pub const HORIZON_GROWTH: f64 = 1e3;
/// Largest relative size of the asymptotic corrections where a decaying
/// branch may be started.
pub const FAR_START_CORRECTION: f64 = 0.25;
/// Spacing of the uniform output grid.
pub const OUTPUT_SPACING: f64 = 0.01;
const MAX_OUTPUT_NODES: usize = 40_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub n: u32,
    pub alpha: f64,
    pub y_max: f64,
    pub tol: f64,
}

impl ProfileParams {
    pub fn new(n: u32, alpha: f64, y_max: f64, tol: f64) -> Result<Self> {
        let p = Self { n, alpha, y_max, tol };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(KsError::InvalidInput(format!("dimension n={} must be >= 3", self.n)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(KsError::InvalidInput(format!("alpha={} must be >= 0", self.alpha)));
        }
        if !(self.y_max > 0.0) || !self.y_max.is_finite() {
            return Err(KsError::InvalidInput(format!("y_max={} must be > 0", self.y_max)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(KsError::InvalidInput(format!("tol={} must lie in (0, 1)", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Classification {
    GlobalPositive,
    /// `psi` crosses zero transversally at `r_alpha`.
    TouchesZero { r_alpha: f64 },
    /// `|psi|` exceeds [`DIVERGENCE_CAP`] at `y_star`.
    OdeBlowup { y_star: f64, sign: i8 },
}

impl Classification {
    pub fn tag(&self) -> &'static str {
        match self {
            Classification::GlobalPositive => "GlobalPositive",
            Classification::TouchesZero { .. } => "TouchesZero",
            Classification::OdeBlowup { .. } => "OdeBlowup",
        }
    }

    /// `r_alpha` or `y_star`, whichever applies.
    pub fn radius(&self) -> Option<f64> {
        match *self {
            Classification::GlobalPositive => None,
            Classification::TouchesZero { r_alpha } => Some(r_alpha),
            Classification::OdeBlowup { y_star, .. } => Some(y_star),
        }
    }

    fn same_kind(&self, other: &Classification) -> bool {
        match (self, other) {
            (Classification::OdeBlowup { sign: a, .. }, Classification::OdeBlowup { sign: b, .. }) => {
                a == b
            }
            _ => self.tag() == other.tag(),
        }
    }
}

/// Far-field behaviour attached to a `GlobalPositive` profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Tail {
    /// The sampled range ends at `y_max` without a known continuation.
    Open,
    /// Continued as the constant profile `1/n`.
    Constant,
    /// Continued along the decaying branch `psi ~ lambda / y^2`.
    Decaying { lambda: f64 },
}

/// Forward state at the stability horizon and its distance to the far-field
/// families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMatch {
    pub y: f64,
    pub psi: f64,
    pub dpsi: f64,
    /// Relative mismatch against the decaying branch (infinite when the
    /// matching failed).
    pub decaying_mismatch: f64,
    /// Relative distance to the constant profile.
    pub constant_mismatch: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSolution {
    pub params: ProfileParams,
    pub y: Vec<f64>,
    pub psi: Vec<f64>,
    pub dpsi: Vec<f64>,
    pub u: Vec<f64>,
    pub classification: Classification,
    pub lambda: Option<f64>,
    pub tail: Tail,
    pub horizon: Option<HorizonMatch>,
}

/// `4 (n-2) (2n + y^2) / (2(n-2) + y^2)^2`.
pub fn eval_u0(n: u32, y: f64) -> f64 {
    let a = 2.0 * (n as f64 - 2.0);
    let d = a + y * y;
    4.0 * (n as f64 - 2.0) * (2.0 * n as f64 + y * y) / (d * d)
}

/// The mass profile of `U_0`: `4 / (2(n-2) + y^2)`, with `psi(0) = 2/(n-2)`.
pub fn psi0(n: u32, y: f64) -> f64 {
    4.0 / (2.0 * (n as f64 - 2.0) + y * y)
}

pub fn dpsi0(n: u32, y: f64) -> f64 {
    let d = 2.0 * (n as f64 - 2.0) + y * y;
    -8.0 * y / (d * d)
}

/// Shooting value of the explicit profile.
pub fn alpha0(n: u32) -> f64 {
    2.0 / (n as f64 - 2.0)
}

/// Second-order coefficient of the regular expansion `psi = alpha + c2 y^2`.
pub fn taylor_c2(n: u32, alpha: f64) -> f64 {
    alpha * (1.0 - n as f64 * alpha) / (2.0 * (n as f64 + 2.0))
}

/// `psi''` from the profile equation; the `y -> 0` limit is `2 c2`.
pub fn profile_second_derivative(n: u32, y: f64, psi: f64, dpsi: f64) -> f64 {
    if y == 0.0 {
        return 2.0 * taylor_c2(n, psi);
    }
    let nf = n as f64;
    -((nf + 1.0) / y - 0.5 * y) * dpsi - psi * (nf * psi + y * dpsi - 1.0)
}

/// Profile-equation residual at one point.
pub fn profile_residual(n: u32, y: f64, psi: f64, dpsi: f64, d2psi: f64) -> f64 {
    let nf = n as f64;
    d2psi + ((nf + 1.0) / y - 0.5 * y) * dpsi - psi + psi * (y * dpsi + nf * psi)
}

/// Radius past which forward shooting amplifies errors by more than
/// [`HORIZON_GROWTH`]: root of `y^2/4 + (2-n) log y = log(G)` beyond the
/// minimiser `sqrt(2(n-2))`.
pub fn stability_horizon(n: u32) -> f64 {
    let nf = n as f64;
    let g = |y: f64| 0.25 * y * y + (2.0 - nf) * y.ln() - HORIZON_GROWTH.ln();
    let lo = (2.0 * (nf - 2.0)).sqrt().max(1.0);
    if g(lo) >= 0.0 {
        return lo;
    }
    brent(g, lo, 60.0, 1e-10, 200)
}

/// Threshold on the relative horizon mismatch below which a forward state is
/// accepted as lying on a far-field family.
pub fn matching_tolerance(tol: f64) -> f64 {
    (100.0 * HORIZON_GROWTH * tol).max(1e-9)
}

fn forward_rhs(n: u32) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + Copy {
    let nf = n as f64;
    move |y, z| {
        let (p, dp) = (z[0], z[1]);
        [dp, -((nf + 1.0) / y - 0.5 * y) * dp - p * (nf * p + y * dp - 1.0)]
    }
}

/// Log-variable form of the profile equation for `W = y^2 psi`, `s = log y`:
/// `W'' = (e^{2s}/2) W' - (n - 4 + W) W' - (n-2)(W^2 - 2W)`.
fn far_rhs(n: u32) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + Copy {
    let nf = n as f64;
    move |s, z| {
        let (w, dw) = (z[0], z[1]);
        [dw, 0.5 * (2.0 * s).exp() * dw - (nf - 4.0 + w) * dw - (nf - 2.0) * (w * w - 2.0 * w)]
    }
}

/// Three-term expansion of the decaying branch: `W = L + b y^-2 + c y^-4`
/// with `b = (n-2) L (2-L)` and `c = b (2n - 8 - (n-3) L)`. Returns `(W, dW/ds)`.
pub fn decaying_asymptotics(n: u32, lambda: f64, y: f64) -> (f64, f64) {
    let nf = n as f64;
    let b = (nf - 2.0) * lambda * (2.0 - lambda);
    let c = b * (2.0 * nf - 8.0 - (nf - 3.0) * lambda);
    let e2 = 1.0 / (y * y);
    let e4 = e2 * e2;
    (lambda + b * e2 + c * e4, -2.0 * b * e2 - 4.0 * c * e4)
}

/// Backward-integrated decaying branch on `[s_lo, s_far]`.
#[derive(Debug, Clone)]
struct FarBranch {
    lambda: f64,
    steps: Vec<Step<2>>,
    at_lo: [f64; 2],
}

fn far_branch(n: u32, lambda: f64, s_far: f64, s_lo: f64, tol: f64) -> Option<FarBranch> {
    let (w, dw) = decaying_asymptotics(n, lambda, s_far.exp());
    // The expansion is only a valid start while its corrections are small.
    if (w - lambda).abs() > FAR_START_CORRECTION * lambda.abs().max(1.0) {
        return None;
    }
    let h0 = 0.1 * (-2.0 * s_far).exp();
    let mut solver = Dopri5::new(far_rhs(n), s_far, [w, dw], h0, Tolerance::split(tol));
    solver.h_min = 1e-16;
    let mut steps = Vec::new();
    let cap = DIVERGENCE_CAP * (1.0 + lambda.abs());
    while solver.t > s_lo {
        let st = solver.step(s_lo).ok()?;
        if !(st.y1[0].abs() < cap) || !st.y1[1].is_finite() {
            return None;
        }
        steps.push(st);
    }
    Some(FarBranch { lambda, at_lo: solver.y, steps })
}

/// Solve for the decaying branch whose value matches `w_target` at `s_lo`.
fn match_far_branch(n: u32, s_far: f64, s_lo: f64, w_target: f64, tol: f64) -> Option<FarBranch> {
    let eval = |lam: f64| far_branch(n, lam, s_far, s_lo, tol);
    let scale = w_target.abs().max(1e-12);
    let mut x0 = w_target;
    let mut b0 = eval(x0)?;
    let mut f0 = b0.at_lo[0] - w_target;
    let mut x1 = w_target * (1.0 + 1e-3) + 1e-6;
    let mut b1 = eval(x1)?;
    let mut f1 = b1.at_lo[0] - w_target;
    for _ in 0..60 {
        if f1.abs() <= 1e-13 * scale {
            return Some(b1);
        }
        if f1 == f0 {
            return None;
        }
        let mut x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        // Damp wild secant jumps.
        let max_jump = 0.5 * x1.abs().max(1e-3);
        if (x2 - x1).abs() > max_jump {
            x2 = x1 + max_jump.copysign(x2 - x1);
        }
        let mut b2 = eval(x2);
        let mut tries = 0;
        while b2.is_none() && tries < 20 {
            x2 = 0.5 * (x1 + x2);
            b2 = eval(x2);
            tries += 1;
        }
        let b2 = b2?;
        x0 = x1;
        f0 = f1;
        b0 = b1;
        x1 = x2;
        f1 = b2.at_lo[0] - w_target;
        b1 = b2;
    }
    let _ = b0;
    if f1.abs() <= 1e-10 * scale {
        Some(b1)
    } else {
        None
    }
}

/// `(W, dW/ds)` from `(psi, dpsi)` at radius `y`.
fn to_log(y: f64, psi: f64, dpsi: f64) -> (f64, f64) {
    (y * y * psi, 2.0 * y * y * psi + y * y * y * dpsi)
}

/// Relative mismatch in `dW/ds` between a forward state and a matched branch.
fn relative_mismatch(w: f64, dw: f64, branch_dw: f64) -> f64 {
    (branch_dw - dw).abs() / (w.abs() + dw.abs()).max(1e-300)
}

struct Horizon {
    record: HorizonMatch,
    branch: Option<FarBranch>,
}

fn inspect_horizon(n: u32, y: f64, psi: f64, dpsi: f64, s_far: f64, tol: f64) -> Horizon {
    let nf = n as f64;
    let constant_mismatch = (nf * psi - 1.0).abs() + (y * dpsi).abs() * nf;
    let (w, dw) = to_log(y, psi, dpsi);
    let branch = if psi > 0.0 { match_far_branch(n, s_far, y.ln(), w, tol) } else { None };
    let decaying_mismatch =
        branch.as_ref().map_or(f64::INFINITY, |b| relative_mismatch(w, dw, b.at_lo[1]));
    Horizon {
        record: HorizonMatch { y, psi, dpsi, decaying_mismatch, constant_mismatch },
        branch,
    }
}

enum Piece<'a> {
    Forward(&'a [Step<2>]),
    Far(&'a [Step<2>]),
}

/// Evaluate the forward solution `(psi, dpsi)` at `y` from its steps.
fn eval_forward(steps: &[Step<2>], n: u32, alpha: f64, y: f64) -> [f64; 2] {
    if y <= START_RADIUS || steps.is_empty() {
        let c2 = taylor_c2(n, alpha);
        return [alpha + c2 * y * y, 2.0 * c2 * y];
    }
    let k = steps.partition_point(|s| s.t1 < y).min(steps.len() - 1);
    steps[k].eval(y)
}

/// Evaluate the far branch (steps ordered by decreasing `s`) at `y`.
fn eval_far(steps: &[Step<2>], y: f64) -> [f64; 2] {
    let s = y.ln();
    let k = steps.partition_point(|st| st.t1 > s).min(steps.len() - 1);
    let [w, dw] = steps[k].eval(s);
    let psi = w / (y * y);
    [psi, (dw - 2.0 * w) / (y * y * y)]
}

fn output_grid(y_end: f64) -> Vec<f64> {
    let m = ((y_end / OUTPUT_SPACING).ceil() as usize).clamp(1, MAX_OUTPUT_NODES);
    (0..=m).map(|k| y_end * k as f64 / m as f64).collect()
}

fn assemble(
    params: ProfileParams,
    y_end: f64,
    pieces: &[(f64, Piece<'_>)],
    classification: Classification,
    tail: Tail,
    horizon: Option<HorizonMatch>,
) -> ProfileSolution {
    let n = params.n;
    let nf = n as f64;
    let y = output_grid(y_end);
    let mut psi = Vec::with_capacity(y.len());
    let mut dpsi = Vec::with_capacity(y.len());
    for &yi in &y {
        // First piece whose upper limit covers yi.
        let piece = pieces.iter().find(|(upper, _)| yi <= *upper).or(pieces.last());
        let v = match piece {
            Some((_, Piece::Forward(st))) => eval_forward(st, n, params.alpha, yi),
            Some((_, Piece::Far(st))) => eval_far(st, yi),
            None => [1.0 / nf, 0.0],
        };
        psi.push(v[0]);
        dpsi.push(if yi == 0.0 { 0.0 } else { v[1] });
    }
    let u = y.iter().zip(psi.iter().zip(&dpsi)).map(|(yi, (p, dp))| nf * p + yi * dp).collect();
    let lambda = match tail {
        Tail::Decaying { lambda } => Some(lambda),
        _ => None,
    };
    ProfileSolution { params, y, psi, dpsi, u, classification, lambda, tail, horizon }
}

struct ForwardRun {
    steps: Vec<Step<2>>,
    event: Option<Classification>,
    y_reached: f64,
    state: [f64; 2],
}

fn run_forward(
    params: &ProfileParams,
    y_from: f64,
    state: [f64; 2],
    y_to: f64,
    mut steps: Vec<Step<2>>,
) -> Result<ForwardRun> {
    let n = params.n;
    let tol = params.tol;
    let h0 = if steps.is_empty() { 1e-3 } else { steps.last().map_or(1e-3, |s| s.t1 - s.t0) };
    let mut solver = Dopri5::new(forward_rhs(n), y_from, state, h0, Tolerance::split(tol));
    solver.h_max = 0.1;
    while solver.t < y_to {
        let st = solver.step(y_to)?;
        let p1 = st.y1[0];
        if p1 < -tol {
            let r = brent(|y| st.eval(y)[0], st.t0, st.t1, 1e-14, 200);
            let y_reached = r;
            let state = st.eval(r);
            steps.push(st);
            return Ok(ForwardRun {
                steps,
                event: Some(Classification::TouchesZero { r_alpha: r }),
                y_reached,
                state,
            });
        }
        if p1.abs() > DIVERGENCE_CAP || !p1.is_finite() {
            let sign = if p1 > 0.0 { 1 } else { -1 };
            let y_star = brent(|y| st.eval(y)[0].abs() - DIVERGENCE_CAP, st.t0, st.t1, 1e-14, 200);
            let state = st.eval(y_star);
            steps.push(st);
            return Ok(ForwardRun {
                steps,
                event: Some(Classification::OdeBlowup { y_star, sign }),
                y_reached: y_star,
                state,
            });
        }
        if p1 <= 0.0 {
            // Grazing: resolve with finer steps before deciding.
            solver.h_max = (0.125 * (st.t1 - st.t0)).max(1e-8);
        } else if solver.h_max < 0.1 {
            solver.h_max = (solver.h_max * 2.0).min(0.1);
        }
        steps.push(st);
    }
    Ok(ForwardRun { y_reached: solver.t, state: solver.y, steps, event: None })
}

/// Integrate the profile equation from `psi(0) = alpha`, `psi'(0) = 0`.
pub fn integrate_profile(params: ProfileParams) -> Result<ProfileSolution> {
    integrate_profile_with(params, DEFAULT_S_MAX)
}

/// As [`integrate_profile`], starting the decaying branch at `s = s_max`
/// (or `log y_max`, if larger).
pub fn integrate_profile_with(params: ProfileParams, s_max: f64) -> Result<ProfileSolution> {
    params.validate()?;
    let n = params.n;
    let nf = n as f64;
    if params.alpha == 0.0 {
        let y = output_grid(params.y_max);
        let zeros = vec![0.0; y.len()];
        return Ok(ProfileSolution {
            params,
            psi: zeros.clone(),
            dpsi: zeros.clone(),
            u: zeros,
            y,
            classification: Classification::TouchesZero { r_alpha: 0.0 },
            lambda: None,
            tail: Tail::Open,
            horizon: None,
        });
    }
    let y0 = START_RADIUS.min(0.5 * params.y_max);
    let c2 = taylor_c2(n, params.alpha);
    let start = [params.alpha + c2 * y0 * y0, 2.0 * c2 * y0];
    let y_h = stability_horizon(n).min(params.y_max);
    let first = run_forward(&params, y0, start, y_h, Vec::new())?;
    if let Some(event) = first.event {
        let y_end = first.y_reached;
        return Ok(assemble(
            params,
            y_end,
            &[(y_end, Piece::Forward(&first.steps))],
            event,
            Tail::Open,
            None,
        ));
    }
    if params.y_max <= y_h {
        return Ok(assemble(
            params,
            params.y_max,
            &[(params.y_max, Piece::Forward(&first.steps))],
            Classification::GlobalPositive,
            Tail::Open,
            None,
        ));
    }

    let s_far = s_max.max(params.y_max.ln());
    let [psi_h, dpsi_h] = first.state;
    let hz = inspect_horizon(n, y_h, psi_h, dpsi_h, s_far, params.tol);
    let mtol = matching_tolerance(params.tol);
    if hz.record.constant_mismatch <= mtol && hz.record.constant_mismatch <= hz.record.decaying_mismatch
    {
        // Constant continuation; an exact constant start stays exact.
        let exact = params.alpha * nf == 1.0;
        if exact {
            let rest = run_forward(&params, y_h, first.state, params.y_max, first.steps)?;
            return Ok(assemble(
                params,
                params.y_max,
                &[(params.y_max, Piece::Forward(&rest.steps))],
                Classification::GlobalPositive,
                Tail::Constant,
                Some(hz.record),
            ));
        }
        let y_max = params.y_max;
        let mut sol = assemble(
            params,
            y_max,
            &[(y_h, Piece::Forward(&first.steps))],
            Classification::GlobalPositive,
            Tail::Constant,
            Some(hz.record),
        );
        for i in 0..sol.y.len() {
            if sol.y[i] > y_h {
                sol.psi[i] = 1.0 / nf;
                sol.dpsi[i] = 0.0;
                sol.u[i] = 1.0;
            }
        }
        return Ok(sol);
    }
    if hz.record.decaying_mismatch <= mtol {
        let branch = hz.branch.expect("finite mismatch implies a matched branch");
        return Ok(assemble(
            params,
            params.y_max,
            &[(y_h, Piece::Forward(&first.steps)), (params.y_max, Piece::Far(&branch.steps))],
            Classification::GlobalPositive,
            Tail::Decaying { lambda: branch.lambda },
            Some(hz.record),
        ));
    }
    let rest = run_forward(&params, y_h, first.state, params.y_max, first.steps)?;
    let (class, y_end) = match rest.event {
        Some(ev) => (ev, rest.y_reached),
        None => (Classification::GlobalPositive, params.y_max),
    };
    Ok(assemble(
        params,
        y_end,
        &[(y_end, Piece::Forward(&rest.steps))],
        class,
        Tail::Open,
        Some(hz.record),
    ))
}

/// Decay limit `Lambda = lim y^2 psi` with the error estimate
/// `|Lambda(s_max) - Lambda(s_max - 1)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayLimit {
    pub lambda: f64,
    pub error: f64,
}

/// Integrate the log-variable profile equation backward from `s_max` (and from
/// `s_max - 1`) to the matching point of `sol`, and return the matched
/// far-field limit.
pub fn compute_lambda(sol: &ProfileSolution, s_max: f64) -> Result<DecayLimit> {
    if sol.classification != Classification::GlobalPositive {
        return Err(KsError::InvalidInput(format!(
            "compute_lambda needs a GlobalPositive profile, got {}",
            sol.classification.tag()
        )));
    }
    if sol.tail == Tail::Constant {
        return Err(KsError::NoFiniteLimit("profile tends to the constant 1/n, y^2 psi grows like y^2".into()));
    }
    let n = sol.params.n;
    let tol = sol.params.tol;
    let (y, psi, dpsi) = match sol.horizon {
        Some(h) => (h.y, h.psi, h.dpsi),
        None => {
            let k = sol.y.len() - 1;
            (sol.y[k], sol.psi[k], sol.dpsi[k])
        }
    };
    if !(s_max - 1.0 > y.ln()) {
        return Err(KsError::InvalidInput(format!(
            "s_max={s_max} must exceed log(y_match)+1 = {}",
            y.ln() + 1.0
        )));
    }
    let (w, dw) = to_log(y, psi, dpsi);
    let mtol = matching_tolerance(tol);
    let solve = |s_far: f64| -> Result<f64> {
        let branch = match_far_branch(n, s_far, y.ln(), w, tol).ok_or_else(|| {
            KsError::NoFiniteLimit(format!("no decaying branch through psi({y:.3})={psi:.6e}"))
        })?;
        let mismatch = relative_mismatch(w, dw, branch.at_lo[1]);
        if mismatch > mtol {
            return Err(KsError::NoFiniteLimit(format!(
                "slope mismatch {mismatch:.3e} against the decaying branch at y={y:.3}"
            )));
        }
        Ok(branch.lambda)
    };
    let lambda = solve(s_max)?;
    let coarse = solve(s_max - 1.0)?;
    Ok(DecayLimit { lambda, error: (lambda - coarse).abs() })
}

pub fn classify_alpha(n: u32, alpha: f64, y_max: f64, tol: f64) -> Result<Classification> {
    Ok(integrate_profile(ProfileParams::new(n, alpha, y_max, tol)?)?.classification)
}

/// Scan configuration for [`find_profiles_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub points_per_decade: usize,
    pub y_max: f64,
    /// Integration tolerance for each classification.
    pub ode_tol: f64,
    /// Radius where the decaying branch is started during the scan.
    pub far_radius: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { points_per_decade: 400, y_max: 20.0, ode_tol: 1e-10, far_radius: 30.0 }
    }
}

/// Signed departure of the forward solution at the stability horizon from
/// the decaying family (`[0]`) and from the constant `1/n` (`[1]`). `None`
/// when the forward solution has an event before the horizon or no decaying
/// branch passes through its value there.
pub fn horizon_defect(n: u32, alpha: f64, cfg: &ScanConfig) -> Result<[Option<f64>; 2]> {
    let params = ProfileParams::new(n, alpha, cfg.y_max.max(stability_horizon(n)), cfg.ode_tol)?;
    params.validate()?;
    if alpha == 0.0 {
        return Ok([None, None]);
    }
    let y0 = START_RADIUS;
    let c2 = taylor_c2(n, alpha);
    let y_h = stability_horizon(n);
    let run = run_forward(&params, y0, [alpha + c2 * y0 * y0, 2.0 * c2 * y0], y_h, Vec::new())?;
    if run.event.is_some() {
        return Ok([None, None]);
    }
    let [psi, dpsi] = run.state;
    let constant = n as f64 * psi - 1.0 + y_h * dpsi;
    if psi <= 0.0 {
        return Ok([None, Some(constant)]);
    }
    let (w, dw) = to_log(y_h, psi, dpsi);
    let s_far = cfg.far_radius.max(2.0 * y_h).ln();
    let decaying = match_far_branch(n, s_far, y_h.ln(), w, cfg.ode_tol)
        .map(|b| (dw - b.at_lo[1]) / (w.abs() + dw.abs()));
    Ok([decaying, Some(constant)])
}

/// Candidate members of the profile set in `[alpha_lo, alpha_hi]`.
///
/// The range is scanned geometrically. Neighbouring scan points where a
/// component of [`horizon_defect`] changes sign, or where the classification
/// changes kind, are bisected to width `tol` and further until the midpoint
/// classifies as `GlobalPositive` or the bracket reaches rounding level. Only
/// re-validated `GlobalPositive` values are returned, sorted, at most
/// `max_count`.
pub fn find_profiles(n: u32, alpha_lo: f64, alpha_hi: f64, max_count: usize, tol: f64) -> Result<Vec<f64>> {
    find_profiles_with(n, alpha_lo, alpha_hi, max_count, tol, ScanConfig::default())
}

#[derive(Debug, Clone, Copy)]
enum Bracket {
    Defect(usize),
    Kind(Classification),
}

pub fn find_profiles_with(
    n: u32,
    alpha_lo: f64,
    alpha_hi: f64,
    max_count: usize,
    tol: f64,
    cfg: ScanConfig,
) -> Result<Vec<f64>> {
    if !(alpha_lo > 0.0 && alpha_lo < alpha_hi) {
        return Err(KsError::InvalidInput(format!(
            "need 0 < alpha_lo < alpha_hi, got [{alpha_lo}, {alpha_hi}]"
        )));
    }
    if n < 3 {
        return Err(KsError::InvalidInput(format!("dimension n={n} must be >= 3")));
    }
    if !(tol > 0.0) {
        return Err(KsError::InvalidInput(format!("tol={tol} must be > 0")));
    }
    let decades = (alpha_hi / alpha_lo).log10();
    let m = ((decades * cfg.points_per_decade as f64).ceil() as usize).max(2);
    let alphas: Vec<f64> =
        (0..=m).map(|k| alpha_lo * (alpha_hi / alpha_lo).powf(k as f64 / m as f64)).collect();
    let s_scan = cfg.far_radius.ln();
    let classify = |a: f64| -> Result<Classification> {
        Ok(integrate_profile_with(ProfileParams::new(n, a, cfg.y_max, cfg.ode_tol)?, s_scan)?.classification)
    };
    let validate = |a: f64| classify_alpha(n, a, cfg.y_max, cfg.ode_tol);
    let scanned: Vec<(Classification, [Option<f64>; 2])> = alphas
        .par_iter()
        .map(|&a| Ok((classify(a)?, horizon_defect(n, a, &cfg)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut brackets = Vec::new();
    let mut direct = Vec::new();
    for k in 0..=m {
        let (class, defect) = scanned[k];
        if class == Classification::GlobalPositive {
            if k == 0 || scanned[k - 1].0 != Classification::GlobalPositive {
                direct.push(alphas[k]);
            }
            continue;
        }
        if k == m || scanned[k + 1].0 == Classification::GlobalPositive {
            continue;
        }
        let (next_class, next_defect) = scanned[k + 1];
        if !class.same_kind(&next_class) {
            brackets.push((alphas[k], alphas[k + 1], Bracket::Kind(class)));
        }
        for c in 0..2 {
            if let (Some(a), Some(b)) = (defect[c], next_defect[c]) {
                if a != 0.0 && b != 0.0 && (a > 0.0) != (b > 0.0) {
                    brackets.push((alphas[k], alphas[k + 1], Bracket::Defect(c)));
                }
            }
        }
    }

    let refine = |(mut lo, mut hi, kind): (f64, f64, Bracket)| -> Result<Option<f64>> {
        let side = |a: f64| -> Result<Option<bool>> {
            Ok(match kind {
                Bracket::Kind(c) => Some(classify(a)?.same_kind(&c)),
                Bracket::Defect(i) => horizon_defect(n, a, &cfg)?[i].map(|d| d > 0.0),
            })
        };
        let Some(lo_side) = side(lo)? else { return Ok(None) };
        let mut check_width = tol;
        loop {
            let mid = 0.5 * (lo + hi);
            if !(mid > lo && mid < hi) {
                return Ok(None);
            }
            if hi - lo <= check_width {
                if validate(mid)? == Classification::GlobalPositive {
                    return Ok(Some(mid));
                }
                check_width /= 16.0;
            }
            match side(mid)? {
                Some(s) if s == lo_side => lo = mid,
                Some(_) => hi = mid,
                None => return Ok(None),
            }
        }
    };
    let refined: Vec<Option<f64>> = brackets.into_par_iter().map(refine).collect::<Result<Vec<_>>>()?;

    let direct: Vec<f64> = direct
        .into_par_iter()
        .map(|a| Ok((validate(a)? == Classification::GlobalPositive).then_some(a)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut found: Vec<f64> = direct.into_iter().chain(refined.into_iter().flatten()).collect();
    found.sort_by(|a, b| a.total_cmp(b));
    found.dedup_by(|a, b| (*a - *b).abs() <= tol);
    found.truncate(max_count);
    Ok(found)
}

/// Result of [`check_quadratic_decay`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    /// `sup_{y >= 1} y^2 psi(y)` over the samples and, for a decaying tail,
    /// its limit `Lambda`.
    pub sup_y2psi: f64,
    /// False when `y^2 psi` is still growing at the end of the sampled range.
    pub bounded: bool,
}

pub fn check_quadratic_decay(sol: &ProfileSolution) -> Result<DecayCheck> {
    if sol.classification != Classification::GlobalPositive {
        return Err(KsError::InvalidInput(format!(
            "quadratic decay is defined for GlobalPositive profiles, got {}",
            sol.classification.tag()
        )));
    }
    let w: Vec<(f64, f64)> =
        sol.y.iter().zip(&sol.psi).filter(|(y, _)| **y >= 1.0).map(|(y, p)| (*y, y * y * p)).collect();
    let sup = w.iter().map(|(_, v)| *v).chain(sol.lambda).fold(f64::NEG_INFINITY, f64::max);
    let bounded = match (w.first(), w.last()) {
        (Some(_), Some(&(y_end, w_end))) => {
            let half = w.iter().find(|(y, _)| *y >= 0.5 * y_end).map_or(w_end, |p| p.1);
            w_end <= 1.5 * half.max(0.0) + 1e-300 && y_end >= 2.0
        }
        _ => false,
    };
    Ok(DecayCheck { sup_y2psi: sup, bounded })
}

impl ProfileSolution {
    pub fn n(&self) -> u32 {
        self.params.n
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    pub fn y_end(&self) -> f64 {
        *self.y.last().unwrap_or(&0.0)
    }

    fn locate(&self, y: f64) -> Option<(usize, f64)> {
        if !(y >= 0.0) || y > self.y_end() || self.y.len() < 2 {
            return None;
        }
        let k = self.y.partition_point(|v| *v <= y).clamp(1, self.y.len() - 1) - 1;
        let h = self.y[k + 1] - self.y[k];
        Some((k, (y - self.y[k]) / h))
    }

    /// `(W, dW/ds)` beyond the sampled range, from the tail family.
    fn far(&self, y: f64) -> Option<(f64, f64)> {
        match self.tail {
            Tail::Decaying { lambda } if y > 0.0 => Some(decaying_asymptotics(self.n(), lambda, y)),
            Tail::Constant => Some((y * y / self.n() as f64, 2.0 * y * y / self.n() as f64)),
            _ => None,
        }
    }

    /// `psi(y)` by cubic Hermite interpolation of the samples; past the sampled
    /// range the tail family is used, and `None` is returned if there is none.
    pub fn psi_at(&self, y: f64) -> Option<f64> {
        if let Some((k, t)) = self.locate(y) {
            let h = self.y[k + 1] - self.y[k];
            return Some(hermite(t, h, self.psi[k], self.psi[k + 1], self.dpsi[k], self.dpsi[k + 1]));
        }
        self.far(y).map(|(w, _)| w / (y * y))
    }

    pub fn dpsi_at(&self, y: f64) -> Option<f64> {
        if let Some((k, t)) = self.locate(y) {
            let h = self.y[k + 1] - self.y[k];
            let n = self.n();
            let d2a = profile_second_derivative(n, self.y[k], self.psi[k], self.dpsi[k]);
            let d2b = profile_second_derivative(n, self.y[k + 1], self.psi[k + 1], self.dpsi[k + 1]);
            return Some(hermite(t, h, self.dpsi[k], self.dpsi[k + 1], d2a, d2b));
        }
        self.far(y).map(|(w, dw)| (dw - 2.0 * w) / (y * y * y))
    }

    /// `U(y) = n psi + y psi'`.
    pub fn u_at(&self, y: f64) -> Option<f64> {
        if self.locate(y).is_some() {
            return Some(self.n() as f64 * self.psi_at(y)? + y * self.dpsi_at(y)?);
        }
        self.far(y).map(|(w, dw)| ((self.n() as f64 - 2.0) * w + dw) / (y * y))
    }

    /// `dU/dy = (n+1) psi' + y psi''`.
    pub fn du_at(&self, y: f64) -> Option<f64> {
        let p = self.psi_at(y)?;
        let dp = self.dpsi_at(y)?;
        let d2 = profile_second_derivative(self.n(), y, p, dp);
        Some((self.n() as f64 + 1.0) * dp + y * d2)
    }

    /// Largest profile-equation residual at interior nodes, with `psi''`
    /// from fourth-order central differences of the `psi'` samples.
    pub fn max_residual(&self) -> f64 {
        let m = self.y.len();
        if m < 5 {
            return 0.0;
        }
        let h = self.y[1] - self.y[0];
        (2..m - 2)
            .map(|i| {
                let d2 = (-self.dpsi[i + 2] + 8.0 * self.dpsi[i + 1] - 8.0 * self.dpsi[i - 1]
                    + self.dpsi[i - 2])
                    / (12.0 * h);
                profile_residual(self.n(), self.y[i], self.psi[i], self.dpsi[i], d2).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn hermite(t: f64, h: f64, p0: f64, p1: f64, m0: f64, m1: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * p0
        + (t3 - 2.0 * t2 + t) * h * m0
        + (-2.0 * t3 + 3.0 * t2) * p1
        + (t3 - t2) * h * m1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u0_closed_form_values() {
        assert_eq!(eval_u0(3, 0.0), 6.0);
        assert_eq!(eval_u0(4, 0.0), 4.0);
        let y = 1e4;
        assert!((y * y * eval_u0(3, y) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn psi0_reproduces_u0() {
        for n in 3..=9 {
            for k in 0..200 {
                let y = 0.1 * k as f64;
                let u = n as f64 * psi0(n, y) + y * dpsi0(n, y);
                assert!((u - eval_u0(n, y)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn psi0_solves_the_profile_equation() {
        for n in 3..=9 {
            for k in 1..=500 {
                let y = 0.1 * k as f64;
                let d = 2.0 * (n as f64 - 2.0) + y * y;
                let d2 = -8.0 / (d * d) + 32.0 * y * y / (d * d * d);
                let r = profile_residual(n, y, psi0(n, y), dpsi0(n, y), d2);
                assert!(r.abs() < 1e-12, "n={n} y={y} r={r}");
            }
        }
    }

    #[test]
    fn taylor_coefficient_matches_psi0_expansion() {
        for n in 3..=9 {
            let c = taylor_c2(n, alpha0(n));
            assert!((c + 1.0 / ((n as f64 - 2.0).powi(2))).abs() < 1e-14);
        }
        // Residual check of the expansion itself, O(y^2) at small y.
        let (n, a) = (5, 0.7);
        let c = taylor_c2(n, a);
        let y = 1e-4;
        let r = profile_residual(n, y, a + c * y * y, 2.0 * c * y, 2.0 * c);
        assert!(r.abs() < 1e-6);
    }

    #[test]
    fn asymptotic_series_matches_psi0() {
        for n in 3..=9 {
            let y = 200.0;
            let (w, _) = decaying_asymptotics(n, 4.0, y);
            // First omitted term of 4 / (1 + a/y^2), a = 2(n-2).
            let a = 2.0 * (n as f64 - 2.0);
            let bound = 4.0 * a.powi(3) / y.powi(6);
            assert!((w - y * y * psi0(n, y)).abs() < 1.01 * bound + 1e-14);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let sol = integrate_profile(ProfileParams::new(3, 0.0, 10.0, 1e-8).unwrap()).unwrap();
        assert!(sol.psi.iter().all(|p| *p == 0.0));
        assert_eq!(sol.classification, Classification::TouchesZero { r_alpha: 0.0 });
    }

    #[test]
    fn constant_profile() {
        for n in 3..=9 {
            let sol = integrate_profile(ProfileParams::new(n, 1.0 / n as f64, 20.0, 1e-10).unwrap()).unwrap();
            assert_eq!(sol.classification, Classification::GlobalPositive);
            assert!(sol.psi.iter().all(|p| (p - 1.0 / n as f64).abs() < 1e-12));
            assert!(sol.u.iter().all(|u| (u - 1.0).abs() < 1e-12));
            assert!(matches!(compute_lambda(&sol, DEFAULT_S_MAX), Err(KsError::NoFiniteLimit(_))));
        }
    }

    #[test]
    fn explicit_profile_is_recovered() {
        let sol = integrate_profile(ProfileParams::new(3, 2.0, 20.0, 1e-10).unwrap()).unwrap();
        assert_eq!(sol.classification, Classification::GlobalPositive);
        let err = sol.y.iter().zip(&sol.psi).map(|(y, p)| (p - psi0(3, *y)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "sup error {err}");
        let lam = compute_lambda(&sol, DEFAULT_S_MAX).unwrap();
        assert!((lam.lambda - 4.0).abs() < 1e-4, "{lam:?}");
        for (i, y) in sol.y.iter().enumerate() {
            assert!((sol.u[i] - (3.0 * sol.psi[i] + y * sol.dpsi[i])).abs() <= 1e-15 * sol.u[i].abs().max(1.0));
        }
        assert!(sol.max_residual() < 1e-6, "residual {}", sol.max_residual());
    }

    #[test]
    fn large_alpha_diverges_early() {
        let c = classify_alpha(3, 1e3, 50.0, 1e-8).unwrap();
        assert!(matches!(c, Classification::TouchesZero { .. } | Classification::OdeBlowup { .. }), "{c:?}");
    }

    #[test]
    fn quadratic_decay() {
        let sol = integrate_profile(ProfileParams::new(4, 1.0, 20.0, 1e-10).unwrap()).unwrap();
        let d = check_quadratic_decay(&sol).unwrap();
        assert!(d.bounded);
        assert!((d.sup_y2psi - 4.0).abs() < 1e-3, "{d:?}");
        let c = integrate_profile(ProfileParams::new(4, 0.25, 20.0, 1e-10).unwrap()).unwrap();
        assert!(!check_quadratic_decay(&c).unwrap().bounded);
        let z = integrate_profile(ProfileParams::new(3, 1e3, 20.0, 1e-8).unwrap()).unwrap();
        assert!(check_quadratic_decay(&z).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ProfileParams::new(2, 1.0, 10.0, 1e-6).is_err());
        assert!(ProfileParams::new(3, -1.0, 10.0, 1e-6).is_err());
        assert!(ProfileParams::new(3, 1.0, 0.0, 1e-6).is_err());
        assert!(ProfileParams::new(3, 1.0, 10.0, 1.5).is_err());
    }
}
