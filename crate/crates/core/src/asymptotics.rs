//! Quantitative checks of the blow-up asymptotics on a completed trajectory.
//!
//! Every check reads saved frames only. Frames closer to `T_est` than
//! `tau_min` are ignored, because `T_est - t` is unreliable there.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::profiles::ProfileSolution;
use crate::radial::{BlowupEstimate, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsConfig {
    /// Outer radius of the spatial windows.
    pub rho: f64,
    /// Outer time cutoff `T - delta` of the neighbourhood ladder.
    pub delta: f64,
    /// Radius bound for the `u_t` decay check.
    pub eta: f64,
    /// Frames with `T_est - t < tau_min` are skipped.
    pub tau_min: f64,
    /// Relative `|u_t| (T - t) / u` below which a node counts as frozen.
    pub frozen_tol: f64,
    /// Required `sup |eps|` on the innermost neighbourhood.
    pub eps_tol: f64,
}

impl Default for AsymptoticsConfig {
    fn default() -> Self {
        AsymptoticsConfig { rho: 4e-3, delta: 1e-5, eta: 0.05, tau_min: 0.0, frozen_tol: 0.01, eps_tol: 0.05 }
    }
}

impl AsymptoticsConfig {
    /// Guard of `guard * t_err_fit` around the estimated blow-up time.
    pub fn with_guard(self, est: &BlowupEstimate, guard: f64) -> Self {
        AsymptoticsConfig { tau_min: guard * est.t_err_fit, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0 && self.delta > 0.0 && self.eta > 0.0 && self.tau_min >= 0.0;
        if !ok || !(self.frozen_tol > 0.0) || !(self.eps_tol > 0.0) {
            return Err(KsError::InvalidInput(format!("invalid asymptotics window {self:?}")));
        }
        Ok(())
    }
}

/// Frames with `t >= t_from` and `T_est - t >= tau_min`.
fn frames_between(traj: &Trajectory, t_est: f64, t_from: f64, tau_min: f64) -> Vec<usize> {
    (0..traj.frames.len())
        .filter(|&i| {
            let t = traj.frames[i].t;
            t >= t_from && t_est - t >= tau_min && t_est - t > 0.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeOne {
    #[serde(rename = "M_fit")]
    pub m_fit: f64,
    pub lower: f64,
    /// Sup over the earlier and later halves of the window.
    pub halves: [f64; 2],
    pub frames: usize,
    /// Sup finite and not growing from the earlier to the later half.
    pub type_one: bool,
}

/// Relative growth of the sup between window halves still counted as stable.
pub const TYPE_ONE_HALVING_TOL: f64 = 0.1;

/// `(T_est - t) u(0, t)` over the frames of the last two decades of growth of
/// `m` before the guard.
pub fn type_one_check(traj: &Trajectory, t_est: f64, cfg: &AsymptoticsConfig) -> Result<TypeOne> {
    let idx = frames_between(traj, t_est, f64::NEG_INFINITY, cfg.tau_min);
    let m_last = idx.last().map(|&i| traj.frames[i].m).ok_or_else(|| {
        KsError::InvalidInput("no frame before the blow-up guard".into())
    })?;
    let n = traj.n() as f64;
    let products: Vec<f64> = idx
        .iter()
        .filter(|&&i| traj.frames[i].m >= 1e-2 * m_last)
        .map(|&i| (t_est - traj.frames[i].t) * n * traj.frames[i].m)
        .collect();
    if products.len() < 2 {
        return Err(KsError::InvalidInput(format!("{} frames in the type-I window", products.len())));
    }
    let sup = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m_fit = sup(&products);
    let lower = products.iter().copied().fold(f64::INFINITY, f64::min);
    let half = products.len() / 2;
    let halves = [sup(&products[..half]), sup(&products[half..])];
    let type_one = m_fit.is_finite() && halves[1] <= halves[0] * (1.0 + TYPE_ONE_HALVING_TOL);
    Ok(TypeOne { m_fit, lower, halves, frames: products.len(), type_one })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Macroscopic {
    pub matched_alpha: f64,
    /// `sup |eps|` on the neighbourhoods `B_{rho/2^k} x [T - delta/2^k, T)`,
    /// `k = 0, 1, 2`.
    pub eps_sup: [f64; 3],
    pub points: [usize; 3],
    pub decreasing: bool,
    pub passed: bool,
    /// Points skipped because the profile is undefined there.
    pub skipped: usize,
}

/// `eps = u (T - t) / U(|x| / sqrt(T - t)) - 1` on the ladder of shrinking
/// neighbourhoods of `(0, T)`.
pub fn macroscopic_ratio(
    traj: &Trajectory,
    densities: &[Vec<f64>],
    profile: &ProfileSolution,
    t_est: f64,
    cfg: &AsymptoticsConfig,
) -> Result<Macroscopic> {
    cfg.validate()?;
    let nodes = traj.grid.nodes();
    let mut eps_sup = [0.0f64; 3];
    let mut points = [0usize; 3];
    let mut skipped = 0;
    for i in frames_between(traj, t_est, t_est - cfg.delta, cfg.tau_min) {
        let tau = t_est - traj.frames[i].t;
        let root = tau.sqrt();
        for (r, u) in nodes.iter().zip(&densities[i]).take_while(|(r, _)| **r <= cfg.rho) {
            let Some(big_u) = profile.u_at(r / root).filter(|v| *v > 0.0) else {
                skipped += 1;
                continue;
            };
            let eps = (u * tau / big_u - 1.0).abs();
            for k in 0..3 {
                let scale = 0.5f64.powi(k as i32);
                if *r <= cfg.rho * scale && tau <= cfg.delta * scale {
                    eps_sup[k] = eps_sup[k].max(eps);
                    points[k] += 1;
                }
            }
        }
    }
    if points[2] == 0 {
        return Err(KsError::InvalidInput("innermost neighbourhood holds no saved point".into()));
    }
    let decreasing = eps_sup[1] <= eps_sup[0] && eps_sup[2] <= eps_sup[1];
    Ok(Macroscopic {
        matched_alpha: profile.alpha(),
        eps_sup,
        points,
        decreasing,
        passed: decreasing && eps_sup[2] < cfg.eps_tol,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSided {
    #[serde(rename = "C1_fit")]
    pub c1_fit: f64,
    #[serde(rename = "C2_fit")]
    pub c2_fit: f64,
}

impl TwoSided {
    pub fn ratio(&self) -> f64 {
        self.c2_fit / self.c1_fit
    }
}

fn late_window(traj: &Trajectory, t_est: f64, cfg: &AsymptoticsConfig) -> Result<Vec<usize>> {
    let idx = frames_between(traj, t_est, 0.5 * t_est, cfg.tau_min);
    if idx.is_empty() {
        return Err(KsError::InvalidInput("no frame in [T/2, T - tau_min]".into()));
    }
    Ok(idx)
}

/// Inf and sup of `(T - t + |x|^2) u` over `B_rho x [T/2, last]`.
pub fn two_sided_fit(traj: &Trajectory, densities: &[Vec<f64>], t_est: f64, cfg: &AsymptoticsConfig) -> Result<TwoSided> {
    let nodes = traj.grid.nodes();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in late_window(traj, t_est, cfg)? {
        let tau = t_est - traj.frames[i].t;
        for (r, u) in nodes.iter().zip(&densities[i]).take_while(|(r, _)| **r <= cfg.rho) {
            let v = (tau + r * r) * u;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok(TwoSided { c1_fit: lo, c2_fit: hi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalProfile {
    #[serde(rename = "L_fit")]
    pub l_fit: f64,
    #[serde(rename = "L_range")]
    pub l_range: [f64; 2],
    /// Inner radius of the fitted decade.
    pub eps_r: f64,
}

/// Median of `|x|^2 u` over the innermost decade `[eps_r, 10 eps_r]` of nodes
/// where `|u_t| tau < tol u`. `None` when no such decade exists.
pub fn fit_final_profile(nodes: &[f64], u: &[f64], ut: &[f64], tau: f64, tol: f64) -> Option<FinalProfile> {
    let frozen: Vec<bool> = u.iter().zip(ut).map(|(u, d)| *u > 0.0 && d.abs() * tau < tol * u).collect();
    let r_max = *nodes.last()?;
    // Walk inward from the outermost decade start; keep the innermost start
    // whose whole decade is frozen.
    let mut best = None;
    let mut run_end = nodes.len();
    for i in (1..nodes.len()).rev() {
        if !frozen[i] {
            run_end = i;
            continue;
        }
        let top = 10.0 * nodes[i];
        if top > r_max {
            continue;
        }
        // The decade [r_i, 10 r_i] lies in the frozen run [i, run_end).
        let j = nodes.partition_point(|r| *r <= top);
        if j <= run_end {
            best = Some((i, j));
        }
    }
    let (i, j) = best?;
    let mut vals: Vec<f64> = (i..j).map(|k| nodes[k] * nodes[k] * u[k]).collect();
    vals.sort_by(f64::total_cmp);
    let mid = vals.len() / 2;
    let median = if vals.len() % 2 == 1 { vals[mid] } else { 0.5 * (vals[mid - 1] + vals[mid]) };
    Some(FinalProfile { l_fit: median, l_range: [vals[0], vals[vals.len() - 1]], eps_r: nodes[i] })
}

/// Minimal growth `m(last) / m(0)` required for the final-profile fit.
pub const FINAL_PROFILE_MIN_GROWTH: f64 = 1e4;

/// Final-profile constant from the last admissible frame, with `u_t` from the
/// difference to the previous frame.
pub fn final_profile_fit(
    traj: &Trajectory,
    densities: &[Vec<f64>],
    t_est: f64,
    cfg: &AsymptoticsConfig,
) -> Result<Option<FinalProfile>> {
    let idx = frames_between(traj, t_est, f64::NEG_INFINITY, cfg.tau_min);
    if idx.len() < 2 {
        return Err(KsError::InvalidInput("need two frames before the guard".into()));
    }
    let (a, b) = (idx[idx.len() - 2], idx[idx.len() - 1]);
    let (fa, fb) = (&traj.frames[a], &traj.frames[b]);
    if fb.m < FINAL_PROFILE_MIN_GROWTH * traj.frames[0].m {
        return Err(KsError::InvalidInput(format!(
            "last frame has m/m(0) = {:.3e} < {FINAL_PROFILE_MIN_GROWTH:e}",
            fb.m / traj.frames[0].m
        )));
    }
    let dt = fb.t - fa.t;
    let ut: Vec<f64> = densities[b].iter().zip(&densities[a]).map(|(x, y)| (x - y) / dt).collect();
    Ok(fit_final_profile(traj.grid.nodes(), &densities[b], &ut, t_est - fb.t, cfg.frozen_tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtBound {
    /// `sup |x|^4 |u_t|` with central differences over neighbouring frames.
    pub sup: f64,
    /// The same with every other frame, i.e. the frame interval doubled.
    pub sup_coarse: f64,
    pub stable: bool,
    /// False for data that is not concentrated at the origin.
    pub applicable: bool,
}

/// Relative change of the `u_t` bound under frame-interval halving still
/// counted as stable.
pub const UT_STABILITY_TOL: f64 = 0.1;

fn ut_sup(traj: &Trajectory, densities: &[Vec<f64>], idx: &[usize], eta: f64) -> f64 {
    let nodes = traj.grid.nodes();
    let mut sup = 0.0f64;
    for k in idx.windows(3) {
        let (a, b, c) = (k[0], k[1], k[2]);
        let (ta, tb, tc) = (traj.frames[a].t, traj.frames[b].t, traj.frames[c].t);
        for j in 1..nodes.len() {
            let r = nodes[j];
            if r > eta {
                break;
            }
            // Derivative at tb of the quadratic through the three frames.
            let (ua, ub, uc) = (densities[a][j], densities[b][j], densities[c][j]);
            let d = ua * (tb - tc) / ((ta - tb) * (ta - tc))
                + ub * ((tb - ta) + (tb - tc)) / ((tb - ta) * (tb - tc))
                + uc * (tb - ta) / ((tc - ta) * (tc - tb));
            sup = sup.max(r.powi(4) * d.abs());
        }
    }
    sup
}

/// `sup |x|^4 |u_t|` over `0 < |x| <= eta` and the frames in `[T/2, last]`.
pub fn ut_bound_check(traj: &Trajectory, densities: &[Vec<f64>], t_est: f64, cfg: &AsymptoticsConfig) -> Result<UtBound> {
    let idx = late_window(traj, t_est, cfg)?;
    if idx.len() < 5 {
        return Err(KsError::InvalidInput(format!("{} late frames, need 5", idx.len())));
    }
    let last = &densities[*idx.last().expect("non-empty")];
    let j_eta = traj.grid.nodes().partition_point(|r| *r <= cfg.eta).saturating_sub(1);
    let applicable = last[0] > 0.0 && last[j_eta] < 0.1 * last[0];
    let sup = ut_sup(traj, densities, &idx, cfg.eta);
    let every_other: Vec<usize> = idx.iter().step_by(2).copied().collect();
    let sup_coarse = ut_sup(traj, densities, &every_other, cfg.eta);
    let stable = sup.is_finite() && (sup - sup_coarse).abs() <= UT_STABILITY_TOL * sup.max(f64::MIN_POSITIVE);
    Ok(UtBound { sup, sup_coarse, stable, applicable })
}

/// `max over frames of max |w_r| / m^(3/2)` with one-sided differences.
pub fn gradient_bound_check(traj: &Trajectory) -> f64 {
    let nodes = traj.grid.nodes();
    traj.frames
        .iter()
        .filter(|f| f.m > 0.0)
        .map(|f| {
            let g = nodes
                .windows(2)
                .zip(f.w.windows(2))
                .map(|(r, w)| ((w[1] - w[0]) / (r[1] - r[0])).abs())
                .fold(0.0, f64::max);
            g / f.m.powf(1.5)
        })
        .fold(0.0, f64::max)
}

/// `inf u(x, t) (1/u(0, t) + |x|^2)` over `B_rho x [T/2, last]`.
pub fn lower_bound_monotone_check(
    traj: &Trajectory,
    densities: &[Vec<f64>],
    t_est: f64,
    cfg: &AsymptoticsConfig,
) -> Result<f64> {
    let nodes = traj.grid.nodes();
    let mut inf = f64::INFINITY;
    for i in late_window(traj, t_est, cfg)? {
        let u = &densities[i];
        if !(u[0] > 0.0) {
            continue;
        }
        for (r, v) in nodes.iter().zip(u).take_while(|(r, _)| **r <= cfg.rho) {
            inf = inf.min(v * (1.0 / u[0] + r * r));
        }
    }
    Ok(inf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    #[serde(rename = "T_est")]
    pub t_est: f64,
    #[serde(rename = "T_err")]
    pub t_err: f64,
    #[serde(rename = "T_err_fit")]
    pub t_err_fit: f64,
    pub type_one: Option<TypeOne>,
    pub macroscopic: Option<Macroscopic>,
    pub two_sided: Option<TwoSided>,
    pub final_profile: Option<FinalProfile>,
    /// `(n - 2) Lambda` of the matched profile.
    pub l_expected: Option<f64>,
    pub ut_bound: Option<UtBound>,
    pub gradient_bound: f64,
    pub lower_bound_monotone: Option<f64>,
    pub flags: Vec<String>,
    pub config_hash: String,
    pub version: String,
}

fn keep<T>(flags: &mut Vec<String>, name: &str, r: Result<T>) -> Option<T> {
    r.map_err(|e| flags.push(format!("{name}: {e}"))).ok()
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Every check of this module on one trajectory. Failed or inapplicable checks
/// leave their field empty and add a flag; `matched` is the profile picked by
/// the similarity analysis.
pub fn build_report(
    traj: &Trajectory,
    est: &BlowupEstimate,
    matched: Option<&ProfileSolution>,
    cfg: &AsymptoticsConfig,
    config_hash: &str,
) -> BlowupReport {
    let densities = traj.densities();
    let t = est.t_est;
    let mut flags = Vec::new();
    let f = &mut flags;
    let type_one = keep(f, "type_one", type_one_check(traj, t, cfg));
    let macroscopic = match matched {
        Some(p) => keep(f, "macroscopic", macroscopic_ratio(traj, &densities, p, t, cfg)),
        None => keep(f, "macroscopic", Err(KsError::InvalidInput("no matched profile".into()))),
    };
    let two_sided = keep(f, "two_sided", two_sided_fit(traj, &densities, t, cfg));
    let final_profile = keep(f, "final_profile", final_profile_fit(traj, &densities, t, cfg)).flatten();
    let ut_bound = keep(f, "ut_bound", ut_bound_check(traj, &densities, t, cfg));
    let lower_bound_monotone = keep(f, "lower_bound_monotone", lower_bound_monotone_check(traj, &densities, t, cfg));
    let l_expected = matched.and_then(|p| p.lambda).map(|l| (traj.n() as f64 - 2.0) * l);

    if let Some(t1) = &type_one {
        if !t1.type_one {
            flags.push("type_one: sup grows under window halving".into());
        }
    }
    if let Some(m) = &macroscopic {
        if !m.passed {
            flags.push(format!("macroscopic: eps_sup {:?} not decreasing below {}", m.eps_sup, cfg.eps_tol));
        }
        if m.skipped > 0 {
            flags.push(format!("macroscopic: {} points outside the profile range", m.skipped));
        }
    }
    if final_profile.is_none() && !flags.iter().any(|f| f.starts_with("final_profile")) {
        flags.push("final_profile: Inconclusive, no frozen decade".into());
    }
    if let (Some(fp), Some(l)) = (&final_profile, l_expected) {
        if (fp.l_fit - l).abs() > 0.1 * fp.l_fit {
            flags.push(format!("final_profile: L_fit {} differs from (n-2) Lambda = {l} by more than 10%", fp.l_fit));
        }
    }
    if let Some(ut) = &ut_bound {
        if !ut.applicable {
            flags.push("ut_bound: NotApplicable, data not concentrated".into());
        } else if !ut.stable {
            flags.push("ut_bound: unstable under frame-interval halving".into());
        }
    }
    BlowupReport {
        t_est: t,
        t_err: est.t_err,
        t_err_fit: est.t_err_fit,
        type_one,
        macroscopic,
        two_sided,
        final_profile,
        l_expected,
        ut_bound,
        gradient_bound: gradient_bound_check(traj),
        lower_bound_monotone,
        flags,
        config_hash: config_hash.to_string(),
        version: version_string(),
    }
}

pub fn write_report<W: Write>(mut out: W, report: &BlowupReport) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| KsError::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}
