//! Orchestration of the profile, simulation, rescaling and verification
//! stages, and of parameter sweeps.
//!
//! Every artifact embeds the hash of the parsed configuration. Wall-clock
//! timestamps are written only to the `run.log` sidecar.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{build_report, version_string, write_report, BlowupReport};
use crate::config::ExperimentConfig;
use crate::error::{KsError, Result};
use crate::profiles::{build_atlas, integrate_w1, write_atlas, AtlasEntry, ProfileSolution};
use crate::radial::{
    build_mass_from_u0, check_conservation_and_monotonicity, check_i2, run_to_blowup, write_frame, write_index,
    BlowupEstimate, FrameMeta, I2Check, RunOutcome, Trajectory,
};
use crate::similarity::{analyze, write_rescaled, SimilarityAnalysis, SteadyVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Profiles,
    Simulate,
    Rescale,
    Verify,
    Sweep,
    All,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Profiles => "profiles",
            Command::Simulate => "simulate",
            Command::Rescale => "rescale",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
            Command::All => "all",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// A module error with the stage it came from and the last artifact written.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {error} (last artifact: {})", last_artifact.as_ref().map_or("none".into(), |p| p.display().to_string()))]
pub struct PipelineError {
    pub stage: &'static str,
    pub last_artifact: Option<PathBuf>,
    pub error: KsError,
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match (&self.error, self.stage) {
            (KsError::InvalidInput(_), "config") => EXIT_CONFIG,
            _ => EXIT_SOLVER,
        }
    }
}

/// Result of a completed pipeline.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutcome {
    /// Checks that did not hold; any entry makes the exit status 3.
    pub failures: Vec<String>,
    /// Checks that were not applicable or inconclusive.
    pub notes: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_VERIFY
        }
    }
}

/// Output root: `KSLAB_OUT` if set, else the `output` key.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("KSLAB_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output),
    }
}

/// Writes artifacts under one directory and remembers the last one.
struct Emitter {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
    log: Option<File>,
}

impl Emitter {
    fn new(dir: &Path, hash: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let log = fs::OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
        Ok(Emitter { dir: dir.to_path_buf(), hash: hash.to_string(), written: Vec::new(), log: Some(log) })
    }

    fn log(&mut self, stage: &str, msg: &str) {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        if let Some(f) = self.log.as_mut() {
            let _ = writeln!(f, "{now:.3} {stage} {msg}");
        }
    }

    fn write(&mut self, rel: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(&path)?);
        body(&mut out)?;
        out.flush()?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        self.write(rel, |out| {
            serde_json::to_writer_pretty(&mut *out, value).map_err(|e| KsError::Io(e.to_string()))?;
            writeln!(out)?;
            Ok(())
        })
    }

    fn fail(&self, stage: &'static str, error: KsError) -> PipelineError {
        PipelineError { stage, last_artifact: self.written.last().cloned(), error }
    }
}

/// Located profiles of one dimension.
pub fn atlas_for(cfg: &ExperimentConfig, n: u32) -> Result<Vec<(AtlasEntry, ProfileSolution)>> {
    build_atlas(n, cfg.alpha_lo, cfg.alpha_hi, cfg.alpha_tol, cfg.profile_y_max, cfg.scan())
}

/// Run the solver from the configured initial data.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(Trajectory, RunOutcome, I2Check)> {
    let solver = cfg.solver();
    let grid = solver.build_grid()?;
    let data = cfg.initial_data()?;
    let u0 = data.sample(&grid);
    let i2 = check_i2(&u0, data.derivative(&grid).as_deref(), &grid)?;
    let initial = build_mass_from_u0(&u0, &grid)?;
    let (traj, outcome) = run_to_blowup(initial, &grid, &solver)?;
    Ok((traj, outcome, i2))
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary<'a> {
    outcome: &'a RunOutcome,
    steps: usize,
    frames: usize,
    grid_nodes: usize,
    events: Vec<String>,
    mass_drift_until_1e3: f64,
    conserving: bool,
    monotone_w: bool,
    monotone_u: bool,
    i2: &'a I2Check,
    config_hash: &'a str,
    version: String,
}

#[derive(Debug, Clone, Serialize)]
struct VerdictFile<'a> {
    #[serde(rename = "T_est")]
    t_est: f64,
    #[serde(rename = "T_err_fit")]
    t_err_fit: f64,
    states: usize,
    s_range: Option<[f64; 2]>,
    verdict: &'a SteadyVerdict,
    perturbed: &'a [SteadyVerdict; 2],
    config_hash: &'a str,
    version: String,
}

fn write_simulation(em: &mut Emitter, cfg: &ExperimentConfig, traj: &Trajectory, outcome: &RunOutcome, i2: &I2Check) -> Result<()> {
    let nodes = traj.grid.nodes();
    let last = traj.frames.len() - 1;
    for (k, f) in traj.frames.iter().enumerate() {
        if k % cfg.frame_stride != 0 && k != last {
            continue;
        }
        let meta = FrameMeta {
            n: cfg.n,
            radius: cfg.radius,
            mode: cfg.mode.as_str().to_string(),
            config_hash: em.hash.clone(),
            frame_id: k,
        };
        em.write(&format!("frames/frame_{k:06}.csv"), |out| write_frame(out, f, nodes, &meta))?;
    }
    let hash = em.hash.clone();
    em.write("index.csv", |out| write_index(out, traj, &hash))?;
    let mono = check_conservation_and_monotonicity(traj, cfg.tol);
    let summary = RunSummary {
        outcome,
        steps: traj.steps.len() - 1,
        frames: traj.frames.len(),
        grid_nodes: traj.grid.len(),
        events: traj.events.iter().map(|e| format!("{e:?}")).collect(),
        mass_drift_until_1e3: mono.mass_drift_until(1e3),
        conserving: mono.conserving,
        monotone_w: mono.monotone_w,
        monotone_u: mono.monotone_u,
        i2,
        config_hash: &hash,
        version: version_string(),
    };
    em.json("run.json", &summary)?;
    Ok(())
}

fn write_profiles(em: &mut Emitter, cfg: &ExperimentConfig) -> Result<Vec<(AtlasEntry, ProfileSolution)>> {
    let dims = cfg.atlas_dimensions();
    let per_n: Vec<Vec<(AtlasEntry, ProfileSolution)>> =
        dims.par_iter().map(|&n| atlas_for(cfg, n)).collect::<Result<Vec<_>>>()?;
    let all: Vec<(AtlasEntry, ProfileSolution)> = per_n.into_iter().flatten().collect();
    let entries: Vec<AtlasEntry> = all.iter().map(|(e, _)| e.clone()).collect();
    let hash = em.hash.clone();
    em.write("profiles/atlas.txt", |out| write_atlas(out, &entries, &hash))?;
    let mut counter = std::collections::BTreeMap::<u32, usize>::new();
    for (_, sol) in &all {
        let k = counter.entry(sol.n()).or_insert(0);
        let name = format!("profiles/profile_n{}_{:02}.csv", sol.n(), *k);
        *k += 1;
        em.write(&name, |out| {
            writeln!(out, "# n={}", sol.n())?;
            writeln!(out, "# alpha={:e}", sol.alpha())?;
            writeln!(out, "# classification={}", sol.classification.tag())?;
            writeln!(out, "# config_hash={hash}")?;
            writeln!(out, "y,psi,dpsi,u")?;
            for i in 0..sol.y.len() {
                writeln!(out, "{:e},{:e},{:e},{:e}", sol.y[i], sol.psi[i], sol.dpsi[i], sol.u[i])?;
            }
            Ok(())
        })?;
    }
    let pairs = dims
        .par_iter()
        .map(|&n| integrate_w1(n, cfg.w1_r_max, cfg.tol.min(1e-10)))
        .collect::<Result<Vec<_>>>()?;
    em.write("profiles/w1_zeros.csv", |out| {
        writeln!(out, "# config_hash={hash}")?;
        writeln!(out, "n,index,r")?;
        for p in &pairs {
            for (k, r) in p.zeros.iter().enumerate() {
                writeln!(out, "{},{k},{r:e}", p.n)?;
            }
        }
        Ok(())
    })?;
    Ok(all)
}

struct Analysis {
    est: BlowupEstimate,
    similarity: SimilarityAnalysis,
    report: BlowupReport,
}

fn rescale_and_verify(
    em: &mut Emitter,
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    outcome: &RunOutcome,
    profiles: &[ProfileSolution],
    with_report: bool,
) -> std::result::Result<Analysis, PipelineError> {
    let est = match outcome {
        RunOutcome::Blowup(e) => *e,
        RunOutcome::NoBlowup { reason, .. } => {
            return Err(em.fail("rescale", KsError::NoFiniteLimit(format!("no blow-up: {reason}"))))
        }
        RunOutcome::Diverged { error } => return Err(em.fail("rescale", error.clone())),
    };
    let sim = analyze(traj, &est, profiles, &cfg.steady()).map_err(|e| em.fail("rescale", e))?;
    let hash = em.hash.clone();
    let mut last_s = f64::NEG_INFINITY;
    let count = sim.states.len();
    for (k, st) in sim.states.iter().enumerate() {
        if st.s - last_s < cfg.rescaled_ds_out && k + 1 != count {
            continue;
        }
        last_s = st.s;
        em.write(&format!("rescaled/state_{k:05}.csv"), |out| write_rescaled(out, st, &hash))
            .map_err(|e| em_fail_io("rescale", e))?;
    }
    let vf = VerdictFile {
        t_est: sim.t_est,
        t_err_fit: sim.t_err_fit,
        states: count,
        s_range: sim.states.first().zip(sim.states.last()).map(|(a, b)| [a.s, b.s]),
        verdict: &sim.verdict,
        perturbed: &sim.perturbed,
        config_hash: &hash,
        version: version_string(),
    };
    em.json("verdict.json", &vf).map_err(|e| em.fail("rescale", e))?;
    em.log("rescale", &format!("{count} rescaled states"));

    let matched = sim.verdict.matched_alpha.and_then(|a| profiles.iter().find(|p| p.alpha() == a));
    let acfg = cfg.asymptotics().with_guard(&est, cfg.guard);
    let report = build_report(traj, &est, matched, &acfg, &hash);
    if with_report {
        em.write("report.json", |out| write_report(out, &report)).map_err(|e| em.fail("verify", e))?;
        em.log("verify", "report written");
    }
    Ok(Analysis { est, similarity: sim, report })
}

fn em_fail_io(stage: &'static str, error: KsError) -> PipelineError {
    PipelineError { stage, last_artifact: None, error }
}

/// Split the verdict and report into failed checks and notes.
fn classify(a: &Analysis, out: &mut PipelineOutcome) {
    let v = &a.similarity.verdict;
    if let Some(reason) = &v.inconclusive {
        out.notes.push(format!("similarity: Inconclusive, {reason}"));
    } else if !v.converged {
        out.failures.push(format!(
            "similarity: not converged (tv {:.3e}, residual {:.3e}, match {:.3e})",
            v.tv_origin, v.steady_residual, v.match_error
        ));
    } else if v.t_sensitivity_stable == Some(false) {
        out.failures.push("similarity: verdict changes under T_est -+ T_err_fit".into());
    }
    for f in &a.report.flags {
        if f.contains("NotApplicable") || f.contains("Inconclusive") {
            out.notes.push(f.clone());
        } else {
            out.failures.push(f.clone());
        }
    }
    if !a.est.slope.is_finite() {
        out.failures.push("blow-up fit: non-finite slope".into());
    }
}

/// Run one command (other than `sweep`) with artifacts under `dir`.
pub fn run_stage(command: Command, cfg: &ExperimentConfig, dir: &Path) -> std::result::Result<PipelineOutcome, PipelineError> {
    let hash = cfg.hash();
    let mut em = Emitter::new(dir, &hash).map_err(|e| em_fail_io("setup", e))?;
    em.log(command.name(), &format!("start config_hash={hash}"));
    let mut outcome = PipelineOutcome::default();
    em.write("config.txt", |out| {
        writeln!(out, "# config_hash={hash}")?;
        out.write_all(cfg.canonical().as_bytes())?;
        Ok(())
    })
    .map_err(|e| em_fail_io("setup", e))?;

    let profiles: Vec<ProfileSolution> = match command {
        Command::Profiles | Command::All => {
            let all = write_profiles(&mut em, cfg).map_err(|e| em.fail("profiles", e))?;
            em.log("profiles", &format!("{} profiles", all.len()));
            all.into_iter().filter(|(_, p)| p.n() == cfg.n).map(|(_, p)| p).collect()
        }
        Command::Rescale | Command::Verify => {
            atlas_for(cfg, cfg.n).map_err(|e| em.fail("profiles", e))?.into_iter().map(|(_, p)| p).collect()
        }
        _ => Vec::new(),
    };
    if command == Command::Profiles {
        outcome.artifacts = em.written;
        return Ok(outcome);
    }
    if command == Command::Sweep {
        return Err(em.fail("config", KsError::InvalidInput("use run_sweep for sweeps".into())));
    }

    let (traj, run, i2) = simulate(cfg).map_err(|e| em.fail("simulate", e))?;
    write_simulation(&mut em, cfg, &traj, &run, &i2).map_err(|e| em.fail("simulate", e))?;
    em.log("simulate", &format!("{} steps", traj.steps.len() - 1));
    if let RunOutcome::Diverged { error } = &run {
        return Err(em.fail("simulate", error.clone()));
    }
    if command == Command::Simulate {
        outcome.artifacts = em.written;
        return Ok(outcome);
    }
    let with_report = matches!(command, Command::Verify | Command::All);
    let analysis = rescale_and_verify(&mut em, cfg, &traj, &run, &profiles, with_report)?;
    if with_report {
        classify(&analysis, &mut outcome);
    } else {
        let mut tmp = PipelineOutcome::default();
        classify(&analysis, &mut tmp);
        let similarity = |f: &String| f.starts_with("similarity");
        outcome.notes = tmp.notes.into_iter().filter(similarity).collect();
        outcome.failures = tmp.failures.into_iter().filter(similarity).collect();
    }
    em.log(command.name(), &format!("done, {} failures", outcome.failures.len()));
    outcome.artifacts = em.written;
    Ok(outcome)
}

/// One row of a sweep summary.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub overrides: Vec<(String, String)>,
    pub dir: PathBuf,
    pub exit_code: i32,
    pub report: Option<BlowupReport>,
    pub matched_alpha: Option<f64>,
    pub error: Option<String>,
}

fn key_cmp(a: &[(String, String)], b: &[(String, String)]) -> std::cmp::Ordering {
    for ((_, x), (_, y)) in a.iter().zip(b) {
        let o = match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(p), Ok(q)) => p.total_cmp(&q),
            _ => x.cmp(y),
        };
        if o.is_ne() {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

fn row_dir_name(overrides: &[(String, String)]) -> String {
    let mut s = String::from("row");
    for (k, v) in overrides {
        let _ = write!(s, "_{k}-{v}");
    }
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn run_row(base: &ExperimentConfig, overrides: Vec<(String, String)>, root: &Path) -> SweepRow {
    let dir = root.join(row_dir_name(&overrides));
    let row_cfg = ExperimentConfig { sweep: Default::default(), ..base.clone() }.with_overrides(&overrides);
    let cfg = match row_cfg {
        Ok(c) => c,
        Err(e) => {
            return SweepRow { overrides, dir, exit_code: EXIT_CONFIG, report: None, matched_alpha: None, error: Some(e.to_string()) }
        }
    };
    let result = (|| -> std::result::Result<(Analysis, PipelineOutcome), PipelineError> {
        let profiles: Vec<ProfileSolution> =
            atlas_for(&cfg, cfg.n).map_err(|e| em_fail_io("profiles", e))?.into_iter().map(|(_, p)| p).collect();
        let mut em = Emitter::new(&dir, &cfg.hash()).map_err(|e| em_fail_io("setup", e))?;
        let (traj, run, i2) = simulate(&cfg).map_err(|e| em.fail("simulate", e))?;
        write_simulation(&mut em, &cfg, &traj, &run, &i2).map_err(|e| em.fail("simulate", e))?;
        let a = rescale_and_verify(&mut em, &cfg, &traj, &run, &profiles, true)?;
        let mut out = PipelineOutcome::default();
        classify(&a, &mut out);
        Ok((a, out))
    })();
    match result {
        Ok((a, out)) => SweepRow {
            overrides,
            dir,
            exit_code: out.exit_code(),
            matched_alpha: a.similarity.verdict.matched_alpha,
            report: Some(a.report),
            error: (!out.failures.is_empty()).then(|| out.failures.join("; ")),
        },
        Err(e) => SweepRow {
            overrides,
            dir,
            exit_code: e.exit_code(),
            report: None,
            matched_alpha: None,
            error: Some(e.to_string()),
        },
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Sweep axes that scale the initial data up.
pub const DATA_SIZE_KEYS: &[&str] = &["amplitude", "c", "kappa"];

/// Whether `T_est` is nonincreasing along the rows, which are sorted by a
/// single data-size axis. Rows without a blow-up count as `T = inf`.
pub fn t_est_nonincreasing(rows: &[SweepRow]) -> bool {
    let ts: Vec<f64> = rows.iter().map(|r| r.report.as_ref().map_or(f64::INFINITY, |r| r.t_est)).collect();
    ts.windows(2).all(|w| w[1] <= w[0])
}

/// Run every row of the sweep grid in parallel and merge the reports into
/// `summary.csv`, sorted by the grid key.
pub fn run_sweep(cfg: &ExperimentConfig, root: &Path) -> std::result::Result<Vec<SweepRow>, PipelineError> {
    let hash = cfg.hash();
    let mut em = Emitter::new(root, &hash).map_err(|e| em_fail_io("setup", e))?;
    let mut grid = cfg.sweep_rows();
    grid.sort_by(|a, b| key_cmp(a, b));
    em.log("sweep", &format!("{} rows", grid.len()));
    let rows: Vec<SweepRow> = grid.into_par_iter().map(|o| run_row(cfg, o, root)).collect();
    let axes: Vec<String> = cfg.sweep.keys().cloned().collect();
    let monotone = match axes.as_slice() {
        [axis] if DATA_SIZE_KEYS.contains(&axis.as_str()) => Some(t_est_nonincreasing(&rows)),
        _ => None,
    };
    em.write("summary.csv", |out| {
        writeln!(out, "# config_hash={hash}")?;
        if let Some(m) = monotone {
            writeln!(out, "# t_est_nonincreasing={m}")?;
        }
        let mut header: Vec<String> = axes.clone();
        header.extend(
            [
                "exit_code", "T_est", "T_err", "M_fit", "lower", "type_one", "matched_alpha", "eps_inner", "C1_fit",
                "C2_fit", "L_fit", "L_expected", "gradient_bound", "row_hash", "error",
            ]
            .map(String::from),
        );
        writeln!(out, "{}", header.join(","))?;
        for row in &rows {
            let mut cells: Vec<String> = row.overrides.iter().map(|(_, v)| v.clone()).collect();
            let r = row.report.as_ref();
            let t1 = r.and_then(|r| r.type_one.as_ref());
            cells.push(row.exit_code.to_string());
            cells.push(fmt_opt(r.map(|r| r.t_est)));
            cells.push(fmt_opt(r.map(|r| r.t_err)));
            cells.push(fmt_opt(t1.map(|t| t.m_fit)));
            cells.push(fmt_opt(t1.map(|t| t.lower)));
            cells.push(t1.map_or(String::new(), |t| t.type_one.to_string()));
            cells.push(fmt_opt(row.matched_alpha));
            cells.push(fmt_opt(r.and_then(|r| r.macroscopic.as_ref()).map(|m| m.eps_sup[2])));
            cells.push(fmt_opt(r.and_then(|r| r.two_sided.as_ref()).map(|t| t.c1_fit)));
            cells.push(fmt_opt(r.and_then(|r| r.two_sided.as_ref()).map(|t| t.c2_fit)));
            cells.push(fmt_opt(r.and_then(|r| r.final_profile.as_ref()).map(|f| f.l_fit)));
            cells.push(fmt_opt(r.and_then(|r| r.l_expected)));
            cells.push(fmt_opt(r.map(|r| r.gradient_bound)));
            cells.push(r.map_or(String::new(), |r| r.config_hash.clone()));
            cells.push(row.error.as_deref().unwrap_or("").replace([',', '\n'], ";"));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    })
    .map_err(|e| em.fail("sweep", e))?;
    if monotone == Some(false) {
        em.log("sweep", "T_est is not nonincreasing along the sweep axis");
    }
    Ok(rows)
}

/// Dispatch a command; returns the process exit status.
pub fn run_pipeline(command: Command, cfg: &ExperimentConfig) -> i32 {
    let root = output_root(cfg);
    let result = if command == Command::Sweep {
        run_sweep(cfg, &root).map(|rows| {
            for r in rows.iter().filter(|r| r.exit_code != EXIT_OK) {
                eprintln!("row {}: exit {} {}", r.dir.display(), r.exit_code, r.error.as_deref().unwrap_or(""));
            }
            println!("sweep: {} rows, summary in {}", rows.len(), root.join("summary.csv").display());
            EXIT_OK
        })
    } else {
        run_stage(command, cfg, &root).map(|out| {
            for n in &out.notes {
                println!("note: {n}");
            }
            for f in &out.failures {
                eprintln!("check failed: {f}");
            }
            println!("{}: {} artifacts in {}", command.name(), out.artifacts.len(), root.display());
            out.exit_code()
        })
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}
