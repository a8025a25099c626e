//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Keys prefixed `sweep.`
//! hold comma-separated override lists for the sweep command.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::AsymptoticsConfig;
use crate::error::{KsError, Result};
use crate::profiles::ScanConfig;
use crate::radial::{read_samples, InitialData, Mode, SolverConfig};
use crate::similarity::SteadyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataKind {
    Constant,
    Gaussian,
    ScaledU0,
    File,
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse::<f64>().map_err(|e| e.to_string()).and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err("not finite".into())
            }
        })
    }
    fn render(&self) -> String {
        format!("{self:e}")
    }
}

impl ConfigValue for u32 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: std::num::ParseIntError| e.to_string())
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        // Accept scientific notation for large counts such as 2e6.
        if let Ok(v) = s.parse::<usize>() {
            return Ok(v);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= 1e15 => Ok(v as usize),
            _ => Err(format!("{s:?} is not a count")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Mode {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Mode::parse(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

impl ConfigValue for DataKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(DataKind::Constant),
            "gaussian" => Ok(DataKind::Gaussian),
            "scaled_u0" => Ok(DataKind::ScaledU0),
            "file" => Ok(DataKind::File),
            _ => Err(format!("unknown data kind {s:?} (constant, gaussian, scaled_u0, file)")),
        }
    }
    fn render(&self) -> String {
        match self {
            DataKind::Constant => "constant",
            DataKind::Gaussian => "gaussian",
            DataKind::ScaledU0 => "scaled_u0",
            DataKind::File => "file",
        }
        .to_string()
    }
}

impl ConfigValue for Vec<u32> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|t| u32::parse_value(t.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! experiment_config {
    ($( $(#[$doc:meta])* $key:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct ExperimentConfig {
            $( $(#[$doc])* pub $key: $ty, )*
            /// Sweep axes: key -> values, in key order.
            pub sweep: BTreeMap<String, Vec<String>>,
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                ExperimentConfig { $( $key: $default, )* sweep: BTreeMap::new() }
            }
        }

        impl ExperimentConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($key) ),*];

            /// Set one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                if let Some(axis) = key.strip_prefix("sweep.") {
                    if !Self::KEYS.contains(&axis) || axis == "output" {
                        return Err(KsError::InvalidInput(format!("cannot sweep unknown key {axis:?}")));
                    }
                    let values: Vec<String> =
                        value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
                    self.sweep.insert(axis.to_string(), values);
                    return Ok(());
                }
                match key {
                    $( stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| KsError::InvalidInput(format!("{key} = {value:?}: {e}")))?;
                    } )*
                    _ => return Err(KsError::InvalidInput(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($key), self.$key.render()) ),*]
            }
        }
    };
}

experiment_config! {
    n: u32 = 3,
    mode: Mode = Mode::Ball,
    radius: f64 = 1.0,
    h0: f64 = 2e-5,
    uniform_extent: f64 = 1e-3,
    growth: f64 = 1.01,
    dt_max: f64 = 1e-2,
    cfl: f64 = 5e-4,
    m_stop_factor: f64 = 1e6,
    save_every: usize = 50,
    max_steps: usize = 4_000_000,
    t_max: f64 = 1e3,
    tol: f64 = 1e-6,
    data: DataKind = DataKind::Gaussian,
    c: f64 = 1.0,
    amplitude: f64 = 16.0,
    width: f64 = 1.0,
    kappa: f64 = 1.05,
    data_file: String = String::new(),
    /// Dimensions of the profile atlas; empty means `n` only.
    atlas_ns: Vec<u32> = Vec::new(),
    alpha_lo: f64 = 0.05,
    alpha_hi: f64 = 4.0,
    alpha_tol: f64 = 1e-9,
    profile_y_max: f64 = 25.0,
    w1_r_max: f64 = 200.0,
    y_max: f64 = 20.0,
    y_check: f64 = 10.0,
    dy: f64 = 0.02,
    ds_min: f64 = 0.02,
    guard: f64 = 1000.0,
    tv_tol: f64 = 0.05,
    residual_tol: f64 = 0.05,
    match_tol: f64 = 0.15,
    rho: f64 = 4e-3,
    delta: f64 = 1e-5,
    eta: f64 = 0.05,
    frozen_tol: f64 = 0.01,
    eps_tol: f64 = 0.05,
    /// Every `frame_stride`-th saved frame is written (the last always).
    frame_stride: usize = 100,
    /// Spacing in `s` of the written rescaled states.
    rescaled_ds_out: f64 = 0.5,
    /// Output root; not part of the hash.
    output: String = "out".to_string(),
}

/// Parse `key = value` lines into ordered pairs.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| KsError::InvalidInput(format!("line {}: expected key = value, got {raw:?}", k + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in parse_lines(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KsError::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Apply `(key, value)` overrides, then validate.
    pub fn with_overrides(mut self, overrides: &[(String, String)]) -> Result<Self> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Canonical text: every field except `output`, sorted by key, followed
    /// by the sweep axes. Parsing it back yields the same configuration.
    pub fn canonical(&self) -> String {
        let mut entries = self.entries();
        entries.retain(|(k, _)| *k != "output");
        entries.sort_by(|a, b| a.0.cmp(b.0));
        let mut s = String::new();
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (k, vs) in &self.sweep {
            let _ = writeln!(s, "sweep.{k} = {}", vs.join(","));
        }
        s
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            n: self.n,
            radius: self.radius,
            h0: self.h0,
            uniform_extent: self.uniform_extent,
            growth: self.growth,
            dt_max: self.dt_max,
            cfl: self.cfl,
            m_stop_factor: self.m_stop_factor,
            save_every: self.save_every,
            max_steps: self.max_steps,
            t_max: self.t_max,
            tol: self.tol,
            mode: self.mode,
            diffusion: true,
        }
    }

    pub fn initial_data(&self) -> Result<InitialData> {
        let data = match self.data {
            DataKind::Constant => InitialData::Constant { c: self.c },
            DataKind::Gaussian => InitialData::Gaussian { amplitude: self.amplitude, width: self.width },
            DataKind::ScaledU0 => InitialData::ScaledProfile { kappa: self.kappa },
            DataKind::File => {
                let file = std::fs::File::open(&self.data_file).map_err(|e| {
                    KsError::InvalidInput(format!("cannot open data_file {:?}: {e}", self.data_file))
                })?;
                let (r, u) = read_samples(std::io::BufReader::new(file))?;
                InitialData::Samples { r, u }
            }
        };
        data.validate()?;
        Ok(data)
    }

    pub fn steady(&self) -> SteadyConfig {
        SteadyConfig {
            y_max: self.y_max,
            y_check: self.y_check,
            dy: self.dy,
            ds_min: self.ds_min,
            guard: self.guard,
            tv_tol: self.tv_tol,
            residual_tol: self.residual_tol,
            match_tol: self.match_tol,
        }
    }

    pub fn asymptotics(&self) -> AsymptoticsConfig {
        AsymptoticsConfig {
            rho: self.rho,
            delta: self.delta,
            eta: self.eta,
            tau_min: 0.0,
            frozen_tol: self.frozen_tol,
            eps_tol: self.eps_tol,
        }
    }

    pub fn scan(&self) -> ScanConfig {
        ScanConfig::default()
    }

    pub fn atlas_dimensions(&self) -> Vec<u32> {
        if self.atlas_ns.is_empty() {
            vec![self.n]
        } else {
            self.atlas_ns.clone()
        }
    }

    /// Check every numeric field against the preconditions of the modules.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KsError::InvalidInput(msg));
        self.solver().validate()?;
        if self.data != DataKind::File {
            self.initial_data()?;
        } else if self.data_file.is_empty() {
            return bad("data = file needs data_file".into());
        }
        for &n in &self.atlas_dimensions() {
            if n < 3 {
                return bad(format!("atlas dimension {n} must be >= 3"));
            }
        }
        if !(self.alpha_lo > 0.0 && self.alpha_hi > self.alpha_lo && self.alpha_tol > 0.0) {
            return bad(format!("alpha range [{}, {}] / tol {}", self.alpha_lo, self.alpha_hi, self.alpha_tol));
        }
        if !(self.profile_y_max > 0.0 && self.w1_r_max > 0.0) {
            return bad("profile_y_max and w1_r_max must be > 0".into());
        }
        if !(self.y_max > 0.0 && self.y_check > 0.0 && self.y_check <= self.y_max && self.dy > 0.0 && self.dy < self.y_max)
        {
            return bad(format!("similarity window y_max={} y_check={} dy={}", self.y_max, self.y_check, self.dy));
        }
        let positive = [
            ("ds_min", self.ds_min),
            ("guard", self.guard),
            ("tv_tol", self.tv_tol),
            ("residual_tol", self.residual_tol),
            ("match_tol", self.match_tol),
            ("rescaled_ds_out", self.rescaled_ds_out),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return bad(format!("{k} = {v} must be > 0"));
        }
        if self.frame_stride == 0 {
            return bad("frame_stride must be >= 1".into());
        }
        self.asymptotics().validate()
    }

    /// Cartesian product of the sweep axes as override lists, in key order
    /// with the last axis varying fastest.
    pub fn sweep_rows(&self) -> Vec<Vec<(String, String)>> {
        if self.sweep.is_empty() || self.sweep.values().any(|v| v.is_empty()) {
            return Vec::new();
        }
        let mut rows: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (k, vs) in &self.sweep {
            rows = rows
                .into_iter()
                .flat_map(|row| {
                    vs.iter().map(move |v| {
                        let mut r = row.clone();
                        r.push((k.clone(), v.clone()));
                        r
                    })
                })
                .collect();
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_text("# comment\nn = 4\nmode = whole  # trailing\namplitude=8\n").unwrap();
        assert_eq!(cfg.n, 4);
        assert_eq!(cfg.mode, Mode::TruncatedWholeSpace);
        assert_eq!(cfg.amplitude, 8.0);
        let again = ExperimentConfig::from_text(&cfg.canonical()).unwrap();
        assert_eq!(again.canonical(), cfg.canonical());
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_output_and_tracks_values() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { output: "elsewhere".into(), ..a.clone() };
        let c = ExperimentConfig { amplitude: 8.0, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_text("nope = 1").is_err());
        assert!(ExperimentConfig::from_text("n = three").is_err());
        assert!(ExperimentConfig::from_text("n = 2").is_err());
        assert!(ExperimentConfig::from_text("radius = -1").is_err());
        assert!(ExperimentConfig::from_text("no equals sign").is_err());
        assert!(ExperimentConfig::from_text("sweep.nope = 1,2").is_err());
    }

    #[test]
    fn sweep_rows_are_a_cartesian_product() {
        let cfg = ExperimentConfig::from_text("sweep.amplitude = 2,4\nsweep.n = 3,4,5").unwrap();
        let rows = cfg.sweep_rows();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0], vec![("amplitude".into(), "2".into()), ("n".into(), "3".into())]);
        assert_eq!(rows[5], vec![("amplitude".into(), "4".into()), ("n".into(), "5".into())]);
        assert!(ExperimentConfig::default().sweep_rows().is_empty());
    }

    #[test]
    fn counts_accept_scientific_notation() {
        let cfg = ExperimentConfig::from_text("max_steps = 2e6").unwrap();
        assert_eq!(cfg.max_steps, 2_000_000);
    }

    proptest::proptest! {
        #[test]
        fn canonical_text_round_trips(
            n in 3u32..10,
            amplitude in 0.0f64..1e3,
            width in 1e-3f64..10.0,
            rho in 1e-4f64..0.5,
            stride in 1usize..1000,
        ) {
            let cfg = ExperimentConfig { n, amplitude, width, rho, frame_stride: stride, ..ExperimentConfig::default() };
            let back = ExperimentConfig::from_text(&cfg.canonical()).unwrap();
            proptest::prop_assert_eq!(&back, &cfg);
            proptest::prop_assert_eq!(back.hash(), cfg.hash());
        }
    }
}
