//! Atlas of located profiles, stored as a whitespace-separated text table.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{
    check_quadratic_decay, compute_lambda, find_profiles_with, integrate_profile_with, ProfileParams,
    ProfileSolution, ScanConfig, DEFAULT_S_MAX,
};
use crate::error::{KsError, Result};

pub const ATLAS_VERSION: &str = "atlas-v1";
const COLUMNS: &str = "n alpha classification r_alpha_or_ystar lambda lambda_err sup_y2psi";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasEntry {
    pub n: u32,
    pub alpha: f64,
    pub classification: String,
    pub r_alpha_or_ystar: Option<f64>,
    pub lambda: Option<f64>,
    pub lambda_err: Option<f64>,
    pub sup_y2psi: Option<f64>,
}

impl AtlasEntry {
    pub fn from_solution(sol: &ProfileSolution) -> Self {
        let limit = compute_lambda(sol, DEFAULT_S_MAX).ok();
        AtlasEntry {
            n: sol.n(),
            alpha: sol.alpha(),
            classification: sol.classification.tag().to_string(),
            r_alpha_or_ystar: sol.classification.radius(),
            lambda: limit.map(|l| l.lambda),
            lambda_err: limit.map(|l| l.error),
            sup_y2psi: check_quadratic_decay(sol).ok().filter(|d| d.bounded).map(|d| d.sup_y2psi),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:e}"))
}

fn parse_opt(tok: &str) -> Result<Option<f64>> {
    if tok == "-" {
        return Ok(None);
    }
    tok.parse::<f64>().map(Some).map_err(|e| KsError::InvalidInput(format!("atlas field {tok:?}: {e}")))
}

pub fn write_atlas<W: Write>(mut out: W, entries: &[AtlasEntry], config_hash: &str) -> Result<()> {
    writeln!(out, "# {ATLAS_VERSION}")?;
    if !config_hash.is_empty() {
        writeln!(out, "# config_hash={config_hash}")?;
    }
    writeln!(out, "{COLUMNS}")?;
    for e in entries {
        writeln!(
            out,
            "{} {:e} {} {} {} {} {}",
            e.n,
            e.alpha,
            e.classification,
            fmt_opt(e.r_alpha_or_ystar),
            fmt_opt(e.lambda),
            fmt_opt(e.lambda_err),
            fmt_opt(e.sup_y2psi)
        )?;
    }
    Ok(())
}

pub fn read_atlas<R: BufRead>(input: R) -> Result<Vec<AtlasEntry>> {
    let mut lines = input.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    if first.trim() != format!("# {ATLAS_VERSION}") {
        return Err(KsError::InvalidInput(format!("missing '# {ATLAS_VERSION}' header, got {first:?}")));
    }
    let mut entries = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == COLUMNS {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 7 {
            return Err(KsError::InvalidInput(format!("atlas row has {} fields: {line:?}", tok.len())));
        }
        let bad = |e: std::num::ParseIntError| KsError::InvalidInput(e.to_string());
        let badf = |e: std::num::ParseFloatError| KsError::InvalidInput(e.to_string());
        entries.push(AtlasEntry {
            n: tok[0].parse().map_err(bad)?,
            alpha: tok[1].parse().map_err(badf)?,
            classification: tok[2].to_string(),
            r_alpha_or_ystar: parse_opt(tok[3])?,
            lambda: parse_opt(tok[4])?,
            lambda_err: parse_opt(tok[5])?,
            sup_y2psi: parse_opt(tok[6])?,
        });
    }
    Ok(entries)
}

/// Locate profiles for dimension `n` in `[alpha_lo, alpha_hi]` and return
/// them with their atlas rows. Profiles are sampled on `[0, y_max]`.
pub fn build_atlas(
    n: u32,
    alpha_lo: f64,
    alpha_hi: f64,
    alpha_tol: f64,
    y_max: f64,
    scan: ScanConfig,
) -> Result<Vec<(AtlasEntry, ProfileSolution)>> {
    let alphas = find_profiles_with(n, alpha_lo, alpha_hi, usize::MAX, alpha_tol, scan)?;
    alphas
        .into_iter()
        .map(|a| {
            let sol = integrate_profile_with(ProfileParams::new(n, a, y_max, scan.ode_tol)?, DEFAULT_S_MAX)?;
            Ok((AtlasEntry::from_solution(&sol), sol))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let e = vec![
            AtlasEntry {
                n: 3,
                alpha: 2.0,
                classification: "GlobalPositive".into(),
                r_alpha_or_ystar: None,
                lambda: Some(4.0),
                lambda_err: Some(1e-9),
                sup_y2psi: Some(4.0),
            },
            AtlasEntry {
                n: 3,
                alpha: 1.0 / 3.0,
                classification: "GlobalPositive".into(),
                r_alpha_or_ystar: None,
                lambda: None,
                lambda_err: None,
                sup_y2psi: None,
            },
        ];
        let mut buf = Vec::new();
        write_atlas(&mut buf, &e, "abc").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# atlas-v1\n"));
        assert_eq!(read_atlas(&buf[..]).unwrap(), e);
    }

    #[test]
    fn rejects_missing_header() {
        assert!(read_atlas(&b"n alpha\n"[..]).is_err());
    }
}
