use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{density_from_mass, mass_integral, MassState, Trajectory};
use crate::error::{KsError, Result};

/// Metadata written as `# key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub n: u32,
    pub radius: f64,
    pub mode: String,
    pub config_hash: String,
    pub frame_id: usize,
}

pub fn write_frame<W: Write>(mut out: W, frame: &MassState, nodes: &[f64], meta: &FrameMeta) -> Result<()> {
    let u = density_from_mass(nodes, &frame.w, meta.n);
    writeln!(out, "# t={:e}", frame.t)?;
    writeln!(out, "# n={}", meta.n)?;
    writeln!(out, "# R={:e}", meta.radius)?;
    writeln!(out, "# mode={}", meta.mode)?;
    writeln!(out, "# frame_id={}", meta.frame_id)?;
    writeln!(out, "# config_hash={}", meta.config_hash)?;
    writeln!(out, "r,w,u")?;
    for i in 0..nodes.len() {
        writeln!(out, "{:e},{:e},{:e}", nodes[i], frame.w[i], u[i])?;
    }
    Ok(())
}

/// Trajectory index: `frame_id,t,m,dt,mass_integral`.
pub fn write_index<W: Write>(mut out: W, traj: &Trajectory, config_hash: &str) -> Result<()> {
    let nodes = traj.grid.nodes();
    let n = traj.n();
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "frame_id,t,m,dt,mass_integral")?;
    for (k, f) in traj.frames.iter().enumerate() {
        let i = traj.steps.partition_point(|s| s.t < f.t);
        let dt = traj.steps.get(i).filter(|s| s.t == f.t).map_or(0.0, |s| s.dt);
        let mass = mass_integral(nodes, &density_from_mass(nodes, &f.w, n), n);
        writeln!(out, "{k},{:e},{:e},{:e},{:e}", f.t, f.m, dt, mass)?;
    }
    Ok(())
}

/// Parsed frame file: metadata and the `r, w, u` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFile {
    pub meta: BTreeMap<String, String>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
}

/// Metadata, column names and rows of a CSV table.
type Table = (BTreeMap<String, String>, Vec<String>, Vec<Vec<f64>>);

fn parse_table<R: BufRead>(input: R) -> Result<Table> {
    let mut meta = BTreeMap::new();
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => header = Some(fields.iter().map(|s| s.to_string()).collect()),
            Some(h) => {
                if fields.len() != h.len() {
                    return Err(KsError::InvalidInput(format!("line {}: expected {} fields", lineno + 1, h.len())));
                }
                let row = fields
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| KsError::InvalidInput(format!("line {}: {e}", lineno + 1))))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
        }
    }
    let header = header.ok_or_else(|| KsError::InvalidInput("missing column header".into()))?;
    Ok((meta, header, rows))
}

fn column(header: &[String], rows: &[Vec<f64>], names: &[&str]) -> Option<Vec<f64>> {
    let idx = header.iter().position(|h| names.contains(&h.as_str()))?;
    Some(rows.iter().map(|r| r[idx]).collect())
}

pub fn read_frame<R: BufRead>(input: R) -> Result<FrameFile> {
    let (meta, header, rows) = parse_table(input)?;
    let get = |name: &str| {
        column(&header, &rows, &[name]).ok_or_else(|| KsError::InvalidInput(format!("frame file lacks column {name}")))
    };
    Ok(FrameFile { meta, r: get("r")?, w: get("w")?, u: get("u")? })
}

/// `(r, u)` samples from a CSV with columns `r` and `u` (or `u0`).
pub fn read_samples<R: BufRead>(input: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, header, rows) = parse_table(input)?;
    let r = column(&header, &rows, &["r"]).ok_or_else(|| KsError::InvalidInput("samples lack column r".into()))?;
    let u = column(&header, &rows, &["u", "u0"]).ok_or_else(|| KsError::InvalidInput("samples lack column u".into()))?;
    Ok((r, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::RadialGrid;

    #[test]
    fn frame_round_trip() {
        let g = RadialGrid::uniform(3, 1.0, 20).unwrap();
        let w: Vec<f64> = g.nodes().iter().map(|r| 1.0 / (1.0 + r * r)).collect();
        let f = MassState::new(0.125, w.clone());
        let meta = FrameMeta { n: 3, radius: 1.0, mode: "ball".into(), config_hash: "abc".into(), frame_id: 4 };
        let mut buf = Vec::new();
        write_frame(&mut buf, &f, g.nodes(), &meta).unwrap();
        let back = read_frame(&buf[..]).unwrap();
        assert_eq!(back.w, w);
        assert_eq!(back.r, g.nodes());
        assert_eq!(back.meta["t"], "1.25e-1");
        assert_eq!(back.meta["config_hash"], "abc");
        assert_eq!(back.meta["mode"], "ball");
    }

    #[test]
    fn samples_need_columns() {
        assert!(read_samples(&b"r,v\n0,1\n"[..]).is_err());
        let (r, u) = read_samples(&b"# x\nr,u0\n0,2\n1,1\n"[..]).unwrap();
        assert_eq!((r, u), (vec![0.0, 1.0], vec![2.0, 1.0]));
    }
}
