use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};

/// Largest admissible ratio between adjacent cell widths.
pub const MAX_CELL_RATIO: f64 = 1.2;

/// `a^k - b^k` for `a >= b >= 0` without cancellation.
pub(crate) fn power_difference(a: f64, b: f64, k: u32) -> f64 {
    if b == 0.0 {
        return a.powi(k as i32);
    }
    // (a - b) * sum_j a^j b^(k-1-j)
    let mut sum = 0.0;
    let mut term = b.powi(k as i32 - 1);
    let q = a / b;
    for _ in 0..k {
        sum += term;
        term *= q;
    }
    (a - b) * sum
}

/// Static radial grid with finite-volume weights for the radial Laplacian in
/// `n + 2` dimensions, i.e. with respect to the measure `r^(n+1) dr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    n: u32,
    nodes: Vec<f64>,
    /// Control volume of each node, `int r^(n+1) dr` over its dual cell.
    volume: Vec<f64>,
    /// `r_{i+1/2}^(n+1) / (r_{i+1} - r_i)` for each cell.
    conductance: Vec<f64>,
}

impl RadialGrid {
    pub fn from_nodes(n: u32, nodes: Vec<f64>) -> Result<Self> {
        if n < 3 {
            return Err(KsError::InvalidInput(format!("dimension n={n} must be >= 3")));
        }
        if nodes.len() < 3 || nodes[0] != 0.0 {
            return Err(KsError::InvalidInput("grid needs >= 3 nodes starting at r = 0".into()));
        }
        for k in 1..nodes.len() {
            let h = nodes[k] - nodes[k - 1];
            if !(h > 0.0) || !nodes[k].is_finite() {
                return Err(KsError::InvalidInput(format!("grid nodes not strictly increasing at index {k}")));
            }
            if k >= 2 {
                let prev = nodes[k - 1] - nodes[k - 2];
                let ratio = (h / prev).max(prev / h);
                if ratio > MAX_CELL_RATIO * (1.0 + 1e-9) {
                    return Err(KsError::InvalidInput(format!(
                        "adjacent cell ratio {ratio:.4} exceeds {MAX_CELL_RATIO} at r={:.4e}",
                        nodes[k - 1]
                    )));
                }
            }
        }
        let k = n + 2;
        let m = nodes.len();
        let faces: Vec<f64> = (0..m - 1).map(|i| 0.5 * (nodes[i] + nodes[i + 1])).collect();
        let mut volume = Vec::with_capacity(m);
        volume.push(faces[0].powi(k as i32) / k as f64);
        for i in 1..m - 1 {
            volume.push(power_difference(faces[i], faces[i - 1], k) / k as f64);
        }
        volume.push(power_difference(nodes[m - 1], faces[m - 2], k) / k as f64);
        let conductance =
            (0..m - 1).map(|i| faces[i].powi(n as i32 + 1) / (nodes[i + 1] - nodes[i])).collect();
        Ok(RadialGrid { n, nodes, volume, conductance })
    }

    pub fn uniform(n: u32, radius: f64, cells: usize) -> Result<Self> {
        if !(radius > 0.0) || cells < 2 {
            return Err(KsError::InvalidInput("uniform grid needs radius > 0 and >= 2 cells".to_string()));
        }
        Self::from_nodes(n, (0..=cells).map(|k| radius * k as f64 / cells as f64).collect())
    }

    /// Uniform spacing `h0` on `[0, uniform_extent]`, then geometric growth
    /// with ratio at most `ratio` up to `radius`.
    pub fn graded(n: u32, radius: f64, h0: f64, uniform_extent: f64, ratio: f64) -> Result<Self> {
        if !(radius > 0.0 && h0 > 0.0 && h0 < radius) {
            return Err(KsError::InvalidInput(format!("graded grid needs 0 < h0={h0} < radius={radius}")));
        }
        if !(1.0..=MAX_CELL_RATIO).contains(&ratio) {
            return Err(KsError::InvalidInput(format!("growth ratio {ratio} outside [1, {MAX_CELL_RATIO}]")));
        }
        let k0 = ((uniform_extent.clamp(0.0, radius) / h0).round() as usize).max(1);
        let x0 = k0 as f64 * h0;
        if x0 >= radius || ratio == 1.0 {
            let cells = (radius / h0).round().max(2.0) as usize;
            return Self::uniform(n, radius, cells);
        }
        let rest = radius - x0;
        // Smallest cell count reaching `rest` with ratio `ratio`, then the
        // ratio is lowered so the cells fill `rest` exactly.
        let span = |q: f64, cells: i32| if q == 1.0 { h0 * cells as f64 } else { h0 * q * (q.powi(cells) - 1.0) / (q - 1.0) };
        let mut cells = 1;
        while span(ratio, cells) < rest {
            cells += 1;
        }
        if span(1.0, cells) >= rest {
            let cells = (radius / h0).round().max(2.0) as usize;
            return Self::uniform(n, radius, cells);
        }
        let (mut lo, mut hi) = (1.0, ratio);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if span(mid, cells) < rest {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = hi;
        let mut nodes: Vec<f64> = (0..=k0).map(|k| k as f64 * h0).collect();
        let mut h = h0;
        for _ in 1..cells {
            h *= q;
            let last = *nodes.last().expect("non-empty");
            nodes.push(last + h);
        }
        nodes.push(radius);
        Self::from_nodes(n, nodes)
    }

    /// Same domain with every cell split at its midpoint.
    pub fn refined(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(self.radius());
        Self::from_nodes(self.n, nodes).expect("refinement keeps a valid grid")
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn radius(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }

    pub fn volume(&self) -> &[f64] {
        &self.volume
    }

    pub fn conductance(&self) -> &[f64] {
        &self.conductance
    }

    /// Index of the last node with `r <= x`.
    pub fn locate(&self, x: f64) -> usize {
        self.nodes.partition_point(|r| *r <= x).saturating_sub(1)
    }

    /// Largest adjacent cell-width ratio.
    pub fn max_cell_ratio(&self) -> f64 {
        self.nodes
            .windows(3)
            .map(|w| {
                let (a, b) = (w[1] - w[0], w[2] - w[1]);
                (a / b).max(b / a)
            })
            .fold(1.0, f64::max)
    }

    /// Discrete `(n+2)`-dimensional radial Laplacian of `w`. The last row uses
    /// a zero-flux outer face.
    pub fn laplacian(&self, w: &[f64]) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|i| {
                let right = if i + 1 < m { self.conductance[i] * (w[i + 1] - w[i]) } else { 0.0 };
                let left = if i > 0 { self.conductance[i - 1] * (w[i] - w[i - 1]) } else { 0.0 };
                (right - left) / self.volume[i]
            })
            .collect()
    }
}
