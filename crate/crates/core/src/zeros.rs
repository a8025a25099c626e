//! Zero number of a sampled function: the count of strict sign changes on an
//! interval, with local refinement around near-zero clusters.

use crate::error::{KsError, Result};

/// Subdivision levels tried when a near-zero cluster is refined (2^level
/// samples across the cluster span).
pub const MAX_REFINE_LEVEL: u32 = 8;

fn class(d: f64, tol: f64) -> i8 {
    if d.abs() <= tol {
        0
    } else if d > 0.0 {
        1
    } else {
        -1
    }
}

/// Count sign changes of `f - g` on the nodes of `x` that lie in `[a, b]`.
///
/// Values within `refine_tol` of zero are undetermined. A run of undetermined
/// nodes between two determined nodes of opposite sign counts once; between
/// nodes of equal sign it is a near-tangency that is resolved through
/// `refine` (an evaluator of `f - g` at arbitrary points) when one is given.
/// Undetermined runs touching an end of the interval never count.
pub fn count_intersections(
    x: &[f64],
    f: &[f64],
    g: &[f64],
    interval: (f64, f64),
    refine_tol: f64,
    refine: Option<&dyn Fn(f64) -> f64>,
) -> Result<usize> {
    if x.len() != f.len() || x.len() != g.len() {
        return Err(KsError::InvalidInput("sample arrays differ in length".into()));
    }
    let (a, b) = interval;
    if !(a <= b) {
        return Err(KsError::InvalidInput(format!("empty interval [{a}, {b}]")));
    }
    let nodes: Vec<(f64, f64)> = x
        .iter()
        .zip(f.iter().zip(g))
        .filter(|(xi, _)| **xi >= a && **xi <= b)
        .map(|(xi, (fi, gi))| (*xi, fi - gi))
        .collect();

    let mut count = 0usize;
    let mut prev: Option<(usize, i8)> = None;
    for (i, &(_, d)) in nodes.iter().enumerate() {
        let s = class(d, refine_tol);
        if s == 0 {
            continue;
        }
        if let Some((j, ps)) = prev {
            if i == j + 1 {
                if s != ps {
                    count += 1;
                }
            } else {
                count += resolve_cluster(&nodes[j..=i], ps, s, refine_tol, refine)?;
            }
        }
        prev = Some((i, s));
    }
    Ok(count)
}

/// Crossings inside a cluster `nodes` whose first and last entries are
/// determined with signs `left` and `right`.
fn resolve_cluster(
    nodes: &[(f64, f64)],
    left: i8,
    right: i8,
    tol: f64,
    refine: Option<&dyn Fn(f64) -> f64>,
) -> Result<usize> {
    let x0 = nodes[0].0;
    let x1 = nodes[nodes.len() - 1].0;
    let mid = 0.5 * (nodes[1].0 + nodes[nodes.len() - 2].0);
    match refine {
        Some(eval) => {
            for level in 1..=MAX_REFINE_LEVEL {
                let m = (nodes.len() - 1) << level;
                let signs: Vec<i8> = (0..=m)
                    .map(|k| {
                        if k == 0 {
                            left
                        } else if k == m {
                            right
                        } else {
                            class(eval(x0 + (x1 - x0) * k as f64 / m as f64), tol)
                        }
                    })
                    .collect();
                let determined: Vec<i8> = signs.iter().copied().filter(|s| *s != 0).collect();
                let changes = determined.windows(2).filter(|w| w[0] != w[1]).count();
                let all_determined = determined.len() == signs.len();
                if left != right || changes > 0 || all_determined {
                    return Ok(if left != right { changes.max(1) } else { changes });
                }
            }
            Err(KsError::AmbiguousZero { location: mid })
        }
        None => {
            if left != right {
                return Ok(1);
            }
            let crosses = nodes[1..nodes.len() - 1]
                .iter()
                .any(|&(_, d)| d != 0.0 && (d > 0.0) != (left > 0));
            if crosses {
                Err(KsError::AmbiguousZero { location: mid })
            } else {
                Ok(0)
            }
        }
    }
}

/// Brute-force sign scan: strict sign changes of `d` ignoring exact zeros.
pub fn sign_changes(d: &[f64]) -> usize {
    let signs: Vec<bool> = d.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(a: f64, b: f64, m: usize) -> Vec<f64> {
        (0..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect()
    }

    #[test]
    fn identical_functions_have_no_crossings() {
        let x = grid(0.0, 1.0, 50);
        let f: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        assert_eq!(count_intersections(&x, &f, &f, (0.0, 1.0), 1e-12, None).unwrap(), 0);
    }

    #[test]
    fn single_simple_zero() {
        let x = grid(0.0, 2.0, 40);
        let f: Vec<f64> = x.iter().map(|v| v - 1.0).collect();
        let g = vec![0.0; x.len()];
        assert_eq!(count_intersections(&x, &f, &g, (0.0, 2.0), 1e-12, None).unwrap(), 1);
    }

    #[test]
    fn near_tangency_is_refined() {
        // Two zeros at 0.5 +- 0.002; the inner nodes sit within tolerance of
        // zero, so only refinement reveals the negative dip.
        let h = |x: f64| (x - 0.5).powi(2) - 4e-6;
        let x = vec![0.0, 0.4985, 0.5015, 1.0];
        let f: Vec<f64> = x.iter().map(|v| h(*v)).collect();
        let g = vec![0.0; x.len()];
        assert_eq!(count_intersections(&x, &f, &g, (0.0, 1.0), 2e-6, Some(&h)).unwrap(), 2);
        // Without an evaluator the same samples are ambiguous.
        assert!(matches!(
            count_intersections(&x, &f, &g, (0.0, 1.0), 2e-6, None),
            Err(KsError::AmbiguousZero { .. })
        ));
        // A pure tangency never resolves.
        let t = |x: f64| (x - 0.5).powi(2);
        let ft: Vec<f64> = x.iter().map(|v| t(*v)).collect();
        let err = count_intersections(&x, &ft, &g, (0.0, 1.0), 1e-3, Some(&t));
        assert!(matches!(err, Err(KsError::AmbiguousZero { .. })));
    }

    #[test]
    fn cluster_at_boundary_does_not_count() {
        let x = grid(0.0, 1.0, 10);
        let f: Vec<f64> = x.to_vec();
        let g = vec![0.0; x.len()];
        assert_eq!(count_intersections(&x, &f, &g, (0.0, 1.0), 1e-12, None).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn monotone_in_interval(freq in 1.0f64..20.0, phase in 0.0f64..3.0, b in 0.1f64..1.0, c in 0.0f64..1.0) {
            let x = grid(0.0, 1.0, 400);
            let f: Vec<f64> = x.iter().map(|v| (freq * v + phase).sin()).collect();
            let g = vec![0.0; x.len()];
            let c = b + c * (1.0 - b);
            let zb = count_intersections(&x, &f, &g, (0.0, b), 1e-9, None).unwrap();
            let zc = count_intersections(&x, &f, &g, (0.0, c), 1e-9, None).unwrap();
            prop_assert!(zb <= zc);
        }

        #[test]
        fn agrees_with_plain_sign_scan(freq in 1.0f64..30.0, phase in 0.1f64..3.0) {
            let x = grid(0.0, 1.0, 1000);
            let f: Vec<f64> = x.iter().map(|v| (freq * v + phase).sin()).collect();
            let g = vec![0.0; x.len()];
            let z = count_intersections(&x, &f, &g, (0.0, 1.0), 0.0, None).unwrap();
            prop_assert_eq!(z, sign_changes(&f));
        }
    }
}
