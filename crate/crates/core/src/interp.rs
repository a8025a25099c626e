//! Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson).

#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` strictly increasing, at least two points.
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        assert!(x.len() == y.len() && x.len() >= 2, "pchip needs >= 2 matching samples");
        let m = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..m - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; m];
        for i in 1..m - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        d[0] = end_slope(h[0], h.get(1).copied().unwrap_or(h[0]), delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        d[m - 1] = end_slope(
            h[m - 2],
            if m > 2 { h[m - 3] } else { h[m - 2] },
            delta[m - 2],
            if m > 2 { delta[m - 3] } else { delta[m - 2] },
        );
        Pchip { x: x.to_vec(), y: y.to_vec(), d }
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().expect("non-empty"))
    }

    /// Value at `t`, clamped to the sampled range.
    pub fn eval(&self, t: f64) -> f64 {
        let (lo, hi) = self.x_range();
        let t = t.clamp(lo, hi);
        let i = self.x.partition_point(|v| *v <= t).saturating_sub(1).min(self.x.len() - 2);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_nodes_and_lines() {
        let x = [0.0, 0.5, 1.5, 2.0];
        let y = [1.0, 2.0, 4.0, 5.0];
        let p = Pchip::new(&x, &y);
        for (a, b) in x.iter().zip(&y) {
            assert!((p.eval(*a) - b).abs() < 1e-14);
        }
        assert!((p.eval(1.0) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn fourth_order_on_smooth_data() {
        let f = |x: f64| 1.0 / (1.0 + x * x);
        let err = |m: usize| {
            let x: Vec<f64> = (0..=m).map(|k| 0.2 + 2.0 * k as f64 / m as f64).collect();
            let y: Vec<f64> = x.iter().map(|v| f(*v)).collect();
            let p = Pchip::new(&x, &y);
            (0..200).map(|k| 0.5 + 1.4 * k as f64 / 199.0).map(|t| (p.eval(t) - f(t)).abs()).fold(0.0, f64::max)
        };
        assert!(err(200) < err(100) / 3.0);
    }

    proptest! {
        #[test]
        fn preserves_monotonicity(steps in prop::collection::vec((0.01f64..1.0, 0.0f64..1.0), 2..30)) {
            let mut x = vec![0.0];
            let mut y = vec![10.0];
            for (dx, dy) in &steps {
                x.push(x.last().unwrap() + dx);
                y.push(y.last().unwrap() - dy);
            }
            let p = Pchip::new(&x, &y);
            let hi = *x.last().unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..=500 {
                let v = p.eval(hi * k as f64 / 500.0);
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
}
