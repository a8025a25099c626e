//! Dormand-Prince 5(4) with Hairer's 4th order continuous extension.
//!
//! The integrator is driven step by step so callers can run their own event
//! logic on each accepted step through [`Step::eval`]. Integration backwards
//! in time is supported by passing `t_end < t`.

use crate::error::{KsError, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    /// Relative tolerance `tol`, absolute tolerance `0.1 * tol`.
    pub fn split(tol: f64) -> Self {
        Self { rtol: tol, atol: 0.1 * tol }
    }
}

/// One accepted step together with its dense interpolant.
#[derive(Debug, Clone)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    rcont: [[f64; N]; 4],
}

impl<const N: usize> Step<N> {
    pub fn eval(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        let th = (t - self.t0) / h;
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.y0[i]
                + th * (self.rcont[0][i]
                    + th1 * (self.rcont[1][i] + th * (self.rcont[2][i] + th1 * self.rcont[3][i])));
        }
        out
    }
}

pub struct Dopri5<F, const N: usize>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    f: F,
    pub t: f64,
    pub y: [f64; N],
    k1: [f64; N],
    h: f64,
    pub tol: Tolerance,
    pub h_max: f64,
    pub h_min: f64,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

impl<F, const N: usize> Dopri5<F, N>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    pub fn new(mut f: F, t0: f64, y0: [f64; N], h0: f64, tol: Tolerance) -> Self {
        let k1 = f(t0, &y0);
        Self {
            f,
            t: t0,
            y: y0,
            k1,
            h: h0.abs(),
            tol,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            n_accepted: 0,
            n_rejected: 0,
        }
    }

    /// Current step size magnitude proposed for the next attempt.
    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn set_step_size(&mut self, h: f64) {
        self.h = h.abs();
    }

    pub fn derivative(&self) -> [f64; N] {
        self.k1
    }

    /// Take one accepted step towards `t_end` without passing it.
    pub fn step(&mut self, t_end: f64) -> Result<Step<N>> {
        let dir = if t_end >= self.t { 1.0 } else { -1.0 };
        let span = (t_end - self.t).abs();
        let h_floor = self.h_min * self.t.abs().max(1.0);
        loop {
            let mut h = self.h.min(self.h_max).min(span);
            if h < h_floor && h < span {
                return Err(KsError::IntegrationStalled { t: self.t, state: self.y.to_vec() });
            }
            let last = h >= span;
            if last {
                h = span;
            }
            let hs = dir * h;
            let t = self.t;
            let y = self.y;
            let k1 = self.k1;
            let f = &mut self.f;
            let k2 = f(t + C2 * hs, &axpy(&y, hs, &[(A21, &k1)]));
            let k3 = f(t + C3 * hs, &axpy(&y, hs, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(t + C4 * hs, &axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(
                t + C5 * hs,
                &axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                t + hs,
                &axpy(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y_new =
                axpy(&y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let t_new = if last { t_end } else { t + hs };
            let k7 = f(t_new, &y_new);

            let mut err = 0.0;
            let mut finite = true;
            for i in 0..N {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(y_new[i].abs());
                let r = e / sc;
                err += r * r;
                finite &= y_new[i].is_finite() && k7[i].is_finite();
            }
            let err = (err / N as f64).sqrt();
            if !finite || !err.is_finite() {
                self.h = h * 0.2;
                self.n_rejected += 1;
                continue;
            }
            if err <= 1.0 {
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                self.h = h * fac;
                let mut rcont = [[0.0; N]; 4];
                for i in 0..N {
                    let ydiff = y_new[i] - y[i];
                    let bspl = hs * k1[i] - ydiff;
                    rcont[0][i] = ydiff;
                    rcont[1][i] = bspl;
                    rcont[2][i] = ydiff - hs * k7[i] - bspl;
                    rcont[3][i] = hs
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                }
                self.t = t_new;
                self.y = y_new;
                self.k1 = k7;
                self.n_accepted += 1;
                return Ok(Step { t0: t, t1: t_new, y0: y, y1: y_new, rcont });
            }
            self.h = h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            self.n_rejected += 1;
        }
    }
}

/// Locate a sign change of `g` inside `[a, b]` (with `g(a)`, `g(b)` of opposite
/// sign) by Brent's method.
pub fn brent<G: FnMut(f64) -> f64>(mut g: G, a: f64, b: f64, xtol: f64, max_iter: usize) -> f64 {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (g(a), g(b));
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = g(b);
    }
    b
}
