//! Small numerical kernels shared by the solver modules: bracketed root
//! finding, cumulative Simpson sums, monotone cubic interpolation and
//! cubic Hermite segments.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("no sign change on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("root finder did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// Solves `f(x) = target` on `[lo, hi]`, where `f` returns the value and
/// its derivative. The target must be bracketed. Newton steps are taken when
/// they stay inside the current bracket, otherwise the bracket is bisected.
pub fn solve_bracketed<F>(f: F, target: f64, lo: f64, hi: f64, x_tol: f64) -> Result<f64, RootError>
where
    F: Fn(f64) -> (f64, f64),
{
    let (mut a, mut b) = (lo, hi);
    let fa = f(a).0 - target;
    let fb = f(b).0 - target;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(RootError::NoBracket { lo, hi, f_lo: fa + target, f_hi: fb + target });
    }
    let increasing = fb > 0.0;
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let (v, dv) = f(x);
        let g = v - target;
        if g == 0.0 {
            return Ok(x);
        }
        if (g > 0.0) == increasing {
            b = x;
        } else {
            a = x;
        }
        if (b - a).abs() <= x_tol {
            return Ok(0.5 * (a + b));
        }
        let newton = x - g / dv;
        let lo_b = a.min(b);
        let hi_b = a.max(b);
        let next =
            if dv != 0.0 && newton.is_finite() && newton > lo_b && newton < hi_b { newton } else { 0.5 * (a + b) };
        if (next - x).abs() <= x_tol {
            return Ok(next);
        }
        x = next;
    }
    Err(RootError::NoConvergence { iterations: 200 })
}

/// Cumulative integral of uniformly spaced samples, Simpson accurate on
/// every even node and closed with the matching quadratic on odd nodes.
pub fn cumulative_simpson(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * dx * (values[0] + values[1]);
        return out;
    }
    let mut k = 0;
    while k + 2 < n {
        let (f0, f1, f2) = (values[k], values[k + 1], values[k + 2]);
        out[k + 1] = out[k] + dx * (5.0 * f0 + 8.0 * f1 - f2) / 12.0;
        out[k + 2] = out[k] + dx * (f0 + 4.0 * f1 + f2) / 3.0;
        k += 2;
    }
    if k + 1 < n {
        let (f0, f1, f2) = (values[k - 1], values[k], values[k + 1]);
        out[k + 1] = out[k] + dx * (-f0 + 8.0 * f1 + 5.0 * f2) / 12.0;
    }
    out
}

/// Composite Simpson rule on uniformly spaced samples.
pub fn simpson(values: &[f64], dx: f64) -> f64 {
    cumulative_simpson(values, dx).last().copied().unwrap_or(0.0)
}

/// Monotone piecewise cubic interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    /// `xs` must be strictly increasing and hold at least two points.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Option<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n || xs.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] <= 0.0 {
                    slopes[k] = 0.0;
                } else {
                    let h0 = xs[k] - xs[k - 1];
                    let h1 = xs[k + 1] - xs[k];
                    let w1 = 2.0 * h1 + h0;
                    let w2 = h1 + 2.0 * h0;
                    slopes[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            slopes[0] = end_slope(xs[1] - xs[0], xs[2] - xs[1], delta[0], delta[1]);
            slopes[n - 1] = end_slope(xs[n - 1] - xs[n - 2], xs[n - 2] - xs[n - 3], delta[n - 2], delta[n - 3]);
        }
        Some(Self { xs, ys, slopes })
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    /// Evaluates the interpolant; outside the data range the end values are held.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.segment(x);
        let h = self.xs[k + 1] - self.xs[k];
        hermite(self.ys[k], self.ys[k + 1], self.slopes[k], self.slopes[k + 1], h, (x - self.xs[k]) / h)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let k = self.segment(x);
        let h = self.xs[k + 1] - self.xs[k];
        hermite_slope(self.ys[k], self.ys[k + 1], self.slopes[k], self.slopes[k + 1], h, (x - self.xs[k]) / h)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Cubic Hermite segment on an interval of length `h`, evaluated at the
/// local coordinate `theta` in `[0, 1]`. `d0`, `d1` are derivatives with
/// respect to the physical coordinate.
#[inline]
pub fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, theta: f64) -> f64 {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

/// Derivative of [`hermite`] with respect to the physical coordinate.
#[inline]
pub fn hermite_slope(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, theta: f64) -> f64 {
    let t2 = theta * theta;
    let g00 = 6.0 * t2 - 6.0 * theta;
    let g10 = 3.0 * t2 - 4.0 * theta + 1.0;
    let g01 = -6.0 * t2 + 6.0 * theta;
    let g11 = 3.0 * t2 - 2.0 * theta;
    (g00 * y0 + g01 * y1) / h + g10 * d0 + g11 * d1
}

/// Local coordinate in `[0, 1]` where the Hermite segment through `(y0, d0)`
/// and `(y1, d1)` takes the value `level`. Requires `y0 <= level <= y1` or
/// the reverse.
pub fn hermite_crossing(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, level: f64) -> f64 {
    if level == y0 {
        return 0.0;
    }
    if level == y1 {
        return 1.0;
    }
    let f = |theta: f64| (hermite(y0, y1, d0, d1, h, theta), h * hermite_slope(y0, y1, d0, d1, h, theta));
    match solve_bracketed(f, level, 0.0, 1.0, 1e-15) {
        Ok(theta) => theta.clamp(0.0, 1.0),
        // Degenerate bracket (flat segment): fall back to the chord.
        Err(_) => ((level - y0) / (y1 - y0)).clamp(0.0, 1.0),
    }
}

/// Linear interpolation helper.
#[inline]
pub fn lerp(a: f64, b: f64, theta: f64) -> f64 {
    a + (b - a) * theta
}

/// Index `k` with `xs[k] <= x < xs[k + 1]` in an increasing table, clamped
/// to the valid segment range.
pub fn bracket_index(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    debug_assert!(n >= 2);
    xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bracketed_newton_finds_cube_root() {
        let r = solve_bracketed(|x| (x * x * x, 3.0 * x * x), 2.0, 0.0, 3.0, 1e-14).unwrap();
        assert_relative_eq!(r, 2f64.cbrt(), epsilon = 1e-12);
    }

    #[test]
    fn bracket_is_required() {
        assert!(matches!(solve_bracketed(|x| (x, 1.0), 5.0, 0.0, 1.0, 1e-12), Err(RootError::NoBracket { .. })));
    }

    #[test]
    fn simpson_is_exact_for_cubics_on_even_nodes() {
        let dx = 0.1;
        for n in [3usize, 4, 7, 10] {
            let xs: Vec<f64> = (0..n).map(|k| k as f64 * dx).collect();
            let vals: Vec<f64> = xs.iter().map(|x| x * x * x - 2.0 * x).collect();
            let cum = cumulative_simpson(&vals, dx);
            for (k, x) in xs.iter().enumerate().step_by(2) {
                let exact = x.powi(4) / 4.0 - x * x;
                assert_relative_eq!(cum[k], exact, epsilon = 1e-12);
            }
            let quad: Vec<f64> = xs.iter().map(|x| 3.0 * x * x - 1.0).collect();
            let cum = cumulative_simpson(&quad, dx);
            for (k, x) in xs.iter().enumerate() {
                assert_relative_eq!(cum[k], x.powi(3) - x, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pchip_reproduces_monotone_data_without_overshoot() {
        let xs: Vec<f64> = (0..20).map(|k| k as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| if *x < 2.0 { 0.0 } else { 1.0 }).collect();
        let p = Pchip::new(xs.clone(), ys).unwrap();
        for k in 0..500 {
            let x = k as f64 * 0.0114;
            let v = p.eval(x);
            assert!((-1e-15..=1.0 + 1e-15).contains(&v));
        }
        assert_eq!(p.eval(xs[5]), 0.0);
    }

    #[test]
    fn hermite_crossing_inverts_segment() {
        let (y0, y1, d0, d1, h) = (0.0, 1.0, 0.5, 2.0, 0.7);
        let theta = hermite_crossing(y0, y1, d0, d1, h, 0.3);
        assert_relative_eq!(hermite(y0, y1, d0, d1, h, theta), 0.3, epsilon = 1e-13);
    }

    #[test]
    fn hermite_slope_matches_finite_difference() {
        let (y0, y1, d0, d1, h) = (0.2, -0.4, 1.5, -0.3, 0.25);
        let theta = 0.37;
        let e = 1e-6;
        let fd = (hermite(y0, y1, d0, d1, h, theta + e) - hermite(y0, y1, d0, d1, h, theta - e)) / (2.0 * e * h);
        assert_relative_eq!(hermite_slope(y0, y1, d0, d1, h, theta), fd, epsilon = 1e-7);
    }
}
