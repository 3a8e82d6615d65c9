//! Wave speed models c(u) with bounds certified on a sampling interval.

use serde::Serialize;
use thiserror::Error;

/// Number of dense samples used to certify the bounds of a model.
pub const CERTIFY_SAMPLES: usize = 10_000;

const BOUND_PAD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown wave speed model `{0}`")]
    UnknownKind(String),
    #[error("model `{kind}` expects {expected} parameters, got {got}")]
    ParamCount { kind: String, expected: &'static str, got: usize },
    #[error("model `{kind}`: {reason}")]
    InvalidParams { kind: String, reason: String },
    #[error("c(u) = {value} at u = {u} is not positive")]
    NotPositive { u: f64, value: f64 },
    #[error("model is not finite at u = {u}")]
    NotFinite { u: f64 },
    #[error("certification interval [{0}, {1}] is empty")]
    EmptyInterval(f64, f64),
}

#[derive(Debug, Clone)]
enum Kind {
    Constant { c: f64 },
    Cosine { a: f64, b: f64 },
    AffineClamped { mid: f64, slope: f64, lo: f64, hi: f64, sharp: f64 },
    Arctan { base: f64, amp: f64, rate: f64 },
    Tabulated(Spline),
}

/// Name, parameters and certification interval, echoed into run metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub name: String,
    pub params: Vec<f64>,
    pub interval: (f64, f64),
}

/// The wave speed c(u) together with bounds `0 < c0 <= c(u) < m` and
/// `|c'(u)| < m` valid on the certification interval.
#[derive(Debug, Clone)]
pub struct WaveSpeedModel {
    kind: Kind,
    c0: f64,
    m: f64,
    spec: ModelSpec,
}

impl WaveSpeedModel {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match &self.kind {
            Kind::Constant { c } => *c,
            Kind::Cosine { a, b } => a + b * u.cos(),
            Kind::AffineClamped { mid, slope, lo, hi, sharp } => soft_clamp(mid + slope * u, *lo, *hi, *sharp).0,
            Kind::Arctan { base, amp, rate } => base + amp * (rate * u).atan(),
            Kind::Tabulated(s) => s.eval(u),
        }
    }

    #[inline]
    pub fn deriv(&self, u: f64) -> f64 {
        match &self.kind {
            Kind::Constant { .. } => 0.0,
            Kind::Cosine { b, .. } => -b * u.sin(),
            Kind::AffineClamped { mid, slope, lo, hi, sharp } => {
                slope * soft_clamp(mid + slope * u, *lo, *hi, *sharp).1
            }
            Kind::Arctan { amp, rate, .. } => {
                let z = rate * u;
                amp * rate / (1.0 + z * z)
            }
            Kind::Tabulated(s) => s.deriv(u),
        }
    }

    /// Returns `(c(u), c'(u))` in one call.
    #[inline]
    pub fn eval_both(&self, u: f64) -> (f64, f64) {
        match &self.kind {
            Kind::Cosine { a, b } => {
                let (s, c) = u.sin_cos();
                (a + b * c, -b * s)
            }
            _ => (self.eval(u), self.deriv(u)),
        }
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// True when c' vanishes identically.
    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant { .. })
    }

    /// The bound `M / (2 c0)` on `|c'/(2c)|`.
    pub fn c0_ratio_bound(&self) -> f64 {
        self.m / (2.0 * self.c0)
    }
}

/// c'(u) / (2 c(u)), the coefficient in front of every source term.
#[inline]
pub fn log_derivative_ratio(model: &WaveSpeedModel, u: f64) -> f64 {
    let (c, dc) = model.eval_both(u);
    dc / (2.0 * c)
}

/// Builds a model by name. `interval` is the u-range on which the bounds
/// are certified by dense sampling.
///
/// Parameters per kind:
/// - `constant`: `[c]`
/// - `cosine`: `[a, b]` for `a + b cos u`
/// - `affine-clamped`: `[c_mid, slope, lo, hi]` or with a fifth sharpness entry (default 20)
/// - `arctan`: `[base, amp, rate]` for `base + amp atan(rate u)`
/// - `tabulated`: flattened `(u, c)` pairs, at least three, u increasing
pub fn make_model(kind: &str, params: &[f64], interval: (f64, f64)) -> Result<WaveSpeedModel, ModelError> {
    let (lo, hi) = interval;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(ModelError::EmptyInterval(lo, hi));
    }
    let bad = |reason: &str| ModelError::InvalidParams { kind: kind.to_string(), reason: reason.to_string() };
    let count = |expected: &'static str| ModelError::ParamCount { kind: kind.to_string(), expected, got: params.len() };
    let mut analytic_bounds = None;
    let parsed = match kind {
        "constant" => {
            let [c] = params else { return Err(count("1")) };
            analytic_bounds = Some((*c, *c));
            Kind::Constant { c: *c }
        }
        "cosine" => {
            let [a, b] = params else { return Err(count("2")) };
            analytic_bounds = Some((a - b.abs(), (a + b.abs()).max(b.abs())));
            Kind::Cosine { a: *a, b: *b }
        }
        "affine-clamped" => {
            let (mid, slope, lo_c, hi_c, sharp) = match params {
                [m, s, l, h] => (*m, *s, *l, *h, 20.0),
                [m, s, l, h, k] => (*m, *s, *l, *h, *k),
                _ => return Err(count("4 or 5")),
            };
            if !(lo_c > 0.0 && hi_c > lo_c) {
                return Err(bad("clamp range must satisfy 0 < lo < hi"));
            }
            if !(sharp > 0.0) {
                return Err(bad("sharpness must be positive"));
            }
            Kind::AffineClamped { mid, slope, lo: lo_c, hi: hi_c, sharp }
        }
        "arctan" => {
            let [base, amp, rate] = params else { return Err(count("3")) };
            Kind::Arctan { base: *base, amp: *amp, rate: *rate }
        }
        "tabulated" => {
            if params.len() < 6 || !params.len().is_multiple_of(2) {
                return Err(count("an even number >= 6"));
            }
            let us: Vec<f64> = params.iter().step_by(2).copied().collect();
            let cs: Vec<f64> = params.iter().skip(1).step_by(2).copied().collect();
            Kind::Tabulated(Spline::clamped(us, cs).ok_or_else(|| bad("u values must be strictly increasing"))?)
        }
        other => return Err(ModelError::UnknownKind(other.to_string())),
    };
    let mut model = WaveSpeedModel {
        kind: parsed,
        c0: 0.0,
        m: 0.0,
        spec: ModelSpec { name: kind.to_string(), params: params.to_vec(), interval },
    };
    let (c_min, c_sup) = certify(&model, interval)?;
    let (c0, m) = match analytic_bounds {
        Some((lo_b, hi_b)) => {
            if !(lo_b > 0.0) {
                return Err(ModelError::NotPositive { u: f64::NAN, value: lo_b });
            }
            (lo_b, hi_b * (1.0 + BOUND_PAD))
        }
        None => (c_min, c_sup * (1.0 + BOUND_PAD)),
    };
    model.c0 = c0;
    model.m = m;
    Ok(model)
}

/// Samples c and c' on the interval; returns (min c, max(max c, max |c'|)).
fn certify(model: &WaveSpeedModel, (lo, hi): (f64, f64)) -> Result<(f64, f64), ModelError> {
    let mut c_min = f64::INFINITY;
    let mut sup = 0.0f64;
    for k in 0..CERTIFY_SAMPLES {
        let u = lo + (hi - lo) * k as f64 / (CERTIFY_SAMPLES - 1) as f64;
        let (c, dc) = (model.eval(u), model.deriv(u));
        if !c.is_finite() || !dc.is_finite() {
            return Err(ModelError::NotFinite { u });
        }
        if c <= 0.0 {
            return Err(ModelError::NotPositive { u, value: c });
        }
        c_min = c_min.min(c);
        sup = sup.max(c).max(dc.abs());
    }
    Ok((c_min, sup))
}

/// Smooth two-sided clamp of `v` into `(lo, hi)` built from softplus
/// ramps; returns the value and its derivative with respect to `v`.
fn soft_clamp(v: f64, lo: f64, hi: f64, k: f64) -> (f64, f64) {
    let (a, da) = softplus(k * (v - lo));
    let s = lo + a / k;
    let (b, db) = softplus(k * (hi - s));
    (hi - b / k, db * da)
}

/// Returns `ln(1 + e^z)` and its derivative, stable for large |z|.
fn softplus(z: f64) -> (f64, f64) {
    let sig = 1.0 / (1.0 + (-z).exp());
    let val = if z > 30.0 { z + (-z).exp() } else { z.exp().ln_1p() };
    (val, sig)
}

/// Cubic spline with zero end slopes, held constant outside the table.
#[derive(Debug, Clone)]
struct Spline {
    us: Vec<f64>,
    cs: Vec<f64>,
    m2: Vec<f64>,
}

impl Spline {
    fn clamped(us: Vec<f64>, cs: Vec<f64>) -> Option<Self> {
        let n = us.len();
        if n < 3 || us.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        // Tridiagonal system for second derivatives with c'(ends) = 0.
        let h: Vec<f64> = us.windows(2).map(|w| w[1] - w[0]).collect();
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = 2.0 * h[0];
        upper[0] = h[0];
        rhs[0] = 6.0 * (cs[1] - cs[0]) / h[0];
        for k in 1..n - 1 {
            lower[k] = h[k - 1];
            diag[k] = 2.0 * (h[k - 1] + h[k]);
            upper[k] = h[k];
            rhs[k] = 6.0 * ((cs[k + 1] - cs[k]) / h[k] - (cs[k] - cs[k - 1]) / h[k - 1]);
        }
        lower[n - 1] = h[n - 2];
        diag[n - 1] = 2.0 * h[n - 2];
        rhs[n - 1] = -6.0 * (cs[n - 1] - cs[n - 2]) / h[n - 2];
        for k in 1..n {
            let w = lower[k] / diag[k - 1];
            diag[k] -= w * upper[k - 1];
            rhs[k] -= w * rhs[k - 1];
        }
        let mut m2 = vec![0.0; n];
        m2[n - 1] = rhs[n - 1] / diag[n - 1];
        for k in (0..n - 1).rev() {
            m2[k] = (rhs[k] - upper[k] * m2[k + 1]) / diag[k];
        }
        Some(Self { us, cs, m2 })
    }

    fn locate(&self, u: f64) -> Option<(usize, f64, f64)> {
        let n = self.us.len();
        if u <= self.us[0] || u >= self.us[n - 1] {
            return None;
        }
        let k = crate::numerics::bracket_index(&self.us, u);
        let h = self.us[k + 1] - self.us[k];
        Some((k, h, (u - self.us[k]) / h))
    }

    fn eval(&self, u: f64) -> f64 {
        let n = self.us.len();
        match self.locate(u) {
            None if u <= self.us[0] => self.cs[0],
            None => self.cs[n - 1],
            Some((k, h, t)) => {
                let a = 1.0 - t;
                a * self.cs[k]
                    + t * self.cs[k + 1]
                    + h * h / 6.0 * ((a * a * a - a) * self.m2[k] + (t * t * t - t) * self.m2[k + 1])
            }
        }
    }

    fn deriv(&self, u: f64) -> f64 {
        match self.locate(u) {
            None => 0.0,
            Some((k, h, t)) => {
                let a = 1.0 - t;
                (self.cs[k + 1] - self.cs[k]) / h
                    + h / 6.0 * ((1.0 - 3.0 * a * a) * self.m2[k] + (3.0 * t * t - 1.0) * self.m2[k + 1])
            }
        }
    }
}
