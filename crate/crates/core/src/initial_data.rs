//! Cauchy data, Riemann invariants at t = 0, total energy, and the
//! boundary curve γ carrying the initial state in the (X, Y) plane.

use serde::Serialize;
use thiserror::Error;

use crate::goursat::NodeState;
use crate::numerics::{self, Pchip};
use crate::wavespeed::WaveSpeedModel;

/// A gaussian is treated as zero beyond this many widths (e^{-41.5} ~ 1e-18).
const GAUSS_CUTOFF: f64 = 6.44;
/// tanh ramps are treated as flat beyond this many ramp widths.
const TANH_CUTOFF: f64 = 21.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("profile `{kind}` expects {expected} parameters, got {got}")]
    ParamCount { kind: String, expected: &'static str, got: usize },
    #[error("profile `{kind}`: {reason}")]
    InvalidParams { kind: String, reason: String },
    #[error("boundary curve needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("sampling step {dx} is too coarse for {n_nodes} boundary nodes (node spacing {spacing})")]
    TooCoarse { dx: f64, n_nodes: usize, spacing: f64 },
    #[error("sampling step must be positive, got {0}")]
    BadStep(f64),
}

/// A scalar initial profile on the real line.
#[derive(Debug, Clone)]
pub enum Profile {
    Zero,
    /// `amp * exp(-((x - center) / width)^2)`
    Gaussian {
        amp: f64,
        center: f64,
        width: f64,
    },
    /// `amp * sin(k (x - center)) * exp(-((x - center) / width)^2)`
    SinePacket {
        amp: f64,
        center: f64,
        width: f64,
        k: f64,
    },
    /// Smoothed indicator of `[left, right]`: `amp/2 [tanh((x-left)/eps) - tanh((x-right)/eps)]`
    SmoothedStep {
        amp: f64,
        left: f64,
        right: f64,
        eps: f64,
    },
    /// Monotone cubic through `(x, value)` samples, constant outside.
    Tabulated(Pchip),
}

impl Profile {
    pub fn named(kind: &str, params: &[f64]) -> Result<Self, DataError> {
        let count =
            |expected: &'static str| DataError::ParamCount { kind: kind.to_string(), expected, got: params.len() };
        let bad = |reason: &str| DataError::InvalidParams { kind: kind.to_string(), reason: reason.to_string() };
        match kind {
            "zero" => Ok(Profile::Zero),
            "gaussian" => {
                let (amp, center, width) = match params {
                    [] => (1.0, 0.0, 1.0),
                    [a] => (*a, 0.0, 1.0),
                    [a, c] => (*a, *c, 1.0),
                    [a, c, w] => (*a, *c, *w),
                    _ => return Err(count("at most 3")),
                };
                if !(width > 0.0) {
                    return Err(bad("width must be positive"));
                }
                Ok(Profile::Gaussian { amp, center, width })
            }
            "sine-packet" => {
                let [amp, center, width, k] = params else { return Err(count("4")) };
                if !(*width > 0.0) {
                    return Err(bad("width must be positive"));
                }
                Ok(Profile::SinePacket { amp: *amp, center: *center, width: *width, k: *k })
            }
            "smoothed-step" => {
                let [amp, left, right, eps] = params else { return Err(count("4")) };
                if !(*eps > 0.0 && right > left) {
                    return Err(bad("need eps > 0 and left < right"));
                }
                Ok(Profile::SmoothedStep { amp: *amp, left: *left, right: *right, eps: *eps })
            }
            other => Err(DataError::UnknownProfile(other.to_string())),
        }
    }

    pub fn tabulated(xs: Vec<f64>, values: Vec<f64>) -> Result<Self, DataError> {
        Pchip::new(xs, values).map(Profile::Tabulated).ok_or_else(|| DataError::InvalidParams {
            kind: "tabulated".into(),
            reason: "need at least two samples with strictly increasing x".into(),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Gaussian { amp, center, width } => {
                let z = (x - center) / width;
                amp * (-z * z).exp()
            }
            Profile::SinePacket { amp, center, width, k } => {
                let z = (x - center) / width;
                amp * (k * (x - center)).sin() * (-z * z).exp()
            }
            Profile::SmoothedStep { amp, left, right, eps } => {
                0.5 * amp * (((x - left) / eps).tanh() - ((x - right) / eps).tanh())
            }
            Profile::Tabulated(p) => p.eval(x),
        }
    }

    /// Closed-form derivative, used by oracles and tests.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Gaussian { amp, center, width } => {
                let z = (x - center) / width;
                -2.0 * z / width * amp * (-z * z).exp()
            }
            Profile::SinePacket { amp, center, width, k } => {
                let z = (x - center) / width;
                let g = (-z * z).exp();
                amp * g * (k * (k * (x - center)).cos() - 2.0 * z / width * (k * (x - center)).sin())
            }
            Profile::SmoothedStep { amp, left, right, eps } => {
                let a = 1.0 / ((x - left) / eps).cosh().powi(2);
                let b = 1.0 / ((x - right) / eps).cosh().powi(2);
                0.5 * amp * (a - b) / eps
            }
            Profile::Tabulated(p) => p.derivative(x),
        }
    }

    /// Interval outside which the derivative is negligible; `None` for the zero profile.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            Profile::Zero => None,
            Profile::Gaussian { center, width, .. } | Profile::SinePacket { center, width, .. } => {
                Some((center - GAUSS_CUTOFF * width, center + GAUSS_CUTOFF * width))
            }
            Profile::SmoothedStep { left, right, eps, .. } => {
                Some((left - TANH_CUTOFF * eps, right + TANH_CUTOFF * eps))
            }
            Profile::Tabulated(p) => Some(p.domain()),
        }
    }
}

/// Initial data `(u0, u1)` with a common compact support and the sampling
/// step used for derivatives and quadratures.
#[derive(Debug, Clone)]
pub struct CauchyData {
    pub u0: Profile,
    pub u1: Profile,
    pub support: (f64, f64),
    pub dx: f64,
}

impl CauchyData {
    pub fn new(u0: Profile, u1: Profile, dx: f64) -> Result<Self, DataError> {
        if !(dx > 0.0) {
            return Err(DataError::BadStep(dx));
        }
        let support = match (u0.support(), u1.support()) {
            (Some(a), Some(b)) => (a.0.min(b.0), a.1.max(b.1)),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => (-1.0, 1.0),
        };
        Ok(Self { u0, u1, support, dx })
    }

    /// u0' by a centered difference with step `dx`; zero off the support.
    pub fn du0(&self, x: f64) -> f64 {
        if x < self.support.0 || x > self.support.1 {
            return 0.0;
        }
        (self.u0.eval(x + self.dx) - self.u0.eval(x - self.dx)) / (2.0 * self.dx)
    }

    /// `(R0, S0)` at `x`; both vanish off the support.
    pub fn invariants_at(&self, model: &WaveSpeedModel, x: f64) -> (f64, f64) {
        if x < self.support.0 || x > self.support.1 {
            return (0.0, 0.0);
        }
        let v = self.u1.eval(x);
        let w = model.eval(self.u0.eval(x)) * self.du0(x);
        (v + w, v - w)
    }
}

/// Riemann invariants sampled on the uniform support grid.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantSamples {
    pub xs: Vec<f64>,
    pub dx: f64,
    pub u0: Vec<f64>,
    pub r0: Vec<f64>,
    pub s0: Vec<f64>,
    /// Running integrals of R0^2 and S0^2 from the left end of the support.
    pub int_r2: Vec<f64>,
    pub int_s2: Vec<f64>,
}

impl InvariantSamples {
    pub fn total_r2(&self) -> f64 {
        *self.int_r2.last().unwrap()
    }

    pub fn total_s2(&self) -> f64 {
        *self.int_s2.last().unwrap()
    }
}

/// Samples R0 = u1 + c(u0) u0' and S0 = u1 - c(u0) u0' on a uniform grid
/// covering the support with step at most `data.dx`.
pub fn riemann_invariants(data: &CauchyData, model: &WaveSpeedModel) -> InvariantSamples {
    let (a, b) = data.support;
    // An even number of intervals keeps the Simpson sums exact-order at the end.
    let mut n = ((b - a) / data.dx).ceil() as usize;
    n += n % 2;
    let n = n.max(2);
    let dx = (b - a) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|k| a + dx * k as f64).collect();
    let u0: Vec<f64> = xs.iter().map(|&x| data.u0.eval(x)).collect();
    let (r0, s0): (Vec<f64>, Vec<f64>) = xs.iter().map(|&x| data.invariants_at(model, x)).unzip();
    let r2: Vec<f64> = r0.iter().map(|r| r * r).collect();
    let s2: Vec<f64> = s0.iter().map(|s| s * s).collect();
    InvariantSamples {
        int_r2: numerics::cumulative_simpson(&r2, dx),
        int_s2: numerics::cumulative_simpson(&s2, dx),
        xs,
        dx,
        u0,
        r0,
        s0,
    }
}

/// E0 = 2 ∫ [u1^2 + (c(u0) u0')^2] dx by composite Simpson on the sampling grid.
pub fn total_energy(data: &CauchyData, model: &WaveSpeedModel) -> f64 {
    let samples = riemann_invariants(data, model);
    let density: Vec<f64> = samples
        .xs
        .iter()
        .map(|&x| {
            let v = data.u1.eval(x);
            let w = model.eval(data.u0.eval(x)) * data.du0(x);
            2.0 * (v * v + w * w)
        })
        .collect();
    numerics::simpson(&density, samples.dx)
}

/// Sign convention of the Y coordinate along γ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Orientation {
    /// `Y(x) = -(x + ∫ S0^2)`: γ is decreasing and t grows with X + Y.
    Reflected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaNode {
    pub x_coord: f64,
    pub big_x: f64,
    pub big_y: f64,
    pub state: NodeState,
}

impl GammaNode {
    /// The coordinate `s = X - Y` along γ.
    pub fn s(&self) -> f64 {
        self.big_x - self.big_y
    }
}

/// The curve γ = {(X(x), Y(x))} with the t = 0 state at each node.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryCurve {
    pub nodes: Vec<GammaNode>,
    pub orientation: Orientation,
}

impl BoundaryCurve {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫ R0^2 over the whole line, read off the right end of γ.
    pub fn total_r2(&self) -> f64 {
        let last = self.nodes.last().unwrap();
        last.big_x - last.x_coord
    }

    pub fn total_s2(&self) -> f64 {
        let last = self.nodes.last().unwrap();
        -last.big_y - last.x_coord
    }

    /// X as a function of x on γ, extended by the vacuum relation off its ends.
    pub fn big_x_of(&self, x: f64) -> f64 {
        self.interp_along_x(x, |n| (n.big_x, 1.0 / n.state.nu), x, x + self.total_r2())
    }

    pub fn big_y_of(&self, x: f64) -> f64 {
        self.interp_along_x(x, |n| (n.big_y, -1.0 / n.state.eta), -x, -(x + self.total_s2()))
    }

    // Cubic Hermite in x using dX/dx = 1 + R0^2 = 1/ν and dY/dx = -1/η.
    fn interp_along_x(&self, x: f64, f: impl Fn(&GammaNode) -> (f64, f64), left: f64, right: f64) -> f64 {
        let first = &self.nodes[0];
        let last = self.nodes.last().unwrap();
        if x <= first.x_coord {
            return left;
        }
        if x >= last.x_coord {
            return right;
        }
        let k = self.nodes.partition_point(|n| n.x_coord <= x).clamp(1, self.nodes.len() - 1) - 1;
        let (a, b) = (&self.nodes[k], &self.nodes[k + 1]);
        let h = b.x_coord - a.x_coord;
        let ((ya, da), (yb, db)) = (f(a), f(b));
        numerics::hermite(ya, yb, da, db, h, (x - a.x_coord) / h)
    }
}

/// Builds γ over the support of the data with `n_nodes` nodes equally
/// spaced in `s = X - Y`. Node positions are found by monotone root
/// finding on x ↦ s(x), whose slope is `2 + R0^2 + S0^2`.
pub fn build_boundary_curve(
    data: &CauchyData,
    model: &WaveSpeedModel,
    n_nodes: usize,
) -> Result<BoundaryCurve, DataError> {
    build_from_samples(data, model, &riemann_invariants(data, model), n_nodes)
}

/// γ with node spacing `2h` in `s`, the density the lattice of spacing `h`
/// is seeded with.
pub fn boundary_curve_for_spacing(
    data: &CauchyData,
    model: &WaveSpeedModel,
    h: f64,
) -> Result<BoundaryCurve, DataError> {
    if !(h > 0.0) {
        return Err(DataError::BadStep(h));
    }
    let samples = riemann_invariants(data, model);
    let (a, b) = data.support;
    let span = 2.0 * (b - a) + samples.total_r2() + samples.total_s2();
    let n_nodes = (span / (2.0 * h)).round() as usize + 1;
    build_from_samples(data, model, &samples, n_nodes.max(2))
}

fn build_from_samples(
    data: &CauchyData,
    model: &WaveSpeedModel,
    samples: &InvariantSamples,
    n_nodes: usize,
) -> Result<BoundaryCurve, DataError> {
    if n_nodes < 2 {
        return Err(DataError::TooFewNodes(n_nodes));
    }
    let (a, b) = data.support;
    let s_a = 2.0 * a;
    let s_b = 2.0 * b + samples.total_r2() + samples.total_s2();
    let ds = (s_b - s_a) / (n_nodes - 1) as f64;
    if ds < samples.dx {
        return Err(DataError::TooCoarse { dx: samples.dx, n_nodes, spacing: ds });
    }
    let running = RunningIntegrals { data, model, samples };
    let mut nodes = Vec::with_capacity(n_nodes);
    let mut lo = a;
    for k in 0..n_nodes {
        let target = s_a + ds * k as f64;
        let x = if k == 0 {
            a
        } else if k == n_nodes - 1 {
            b
        } else {
            let f = |x: f64| {
                let (ir, is, r, s) = running.at(x);
                (2.0 * x + ir + is, 2.0 + r * r + s * s)
            };
            numerics::solve_bracketed(f, target, lo, b, 1e-15 * (1.0 + b.abs())).unwrap_or(lo)
        };
        lo = x;
        nodes.push(gamma_node(data, &running, x));
    }
    Ok(BoundaryCurve { nodes, orientation: Orientation::Reflected })
}

fn gamma_node(data: &CauchyData, running: &RunningIntegrals, x: f64) -> GammaNode {
    let (ir, is, r, s) = running.at(x);
    GammaNode { x_coord: x, big_x: x + ir, big_y: -(x + is), state: NodeState::initial(data.u0.eval(x), x, r, s) }
}

/// Evaluates ∫_{a}^{x} R0^2 and ∫_{a}^{x} S0^2 between sampling nodes by a
/// local Simpson step from the nearest node on the left.
struct RunningIntegrals<'a> {
    data: &'a CauchyData,
    model: &'a WaveSpeedModel,
    samples: &'a InvariantSamples,
}

impl RunningIntegrals<'_> {
    fn at(&self, x: f64) -> (f64, f64, f64, f64) {
        let xs = &self.samples.xs;
        let n = xs.len();
        let (r, s) = self.data.invariants_at(self.model, x);
        if x <= xs[0] {
            return (0.0, 0.0, r, s);
        }
        if x >= xs[n - 1] {
            return (self.samples.total_r2(), self.samples.total_s2(), r, s);
        }
        let k = numerics::bracket_index(xs, x);
        let xk = xs[k];
        let w = x - xk;
        let (rm, sm) = self.data.invariants_at(self.model, xk + 0.5 * w);
        let (rk, sk) = (self.samples.r0[k], self.samples.s0[k]);
        let ir = self.samples.int_r2[k] + w / 6.0 * (rk * rk + 4.0 * rm * rm + r * r);
        let is = self.samples.int_s2[k] + w / 6.0 * (sk * sk + 4.0 * sm * sm + s * s);
        (ir, is, r, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavespeed::make_model;
    use approx::assert_relative_eq;

    fn unit_speed() -> WaveSpeedModel {
        make_model("constant", &[1.0], (-10.0, 10.0)).unwrap()
    }

    fn gaussian_data(dx: f64) -> CauchyData {
        CauchyData::new(Profile::named("gaussian", &[]).unwrap(), Profile::Zero, dx).unwrap()
    }

    #[test]
    fn zero_data_has_zero_invariants_and_energy() {
        let data = CauchyData::new(Profile::Zero, Profile::Zero, 1e-2).unwrap();
        let inv = riemann_invariants(&data, &unit_speed());
        assert!(inv.r0.iter().chain(&inv.s0).all(|v| *v == 0.0));
        assert_eq!(total_energy(&data, &unit_speed()), 0.0);
    }

    #[test]
    fn gaussian_invariants_match_closed_form() {
        let data = gaussian_data(1e-4);
        for &x in &[-1.2, -0.3, 0.0, 0.7, 2.0] {
            let (r, s) = data.invariants_at(&unit_speed(), x);
            let exact = -2.0 * x * (-x * x).exp();
            assert_relative_eq!(r, exact, epsilon = 1e-7);
            assert_relative_eq!(s, -exact, epsilon = 1e-7);
        }
    }

    #[test]
    fn pure_velocity_data_gives_equal_invariants() {
        let model = make_model("cosine", &[2.0, 1.0], (-5.0, 5.0)).unwrap();
        let data = CauchyData::new(Profile::Zero, Profile::named("gaussian", &[]).unwrap(), 1e-3).unwrap();
        for &x in &[-0.5, 0.1, 1.3] {
            let (r, s) = data.invariants_at(&model, x);
            assert_eq!(r, s);
            assert_relative_eq!(r, (-x * x).exp(), epsilon = 1e-15);
        }
    }

    #[test]
    fn gaussian_energy_is_root_two_pi() {
        // 2 ∫ 4x^2 e^{-2x^2} dx = sqrt(2π)
        let e0 = total_energy(&gaussian_data(1e-3), &unit_speed());
        assert_relative_eq!(e0, (2.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn smoothed_box_velocity_energy_is_about_two() {
        let u1 = Profile::named("smoothed-step", &[1.0, 0.0, 1.0, 0.01]).unwrap();
        let data = CauchyData::new(Profile::Zero, u1, 1e-4).unwrap();
        let model = make_model("cosine", &[2.0, 1.0], (-5.0, 5.0)).unwrap();
        assert_relative_eq!(total_energy(&data, &model), 2.0, max_relative = 2e-2);
    }

    #[test]
    fn zero_data_curve_is_antidiagonal() {
        let data = CauchyData::new(Profile::Zero, Profile::Zero, 1e-3).unwrap();
        let g = build_boundary_curve(&data, &unit_speed(), 21).unwrap();
        for n in &g.nodes {
            assert_relative_eq!(n.big_y, -n.big_x, epsilon = 1e-15);
            assert_eq!(n.state, NodeState::vacuum(0.0, n.x_coord, 0.0));
        }
    }

    #[test]
    fn curve_is_monotone_with_circle_relations() {
        let model = make_model("cosine", &[2.0, 1.0], (-5.0, 5.0)).unwrap();
        let data = gaussian_data(1e-3);
        let g = build_boundary_curve(&data, &model, 400).unwrap();
        for w in g.nodes.windows(2) {
            assert!(w[1].big_x > w[0].big_x);
            assert!(w[1].big_y < w[0].big_y);
        }
        for n in &g.nodes {
            let st = n.state;
            assert!((st.xi * st.xi - st.nu * (1.0 - st.nu)).abs() < 1e-12);
            assert!((st.zeta * st.zeta - st.eta * (1.0 - st.eta)).abs() < 1e-12);
            assert_eq!((st.p, st.q, st.t), (1.0, 1.0, 0.0));
        }
        let first = &g.nodes[0];
        assert_eq!(first.big_x, first.x_coord);
        assert_eq!(first.big_y, -first.x_coord);
        let ds: Vec<f64> = g.nodes.windows(2).map(|w| w[1].s() - w[0].s()).collect();
        for d in &ds {
            assert_relative_eq!(*d, ds[0], max_relative = 1e-9);
        }
    }

    #[test]
    fn unit_invariant_gives_half_stretch() {
        let st = NodeState::initial(0.0, 0.0, 1.0, 0.0);
        assert_eq!(st.nu, 0.5);
        assert_eq!(st.xi, 0.5);
    }

    #[test]
    fn rejects_too_fine_curve() {
        assert!(matches!(
            build_boundary_curve(&gaussian_data(0.1), &unit_speed(), 5000),
            Err(DataError::TooCoarse { .. })
        ));
    }
}
