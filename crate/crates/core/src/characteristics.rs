//! Characteristic curves, traced along lattice lines or rebuilt by Picard
//! iteration from sampled fields, and the wave interaction potential.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::goursat::{CharGrid, Diagonal, Lattice, WavefrontObserver};
use crate::numerics::lerp;
use crate::oracles::FdSolution;
use crate::reconstruct::PhysicalSnapshot;
use crate::wavespeed::WaveSpeedModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CharError {
    #[error("start point {x} is outside the covered range [{lo}, {hi}]")]
    OutOfCoverage { x: f64, lo: f64, hi: f64 },
    #[error("Picard iteration stalled after {iterations} iterations, residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("field series must start at t = 0 with increasing times")]
    BadFields,
}

/// Backward curves move left (`ẋ = -c`), forward curves move right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Backward,
    Forward,
}

impl Direction {
    /// Accepts `-`, `backward`, `+` and `forward`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "-" | "backward" | "minus" => Some(Self::Backward),
            "+" | "forward" | "plus" => Some(Self::Forward),
            _ => None,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Self::Backward => -1.0,
            Self::Forward => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacteristicCurve {
    pub sign: Direction,
    pub start: f64,
    /// The coordinate that stays constant along the curve: X for backward
    /// curves, Y for forward ones.
    pub label: f64,
    pub points: Vec<CurvePoint>,
    /// Picard iterations used (largest over the time windows); zero for
    /// grid-traced curves.
    pub iterations: usize,
}

impl CharacteristicCurve {
    /// Position at time `t` by linear interpolation, if `t` is covered.
    pub fn x_at(&self, t: f64) -> Option<f64> {
        let pts = &self.points;
        let k = pts.partition_point(|p| p.t <= t);
        if k == 0 {
            return None;
        }
        if k == pts.len() {
            let last = pts.last()?;
            return (t == last.t).then_some(last.x);
        }
        let (a, b) = (pts[k - 1], pts[k]);
        Some(lerp(a.x, b.x, (t - a.t) / (b.t - a.t)))
    }

    pub fn t_end(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.t)
    }

    /// Smallest and largest difference quotient `Δx/Δt`.
    pub fn slope_range(&self) -> Option<(f64, f64)> {
        self.points.windows(2).map(|w| (w[1].x - w[0].x) / (w[1].t - w[0].t)).fold(None, |acc, q| match acc {
            None => Some((q, q)),
            Some((lo, hi)) => Some((lo.min(q), hi.max(q))),
        })
    }
}

/// Follows the lattice line `X = X̄` (backward) or `Y = Ȳ` (forward) through
/// the start point on γ, interpolating linearly between the two neighbouring
/// lattice lines. Points are kept while t stays within the solved horizon;
/// repeated times (a line crossing a concentration, where t stalls) are
/// dropped so that t is strictly increasing.
pub fn trace_from_grid(grid: &CharGrid, x_start: f64, sign: Direction) -> Result<CharacteristicCurve, CharError> {
    let lattice = &grid.lattice;
    let gamma = &lattice.gamma;
    let (lo, hi) = (gamma.nodes[0].x_coord, gamma.nodes.last().unwrap().x_coord);
    if !(x_start >= lo && x_start <= hi) {
        return Err(CharError::OutOfCoverage { x: x_start, lo, hi });
    }
    let n = lattice.len();
    let mut points = vec![CurvePoint { t: 0.0, x: x_start }];
    // Returns false once the horizon is reached; the last segment is cut
    // at t_max.
    let mut push = |t: f64, x: f64| {
        let last = *points.last().unwrap();
        if t <= last.t {
            return true;
        }
        if t > grid.t_max {
            if last.t < grid.t_max {
                points.push(CurvePoint { t: grid.t_max, x: lerp(last.x, x, (grid.t_max - last.t) / (t - last.t)) });
            }
            return false;
        }
        points.push(CurvePoint { t, x });
        true
    };
    let label = match sign {
        Direction::Backward => {
            let xb = gamma.big_x_of(x_start);
            let k = crate::numerics::bracket_index(&lattice.big_x, xb);
            let th = (xb - lattice.big_x[k]) / lattice.dx(k + 1);
            // Column k and k + 1 share rows j <= k.
            for j in (0..=k).rev() {
                let (Some(a), Some(b)) = (grid.get(k, j), grid.get(k + 1, j)) else { break };
                if !push(lerp(a.t, b.t, th), lerp(a.x, b.x, th)) {
                    break;
                }
            }
            xb
        }
        Direction::Forward => {
            let yb = gamma.big_y_of(x_start);
            let k = (lattice.big_y.partition_point(|&v| v > yb).clamp(1, n - 1)) - 1;
            let th = (lattice.big_y[k] - yb) / lattice.dy(k);
            for i in k + 1..n {
                let (Some(a), Some(b)) = (grid.get(i, k), grid.get(i, k + 1)) else { break };
                if !push(lerp(a.t, b.t, th), lerp(a.x, b.x, th)) {
                    break;
                }
            }
            yb
        }
    };
    Ok(CharacteristicCurve { sign, start: x_start, label, points, iterations: 0 })
}

/// Coordinate map and source integral of one sampled frame.
struct FrameMaps {
    /// α(x_k) = x_k + ∫_{-∞}^{x_k} R^2 (S^2 for forward curves).
    alpha: Vec<f64>,
    /// ∫_{-∞}^{x_k} c'/(2c) (R^2 S - R S^2) dx.
    source: Vec<f64>,
    speed: Vec<f64>,
}

impl FrameMaps {
    fn new(x0: f64, dx: f64, u: &[f64], r: &[f64], s: &[f64], model: &WaveSpeedModel, sign: Direction) -> Self {
        let n = u.len();
        let mut alpha = Vec::with_capacity(n);
        let mut source = Vec::with_capacity(n);
        let mut speed = Vec::with_capacity(n);
        let (mut acc_a, mut acc_s) = (0.0, 0.0);
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..n {
            let (c, dc) = model.eval_both(u[k]);
            let e = match sign {
                Direction::Backward => r[k] * r[k],
                Direction::Forward => s[k] * s[k],
            };
            let g = dc / (2.0 * c) * (r[k] * r[k] * s[k] - r[k] * s[k] * s[k]);
            if let Some((pe, pg)) = prev {
                acc_a += 0.5 * dx * (pe + e);
                acc_s += 0.5 * dx * (pg + g);
            }
            prev = Some((e, g));
            alpha.push(x0 + dx * k as f64 + acc_a);
            source.push(acc_s);
            speed.push(c);
        }
        Self { alpha, source, speed }
    }

    /// Right side of the α equation at coordinate `a`, with the position
    /// `x(a)` obtained by inverting the increasing map α(x).
    fn rhs(&self, x0: f64, dx: f64, a: f64, sign: Direction) -> (f64, f64) {
        let n = self.alpha.len();
        let (x, c, g) = if a <= self.alpha[0] {
            (x0 + (a - self.alpha[0]), self.speed[0], self.source[0])
        } else if a >= self.alpha[n - 1] {
            (x0 + dx * (n - 1) as f64 + (a - self.alpha[n - 1]), self.speed[n - 1], self.source[n - 1])
        } else {
            let k = crate::numerics::bracket_index(&self.alpha, a);
            let th = (a - self.alpha[k]) / (self.alpha[k + 1] - self.alpha[k]);
            (
                x0 + dx * (k as f64 + th),
                lerp(self.speed[k], self.speed[k + 1], th),
                lerp(self.source[k], self.source[k + 1], th),
            )
        };
        let v = match sign {
            Direction::Backward => -c + g,
            Direction::Forward => c - g,
        };
        (v, x)
    }

    fn forward_map(&self, x0: f64, dx: f64, x: f64) -> f64 {
        let n = self.alpha.len();
        let pos = (x - x0) / dx;
        if pos <= 0.0 {
            return self.alpha[0] + (x - x0);
        }
        if pos >= (n - 1) as f64 {
            return self.alpha[n - 1] + (x - x0 - dx * (n - 1) as f64);
        }
        let k = pos.floor() as usize;
        lerp(self.alpha[k], self.alpha[k + 1], pos - k as f64)
    }
}

/// Picard iteration cap per time window.
pub const PICARD_MAX_ITER: usize = 500;

/// Rebuilds a characteristic from sampled fields by iterating the map
/// `α ↦ ᾱ + ∫_0^t G(s, α(s)) ds` with
/// `G = -c(u(x)) + ∫_{-∞}^{x} c'/(2c) (R^2 S - R S^2)` at `x = x(t, α)`,
/// where `x(t, ·)` inverts `α = x + ∫_{-∞}^x R^2`. Forward curves use
/// S^2 in the coordinate and the opposite signs in G. The reported label is
/// ᾱ (which equals X̄) for backward curves and -ᾱ (which equals Ȳ) for
/// forward ones.
///
/// The time integral is a trapezoid rule over the frame times. Iteration
/// runs on windows of unit length, each restarted from the end value of
/// the previous one, starting from the constant guess.
pub fn picard_characteristic(
    fields: &FdSolution,
    model: &WaveSpeedModel,
    y_start: f64,
    sign: Direction,
    tol: f64,
) -> Result<CharacteristicCurve, CharError> {
    let frames = &fields.frames;
    if frames.first().is_none_or(|f| f.t != 0.0) || frames.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(CharError::BadFields);
    }
    let maps: Vec<FrameMaps> =
        frames.iter().map(|f| FrameMaps::new(fields.x0, fields.dx, &f.u, &f.r, &f.s, model, sign)).collect();
    let (x0, dx) = (fields.x0, fields.dx);
    let alpha_bar = maps[0].forward_map(x0, dx, y_start);
    let times: Vec<f64> = frames.iter().map(|f| f.t).collect();

    let mut alpha = vec![alpha_bar; times.len()];
    let mut xs = vec![y_start; times.len()];
    let mut max_iters = 0;
    let mut start = 0;
    while start + 1 < times.len() {
        let mut end = start + 1;
        while end + 1 < times.len() && times[end + 1] - times[start] <= 1.0 {
            end += 1;
        }
        let a0 = alpha[start];
        let mut window: Vec<f64> = vec![a0; end - start + 1];
        let mut g = vec![0.0; window.len()];
        let mut iters = 0;
        loop {
            for (m, (gm, &am)) in g.iter_mut().zip(&window).enumerate() {
                *gm = maps[start + m].rhs(x0, dx, am, sign).0;
            }
            let mut next = Vec::with_capacity(window.len());
            let mut acc = a0;
            next.push(acc);
            for m in 1..window.len() {
                acc += 0.5 * (times[start + m] - times[start + m - 1]) * (g[m - 1] + g[m]);
                next.push(acc);
            }
            let change = next.iter().zip(&window).fold(0.0f64, |mx, (a, b)| mx.max((a - b).abs()));
            window = next;
            iters += 1;
            if change < tol {
                break;
            }
            if iters >= PICARD_MAX_ITER || !change.is_finite() {
                return Err(CharError::NoConvergence { iterations: iters, residual: change });
            }
        }
        max_iters = max_iters.max(iters);
        for (m, &a) in window.iter().enumerate() {
            alpha[start + m] = a;
            xs[start + m] = maps[start + m].rhs(x0, dx, a, sign).1;
        }
        start = end;
    }
    let points = times.iter().zip(&xs).map(|(&t, &x)| CurvePoint { t, x }).collect();
    // The forward coordinate x + ∫ S^2 is -Y.
    let label = alpha_bar * -sign.sign();
    Ok(CharacteristicCurve { sign, start: y_start, label, points, iterations: max_iters })
}

/// Q = (μ− ⊗ μ+)({x > y}): backward energy located strictly to the right
/// of forward energy, from the discretized measures of a snapshot.
pub fn interaction_potential(snap: &PhysicalSnapshot) -> f64 {
    let mut plus: Vec<(f64, f64)> = snap.plus.iter().map(|m| (m.x, m.mass)).collect();
    plus.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut prefix = Vec::with_capacity(plus.len() + 1);
    let mut acc = 0.0;
    prefix.push(acc);
    for &(_, m) in &plus {
        acc += m;
        prefix.push(acc);
    }
    snap.minus
        .iter()
        .fold(0.0, |q, m| q + m.mass * prefix[plus.partition_point(|p| p.0 < m.x)])
}

/// Relative slack allowed on the right side of the interaction bound.
pub const BOUND_SLACK: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; negative when the bound fails before slack.
    pub margin: f64,
    pub pass: bool,
}

/// Checks `∬ R^2 S^2 dx dt <= (2/c0) [(Q(0) - Q(T)) + 2 M E0^2 T / c0^2]`
/// with `BOUND_SLACK` relative slack. `series` holds `(t, Q(t))` sorted in
/// t, from 0 to T.
pub fn check_interaction_bound(
    series: &[(f64, f64)],
    rsq_integral: f64,
    model: &WaveSpeedModel,
    e0: f64,
    t_end: f64,
) -> BoundReport {
    let (c0, m) = (model.c0(), model.m());
    let q0 = series.first().map_or(0.0, |s| s.1);
    let qt = series.last().map_or(0.0, |s| s.1);
    let rhs = 2.0 / c0 * ((q0 - qt) + 2.0 * m * e0 * e0 * t_end / (c0 * c0));
    BoundReport { lhs: rsq_integral, rhs, margin: rhs - rsq_integral, pass: rsq_integral <= (1.0 + BOUND_SLACK) * rhs }
}

/// Accumulates `∬ R^2 S^2 dx dt` over `t <= t_end` while the lattice is
/// marched. In lattice coordinates the integrand is
/// `(1-ν)(1-η) pq/(2c) dX dY`; nodes carry trapezoid area weights, halved
/// on γ, and nodes with ν or η at or below `floor` are skipped.
pub struct InteractionIntegral<'m> {
    model: &'m WaveSpeedModel,
    t_end: f64,
    floor: f64,
    pub value: f64,
}

impl<'m> InteractionIntegral<'m> {
    pub fn new(model: &'m WaveSpeedModel, t_end: f64, floor: f64) -> Self {
        Self { model, t_end, floor, value: 0.0 }
    }
}

fn half_span(v: &[f64], k: usize) -> f64 {
    let n = v.len();
    let lo = v[k.saturating_sub(1)];
    let hi = v[(k + 1).min(n - 1)];
    0.5 * (hi - lo).abs()
}

impl WavefrontObserver for InteractionIntegral<'_> {
    fn on_diagonal(&mut self, lattice: &Lattice, d: usize, _prev: Option<&Diagonal>, cur: &Diagonal) {
        let scale = if d == 0 { 0.5 } else { 1.0 };
        for (j, s) in cur.iter() {
            if s.t > self.t_end || s.nu <= self.floor || s.eta <= self.floor {
                continue;
            }
            let area = half_span(&lattice.big_x, j + d) * half_span(&lattice.big_y, j) * scale;
            let c = self.model.eval(s.u);
            self.value += (1.0 - s.nu) * (1.0 - s.eta) * s.p * s.q / (2.0 * c) * area;
        }
    }
}
