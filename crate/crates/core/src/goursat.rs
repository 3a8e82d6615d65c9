//! Goursat integration of the semilinear system in characteristic
//! coordinates (X, Y).
//!
//! The lattice is aligned with γ: column `i` sits at `X_i = X(γ_i)` and row
//! `j` at `Y_j = Y(γ_j)`, so node `(i, j)` with `j <= i` lies on or above γ
//! and the diagonal `d = i - j` is a wavefront. Node `(i, j)` is computed from
//! `A = (i-1, j)` (an X step) and `B = (i, j+1)` (a Y step), both on the
//! previous diagonal.

use serde::Serialize;
use thiserror::Error;

use crate::initial_data::{BoundaryCurve, GammaNode};
use crate::numerics::Pchip;
use crate::wavespeed::WaveSpeedModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("cell ({i}, {j}) fixed point did not converge: residual {residual:e} after {iterations} iterations")]
    NonConvergence { i: usize, j: usize, residual: f64, iterations: usize },
    #[error("positivity floor violated at ({i}, {j}): p = {p:e}, q = {q:e}")]
    Positivity { i: usize, j: usize, p: f64, q: f64 },
    #[error("non-finite state at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("boundary curve spacing {spacing} exceeds the lattice spacing {lattice} in s = X - Y")]
    GammaTooCoarse { spacing: f64, lattice: f64 },
    #[error("boundary curve needs at least 2 nodes")]
    GammaTooShort,
    #[error("invalid solver option: {0}")]
    BadOption(String),
}

/// The nine unknowns at one point of the characteristic plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct NodeState {
    pub u: f64,
    pub x: f64,
    pub t: f64,
    pub p: f64,
    pub q: f64,
    pub nu: f64,
    pub eta: f64,
    pub xi: f64,
    pub zeta: f64,
}

impl NodeState {
    /// State where R = S = 0 and the relabeling weights are 1.
    pub fn vacuum(u: f64, x: f64, t: f64) -> Self {
        Self { u, x, t, p: 1.0, q: 1.0, nu: 1.0, eta: 1.0, xi: 0.0, zeta: 0.0 }
    }

    /// State on γ carrying the Riemann invariants `r`, `s` at time zero.
    pub fn initial(u: f64, x: f64, r: f64, s: f64) -> Self {
        let (nu, eta) = (1.0 / (1.0 + r * r), 1.0 / (1.0 + s * s));
        Self { u, x, t: 0.0, p: 1.0, q: 1.0, nu, eta, xi: r * nu, zeta: s * eta }
    }

    /// R = ξ/ν; meaningful only where ν is bounded away from zero.
    pub fn r(&self) -> f64 {
        self.xi / self.nu
    }

    pub fn s(&self) -> f64 {
        self.zeta / self.eta
    }

    pub fn circle_residuals(&self) -> (f64, f64) {
        (
            (self.xi * self.xi - self.nu * (1.0 - self.nu)).abs(),
            (self.zeta * self.zeta - self.eta * (1.0 - self.eta)).abs(),
        )
    }

    fn as_array(&self) -> [f64; 9] {
        [self.u, self.x, self.t, self.p, self.q, self.nu, self.eta, self.xi, self.zeta]
    }

    fn from_array(a: [f64; 9]) -> Self {
        Self { u: a[0], x: a[1], t: a[2], p: a[3], q: a[4], nu: a[5], eta: a[6], xi: a[7], zeta: a[8] }
    }

    fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Derivatives of `(u, x, t, q, eta, zeta)` along X.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlongX {
    pub u: f64,
    pub x: f64,
    pub t: f64,
    pub q: f64,
    pub eta: f64,
    pub zeta: f64,
}

/// Derivatives of `(u, x, t, p, nu, xi)` along Y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlongY {
    pub u: f64,
    pub x: f64,
    pub t: f64,
    pub p: f64,
    pub nu: f64,
    pub xi: f64,
}

/// Right-hand sides of the system at one state.
#[inline]
pub fn rhs(s: &NodeState, model: &WaveSpeedModel) -> (AlongX, AlongY) {
    let (c, dc) = model.eval_both(s.u);
    let k = dc / (4.0 * c * c);
    let ic = 0.5 / c;
    let en = s.eta * s.nu;
    let mean = 0.5 * (s.eta + s.nu);
    let fx = AlongX {
        u: ic * s.xi * s.p,
        x: 0.5 * s.nu * s.p,
        t: ic * s.nu * s.p,
        q: k * (s.xi - s.zeta) * s.p * s.q,
        eta: -k * s.zeta * (s.nu - s.eta) * s.p,
        zeta: k * (s.zeta * s.zeta + en - mean) * s.p,
    };
    let gy = AlongY {
        u: ic * s.zeta * s.q,
        x: -0.5 * s.eta * s.q,
        t: ic * s.eta * s.q,
        p: k * (s.zeta - s.xi) * s.p * s.q,
        nu: k * s.xi * (s.nu - s.eta) * s.q,
        xi: k * (s.xi * s.xi + en - mean) * s.q,
    };
    (fx, gy)
}

/// Vacuum extension of γ beyond the support of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSpec {
    /// Extent in x added on each side.
    pub pad_left: f64,
    pub pad_right: f64,
    /// Geometric growth of the node spacing away from the support.
    pub growth: f64,
    /// Largest tail spacing as a multiple of the core spacing.
    pub max_ratio: f64,
}

impl TailSpec {
    pub fn none() -> Self {
        Self { pad_left: 0.0, pad_right: 0.0, growth: 1.0, max_ratio: 1.0 }
    }

    /// Padding wide enough for waves moving at speed `m` to stay inside the
    /// lattice's domain of determination up to `t_max`.
    pub fn for_horizon(m: f64, t_max: f64, growth: f64, max_ratio: f64) -> Self {
        let pad = 2.0 * m * t_max + 1.0;
        Self { pad_left: pad, pad_right: pad, growth, max_ratio }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub h: f64,
    pub t_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub positivity_floor: f64,
    pub tail_growth: f64,
    pub tail_max_ratio: f64,
}

impl SolverOptions {
    pub fn new(h: f64, t_max: f64) -> Self {
        Self { h, t_max, tol: 1e-12, max_iter: 50, positivity_floor: 1e-10, tail_growth: 1.05, tail_max_ratio: 16.0 }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::BadOption(m.to_string()));
        if !(self.h > 0.0) {
            return bad("h must be positive");
        }
        if !(self.t_max > 0.0) {
            return bad("t_max must be positive");
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("fixed point tolerance and iteration cap must be positive");
        }
        if !(self.tail_growth >= 1.0) || !(self.tail_max_ratio >= 1.0) {
            return bad("tail growth and ratio must be at least 1");
        }
        Ok(())
    }

    pub fn tails(&self, model: &WaveSpeedModel) -> TailSpec {
        TailSpec::for_horizon(model.m(), self.t_max, self.tail_growth, self.tail_max_ratio)
    }
}

/// Axes of the γ-aligned lattice with metric weights dX/di and |dY/dj|.
#[derive(Debug, Clone, Serialize)]
pub struct Lattice {
    pub h: f64,
    pub gamma: BoundaryCurve,
    pub big_x: Vec<f64>,
    pub big_y: Vec<f64>,
    pub weight_x: Vec<f64>,
    pub weight_y: Vec<f64>,
    /// Index range `[first, last]` of γ nodes inside the data support.
    pub core: (usize, usize),
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.big_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.big_x.is_empty()
    }

    fn from_gamma(gamma: BoundaryCurve, h: f64, core: (usize, usize)) -> Self {
        let n = gamma.len();
        let s: Vec<f64> = gamma.nodes.iter().map(GammaNode::s).collect();
        let ds = |k: usize| -> f64 {
            if n == 1 {
                0.0
            } else if k == 0 {
                s[1] - s[0]
            } else if k == n - 1 {
                s[n - 1] - s[n - 2]
            } else {
                0.5 * (s[k + 1] - s[k - 1])
            }
        };
        let mut weight_x = Vec::with_capacity(n);
        let mut weight_y = Vec::with_capacity(n);
        for (k, node) in gamma.nodes.iter().enumerate() {
            let (nu, eta) = (node.state.nu, node.state.eta);
            weight_x.push(eta / (nu + eta) * ds(k));
            weight_y.push(nu / (nu + eta) * ds(k));
        }
        Self {
            h,
            big_x: gamma.nodes.iter().map(|g| g.big_x).collect(),
            big_y: gamma.nodes.iter().map(|g| g.big_y).collect(),
            weight_x,
            weight_y,
            core,
            gamma,
        }
    }

    /// Spacing `X_i - X_{i-1}` of the column step into column `i`.
    #[inline]
    pub fn dx(&self, i: usize) -> f64 {
        self.big_x[i] - self.big_x[i - 1]
    }

    /// Spacing `Y_j - Y_{j+1}` of the row step into row `j`.
    #[inline]
    pub fn dy(&self, j: usize) -> f64 {
        self.big_y[j] - self.big_y[j + 1]
    }
}

/// Lays γ onto a lattice with spacing `2h` in `s = X - Y` over the data
/// support (so spacing about `h` in each of X and Y for small data) and
/// appends vacuum tails. A γ finer than the lattice is resampled by
/// monotone cubics in `s` and projected back onto the circle relations;
/// a γ coarser than the lattice is rejected.
pub fn seed_lattice(gamma: &BoundaryCurve, h: f64, tails: &TailSpec) -> Result<Lattice, SolverError> {
    if gamma.len() < 2 {
        return Err(SolverError::GammaTooShort);
    }
    if !(h > 0.0) {
        return Err(SolverError::BadOption("h must be positive".into()));
    }
    let target = 2.0 * h;
    let s: Vec<f64> = gamma.nodes.iter().map(GammaNode::s).collect();
    let span = s[s.len() - 1] - s[0];
    let spacing = s.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let n_core = ((span / target).round() as usize).max(1) + 1;
    let core_nodes = if n_core == gamma.len() {
        gamma.nodes.clone()
    } else if spacing > target * (1.0 + 1e-9) {
        return Err(SolverError::GammaTooCoarse { spacing, lattice: target });
    } else {
        resample(gamma, &s, n_core)
    };

    let first = core_nodes[0];
    let last = *core_nodes.last().unwrap();
    let core_step = span / (n_core - 1) as f64;
    let total_r2 = last.big_x - last.x_coord;
    let total_s2 = -last.big_y - last.x_coord;

    let tail_steps = |pad: f64| -> Vec<f64> {
        let mut out = Vec::new();
        let mut covered = 0.0;
        let mut step = core_step;
        while covered < 2.0 * pad {
            step = (step * tails.growth).min(core_step * tails.max_ratio);
            covered += step;
            out.push(covered);
        }
        out
    };

    let mut nodes = Vec::new();
    for off in tail_steps(tails.pad_left).into_iter().rev() {
        let x = 0.5 * (first.s() - off);
        nodes.push(GammaNode { x_coord: x, big_x: x, big_y: -x, state: NodeState::vacuum(first.state.u, x, 0.0) });
    }
    let core = (nodes.len(), nodes.len() + core_nodes.len() - 1);
    nodes.extend(core_nodes);
    for off in tail_steps(tails.pad_right) {
        let x = 0.5 * (last.s() + off - total_r2 - total_s2);
        nodes.push(GammaNode {
            x_coord: x,
            big_x: x + total_r2,
            big_y: -(x + total_s2),
            state: NodeState::vacuum(last.state.u, x, 0.0),
        });
    }
    let curve = BoundaryCurve { nodes, orientation: gamma.orientation };
    Ok(Lattice::from_gamma(curve, h, core))
}

fn resample(gamma: &BoundaryCurve, s: &[f64], n: usize) -> Vec<GammaNode> {
    let field = |f: &dyn Fn(&GammaNode) -> f64| {
        Pchip::new(s.to_vec(), gamma.nodes.iter().map(f).collect()).expect("γ is strictly monotone in s")
    };
    let fx = field(&|g| g.x_coord);
    let fbx = field(&|g| g.big_x);
    let fu = field(&|g| g.state.u);
    let fnu = field(&|g| g.state.nu);
    let feta = field(&|g| g.state.eta);
    let fxi = field(&|g| g.state.xi);
    let fzeta = field(&|g| g.state.zeta);
    let (s0, s1) = (s[0], s[s.len() - 1]);
    (0..n)
        .map(|k| {
            let sk = if k == n - 1 { s1 } else { s0 + (s1 - s0) * k as f64 / (n - 1) as f64 };
            let big_x = fbx.eval(sk);
            let x = fx.eval(sk);
            let (nu, xi) = project_circle(fnu.eval(sk), fxi.eval(sk));
            let (eta, zeta) = project_circle(feta.eval(sk), fzeta.eval(sk));
            let state = NodeState { u: fu.eval(sk), x, t: 0.0, p: 1.0, q: 1.0, nu, eta, xi, zeta };
            GammaNode { x_coord: x, big_x, big_y: big_x - sk, state }
        })
        .collect()
}

/// Nearest point of the circle `ξ^2 = ν(1 - ν)`, i.e. radius 1/2 about (1/2, 0).
fn project_circle(nu: f64, xi: f64) -> (f64, f64) {
    let (a, b) = (nu - 0.5, xi);
    let r = (a * a + b * b).sqrt();
    if r == 0.0 {
        return (1.0, 0.0);
    }
    (0.5 + 0.5 * a / r, 0.5 * b / r)
}

/// Result of one cell solve.
#[derive(Debug, Clone, Copy)]
pub struct CellOutcome {
    pub state: NodeState,
    pub iterations: usize,
}

/// Trapezoidal box scheme on one cell. `a` is the node one X step back
/// (spacing `dx`) and `b` the node one Y step back (spacing `dy`).
pub fn solve_cell(
    a: &NodeState,
    b: &NodeState,
    dx: f64,
    dy: f64,
    model: &WaveSpeedModel,
    tol: f64,
    max_iter: usize,
) -> Result<CellOutcome, (f64, usize)> {
    let (fa, _) = rhs(a, model);
    let (_, gb) = rhs(b, model);
    let hx = 0.5 * dx;
    let hy = 0.5 * dy;
    // Explicit Euler predictor along each edge.
    let mut n = NodeState {
        u: 0.5 * (a.u + dx * fa.u + b.u + dy * gb.u),
        x: 0.5 * (a.x + dx * fa.x + b.x + dy * gb.x),
        t: 0.5 * (a.t + dx * fa.t + b.t + dy * gb.t),
        p: b.p + dy * gb.p,
        q: a.q + dx * fa.q,
        nu: b.nu + dy * gb.nu,
        eta: a.eta + dx * fa.eta,
        xi: b.xi + dy * gb.xi,
        zeta: a.zeta + dx * fa.zeta,
    };
    let mut damped = false;
    let mut last = f64::INFINITY;
    for it in 1..=max_iter {
        let (fnx, gny) = rhs(&n, model);
        let next = NodeState {
            u: 0.5 * (a.u + hx * (fa.u + fnx.u) + b.u + hy * (gb.u + gny.u)),
            x: 0.5 * (a.x + hx * (fa.x + fnx.x) + b.x + hy * (gb.x + gny.x)),
            t: 0.5 * (a.t + hx * (fa.t + fnx.t) + b.t + hy * (gb.t + gny.t)),
            p: b.p + hy * (gb.p + gny.p),
            q: a.q + hx * (fa.q + fnx.q),
            nu: b.nu + hy * (gb.nu + gny.nu),
            eta: a.eta + hx * (fa.eta + fnx.eta),
            xi: b.xi + hy * (gb.xi + gny.xi),
            zeta: a.zeta + hx * (fa.zeta + fnx.zeta),
        };
        let cur = n.as_array();
        let new = next.as_array();
        let mut res = 0.0f64;
        for k in 0..9 {
            res = res.max((new[k] - cur[k]).abs() / (1.0 + new[k].abs()));
        }
        if res.is_nan() {
            return Err((res, it));
        }
        if res > last {
            damped = true;
        }
        last = res;
        n = if damped {
            let mut mix = [0.0; 9];
            for k in 0..9 {
                mix[k] = 0.5 * (cur[k] + new[k]);
            }
            NodeState::from_array(mix)
        } else {
            next
        };
        if res < tol {
            return Ok(CellOutcome { state: next, iterations: it });
        }
    }
    Err((last, max_iter))
}

/// One anti-diagonal `d = i - j`; entry `k` holds row `j = offset + k`.
#[derive(Debug, Clone, Default)]
pub struct Diagonal {
    pub offset: usize,
    pub nodes: Vec<Option<NodeState>>,
}

impl Diagonal {
    #[inline]
    pub fn get(&self, j: usize) -> Option<&NodeState> {
        if j < self.offset {
            return None;
        }
        self.nodes.get(j - self.offset).and_then(Option::as_ref)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Rows `j` with a defined node, with their states.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &NodeState)> {
        self.nodes.iter().enumerate().filter_map(move |(k, s)| s.as_ref().map(|s| (self.offset + k, s)))
    }

    fn trimmed(offset: usize, mut nodes: Vec<Option<NodeState>>) -> Self {
        let Some(first) = nodes.iter().position(Option::is_some) else {
            return Self::default();
        };
        let last = nodes.iter().rposition(Option::is_some).unwrap();
        nodes.truncate(last + 1);
        nodes.drain(..first);
        Self { offset: offset + first, nodes }
    }
}

/// Receives each completed wavefront together with the one before it.
pub trait WavefrontObserver {
    fn on_diagonal(&mut self, lattice: &Lattice, d: usize, prev: Option<&Diagonal>, cur: &Diagonal);
}

impl<A: WavefrontObserver, B: WavefrontObserver> WavefrontObserver for (A, B) {
    fn on_diagonal(&mut self, lattice: &Lattice, d: usize, prev: Option<&Diagonal>, cur: &Diagonal) {
        self.0.on_diagonal(lattice, d, prev, cur);
        self.1.on_diagonal(lattice, d, prev, cur);
    }
}

impl<O: WavefrontObserver + ?Sized> WavefrontObserver for &mut O {
    fn on_diagonal(&mut self, lattice: &Lattice, d: usize, prev: Option<&Diagonal>, cur: &Diagonal) {
        (**self).on_diagonal(lattice, d, prev, cur);
    }
}

/// Running extremes over all computed nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extremes {
    pub min_p: f64,
    pub min_q: f64,
    pub min_nu: f64,
    pub min_eta: f64,
    pub max_nu: f64,
    pub max_eta: f64,
    pub max_circle: f64,
    pub max_t: f64,
    pub u_range: (f64, f64),
    /// Smallest ν seen at a node with t <= t_max (the horizon of interest).
    pub min_nu_in_horizon: f64,
    pub min_eta_in_horizon: f64,
    #[serde(skip)]
    horizon: f64,
}

impl Extremes {
    pub fn new(horizon: f64) -> Self {
        Self {
            min_p: f64::INFINITY,
            min_q: f64::INFINITY,
            min_nu: f64::INFINITY,
            min_eta: f64::INFINITY,
            max_nu: f64::NEG_INFINITY,
            max_eta: f64::NEG_INFINITY,
            max_circle: 0.0,
            max_t: 0.0,
            u_range: (f64::INFINITY, f64::NEG_INFINITY),
            min_nu_in_horizon: f64::INFINITY,
            min_eta_in_horizon: f64::INFINITY,
            horizon,
        }
    }
}

impl WavefrontObserver for Extremes {
    fn on_diagonal(&mut self, _lattice: &Lattice, _d: usize, _prev: Option<&Diagonal>, cur: &Diagonal) {
        for (_, s) in cur.iter() {
            self.min_p = self.min_p.min(s.p);
            self.min_q = self.min_q.min(s.q);
            self.min_nu = self.min_nu.min(s.nu);
            self.min_eta = self.min_eta.min(s.eta);
            self.max_nu = self.max_nu.max(s.nu);
            self.max_eta = self.max_eta.max(s.eta);
            let (a, b) = s.circle_residuals();
            self.max_circle = self.max_circle.max(a).max(b);
            self.max_t = self.max_t.max(s.t);
            self.u_range = (self.u_range.0.min(s.u), self.u_range.1.max(s.u));
            if s.t <= self.horizon {
                self.min_nu_in_horizon = self.min_nu_in_horizon.min(s.nu);
                self.min_eta_in_horizon = self.min_eta_in_horizon.min(s.eta);
            }
        }
    }
}

/// Counters from a march.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MarchStats {
    pub nodes: usize,
    pub diagonals: usize,
    pub max_iterations: usize,
    pub total_iterations: usize,
}

/// Marches wavefronts `d = 1, 2, ...` until a diagonal has no node with
/// time inside the horizon. A node is computed when both predecessors are
/// defined and the earlier of their times is at most `t_max`. Cells of one
/// wavefront run in parallel when the `parallel` feature is enabled.
pub fn march<O: WavefrontObserver>(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    opts: &SolverOptions,
    observer: &mut O,
) -> Result<MarchStats, SolverError> {
    march_with(lattice, model, opts, observer, compute_rows)
}

/// Same as [`march`] but always single-threaded.
pub fn march_sequential<O: WavefrontObserver>(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    opts: &SolverOptions,
    observer: &mut O,
) -> Result<MarchStats, SolverError> {
    march_with(lattice, model, opts, observer, compute_rows_sequential)
}

type RowsFn = fn(&Lattice, &WaveSpeedModel, &SolverOptions, usize, &Diagonal, usize, usize) -> Vec<RowResult>;

fn march_with<O: WavefrontObserver>(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    opts: &SolverOptions,
    observer: &mut O,
    rows_fn: RowsFn,
) -> Result<MarchStats, SolverError> {
    opts.validate()?;
    let n = lattice.len();
    let mut prev = Diagonal { offset: 0, nodes: lattice.gamma.nodes.iter().map(|g| Some(g.state)).collect() };
    let mut stats = MarchStats { nodes: n, diagonals: 1, ..Default::default() };
    observer.on_diagonal(lattice, 0, None, &prev);
    for d in 1..n {
        // Only rows whose predecessors can exist on the previous diagonal.
        let lo = prev.offset.saturating_sub(1);
        let hi = (prev.offset + prev.nodes.len()).min(n - d);
        if lo >= hi {
            break;
        }
        let mut nodes = Vec::with_capacity(hi - lo);
        for r in rows_fn(lattice, model, opts, d, &prev, lo, hi) {
            match r? {
                Some((state, iters)) => {
                    stats.nodes += 1;
                    stats.total_iterations += iters;
                    stats.max_iterations = stats.max_iterations.max(iters);
                    nodes.push(Some(state));
                }
                None => nodes.push(None),
            }
        }
        let cur = Diagonal::trimmed(lo, nodes);
        if cur.is_empty() {
            break;
        }
        stats.diagonals += 1;
        observer.on_diagonal(lattice, d, Some(&prev), &cur);
        prev = cur;
    }
    Ok(stats)
}

type RowResult = Result<Option<(NodeState, usize)>, SolverError>;

fn compute_row(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    opts: &SolverOptions,
    d: usize,
    prev: &Diagonal,
    j: usize,
) -> RowResult {
    let i = j + d;
    let (Some(a), Some(b)) = (prev.get(j), prev.get(j + 1)) else {
        return Ok(None);
    };
    if a.t.min(b.t) > opts.t_max {
        return Ok(None);
    }
    match solve_cell(a, b, lattice.dx(i), lattice.dy(j), model, opts.tol, opts.max_iter) {
        Ok(out) => {
            let s = out.state;
            if !s.is_finite() {
                return Err(SolverError::NonFinite { i, j });
            }
            if s.p < opts.positivity_floor || s.q < opts.positivity_floor {
                return Err(SolverError::Positivity { i, j, p: s.p, q: s.q });
            }
            Ok(Some((s, out.iterations)))
        }
        Err((residual, iterations)) => Err(SolverError::NonConvergence { i, j, residual, iterations }),
    }
}

#[cfg(feature = "parallel")]
fn compute_rows(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    opts: &SolverOptions,
    d: usize,
    prev: &Diagonal,
    lo: usize,
    hi: usize,
) -> Vec<RowResult> {
    use rayon::prelude::*;
    (lo..hi).into_par_iter().with_min_len(256).map(|j| compute_row(lattice, model, opts, d, prev, j)).collect()
}

#[cfg(not(feature = "parallel"))]
fn compute_rows(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    opts: &SolverOptions,
    d: usize,
    prev: &Diagonal,
    lo: usize,
    hi: usize,
) -> Vec<RowResult> {
    compute_rows_sequential(lattice, model, opts, d, prev, lo, hi)
}

fn compute_rows_sequential(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    opts: &SolverOptions,
    d: usize,
    prev: &Diagonal,
    lo: usize,
    hi: usize,
) -> Vec<RowResult> {
    (lo..hi).map(|j| compute_row(lattice, model, opts, d, prev, j)).collect()
}

/// The full characteristic-plane solution.
#[derive(Debug, Clone)]
pub struct CharGrid {
    pub lattice: Lattice,
    pub t_max: f64,
    pub diagonals: Vec<Diagonal>,
    pub stats: MarchStats,
}

impl CharGrid {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<&NodeState> {
        if j > i {
            return None;
        }
        self.diagonals.get(i - j).and_then(|d| d.get(j))
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    /// All defined nodes as `(i, j, state)`, diagonal by diagonal.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, &NodeState)> {
        self.diagonals.iter().enumerate().flat_map(|(d, diag)| diag.iter().map(move |(j, s)| (j + d, j, s)))
    }
}

/// Observer that keeps every wavefront.
#[derive(Debug, Default)]
pub struct StoreAll {
    pub diagonals: Vec<Diagonal>,
}

impl WavefrontObserver for StoreAll {
    fn on_diagonal(&mut self, _lattice: &Lattice, _d: usize, _prev: Option<&Diagonal>, cur: &Diagonal) {
        self.diagonals.push(cur.clone());
    }
}

/// Seeds the lattice from γ and integrates up to `opts.t_max`, storing the grid.
pub fn integrate(gamma: &BoundaryCurve, model: &WaveSpeedModel, opts: &SolverOptions) -> Result<CharGrid, SolverError> {
    opts.validate()?;
    let lattice = seed_lattice(gamma, opts.h, &opts.tails(model))?;
    integrate_lattice(lattice, model, opts)
}

pub fn integrate_lattice(
    lattice: Lattice,
    model: &WaveSpeedModel,
    opts: &SolverOptions,
) -> Result<CharGrid, SolverError> {
    let mut store = StoreAll::default();
    let stats = march(&lattice, model, opts, &mut store)?;
    Ok(CharGrid { lattice, t_max: opts.t_max, diagonals: store.diagonals, stats })
}

/// Max and weighted L2 norms of one residual field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Norms {
    pub max: f64,
    pub l2: f64,
    pub count: usize,
}

#[derive(Default)]
struct NormAcc {
    max: f64,
    sum: f64,
    count: usize,
}

impl NormAcc {
    fn add(&mut self, r: f64, w: f64) {
        self.max = self.max.max(r.abs());
        self.sum += r * r * w;
        self.count += 1;
    }

    fn finish(self) -> Norms {
        Norms { max: self.max, l2: self.sum.sqrt(), count: self.count }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `x_X - c t_X` by centered lattice differences.
    pub x_along_x: Norms,
    /// `x_Y + c t_Y` by centered lattice differences.
    pub x_along_y: Norms,
    pub circle_nu: Norms,
    pub circle_eta: Norms,
    /// `det DΛ = pq / (2c (1+R^2)(1+S^2))` node by node, with the
    /// determinant `x_X t_Y - x_Y t_X = νηpq/(2c)` taken from the system and
    /// R = ξ/ν, S = ζ/η, where ν, η > 0.1.
    pub jacobian: Norms,
    /// The same identity with the determinant from lattice differences of
    /// x and t; second order in h.
    pub jacobian_lattice: Norms,
}

/// Three-point derivative on a non-uniform stencil at the middle node.
fn diff3(fm: f64, f0: f64, fp: f64, hm: f64, hp: f64) -> f64 {
    (hm * hm * fp - hp * hp * fm + (hp * hp - hm * hm) * f0) / (hm * hp * (hm + hp))
}

/// Lattice residuals of the identities `x_X = c t_X`, `x_Y = -c t_Y`, the
/// circle relations, and `|det DΛ| = νηpq / (2c)`.
pub fn consistency_residuals(grid: &CharGrid, model: &WaveSpeedModel) -> ResidualReport {
    let lat = &grid.lattice;
    let n = lat.len();
    let mut rx = NormAcc::default();
    let mut ry = NormAcc::default();
    let mut cn = NormAcc::default();
    let mut ce = NormAcc::default();
    let mut jac = NormAcc::default();
    let mut jac_lat = NormAcc::default();
    for (i, j, s) in grid.nodes() {
        let w = lat.weight_x[i] * lat.weight_y[j];
        let (r1, r2) = s.circle_residuals();
        cn.add(r1, w);
        ce.add(r2, w);
        let c = model.eval(s.u);
        if i >= 1 && i + 1 < n {
            if let (Some(m), Some(p)) = (grid.get(i - 1, j), grid.get(i + 1, j)) {
                let (hm, hp) = (lat.dx(i), lat.dx(i + 1));
                let r = diff3(m.x, s.x, p.x, hm, hp) - c * diff3(m.t, s.t, p.t, hm, hp);
                rx.add(r, w);
            }
        }
        if j >= 1 && j + 1 < n {
            if let (Some(m), Some(p)) = (grid.get(i, j + 1), grid.get(i, j - 1)) {
                let (hm, hp) = (lat.dy(j), lat.dy(j - 1));
                let r = diff3(m.x, s.x, p.x, hm, hp) + c * diff3(m.t, s.t, p.t, hm, hp);
                ry.add(r, w);
            }
        }
        if s.nu > 0.1 && s.eta > 0.1 {
            let (r, sv) = (s.r(), s.s());
            let target = s.p * s.q / (2.0 * c * (1.0 + r * r) * (1.0 + sv * sv));
            jac.add(s.nu * s.eta * s.p * s.q / (2.0 * c) - target, w);
            if let Some(det) = jacobian_fd(grid, i, j) {
                jac_lat.add(det.abs() - target, w);
            }
        }
    }
    ResidualReport {
        x_along_x: rx.finish(),
        x_along_y: ry.finish(),
        circle_nu: cn.finish(),
        circle_eta: ce.finish(),
        jacobian: jac.finish(),
        jacobian_lattice: jac_lat.finish(),
    }
}

/// Index-space derivative of `f` at `k` from samples at offsets -2..=2
/// (fourth order) or -1..=1 (second order).
fn index_derivative(vals: &[Option<f64>; 5]) -> Option<f64> {
    match vals {
        [Some(a), Some(b), _, Some(d), Some(e)] => Some((a - 8.0 * b + 8.0 * d - e) / 12.0),
        [_, Some(b), _, Some(d), _] => Some(0.5 * (d - b)),
        _ => None,
    }
}

/// `t_X x_Y - t_Y x_X` from index-space differences divided by the index
/// derivatives of the axes, so the grading of the lattice cancels.
fn jacobian_fd(grid: &CharGrid, i: usize, j: usize) -> Option<f64> {
    let lat = &grid.lattice;
    let n = lat.len() as isize;
    let along_x = |off: isize| -> Option<(f64, f64, f64)> {
        let ii = i as isize + off;
        if ii < 0 || ii >= n {
            return None;
        }
        grid.get(ii as usize, j).map(|s| (s.t, s.x, lat.big_x[ii as usize]))
    };
    let along_y = |off: isize| -> Option<(f64, f64, f64)> {
        // Increasing Y means decreasing row index.
        let jj = j as isize - off;
        if jj < 0 || jj >= n {
            return None;
        }
        grid.get(i, jj as usize).map(|s| (s.t, s.x, lat.big_y[jj as usize]))
    };
    let derivs = |sample: &dyn Fn(isize) -> Option<(f64, f64, f64)>| -> Option<(f64, f64)> {
        let pts: Vec<Option<(f64, f64, f64)>> = (-2..=2).map(sample).collect();
        let pick = |f: &dyn Fn(&(f64, f64, f64)) -> f64| -> [Option<f64>; 5] {
            let mut out = [None; 5];
            for (k, p) in pts.iter().enumerate() {
                out[k] = p.as_ref().map(f);
            }
            // Fall back consistently: use fourth order only if all five exist.
            if out.iter().any(Option::is_none) {
                out[0] = None;
                out[4] = None;
            }
            out
        };
        let dt = index_derivative(&pick(&|p| p.0))?;
        let dx = index_derivative(&pick(&|p| p.1))?;
        let da = index_derivative(&pick(&|p| p.2))?;
        Some((dt / da, dx / da))
    };
    let (t_x, x_x) = derivs(&along_x)?;
    let (t_y, x_y) = derivs(&along_y)?;
    Some(t_x * x_y - t_y * x_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial_data::{build_boundary_curve, CauchyData, Profile};
    use crate::wavespeed::make_model;
    use approx::assert_relative_eq;

    fn unit() -> WaveSpeedModel {
        make_model("constant", &[1.0], (-5.0, 5.0)).unwrap()
    }

    fn zero_gamma(n: usize) -> BoundaryCurve {
        let data = CauchyData::new(Profile::Zero, Profile::Zero, 1e-3).unwrap();
        build_boundary_curve(&data, &unit(), n).unwrap()
    }

    #[test]
    fn vacuum_rhs_vanishes_for_any_speed() {
        let model = make_model("cosine", &[2.0, 1.0], (-5.0, 5.0)).unwrap();
        let (fx, gy) = rhs(&NodeState::vacuum(0.7, 0.0, 0.0), &model);
        assert_eq!((fx.q, fx.eta, fx.zeta, fx.u), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((gy.p, gy.nu, gy.xi, gy.u), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn trivial_solution_is_exact() {
        let gamma = zero_gamma(41);
        let h = 0.05;
        let grid = integrate(&gamma, &unit(), &SolverOptions::new(h, 0.5)).unwrap();
        let lat = &grid.lattice;
        let mut count = 0;
        for (i, j, s) in grid.nodes() {
            let (x, y) = (lat.big_x[i], lat.big_y[j]);
            assert_relative_eq!(s.t, 0.5 * (x + y), epsilon = 1e-13);
            assert_relative_eq!(s.x, 0.5 * (x - y), epsilon = 1e-13);
            assert_eq!((s.u, s.p, s.q, s.nu, s.eta, s.xi, s.zeta), (0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0));
            count += 1;
        }
        assert!(count > 100);
        let res = consistency_residuals(&grid, &unit());
        assert!(res.x_along_x.max < 1e-12 && res.x_along_y.max < 1e-12);
        assert!(res.jacobian.max < 1e-12);
    }

    #[test]
    fn seeded_zero_lattice_lies_on_antidiagonal() {
        let lat = seed_lattice(
            &zero_gamma(21),
            0.1,
            &TailSpec { pad_left: 1.0, pad_right: 1.0, growth: 1.1, max_ratio: 4.0 },
        )
        .unwrap();
        for k in 0..lat.len() {
            assert_relative_eq!(lat.big_y[k], -lat.big_x[k], epsilon = 1e-14);
            assert_eq!(lat.gamma.nodes[k].state, NodeState::vacuum(0.0, lat.gamma.nodes[k].x_coord, 0.0));
        }
        assert!(lat.big_x[0] <= -2.0 && *lat.big_x.last().unwrap() >= 2.0);
    }

    #[test]
    fn coarse_gamma_is_rejected_and_fine_gamma_resampled() {
        let gamma = zero_gamma(11);
        assert!(matches!(seed_lattice(&gamma, 0.01, &TailSpec::none()), Err(SolverError::GammaTooCoarse { .. })));
        let model = make_model("cosine", &[2.0, 1.0], (-5.0, 5.0)).unwrap();
        let data = CauchyData::new(Profile::named("gaussian", &[]).unwrap(), Profile::Zero, 1e-3).unwrap();
        let fine = build_boundary_curve(&data, &model, 4001).unwrap();
        let lat = seed_lattice(&fine, 1.0 / 32.0, &TailSpec::none()).unwrap();
        assert!(lat.len() < 4001);
        for g in &lat.gamma.nodes {
            let (a, b) = g.state.circle_residuals();
            assert!(a < 1e-15 && b < 1e-15);
            assert_relative_eq!(g.state.u, data.u0.eval(g.x_coord), epsilon = 1e-6);
        }
    }

    #[test]
    fn circle_projection_lands_on_circle() {
        let (nu, xi) = project_circle(0.3, 0.5);
        assert!((xi * xi - nu * (1.0 - nu)).abs() < 1e-15);
        assert_eq!(project_circle(0.5, 0.0), (1.0, 0.0));
    }

    #[test]
    fn diagonal_trimming_keeps_row_indices() {
        let s = NodeState::vacuum(0.0, 0.0, 0.0);
        let d = Diagonal::trimmed(3, vec![None, Some(s), None, Some(s), None]);
        assert_eq!(d.offset, 4);
        assert_eq!(d.nodes.len(), 3);
        assert!(d.get(4).is_some() && d.get(5).is_none() && d.get(6).is_some() && d.get(7).is_none());
    }
}
