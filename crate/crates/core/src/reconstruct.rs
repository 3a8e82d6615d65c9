//! Physical quantities on level sets {t = τ} of the characteristic-plane
//! solution: fields, energies, the adapted coordinate, and atoms.

use serde::Serialize;
use thiserror::Error;

use crate::goursat::{rhs, CharGrid, Diagonal, Lattice, NodeState, WavefrontObserver};
use crate::numerics::{hermite, hermite_crossing, lerp};
use crate::wavespeed::WaveSpeedModel;

pub const DEFAULT_NU_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconstructError {
    #[error("time {tau} is outside the covered range [0, {t_max}]")]
    OutOfCoverage { tau: f64, t_max: f64 },
    #[error("level set at time {0} is empty")]
    Empty(f64),
}

/// Which lattice edge a level point was found on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EdgeKind {
    /// On column `i` (fixed X), between two rows.
    Column,
    /// On row `j` (fixed Y), between two columns.
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelPoint {
    pub kind: EdgeKind,
    /// Column index for [`EdgeKind::Column`], row index for [`EdgeKind::Row`].
    pub index: usize,
    pub big_x: f64,
    pub big_y: f64,
    pub state: NodeState,
    /// Metric weight dX/di (column) or |dY/dj| (row) of the lattice line.
    pub weight: f64,
}

/// The curve {t = τ}, ordered by increasing X (decreasing Y).
#[derive(Debug, Clone, Serialize)]
pub struct LevelSet {
    pub tau: f64,
    pub points: Vec<LevelPoint>,
}

impl LevelSet {
    fn from_points(tau: f64, mut points: Vec<LevelPoint>) -> Self {
        points.sort_by(|a, b| a.big_x.total_cmp(&b.big_x).then(b.big_y.total_cmp(&a.big_y)));
        Self { tau, points }
    }

    pub fn columns(&self) -> impl Iterator<Item = &LevelPoint> {
        self.points.iter().filter(|p| p.kind == EdgeKind::Column)
    }

    pub fn rows(&self) -> impl Iterator<Item = &LevelPoint> {
        self.points.iter().filter(|p| p.kind == EdgeKind::Row)
    }
}

/// Appends the crossings of {t = τ} with the lattice edges that end on
/// diagonal `d`. Along each edge, t and the fields with a known derivative
/// in the edge direction are cubic Hermite; the rest are linear.
pub fn crossings_between(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    tau: f64,
    d: usize,
    prev: &Diagonal,
    cur: &Diagonal,
    out: &mut Vec<LevelPoint>,
) {
    for (j, n) in cur.iter() {
        let i = j + d;
        if n.t <= tau {
            continue;
        }
        if let Some(b) = prev.get(j + 1) {
            if b.t <= tau {
                out.push(column_point(lattice, model, tau, i, j, b, n));
            }
        }
        if let Some(a) = prev.get(j) {
            if a.t <= tau {
                out.push(row_point(lattice, model, tau, i, j, a, n));
            }
        }
    }
}

fn column_point(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    tau: f64,
    i: usize,
    j: usize,
    b: &NodeState,
    n: &NodeState,
) -> LevelPoint {
    let h = lattice.dy(j);
    let (_, gb) = rhs(b, model);
    let (_, gn) = rhs(n, model);
    let th = hermite_crossing(b.t, n.t, gb.t, gn.t, h, tau);
    let herm = |y0: f64, y1: f64, d0: f64, d1: f64| hermite(y0, y1, d0, d1, h, th);
    let state = NodeState {
        u: herm(b.u, n.u, gb.u, gn.u),
        x: herm(b.x, n.x, gb.x, gn.x),
        t: tau,
        p: herm(b.p, n.p, gb.p, gn.p),
        q: lerp(b.q, n.q, th),
        nu: herm(b.nu, n.nu, gb.nu, gn.nu),
        eta: lerp(b.eta, n.eta, th),
        xi: herm(b.xi, n.xi, gb.xi, gn.xi),
        zeta: lerp(b.zeta, n.zeta, th),
    };
    LevelPoint {
        kind: EdgeKind::Column,
        index: i,
        big_x: lattice.big_x[i],
        big_y: lattice.big_y[j + 1] + th * h,
        state,
        weight: lattice.weight_x[i],
    }
}

fn row_point(
    lattice: &Lattice,
    model: &WaveSpeedModel,
    tau: f64,
    i: usize,
    j: usize,
    a: &NodeState,
    n: &NodeState,
) -> LevelPoint {
    let h = lattice.dx(i);
    let (fa, _) = rhs(a, model);
    let (fn_, _) = rhs(n, model);
    let th = hermite_crossing(a.t, n.t, fa.t, fn_.t, h, tau);
    let herm = |y0: f64, y1: f64, d0: f64, d1: f64| hermite(y0, y1, d0, d1, h, th);
    let state = NodeState {
        u: herm(a.u, n.u, fa.u, fn_.u),
        x: herm(a.x, n.x, fa.x, fn_.x),
        t: tau,
        p: lerp(a.p, n.p, th),
        q: herm(a.q, n.q, fa.q, fn_.q),
        nu: lerp(a.nu, n.nu, th),
        eta: herm(a.eta, n.eta, fa.eta, fn_.eta),
        xi: lerp(a.xi, n.xi, th),
        zeta: herm(a.zeta, n.zeta, fa.zeta, fn_.zeta),
    };
    LevelPoint {
        kind: EdgeKind::Row,
        index: j,
        big_x: lattice.big_x[i - 1] + th * h,
        big_y: lattice.big_y[j],
        state,
        weight: lattice.weight_y[j],
    }
}

/// Extracts {t = τ} from a stored grid.
pub fn level_set(grid: &CharGrid, model: &WaveSpeedModel, tau: f64) -> Result<LevelSet, ReconstructError> {
    if !(0.0..=grid.t_max).contains(&tau) {
        return Err(ReconstructError::OutOfCoverage { tau, t_max: grid.t_max });
    }
    let mut points = Vec::new();
    for d in 1..grid.diagonals.len() {
        crossings_between(&grid.lattice, model, tau, d, &grid.diagonals[d - 1], &grid.diagonals[d], &mut points);
    }
    if points.is_empty() {
        return Err(ReconstructError::Empty(tau));
    }
    Ok(LevelSet::from_points(tau, points))
}

/// Collects level sets for several times while the solver marches, so the
/// grid never has to be stored.
#[derive(Debug)]
pub struct LevelSetCollector<'m> {
    model: &'m WaveSpeedModel,
    taus: Vec<f64>,
    points: Vec<Vec<LevelPoint>>,
}

impl<'m> LevelSetCollector<'m> {
    pub fn new(model: &'m WaveSpeedModel, taus: &[f64]) -> Self {
        Self { model, taus: taus.to_vec(), points: vec![Vec::new(); taus.len()] }
    }

    pub fn finish(self) -> Vec<LevelSet> {
        self.taus.into_iter().zip(self.points).map(|(tau, pts)| LevelSet::from_points(tau, pts)).collect()
    }
}

impl WavefrontObserver for LevelSetCollector<'_> {
    fn on_diagonal(&mut self, lattice: &Lattice, d: usize, prev: Option<&Diagonal>, cur: &Diagonal) {
        let Some(prev) = prev else { return };
        for (k, &tau) in self.taus.iter().enumerate() {
            crossings_between(lattice, self.model, tau, d, prev, cur, &mut self.points[k]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Energies {
    pub e_minus: f64,
    pub e_plus: f64,
    pub e_total: f64,
}

/// Backward and forward energies on a level set.
///
/// Along {t = τ} one has dx = νp dX = ηq |dY|, so R^2 dx = p(1-ν) dX and
/// S^2 dx = q(1-η) |dY|. Each column (row) is crossed once, and the sums
/// use the lattice metric weights: a trapezoid rule in index space, which
/// stays valid where ν or η vanish.
pub fn energies(level: &LevelSet) -> Energies {
    let e_minus: f64 = level.columns().map(|p| p.state.p * (1.0 - p.state.nu) * p.weight).sum();
    let e_plus: f64 = level.rows().map(|p| p.state.q * (1.0 - p.state.eta) * p.weight).sum();
    Energies { e_minus, e_plus, e_total: e_minus + e_plus }
}

/// `∫ R^2 dx` over the part of the level set where ν > `floor`, computed
/// from the reconstructed R = ξ/ν and dx = νp dX. Agrees with the backward
/// energy where no concentration is present.
pub fn backward_energy_from_r(level: &LevelSet, floor: f64) -> f64 {
    level
        .columns()
        .filter(|p| p.state.nu > floor)
        .map(|p| {
            let r = p.state.r();
            r * r * p.state.nu * p.state.p * p.weight
        })
        .sum()
}

/// α(X) = x_left + ∫ p dX along the level set, from its leftmost column
/// point. On γ this is X itself.
pub fn adapted_coordinate(level: &LevelSet, big_x: f64) -> Option<f64> {
    let cols: Vec<&LevelPoint> = level.columns().collect();
    let first = cols.first()?;
    if big_x < first.big_x || big_x > cols.last()?.big_x {
        return None;
    }
    let mut alpha = first.state.x;
    for w in cols.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dx = b.big_x - a.big_x;
        if big_x <= b.big_x {
            let th = if dx > 0.0 { (big_x - a.big_x) / dx } else { 0.0 };
            let p_mid = lerp(a.state.p, b.state.p, th);
            return Some(alpha + 0.5 * (a.state.p + p_mid) * (big_x - a.big_x));
        }
        alpha += 0.5 * (a.state.p + b.state.p) * dx;
    }
    Some(alpha)
}

/// Samples of the physical solution at one level point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub x: f64,
    pub u: f64,
    pub u_t: f64,
    pub u_x: f64,
    pub r: f64,
    pub s: f64,
    pub defined: bool,
}

/// Which energy family an atom belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    Backward,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub family: Family,
    pub x_location: f64,
    pub energy: f64,
    pub c_prime_at_atom: f64,
}

/// A point mass of the discretized energy measures μ− or μ+.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mass {
    pub x: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhysicalSnapshot {
    pub tau: f64,
    pub samples: Vec<Sample>,
    pub e_minus: f64,
    pub e_plus: f64,
    pub e_total: f64,
    pub atoms: Vec<Atom>,
    /// Discretized μ− (from column points) and μ+ (from row points).
    pub minus: Vec<Mass>,
    pub plus: Vec<Mass>,
}

/// Reconstructs the physical fields on a level set. R and S are reported
/// only where ν and η exceed `nu_floor`; arcs of column (row) points with
/// ν ≤ floor (η ≤ floor) carrying positive energy become atoms.
pub fn snapshot(level: &LevelSet, model: &WaveSpeedModel, nu_floor: f64) -> PhysicalSnapshot {
    let mut samples: Vec<Sample> = Vec::with_capacity(level.points.len());
    let mut last: Option<(f64, f64)> = None;
    for p in &level.points {
        if last == Some((p.big_x, p.big_y)) {
            continue;
        }
        last = Some((p.big_x, p.big_y));
        let s = &p.state;
        let defined = s.nu > nu_floor && s.eta > nu_floor;
        let (r, sv, u_t, u_x) = if defined {
            let (r, sv) = (s.r(), s.s());
            (r, sv, 0.5 * (r + sv), (r - sv) / (2.0 * model.eval(s.u)))
        } else {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        };
        samples.push(Sample { x: s.x, u: s.u, u_t, u_x, r, s: sv, defined });
    }
    let e = energies(level);
    let minus: Vec<Mass> =
        level.columns().map(|p| Mass { x: p.state.x, mass: p.state.p * (1.0 - p.state.nu) * p.weight }).collect();
    let plus: Vec<Mass> =
        level.rows().map(|p| Mass { x: p.state.x, mass: p.state.q * (1.0 - p.state.eta) * p.weight }).collect();
    let mut atoms = find_atoms(level.columns(), Family::Backward, model, nu_floor, |s| s.nu, |s| s.p * (1.0 - s.nu));
    atoms.extend(find_atoms(level.rows(), Family::Forward, model, nu_floor, |s| s.eta, |s| s.q * (1.0 - s.eta)));
    atoms.sort_by(|a, b| a.x_location.total_cmp(&b.x_location));
    PhysicalSnapshot {
        tau: level.tau,
        samples,
        e_minus: e.e_minus,
        e_plus: e.e_plus,
        e_total: e.e_total,
        atoms,
        minus,
        plus,
    }
}

fn find_atoms<'a>(
    points: impl Iterator<Item = &'a LevelPoint>,
    family: Family,
    model: &WaveSpeedModel,
    floor: f64,
    stretch: impl Fn(&NodeState) -> f64,
    density: impl Fn(&NodeState) -> f64,
) -> Vec<Atom> {
    let mut atoms = Vec::new();
    let mut run: Vec<&LevelPoint> = Vec::new();
    let mut flush = |run: &mut Vec<&LevelPoint>| {
        if run.is_empty() {
            return;
        }
        let (mut energy, mut wsum, mut xsum, mut usum) = (0.0, 0.0, 0.0, 0.0);
        for p in run.iter() {
            let m = density(&p.state) * p.weight;
            energy += m;
            let w = match family {
                Family::Backward => p.state.p * p.weight,
                Family::Forward => p.state.q * p.weight,
            };
            wsum += w;
            xsum += w * p.state.x;
            usum += w * p.state.u;
        }
        if energy > 0.0 && wsum > 0.0 {
            let u = usum / wsum;
            atoms.push(Atom { family, x_location: xsum / wsum, energy, c_prime_at_atom: model.deriv(u) });
        }
        run.clear();
    };
    for p in points {
        if stretch(&p.state) <= floor {
            run.push(p);
        } else {
            flush(&mut run);
        }
    }
    flush(&mut run);
    atoms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goursat::{integrate, SolverOptions};
    use crate::initial_data::{build_boundary_curve, CauchyData, Profile};
    use crate::wavespeed::make_model;
    use approx::assert_relative_eq;

    fn trivial_grid(t_max: f64) -> (CharGrid, WaveSpeedModel) {
        let model = make_model("constant", &[1.0], (-5.0, 5.0)).unwrap();
        let data = CauchyData::new(Profile::Zero, Profile::Zero, 1e-3).unwrap();
        let gamma = build_boundary_curve(&data, &model, 41).unwrap();
        (integrate(&gamma, &model, &SolverOptions::new(0.05, t_max)).unwrap(), model)
    }

    #[test]
    fn trivial_level_at_zero_is_gamma() {
        let (grid, model) = trivial_grid(1.0);
        let level = level_set(&grid, &model, 0.0).unwrap();
        for p in &level.points {
            assert_relative_eq!(p.big_x + p.big_y, 0.0, epsilon = 1e-14);
        }
        let e = energies(&level);
        assert_eq!((e.e_minus, e.e_plus), (0.0, 0.0));
    }

    #[test]
    fn trivial_level_is_antidiagonal_shift() {
        let (grid, model) = trivial_grid(1.0);
        let level = level_set(&grid, &model, 1.0).unwrap();
        assert!(level.points.len() > 20);
        for p in &level.points {
            assert_relative_eq!(p.big_x + p.big_y, 2.0, epsilon = 1e-12);
            assert_relative_eq!(p.state.x, 0.5 * (p.big_x - p.big_y), epsilon = 1e-12);
        }
        let snap = snapshot(&level, &model, DEFAULT_NU_FLOOR);
        assert!(snap.atoms.is_empty());
        assert!(snap.samples.iter().all(|s| s.u == 0.0 && s.r == 0.0 && s.s == 0.0 && s.defined));
        assert!(snap.samples.windows(2).all(|w| w[1].x >= w[0].x));
    }

    #[test]
    fn adapted_coordinate_is_identity_for_trivial_solution() {
        let (grid, model) = trivial_grid(1.0);
        let level = level_set(&grid, &model, 0.5).unwrap();
        let cols: Vec<&LevelPoint> = level.columns().collect();
        let mid = cols[cols.len() / 2];
        // α = x + μ−(]-∞, x]) reduces to x for zero energy.
        assert_relative_eq!(adapted_coordinate(&level, mid.big_x).unwrap(), mid.state.x, epsilon = 1e-12);
    }

    #[test]
    fn coverage_is_enforced() {
        let (grid, model) = trivial_grid(0.5);
        assert!(matches!(level_set(&grid, &model, 0.7), Err(ReconstructError::OutOfCoverage { .. })));
    }
}
