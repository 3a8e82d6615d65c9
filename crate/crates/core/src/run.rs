//! Run orchestration: solve from a config, reconstruct, and persist the
//! artifacts of a run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::characteristics::{
    check_interaction_bound, interaction_potential, trace_from_grid, BoundReport, CharError, CharacteristicCurve,
    Direction, InteractionIntegral,
};
use crate::config::{ConfigError, Oracle, RunConfig};
use crate::goursat::{
    consistency_residuals, march, seed_lattice, CharGrid, Extremes, MarchStats, ResidualReport, SolverError,
    SolverOptions, StoreAll,
};
use crate::initial_data::{boundary_curve_for_spacing, CauchyData, DataError};
use crate::numerics::lerp;
use crate::oracles::{dalembert, energy_by_quadrature, fd_solve, FdError, FdFrame, FdOptions, FdSolution};
use crate::output::{fmt17, read_json, write_csv, write_json, OutputError};
use crate::reconstruct::{energies, snapshot, LevelSet, LevelSetCollector, PhysicalSnapshot, ReconstructError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Chars(#[from] CharError),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{0}")]
    Invalid(String),
}

impl RunError {
    /// 2 for invalid input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Data(_) | Self::Invalid(_) => 2,
            Self::Output(OutputError::Read { .. }) => 2,
            Self::Solver(
                SolverError::BadOption(_) | SolverError::GammaTooCoarse { .. } | SolverError::GammaTooShort,
            ) => 2,
            Self::Fd(FdError::BadOption(_)) => 2,
            Self::Chars(CharError::OutOfCoverage { .. }) => 2,
            _ => 3,
        }
    }
}

/// Agreement required from the d'Alembert comparison (max |u - u_exact|).
pub const DALEMBERT_THRESHOLD: f64 = 5e-4;
/// Agreement required from the FD comparison (relative L2 of u).
pub const FD_THRESHOLD: f64 = 1e-2;

pub fn solver_options(cfg: &RunConfig) -> SolverOptions {
    SolverOptions {
        tail_growth: cfg.tail_growth,
        tail_max_ratio: cfg.tail_max_ratio,
        ..SolverOptions::new(cfg.h, cfg.t_max)
    }
}

/// Everything computed in one march over the lattice.
#[derive(Debug)]
pub struct Solution {
    /// Present when requested; large for fine lattices.
    pub grid: Option<CharGrid>,
    pub levels: Vec<LevelSet>,
    pub extremes: Extremes,
    /// ∬ R^2 S^2 dx dt over t <= t_max.
    pub rsq_integral: f64,
    pub stats: MarchStats,
    /// Total energy of the data by adaptive quadrature.
    pub e0: f64,
}

/// Seeds the lattice and marches it once, collecting level sets at `taus`
/// (in the given order) and running diagnostics.
pub fn solve(cfg: &RunConfig, taus: &[f64], keep_grid: bool) -> Result<Solution, RunError> {
    let opts = solver_options(cfg);
    opts.validate()?;
    let model = &cfg.model;
    let gamma = boundary_curve_for_spacing(&cfg.data, model, cfg.h)?;
    let lattice = seed_lattice(&gamma, cfg.h, &opts.tails(model))?;
    let mut levels = LevelSetCollector::new(model, taus);
    let mut extremes = Extremes::new(cfg.t_max);
    let mut rsq = InteractionIntegral::new(model, cfg.t_max, cfg.nu_floor);
    let (stats, grid) = if keep_grid {
        let mut store = StoreAll::default();
        let stats = march(&lattice, model, &opts, &mut (&mut store, (&mut levels, (&mut extremes, &mut rsq))))?;
        let grid = CharGrid { lattice, t_max: cfg.t_max, diagonals: store.diagonals, stats };
        (stats, Some(grid))
    } else {
        (march(&lattice, model, &opts, &mut (&mut levels, (&mut extremes, &mut rsq)))?, None)
    };
    let rsq_integral = rsq.value;
    let levels = levels.finish();
    if let Some(empty) = levels.iter().find(|l| l.points.is_empty()) {
        return Err(ReconstructError::Empty(empty.tau).into());
    }
    Ok(Solution { grid, levels, extremes, rsq_integral, stats, e0: energy_by_quadrature(&cfg.data, model) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub tau: f64,
    pub e_minus: f64,
    pub e_plus: f64,
    pub e_total: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
}

impl EnergyRecord {
    pub fn relative_error(&self) -> f64 {
        if self.e0 == 0.0 {
            self.e_total.abs()
        } else {
            ((self.e_total - self.e0) / self.e0).abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub kind: Oracle,
    /// `max_abs_u` for d'Alembert, `rel_l2_u` for the FD oracle.
    pub metric: &'static str,
    /// `(tau, error)` per snapshot time.
    pub per_tau: Vec<(f64, f64)>,
    pub max_error: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Relative energy drift of the FD run at its last frame.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_energy_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotEntry {
    pub tau: f64,
    pub file: String,
    pub atoms_file: String,
    pub atoms: usize,
    pub trapped_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharEntry {
    pub x: f64,
    pub sign: Direction,
    pub file: String,
    pub points: usize,
    pub slope_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeEntry {
    pub n: usize,
    pub core: (usize, usize),
    pub nodes: usize,
    pub diagonals: usize,
    pub max_cell_iterations: usize,
    pub mean_cell_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub version: String,
    pub parallel: bool,
    /// The config as run, in TOML.
    pub config: String,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub max_energy_error: f64,
    pub lattice: LatticeEntry,
    pub snapshots: Vec<SnapshotEntry>,
    pub chars: Vec<CharEntry>,
    pub bound: BoundReport,
    pub oracle: Option<OracleReport>,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    /// Outputs that could not be produced; `partial` is set when non-empty.
    pub failures: Vec<String>,
    pub partial: bool,
}

#[derive(Debug, Clone, Serialize)]
struct ResidualFile<'a> {
    residuals: &'a ResidualReport,
    extremes: &'a Extremes,
    rsq_integral: f64,
}

#[derive(Debug, Clone, Serialize)]
struct GridHeader {
    h: f64,
    t_max: f64,
    n: usize,
    core: (usize, usize),
    stride: usize,
    nodes_total: usize,
    nodes_written: usize,
    columns: [&'static str; 13],
}

const GRID_COLUMNS: [&str; 13] = ["i", "j", "X", "Y", "t", "x", "u", "p", "q", "nu", "eta", "xi", "zeta"];

pub fn tau_label(tau: f64) -> String {
    format!("t{tau}")
}

/// Sample times of the Q(t) series: `q_samples` even steps over [0, t_max]
/// merged with the snapshot times.
pub fn series_times(cfg: &RunConfig) -> Vec<f64> {
    let n = cfg.q_samples;
    let mut ts: Vec<f64> = (0..n).map(|k| cfg.t_max * k as f64 / (n - 1) as f64).collect();
    ts.extend(&cfg.snapshots);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Solves the configured problem and writes the run directory.
pub fn run(cfg: &RunConfig) -> Result<Manifest, RunError> {
    if cfg.oracle == Oracle::Dalembert && !cfg.model.is_constant() {
        return Err(RunError::Invalid("the d'Alembert oracle needs a constant wave speed".into()));
    }
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.clone(), source })?;
    let taus = series_times(cfg);
    let sol = solve(cfg, &taus, true)?;
    let grid = sol.grid.as_ref().expect("grid kept");
    let model = &cfg.model;

    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut failures = Vec::new();

    std::fs::write(dir.join("config.toml"), cfg.to_toml())
        .map_err(|source| OutputError::Io { path: dir.join("config.toml"), source })?;
    files.push("config.toml".to_string());

    let snaps: Vec<PhysicalSnapshot> = sol.levels.iter().map(|l| snapshot(l, model, cfg.nu_floor)).collect();
    let energy: Vec<EnergyRecord> = sol
        .levels
        .iter()
        .map(|l| {
            let e = energies(l);
            EnergyRecord { tau: l.tau, e_minus: e.e_minus, e_plus: e.e_plus, e_total: e.e_total, e0: sol.e0 }
        })
        .collect();
    write_json(&dir.join("energy.json"), &energy)?;
    files.push("energy.json".into());

    let mut snapshot_entries = Vec::new();
    for &tau in &cfg.snapshots {
        let k = taus.iter().position(|&t| t == tau).expect("snapshot time sampled");
        let snap = &snaps[k];
        let (file, atoms_file) = (format!("snapshot_{}.csv", tau_label(tau)), format!("atoms_{}.csv", tau_label(tau)));
        write_snapshot(dir, &file, &atoms_file, snap)?;
        files.extend([file.clone(), atoms_file.clone()]);
        snapshot_entries.push(SnapshotEntry {
            tau,
            file,
            atoms_file,
            atoms: snap.atoms.len(),
            trapped_energy: snap.atoms.iter().fold(0.0, |acc, a| acc + a.energy),
        });
    }

    let series: Vec<(f64, f64)> = snaps.iter().map(|s| (s.tau, interaction_potential(s))).collect();
    write_csv(&dir.join("q_series.csv"), &["t", "Q"], series.iter().map(|(t, q)| [fmt17(*t), fmt17(*q)]))?;
    files.push("q_series.csv".into());
    let bound = check_interaction_bound(&series, sol.rsq_integral, model, sol.e0, cfg.t_max);
    write_json(&dir.join("bound.json"), &bound)?;
    files.push("bound.json".into());

    let residuals = consistency_residuals(grid, model);
    write_json(
        &dir.join("residuals.json"),
        &ResidualFile { residuals: &residuals, extremes: &sol.extremes, rsq_integral: sol.rsq_integral },
    )?;
    files.push("residuals.json".into());

    let mut char_entries = Vec::new();
    for &(x, sign) in &cfg.chars {
        match trace_from_grid(grid, x, sign) {
            Ok(curve) => {
                let file = char_file_name(x, sign);
                write_curve(&dir.join(&file), &curve)?;
                files.push(file.clone());
                char_entries.push(CharEntry {
                    x,
                    sign,
                    file,
                    points: curve.points.len(),
                    slope_range: curve.slope_range(),
                });
            }
            Err(e) => failures.push(format!("characteristic from {x} ({sign:?}): {e}")),
        }
    }

    if cfg.grid_dump {
        write_grid(dir, grid, cfg.grid_stride)?;
        files.extend(["grid.csv".to_string(), "grid.json".to_string()]);
    }

    let oracle = match cfg.oracle {
        Oracle::None => None,
        Oracle::Dalembert => Some(dalembert_report(&cfg.data, model.c0(), &cfg.snapshots, &taus, &snaps)),
        Oracle::Fd => match fd_report(cfg, &taus, &snaps) {
            Ok(rep) => Some(rep),
            Err(e) => {
                failures.push(format!("fd oracle: {e}"));
                None
            }
        },
    };

    let (lo, hi) = sol.extremes.u_range;
    let (ilo, ihi) = model.spec().interval;
    if lo < ilo || hi > ihi {
        warnings.push(format!(
            "solution range [{lo}, {hi}] leaves the certification interval [{ilo}, {ihi}]; speed bounds are not certified there"
        ));
    }

    let stats = &sol.stats;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        parallel: cfg!(feature = "parallel"),
        config: cfg.to_toml(),
        e0: sol.e0,
        max_energy_error: energy.iter().map(EnergyRecord::relative_error).fold(0.0, f64::max),
        lattice: LatticeEntry {
            n: grid.lattice.len(),
            core: grid.lattice.core,
            nodes: stats.nodes,
            diagonals: stats.diagonals,
            max_cell_iterations: stats.max_iterations,
            mean_cell_iterations: stats.total_iterations as f64 / stats.nodes.max(1) as f64,
        },
        snapshots: snapshot_entries,
        chars: char_entries,
        bound,
        oracle,
        files,
        warnings,
        partial: !failures.is_empty(),
        failures,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn char_file_name(x: f64, sign: Direction) -> String {
    let s = match sign {
        Direction::Backward => "backward",
        Direction::Forward => "forward",
    };
    format!("char_{s}_x{x}.csv")
}

fn write_snapshot(dir: &Path, file: &str, atoms_file: &str, snap: &PhysicalSnapshot) -> Result<(), RunError> {
    write_csv(
        &dir.join(file),
        &["x", "u", "u_t", "u_x", "R", "S", "defined"],
        snap.samples.iter().map(|s| {
            [
                fmt17(s.x),
                fmt17(s.u),
                fmt17(s.u_t),
                fmt17(s.u_x),
                fmt17(s.r),
                fmt17(s.s),
                u8::from(s.defined).to_string(),
            ]
        }),
    )?;
    write_csv(
        &dir.join(atoms_file),
        &["x_location", "energy", "c_prime_at_atom"],
        snap.atoms.iter().map(|a| [fmt17(a.x_location), fmt17(a.energy), fmt17(a.c_prime_at_atom)]),
    )?;
    Ok(())
}

fn write_curve(path: &Path, curve: &CharacteristicCurve) -> Result<(), RunError> {
    let label = fmt17(curve.label);
    write_csv(path, &["t", "x", "label"], curve.points.iter().map(|p| [fmt17(p.t), fmt17(p.x), label.clone()]))?;
    Ok(())
}

/// Node budget of an automatic-stride grid dump.
const GRID_DUMP_BUDGET: usize = 100_000;

fn write_grid(dir: &Path, grid: &CharGrid, stride: usize) -> Result<(), RunError> {
    let total = grid.nodes().count();
    let stride =
        if stride > 0 { stride } else { ((total as f64 / GRID_DUMP_BUDGET as f64).sqrt().ceil() as usize).max(1) };
    let lat = &grid.lattice;
    let keep = |i: usize, j: usize| i.is_multiple_of(stride) && j.is_multiple_of(stride);
    let written = grid.nodes().filter(|&(i, j, _)| keep(i, j)).count();
    write_csv(
        &dir.join("grid.csv"),
        &GRID_COLUMNS,
        grid.nodes().filter(|&(i, j, _)| keep(i, j)).map(|(i, j, s)| {
            let mut row = vec![i.to_string(), j.to_string(), fmt17(lat.big_x[i]), fmt17(lat.big_y[j])];
            row.extend([s.t, s.x, s.u, s.p, s.q, s.nu, s.eta, s.xi, s.zeta].map(fmt17));
            row
        }),
    )?;
    let header = GridHeader {
        h: lat.h,
        t_max: grid.t_max,
        n: lat.len(),
        core: lat.core,
        stride,
        nodes_total: total,
        nodes_written: written,
        columns: GRID_COLUMNS,
    };
    write_json(&dir.join("grid.json"), &header)?;
    Ok(())
}

fn dalembert_report(
    data: &CauchyData,
    c: f64,
    snapshot_taus: &[f64],
    taus: &[f64],
    snaps: &[PhysicalSnapshot],
) -> OracleReport {
    let per_tau: Vec<(f64, f64)> = snapshot_taus
        .iter()
        .map(|&tau| {
            let snap = &snaps[taus.iter().position(|&t| t == tau).unwrap()];
            let err = snap
                .samples
                .iter()
                .map(|s| (s.u - dalembert(&data.u0, &data.u1, c, tau, s.x)).abs())
                .fold(0.0, f64::max);
            (tau, err)
        })
        .collect();
    let max_error = per_tau.iter().map(|p| p.1).fold(0.0, f64::max);
    OracleReport {
        kind: Oracle::Dalembert,
        metric: "max_abs_u",
        per_tau,
        max_error,
        threshold: DALEMBERT_THRESHOLD,
        pass: max_error <= DALEMBERT_THRESHOLD,
        fd_energy_drift: None,
    }
}

/// Linear interpolation of the snapshot's u at `x`, if inside its range.
pub fn snapshot_u_at(snap: &PhysicalSnapshot, x: f64) -> Option<f64> {
    let s = &snap.samples;
    let k = s.partition_point(|p| p.x <= x);
    if k == 0 || k == s.len() {
        return None;
    }
    let (a, b) = (&s[k - 1], &s[k]);
    Some(if b.x > a.x { lerp(a.u, b.u, (x - a.x) / (b.x - a.x)) } else { a.u })
}

/// Relative L2 difference of u between a snapshot and an FD frame over the
/// FD nodes covered by the snapshot.
pub fn relative_l2_u(snap: &PhysicalSnapshot, fd: &FdSolution, frame: &FdFrame) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &u) in frame.u.iter().enumerate() {
        if let Some(ug) = snapshot_u_at(snap, fd.x(k)) {
            num += (ug - u) * (ug - u);
            den += u * u;
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn fd_report(cfg: &RunConfig, taus: &[f64], snaps: &[PhysicalSnapshot]) -> Result<OracleReport, RunError> {
    let t_end = cfg.snapshots.iter().copied().fold(0.0, f64::max);
    if t_end <= 0.0 {
        return Err(RunError::Invalid("the FD oracle needs a positive snapshot time".into()));
    }
    let mut record = cfg.snapshots.clone();
    record.push(0.0);
    let fd = fd_solve(&cfg.data, &cfg.model, &FdOptions { record, ..FdOptions::new(cfg.h, t_end) })?;
    let per_tau: Vec<(f64, f64)> = cfg
        .snapshots
        .iter()
        .map(|&tau| {
            let snap = &snaps[taus.iter().position(|&t| t == tau).unwrap()];
            let frame = fd.frames.iter().find(|f| f.t == tau).expect("recorded frame");
            (tau, relative_l2_u(snap, &fd, frame))
        })
        .collect();
    let max_error = per_tau.iter().map(|p| p.1).fold(0.0, f64::max);
    let e_start = fd.frames[0].energy(fd.dx);
    let drift = if e_start > 0.0 { (fd.last().energy(fd.dx) - e_start).abs() / e_start } else { 0.0 };
    Ok(OracleReport {
        kind: Oracle::Fd,
        metric: "rel_l2_u",
        per_tau,
        max_error,
        threshold: FD_THRESHOLD,
        pass: max_error <= FD_THRESHOLD,
        fd_energy_drift: Some(drift),
    })
}

/// Observed convergence of one quantity over successive refinements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldOrder {
    pub field: String,
    pub errors: Vec<f64>,
    /// `log2(e_k / e_{k+1})`; empty when the errors vanish.
    pub orders: Vec<f64>,
    /// All errors below round-off: the discretization is exact here.
    pub exact: bool,
}

impl FieldOrder {
    fn from_errors(field: &str, errors: Vec<f64>) -> Self {
        let exact = errors.iter().all(|&e| e <= 1e-13);
        let orders = if exact { vec![] } else { errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect() };
        Self { field: field.into(), errors, orders, exact }
    }

    /// The order between the two finest levels.
    pub fn finest_order(&self) -> Option<f64> {
        self.orders.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub hs: Vec<f64>,
    pub taus: Vec<f64>,
    /// `u` and `x_level` hold differences between successive levels;
    /// `energy_drift` holds |e_total - E0| / E0 at each level.
    pub fields: Vec<FieldOrder>,
    pub oracle: Option<FieldOrder>,
}

impl ConvergenceReport {
    pub fn field(&self, name: &str) -> Option<&FieldOrder> {
        self.fields.iter().find(|f| f.field == name)
    }
}

/// Points where two levels are compared.
const COMPARE_POINTS: usize = 2001;

/// Solves at `h / 2^k` for `k < levels` and measures observed orders of
/// u on a common x grid, of the level-curve position x(X), and of the
/// energy drift. With an oracle configured, also the error against it
/// (the FD reference runs at half the finest spacing).
pub fn convergence_study(cfg: &RunConfig, levels: usize) -> Result<ConvergenceReport, RunError> {
    if levels < 3 {
        return Err(RunError::Invalid(format!("a convergence study needs at least 3 levels, got {levels}")));
    }
    let taus: Vec<f64> = if cfg.snapshots.is_empty() { vec![cfg.t_max] } else { cfg.snapshots.clone() };
    let mut hs = Vec::new();
    let mut runs = Vec::new();
    for k in 0..levels {
        let mut c = cfg.clone();
        c.h = cfg.h / 2f64.powi(k as i32);
        if cfg.raw.data.dx.is_none() {
            c.data = CauchyData::new(cfg.data.u0.clone(), cfg.data.u1.clone(), (c.h / 8.0).min(1e-3))?;
        }
        let sol = solve(&c, &taus, false)?;
        let snaps: Vec<PhysicalSnapshot> = sol.levels.iter().map(|l| snapshot(l, &c.model, c.nu_floor)).collect();
        hs.push(c.h);
        runs.push((sol, snaps));
    }

    let m = cfg.model.m();
    let (a, b) = cfg.data.support;
    let mut du = vec![0.0f64; levels - 1];
    let mut dxl = vec![0.0f64; levels - 1];
    for (ti, &tau) in taus.iter().enumerate() {
        let lo = a - m * tau - 1.0;
        let hi = b + m * tau + 1.0;
        let xs: Vec<f64> =
            (0..COMPARE_POINTS).map(|k| lo + (hi - lo) * k as f64 / (COMPARE_POINTS - 1) as f64).collect();
        let cols0: Vec<(f64, f64)> = runs[0].0.levels[ti].columns().map(|p| (p.big_x, p.state.x)).collect();
        let big_xs: Vec<f64> = cols0.iter().filter(|c| c.1 >= lo && c.1 <= hi).map(|c| c.0).collect();
        for k in 0..levels - 1 {
            let (s0, s1) = (&runs[k].1[ti], &runs[k + 1].1[ti]);
            for &x in &xs {
                if let (Some(u0), Some(u1)) = (snapshot_u_at(s0, x), snapshot_u_at(s1, x)) {
                    du[k] = du[k].max((u0 - u1).abs());
                }
            }
            let (l0, l1) = (&runs[k].0.levels[ti], &runs[k + 1].0.levels[ti]);
            for &bx in &big_xs {
                if let (Some(x0), Some(x1)) = (level_x_at(l0, bx), level_x_at(l1, bx)) {
                    dxl[k] = dxl[k].max((x0 - x1).abs());
                }
            }
        }
    }
    let drift: Vec<f64> = runs
        .iter()
        .map(|(sol, _)| sol.levels.iter().map(|l| rel_energy_error(energies(l).e_total, sol.e0)).fold(0.0, f64::max))
        .collect();
    let fields = vec![
        FieldOrder::from_errors("u", du),
        FieldOrder::from_errors("x_level", dxl),
        FieldOrder::from_errors("energy_drift", drift),
    ];

    let oracle = match cfg.oracle {
        Oracle::None => None,
        Oracle::Dalembert => {
            if !cfg.model.is_constant() {
                return Err(RunError::Invalid("the d'Alembert oracle needs a constant wave speed".into()));
            }
            let errs = runs
                .iter()
                .map(|(_, snaps)| dalembert_report(&cfg.data, cfg.model.c0(), &taus, &taus, snaps).max_error)
                .collect();
            Some(FieldOrder::from_errors("u_vs_dalembert", errs))
        }
        Oracle::Fd => {
            let t_end = taus.iter().copied().fold(0.0, f64::max);
            let fd = fd_solve(
                &cfg.data,
                &cfg.model,
                &FdOptions { record: taus.clone(), ..FdOptions::new(hs[levels - 1] / 2.0, t_end) },
            )?;
            let errs = runs
                .iter()
                .map(|(_, snaps)| {
                    taus.iter()
                        .zip(snaps)
                        .map(|(&tau, snap)| {
                            let frame = fd.frames.iter().find(|f| f.t == tau).expect("recorded frame");
                            relative_l2_u(snap, &fd, frame)
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            Some(FieldOrder::from_errors("u_vs_fd", errs))
        }
    };
    Ok(ConvergenceReport { hs, taus, fields, oracle })
}

fn rel_energy_error(e: f64, e0: f64) -> f64 {
    if e0 == 0.0 {
        e.abs()
    } else {
        ((e - e0) / e0).abs()
    }
}

/// Position x of the level curve on column coordinate `big_x`.
fn level_x_at(level: &LevelSet, big_x: f64) -> Option<f64> {
    let cols: Vec<(f64, f64)> = level.columns().map(|p| (p.big_x, p.state.x)).collect();
    let k = cols.partition_point(|c| c.0 <= big_x);
    if k == 0 || k == cols.len() {
        return (k > 0 && cols[k - 1].0 == big_x).then(|| cols[k - 1].1);
    }
    let (a, b) = (cols[k - 1], cols[k]);
    Some(lerp(a.1, b.1, (big_x - a.0) / (b.0 - a.0)))
}

/// Rebuilds the config of an existing run directory; outputs go to `dir`.
pub fn load_run(dir: &Path) -> Result<RunConfig, RunError> {
    let path = dir.join("config.toml");
    if !path.is_file() {
        return Err(RunError::Invalid(format!("{} is not a run directory (no config.toml)", dir.display())));
    }
    let mut cfg = RunConfig::from_file(&path)?;
    cfg.output_dir = dir.to_path_buf();
    Ok(cfg)
}

/// Writes the snapshot and atoms CSVs for one extra time into a run directory.
pub fn snapshot_command(dir: &Path, tau: f64) -> Result<(PathBuf, PhysicalSnapshot), RunError> {
    let cfg = load_run(dir)?;
    if !(0.0..=cfg.t_max).contains(&tau) {
        return Err(RunError::Invalid(format!("tau = {tau} is outside [0, {}]", cfg.t_max)));
    }
    let sol = solve(&cfg, &[tau], false)?;
    let snap = snapshot(&sol.levels[0], &cfg.model, cfg.nu_floor);
    let file = format!("snapshot_{}.csv", tau_label(tau));
    write_snapshot(dir, &file, &format!("atoms_{}.csv", tau_label(tau)), &snap)?;
    Ok((dir.join(file), snap))
}

/// Traces one grid characteristic of a run and writes its curve CSV.
pub fn chars_command(dir: &Path, x: f64, sign: Direction) -> Result<(PathBuf, CharacteristicCurve), RunError> {
    let cfg = load_run(dir)?;
    let sol = solve(&cfg, &[], true)?;
    let curve = trace_from_grid(sol.grid.as_ref().expect("grid kept"), x, sign)?;
    let path = dir.join(char_file_name(x, sign));
    write_curve(&path, &curve)?;
    Ok((path, curve))
}

pub fn read_energy(dir: &Path) -> Result<Vec<EnergyRecord>, RunError> {
    Ok(read_json(&dir.join("energy.json"))?)
}

pub fn read_bound(dir: &Path) -> Result<BoundReport, RunError> {
    Ok(read_json(&dir.join("bound.json"))?)
}
