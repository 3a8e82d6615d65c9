//! Run configuration: a flat TOML file with dotted keys.
//!
//! ```toml
//! model.name = "cosine"
//! model.params = [2.0, 1.0]
//! model.interval = [-5.0, 5.0]
//!
//! data.u0.kind = "gaussian"
//! data.u0.params = [1.0, 0.0, 1.0]
//! data.u1.kind = "zero"
//!
//! solver.h = 0.0078125
//! solver.t_max = 1.0
//!
//! output.dir = "runs/example"
//! output.snapshots = [0.25, 0.5, 1.0]
//!
//! chars.backward = [-0.5]
//! chars.forward = [0.5]
//! ```
//!
//! Tabulated inputs are read from two-column CSV files (`data.u0.csv`,
//! `model.table`); relative paths resolve against the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::characteristics::Direction;
use crate::initial_data::{CauchyData, DataError, Profile};
use crate::reconstruct::DEFAULT_NU_FLOOR;
use crate::wavespeed::{make_model, ModelError, WaveSpeedModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Table { path: PathBuf, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub model: RawModel,
    pub data: RawData,
    pub solver: RawSolver,
    #[serde(default)]
    pub output: RawOutput,
    #[serde(default)]
    pub chars: RawChars,
    #[serde(default)]
    pub check: RawCheck,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default = "default_interval")]
    pub interval: [f64; 2],
    /// Two-column CSV `(u, c)` for the tabulated model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

fn default_interval() -> [f64; 2] {
    [-5.0, 5.0]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawData {
    pub u0: RawProfile,
    #[serde(default)]
    pub u1: RawProfile,
    /// Sampling step for invariants and γ; defaults to min(h/8, 1e-3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProfile {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
    /// Two-column CSV `(x, value)`; overrides `kind`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

fn default_kind() -> String {
    "zero".into()
}

impl Default for RawProfile {
    fn default() -> Self {
        Self { kind: default_kind(), params: vec![], csv: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSolver {
    pub h: f64,
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_growth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_max_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default = "default_nu_floor")]
    pub nu_floor: f64,
    /// Number of evenly spaced times in [0, t_max] for the Q(t) series.
    #[serde(default = "default_q_samples")]
    pub q_samples: usize,
    #[serde(default = "default_true")]
    pub grid_dump: bool,
    /// Keep every `grid_stride`-th column and row in the grid dump; 0 picks
    /// a stride that keeps the dump near 100k nodes.
    #[serde(default)]
    pub grid_stride: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_nu_floor() -> f64 {
    DEFAULT_NU_FLOOR
}

fn default_q_samples() -> usize {
    21
}

fn default_true() -> bool {
    true
}

impl Default for RawOutput {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            snapshots: vec![],
            nu_floor: default_nu_floor(),
            q_samples: default_q_samples(),
            grid_dump: true,
            grid_stride: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawChars {
    #[serde(default)]
    pub backward: Vec<f64>,
    #[serde(default)]
    pub forward: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCheck {
    /// `none`, `dalembert` or `fd`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Oracle {
    None,
    Dalembert,
    Fd,
}

impl Oracle {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "none" => Ok(Self::None),
            "dalembert" => Ok(Self::Dalembert),
            "fd" => Ok(Self::Fd),
            other => Err(ConfigError::Invalid(format!("unknown oracle `{other}` (none, dalembert, fd)"))),
        }
    }
}

/// A validated configuration with the model and data built.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// The parsed file with table paths made absolute, echoed into run
    /// directories so later commands can rebuild the run.
    pub raw: RawConfig,
    pub model: WaveSpeedModel,
    pub data: CauchyData,
    pub h: f64,
    pub t_max: f64,
    pub tail_growth: f64,
    pub tail_max_ratio: f64,
    pub snapshots: Vec<f64>,
    pub nu_floor: f64,
    pub q_samples: usize,
    pub chars: Vec<(f64, Direction)>,
    pub output_dir: PathBuf,
    pub grid_dump: bool,
    pub grid_stride: usize,
    pub oracle: Oracle,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        Self::from_raw(raw, base)
    }

    pub fn from_raw(mut raw: RawConfig, base: &Path) -> Result<Self, ConfigError> {
        let absolute = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        absolute(&mut raw.model.table);
        absolute(&mut raw.data.u0.csv);
        absolute(&mut raw.data.u1.csv);
        if raw.output.dir.is_relative() {
            raw.output.dir = base.join(&raw.output.dir);
        }

        let s = &raw.solver;
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(s.h > 0.0 && s.h.is_finite()) {
            return invalid(format!("solver.h must be positive, got {}", s.h));
        }
        if !(s.t_max > 0.0 && s.t_max.is_finite()) {
            return invalid(format!("solver.t_max must be positive, got {}", s.t_max));
        }
        let tail_growth = s.tail_growth.unwrap_or(1.05);
        let tail_max_ratio = s.tail_max_ratio.unwrap_or(16.0);
        if !(tail_growth >= 1.0 && tail_max_ratio >= 1.0) {
            return invalid("solver.tail_growth and solver.tail_max_ratio must be >= 1".into());
        }
        let o = &raw.output;
        if let Some(&bad) = o.snapshots.iter().find(|&&t| !(0.0..=s.t_max).contains(&t)) {
            return invalid(format!("snapshot time {bad} is outside [0, {}]", s.t_max));
        }
        if !(o.nu_floor > 0.0 && o.nu_floor < 1.0) {
            return invalid(format!("output.nu_floor must lie in (0, 1), got {}", o.nu_floor));
        }
        if o.q_samples < 2 {
            return invalid("output.q_samples must be at least 2".into());
        }
        let dx = raw.data.dx.unwrap_or((s.h / 8.0).min(1e-3));
        if !(dx > 0.0) {
            return invalid(format!("data.dx must be positive, got {dx}"));
        }

        let m = &raw.model;
        let params = match &m.table {
            Some(path) => {
                let (us, cs) = read_table(path)?;
                us.iter().zip(&cs).flat_map(|(u, c)| [*u, *c]).collect()
            }
            None => m.params.clone(),
        };
        let model = make_model(&m.name, &params, (m.interval[0], m.interval[1]))?;
        let data = CauchyData::new(build_profile(&raw.data.u0)?, build_profile(&raw.data.u1)?, dx)?;

        let mut snapshots = o.snapshots.clone();
        snapshots.sort_by(f64::total_cmp);
        snapshots.dedup();
        let mut chars: Vec<(f64, Direction)> = raw.chars.backward.iter().map(|&x| (x, Direction::Backward)).collect();
        chars.extend(raw.chars.forward.iter().map(|&x| (x, Direction::Forward)));
        let oracle = Oracle::parse(raw.check.oracle.as_deref().unwrap_or("none"))?;

        Ok(Self {
            model,
            data,
            h: s.h,
            t_max: s.t_max,
            tail_growth,
            tail_max_ratio,
            snapshots,
            nu_floor: o.nu_floor,
            q_samples: o.q_samples,
            chars,
            output_dir: o.dir.clone(),
            grid_dump: o.grid_dump,
            grid_stride: o.grid_stride,
            oracle,
            raw,
        })
    }

    /// The config as TOML, with resolved paths.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.raw).expect("config serializes")
    }
}

fn build_profile(raw: &RawProfile) -> Result<Profile, ConfigError> {
    match &raw.csv {
        Some(path) => {
            let (xs, vs) = read_table(path)?;
            Ok(Profile::tabulated(xs, vs)?)
        }
        None => Ok(Profile::named(&raw.kind, &raw.params)?),
    }
}

/// Reads a two-column numeric CSV, skipping a header row if it does not
/// parse as numbers.
pub fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>), ConfigError> {
    let err = |msg: String| ConfigError::Table { path: path.into(), msg };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() < 2 {
            return Err(err(format!("row {} has {} columns, expected 2", line + 1, rec.len())));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                a.push(x);
                b.push(y);
            }
            _ if line == 0 => continue,
            _ => return Err(err(format!("row {} is not numeric", line + 1))),
        }
    }
    Ok((a, b))
}
