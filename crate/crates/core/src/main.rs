use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use varwave::characteristics::Direction;
use varwave::config::{Oracle, RunConfig};
use varwave::output::write_json;
use varwave::run::{self, RunError};

/// Conservative solutions of u_tt - c(u)(c(u) u_x)_x = 0 in characteristic
/// coordinates.
#[derive(Parser)]
#[command(name = "varwave", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a config and write its run directory.
    Run {
        config: PathBuf,
        /// Compare against an oracle: none, dalembert or fd.
        #[arg(long)]
        oracle: Option<String>,
    },
    /// Add a snapshot at another time to a run directory.
    Snapshot {
        run_dir: PathBuf,
        #[arg(long)]
        tau: f64,
    },
    /// Trace a characteristic of a run from a point on the initial line.
    Chars {
        run_dir: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        /// `-` (backward) or `+` (forward).
        #[arg(long, allow_hyphen_values = true)]
        sign: String,
    },
    /// Convergence study over successive halvings of h.
    Converge {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long)]
        oracle: Option<String>,
    },
    /// Print the energy report of a run.
    Energy { run_dir: PathBuf },
    /// Print the interaction bound check of a run; exit 3 if it fails.
    Qbound { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(config: &Path, oracle: Option<String>) -> Result<RunConfig, RunError> {
    let mut cfg = RunConfig::from_file(config)?;
    if let Some(o) = oracle {
        cfg.oracle = Oracle::parse(&o)?;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<u8, RunError> {
    match command {
        Command::Run { config, oracle } => {
            let cfg = load(&config, oracle)?;
            let m = run::run(&cfg)?;
            println!("run directory: {}", cfg.output_dir.display());
            println!("E0 = {:.10e}, max |e_total - E0|/E0 = {:.3e}", m.e0, m.max_energy_error);
            println!(
                "lattice: {} columns, {} nodes, {} wavefronts, cell iterations max {} mean {:.2}",
                m.lattice.n,
                m.lattice.nodes,
                m.lattice.diagonals,
                m.lattice.max_cell_iterations,
                m.lattice.mean_cell_iterations
            );
            println!("interaction bound: lhs {:.6e} rhs {:.6e} pass {}", m.bound.lhs, m.bound.rhs, m.bound.pass);
            for w in &m.warnings {
                println!("warning: {w}");
            }
            for f in &m.failures {
                println!("not produced: {f}");
            }
            if let Some(o) = &m.oracle {
                println!(
                    "oracle {:?}: {} = {:.3e} (threshold {:.1e}) pass {}",
                    o.kind, o.metric, o.max_error, o.threshold, o.pass
                );
                if !o.pass {
                    return Ok(3);
                }
            }
            Ok(0)
        }
        Command::Snapshot { run_dir, tau } => {
            let (path, snap) = run::snapshot_command(&run_dir, tau)?;
            println!("{}", path.display());
            println!(
                "tau = {tau}: e_minus {:.10e} e_plus {:.10e} e_total {:.10e}, {} atoms",
                snap.e_minus,
                snap.e_plus,
                snap.e_total,
                snap.atoms.len()
            );
            Ok(0)
        }
        Command::Chars { run_dir, from, sign } => {
            let dir = Direction::parse(&sign)
                .ok_or_else(|| RunError::Invalid(format!("sign must be `-` or `+`, got `{sign}`")))?;
            let (path, curve) = run::chars_command(&run_dir, from, dir)?;
            println!("{}", path.display());
            println!("label {:.10e}, {} points up to t = {}", curve.label, curve.points.len(), curve.t_end());
            Ok(0)
        }
        Command::Converge { config, levels, oracle } => {
            let cfg = load(&config, oracle)?;
            let rep = run::convergence_study(&cfg, levels)?;
            std::fs::create_dir_all(&cfg.output_dir)
                .map_err(|source| varwave::output::OutputError::Io { path: cfg.output_dir.clone(), source })?;
            let path = cfg.output_dir.join("converge.json");
            write_json(&path, &rep)?;
            println!("{}", path.display());
            println!("h: {:?}", rep.hs);
            for f in rep.fields.iter().chain(&rep.oracle) {
                if f.exact {
                    println!("{:>16}: exact", f.field);
                } else {
                    let errs: Vec<String> = f.errors.iter().map(|e| format!("{e:.3e}")).collect();
                    let ords: Vec<String> = f.orders.iter().map(|o| format!("{o:.2}")).collect();
                    println!("{:>16}: errors [{}] orders [{}]", f.field, errs.join(", "), ords.join(", "));
                }
            }
            Ok(0)
        }
        Command::Energy { run_dir } => {
            let records = run::read_energy(&run_dir)?;
            println!("{:>12} {:>20} {:>20} {:>20} {:>12}", "tau", "e_minus", "e_plus", "e_total", "rel_err");
            for r in &records {
                println!(
                    "{:>12.6} {:>20.12e} {:>20.12e} {:>20.12e} {:>12.3e}",
                    r.tau,
                    r.e_minus,
                    r.e_plus,
                    r.e_total,
                    r.relative_error()
                );
            }
            if let Some(r) = records.first() {
                println!("E0 = {:.12e}", r.e0);
            }
            Ok(0)
        }
        Command::Qbound { run_dir } => {
            let b = run::read_bound(&run_dir)?;
            println!("lhs {:.10e}\nrhs {:.10e}\nmargin {:.10e}\npass {}", b.lhs, b.rhs, b.margin, b.pass);
            Ok(if b.pass { 0 } else { 3 })
        }
    }
}
