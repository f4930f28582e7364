use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vesselkin::io::config::parse_config;
use vesselkin::io::export::{export_report_csv, export_snapshot_csv, Selector};
use vesselkin::io::run::{self, RunOptions, EXIT_CONFIG, EXIT_IO, EXIT_OK};
use vesselkin::io::snapshot::read_snapshot;

/// Kinetic tip-cell / TAF simulator on an annulus.
///
/// The thread count is taken from VESSELKIN_THREADS.
#[derive(Parser)]
#[command(name = "vesselkin", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a configuration and write artifacts to the output directory.
    Run {
        config: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Stop after this many steps and write a checkpoint (direct mode).
        #[arg(long)]
        stop_at: Option<usize>,
        /// Resume from a checkpoint (direct mode).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Validate a configuration and print the step plan and K1·K2.
    Check { config: PathBuf },
    /// Export a snapshot field or a diagnostic time series as CSV.
    Export {
        /// A snapshot file, or a run directory / diagnostics.json for `diag:` fields.
        input: PathBuf,
        /// rho | c | j | slice:i,j | diag:<name>
        #[arg(long)]
        field: String,
        /// Configuration holding the model parameters (needed for `j`).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the summary of a run directory.
    Diag { run_dir: PathBuf },
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    code
}

fn load_config(path: &Path) -> Result<vesselkin::io::RunConfig, i32> {
    let text = fs::read_to_string(path).map_err(|e| fail(EXIT_IO, format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| fail(EXIT_CONFIG, format!("{} [{}]", e, e.code())))
}

fn cmd_run(config: &Path, out: &Path, stop_at: Option<usize>, resume: Option<PathBuf>) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let outcome = run::run(&cfg, out, &RunOptions { stop_at, resume });
    let s = &outcome.summary;
    println!("status: {} (exit {})", s.status, outcome.exit_code);
    if let Some(r) = &s.reason {
        println!("reason: {r}");
    }
    println!("steps: {}  dt: {:.6e}  vmax: {:.4}", s.nsteps, s.dt, s.vmax);
    for g in &s.gates {
        println!("  [{}] {} = {:.3e} (threshold {:.3e})", if g.pass { "pass" } else { "FAIL" }, g.name, g.value, g.threshold);
    }
    println!("artifacts: {}", out.display());
    outcome.exit_code
}

fn cmd_check(config: &Path) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run::check(&cfg) {
        Ok(rep) => {
            println!("config ok: mode {:?}", cfg.mode);
            println!("dt: {:.6e}  steps: {}  vmax: {:.4}", rep.dt, rep.nsteps, rep.vmax);
            if let Some(a) = rep.admissibility {
                println!("K1 = {:.6}  K2 = {:.6}  K1·K2 = {:.6}", a.k1, a.k2, a.product);
            }
            EXIT_OK
        }
        Err(e) => fail(run::exit_code(&e), e),
    }
}

fn cmd_export(input: &Path, field: &str, config: Option<PathBuf>, out: Option<PathBuf>) -> i32 {
    let sel: Selector = match field.parse() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let text = if let Selector::Diag(_) = sel {
        let report = match run::read_report(input) {
            Ok(r) => r,
            Err(e) => return fail(EXIT_IO, e),
        };
        export_report_csv(&report.records, &sel)
    } else {
        let snap = match read_snapshot(input) {
            Ok(s) => s,
            Err(e) => return fail(EXIT_IO, e),
        };
        let params = match config {
            Some(p) => match load_config(&p) {
                Ok(c) => Some(c.params),
                Err(code) => return code,
            },
            None => None,
        };
        export_snapshot_csv(&snap, &sel, params.as_ref())
    };
    let text = match text {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match out {
        Some(p) => match fs::write(&p, text) {
            Ok(()) => EXIT_OK,
            Err(e) => fail(EXIT_IO, e),
        },
        None => {
            print!("{text}");
            EXIT_OK
        }
    }
}

fn cmd_diag(dir: &Path) -> i32 {
    let s = match run::read_summary(dir) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_IO, e),
    };
    println!("status: {} (exit {})", s.status, s.exit_code);
    if let Some(r) = &s.reason {
        println!("reason: {r}");
    }
    let n = &s.final_norms;
    println!("t = {:.4}  mass = {:.6e}  |p|_inf = {:.6e}  min p = {:.3e}  min c = {:.3e}", n.time, n.mass, n.inf, n.min_p, n.min_c);
    let m = &s.residual_maxima;
    println!(
        "residuals: mass(core) {:.2e}  mass {:.2e}  m1 {:.2e}  m2 {:.2e}  L2 {:.2e}  bc {:.2e}",
        m.mass_conservative, m.mass, m.momentum_1, m.momentum_2, m.l2_identity, m.bc_identity
    );
    if let Some(p) = &s.picard {
        println!("picard: {} iterates, converged = {}", p.m, p.converged);
        for (k, d) in &p.distances {
            println!("  m = {k:2}  distance = {d:.3e}");
        }
    }
    for g in &s.gates {
        println!("  [{}] {}", if g.pass { "pass" } else { "FAIL" }, g.name);
    }
    s.exit_code
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = run::init_thread_pool() {
        return ExitCode::from(fail(EXIT_CONFIG, e) as u8);
    }
    let code = match cli.cmd {
        Cmd::Run { config, out, stop_at, resume } => cmd_run(&config, &out, stop_at, resume),
        Cmd::Check { config } => cmd_check(&config),
        Cmd::Export { input, field, config, out } => cmd_export(&input, &field, config, out),
        Cmd::Diag { run_dir } => cmd_diag(&run_dir),
    };
    ExitCode::from(code as u8)
}
