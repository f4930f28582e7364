//! Executes a configuration and writes its artifacts:
//! `snapshots/*.bin`, `diagnostics.json`, `summary.json` and `config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::{
    admissibility_report, march_from, picard_solve, AdmissibilityReport, CoupledBc, CoupledProblem,
    CoupledRun, CoupledSnapshot, PicardState,
};
use crate::diagnostics::{
    heat_decay_report, interpolation_report, linf_bound, lq_norm, mass_balance_residual, weighted_growth_rate,
    BalanceInputs, DiagnosticsReport, HeatDecayReport, HeatRuns, InterpolationSettings, Monitor, MonitorToggles,
    SnapshotRecord, SCHEMA_VERSION,
};
use crate::diffusion::{diffusion_dt_limit, solve_heat_with_stops, DiffusionProblem};
use crate::error::{Error, Result};
use crate::fields::{min_value, outgoing_trace, sup_norm, taf_force, weighted_sup_boundary, weighted_sup_norm, BoundaryValues};
use crate::grid::{build_annulus_grid, build_velocity_grid, AnnulusGrid, PhaseGrid, Side};
use crate::io::config::{AdmissibilityPolicy, BcKind, DtPolicy, Mode, RunConfig};
use crate::io::profiles::{boundary_profile, Profile};
use crate::io::snapshot::{checkpoint_read, checkpoint_write, write_snapshot, Snapshot, SnapshotKind};
use crate::kinetic::linear::step_plan;
use crate::kinetic::{cfl_dt, solve_linear_fp, total_mass, AbsorptionField, BcMode, Coefficient, LinearProblemSpec, StepControls};
use crate::params::default_vmax;

pub const THREADS_ENV: &str = "VESSELKIN_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 6;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ADMISSIBILITY: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_GATE: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Param(_) | Error::Grid(_) => EXIT_CONFIG,
        Error::Admissibility { .. } => EXIT_ADMISSIBILITY,
        Error::Cfl(_) | Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Snapshot(_) | Error::Io(_) => EXIT_IO,
    }
}

fn error_code(e: &Error) -> String {
    match e {
        Error::Config(c) => c.code().to_string(),
        Error::Param(_) => "param".into(),
        Error::Grid(_) => "grid".into(),
        Error::Admissibility { .. } => "admissibility".into(),
        Error::Cfl(_) => "cfl".into(),
        Error::Numerical(_) => "numerical".into(),
        Error::Snapshot(_) => "snapshot".into(),
        Error::Io(_) => "io".into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub pass: bool,
    #[serde(with = "crate::json_float")]
    pub value: f64,
    #[serde(with = "crate::json_float")]
    pub threshold: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalNorms {
    pub time: f64,
    pub mass: f64,
    pub l1: f64,
    pub l2: f64,
    pub inf: f64,
    pub weighted_sup: f64,
    #[serde(with = "crate::json_float")]
    pub min_p: f64,
    #[serde(with = "crate::json_float")]
    pub min_c: f64,
    pub c_l2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualMaxima {
    pub mass_conservative: f64,
    pub mass: f64,
    pub momentum_1: f64,
    pub momentum_2: f64,
    pub l2_identity: f64,
    pub bc_identity: f64,
    pub clamp_total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub status: String,
    pub exit_code: i32,
    pub reason: Option<String>,
    pub error_code: Option<String>,
    pub mode: Option<Mode>,
    pub dt: f64,
    pub nsteps: usize,
    pub vmax: f64,
    pub final_norms: FinalNorms,
    pub residual_maxima: ResidualMaxima,
    pub picard: Option<PicardState>,
    pub admissibility: Option<AdmissibilityReport>,
    pub heat: Option<HeatDecayReport>,
    pub gates: Vec<Gate>,
}

/// Extra controls of a run beyond the configuration.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Direct mode: stop after this many steps and write `checkpoint.bin`.
    pub stop_at: Option<usize>,
    /// Direct mode: continue from a checkpoint.
    pub resume: Option<PathBuf>,
}

pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: Summary,
    pub report: DiagnosticsReport,
}

/// Phase grid of a configuration; the velocity box defaults to
/// [`default_vmax`] with a 1e-12 tail tolerance.
pub fn build_grid(cfg: &RunConfig) -> Result<PhaseGrid> {
    let g = &cfg.grid;
    let space = build_annulus_grid(g.r0, g.r1, g.nr, g.nth)?;
    let vmax = g.vmax.unwrap_or_else(|| default_vmax(&cfg.params, 1e-12));
    PhaseGrid::new(space, build_velocity_grid(vmax, g.nv)?)
}

fn inflow_data(cfg: &RunConfig, grid: &PhaseGrid) -> BoundaryValues {
    let mut g = BoundaryValues::zeros(grid);
    boundary_profile(grid, Side::Inner, &cfg.bc.g_inner, &mut g);
    boundary_profile(grid, Side::Outer, &cfg.bc.g_outer, &mut g);
    g
}

fn source_field(p: &Profile, grid: &PhaseGrid) -> Option<Vec<f64>> {
    if *p == Profile::Zero {
        None
    } else {
        Some(p.phase(grid))
    }
}

/// Coupled problem of a picard/direct configuration (dt still unresolved).
pub fn coupled_problem(cfg: &RunConfig) -> Result<CoupledProblem> {
    let grid = build_grid(cfg)?;
    let data = cfg.bc.c_r0.build(&grid.space);
    let taf = DiffusionProblem { d: cfg.params.d, eta: cfg.params.eta, data, scheme: cfg.taf.scheme };
    let g = inflow_data(cfg, &grid);
    let bc = match cfg.bc.mode {
        BcKind::FixedG => CoupledBc::FixedG(g),
        BcKind::Nonlocal => CoupledBc::Nonlocal { seed: g, enforce_admissibility: cfg.bc.admissibility == AdmissibilityPolicy::Enforce },
    };
    let p0 = cfg.initial.p.phase(&grid);
    let c0 = cfg.initial.c.spatial(&grid.space);
    let mut pb = CoupledProblem {
        grid,
        params: cfg.params.clone(),
        p0,
        c0,
        taf,
        bc,
        controls: StepControls { dt: 1.0, safety: cfg.time.safety, splitting: cfg.time.splitting },
        t_final: cfg.time.t_final,
        snapshot_every: cfg.time.snapshot_every,
    };
    pb.controls.dt = coupled_dt(cfg, &pb)?;
    Ok(pb)
}

/// Fixed dt, or the CFL-limited one. The force bound allows the gradient to
/// double relative to the initial data or the boundary flux datum.
pub fn coupled_dt(cfg: &RunConfig, pb: &CoupledProblem) -> Result<f64> {
    if cfg.time.dt_policy == DtPolicy::Fixed {
        return cfg.time.dt.ok_or_else(|| Error::Param("fixed dt policy needs time.dt".into()));
    }
    let g = &pb.grid;
    let f0 = taf_force(&g.space, &pb.c0, &pb.taf.data.c_r0, &pb.params);
    let fmax = f0.iter().fold(0.0_f64, |m, f| m.max(f[0].abs()).max(f[1].abs()));
    let datum = pb.taf.data.c_r0.iter().fold(0.0_f64, |m, x| m.max(x.abs())) * pb.params.d1;
    let f = 2.0 * fmax.max(datum);
    let mut dt = cfl_dt(g, pb.params.beta, pb.params.sigma, &[[f, f]], cfg.time.safety);
    dt = dt.min(0.9 * g.transport_dt_limit());
    dt = dt.min(0.9 * diffusion_dt_limit(&g.space, pb.taf.d, pb.taf.scheme));
    if let Some(cap) = cfg.time.dt {
        dt = dt.min(cap);
    }
    Ok(dt)
}

fn linear_dt(cfg: &RunConfig, grid: &PhaseGrid) -> Result<f64> {
    if cfg.time.dt_policy == DtPolicy::Fixed {
        return cfg.time.dt.ok_or_else(|| Error::Param("fixed dt policy needs time.dt".into()));
    }
    let f = cfg.linear.force;
    let mut dt = cfl_dt(grid, cfg.params.beta, cfg.params.sigma, &[f], cfg.time.safety).min(0.9 * grid.transport_dt_limit());
    if let Some(cap) = cfg.time.dt {
        dt = dt.min(cap);
    }
    Ok(dt)
}

fn heat_dt(cfg: &RunConfig, space: &AnnulusGrid) -> Result<f64> {
    let lim = 0.9 * diffusion_dt_limit(space, cfg.heat.d, cfg.heat.scheme);
    match cfg.time.dt_policy {
        DtPolicy::Fixed => cfg.time.dt.ok_or_else(|| Error::Param("fixed dt policy needs time.dt".into())),
        DtPolicy::CflAuto => Ok(cfg.time.dt.map_or(lim, |c| c.min(lim))),
    }
}

/// Startup checks of `vesselkin check`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub mode: Option<Mode>,
    pub vmax: f64,
    pub dt: f64,
    pub nsteps: usize,
    pub transport_dt_limit: f64,
    pub admissibility: Option<AdmissibilityReport>,
}

pub fn check(cfg: &RunConfig) -> Result<CheckReport> {
    let mut rep = CheckReport { mode: Some(cfg.mode), ..Default::default() };
    match cfg.mode {
        Mode::HeatLab => {
            let space = build_annulus_grid(cfg.grid.r0, cfg.grid.r1, cfg.grid.nr, cfg.grid.nth)?;
            rep.dt = heat_dt(cfg, &space)?;
        }
        Mode::LinearFp => {
            let grid = build_grid(cfg)?;
            rep.vmax = grid.vel.vmax;
            rep.transport_dt_limit = grid.transport_dt_limit();
            rep.dt = linear_dt(cfg, &grid)?;
            if cfg.bc.mode == BcKind::Nonlocal {
                rep.admissibility = Some(admissibility_report(&grid, &cfg.params)?);
            }
        }
        Mode::Picard | Mode::Direct => {
            let pb = coupled_problem(cfg)?;
            rep.vmax = pb.grid.vel.vmax;
            rep.transport_dt_limit = pb.grid.transport_dt_limit();
            rep.dt = pb.controls.dt;
            if cfg.bc.mode == BcKind::Nonlocal {
                rep.admissibility = Some(admissibility_report(&pb.grid, &cfg.params)?);
            }
        }
    }
    rep.nsteps = step_plan(cfg.time.t_final, rep.dt)?.0;
    if let Some(a) = &rep.admissibility {
        if !a.pass && cfg.bc.admissibility == AdmissibilityPolicy::Enforce {
            return Err(Error::Admissibility { product: a.product });
        }
    }
    Ok(rep)
}

fn dims(grid: &PhaseGrid) -> [u32; 3] {
    [grid.space.nr as u32, grid.space.nth as u32, grid.vel.nv as u32]
}

fn geometry(grid: &PhaseGrid) -> [f64; 3] {
    [grid.space.r0, grid.space.r1, grid.vel.vmax]
}

fn state_snapshot(grid: &PhaseGrid, s: &CoupledSnapshot) -> Snapshot {
    let [nr, nth, nv] = dims(grid);
    Snapshot {
        kind: SnapshotKind::State,
        nr,
        nth,
        nv,
        step: s.step as u64,
        time: s.time,
        r0: grid.space.r0,
        r1: grid.space.r1,
        vmax: grid.vel.vmax,
        p: s.p.clone(),
        c: s.c.clone(),
        b: s.b.clone(),
        inflow: s.inflow.clone(),
        trace: outgoing_trace(grid, &s.p),
    }
}

fn snapshot_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("snapshots").join(format!("snap_{step:06}.bin"))
}

fn gate(name: &str, pass: bool, value: f64, threshold: f64) -> Gate {
    Gate { name: name.into(), pass, value, threshold }
}

fn residual_maxima(report: &DiagnosticsReport) -> ResidualMaxima {
    let mut m = ResidualMaxima::default();
    for r in &report.records {
        m.mass_conservative = m.mass_conservative.max(r.mass_residual_conservative);
        m.mass = m.mass.max(r.mass_residual);
        m.momentum_1 = m.momentum_1.max(r.momentum_residual_1);
        m.momentum_2 = m.momentum_2.max(r.momentum_residual_2);
        m.l2_identity = m.l2_identity.max(r.l2_identity_residual);
        m.bc_identity = m.bc_identity.max(r.bc_residual);
        m.clamp_total += r.clamp_total;
    }
    m
}

fn common_gates(cfg: &RunConfig, report: &DiagnosticsReport, gates: &mut Vec<Gate>) {
    gates.push(gate("positivity.p", report.min_p >= 0.0, report.min_p, 0.0));
    if report.min_c.is_finite() {
        gates.push(gate("positivity.c", report.min_c >= 0.0, report.min_c, 0.0));
    }
    let m = residual_maxima(report);
    gates.push(gate("mass.conservative", m.mass_conservative <= cfg.tolerances.mass_conservative, m.mass_conservative, cfg.tolerances.mass_conservative));
    if cfg.diagnostics.bounds {
        let w = report.records.iter().fold(f64::INFINITY, |a, r| a.min(r.weighted_margin));
        gates.push(gate("bound.weighted", w >= 0.0, w, 0.0));
        let l = report.records.iter().fold(f64::INFINITY, |a, r| a.min(r.linf_margin));
        gates.push(gate("bound.linf", l >= 0.0, l, 0.0));
    }
    if cfg.diagnostics.interpolation {
        let s = cfg.tolerances.interpolation_slack;
        let w = report.records.iter().fold(f64::INFINITY, |a, r| a.min(r.interpolation.worst()));
        gates.push(gate("interpolation", w >= -s, w, -s));
    }
}

fn final_norms(grid: &PhaseGrid, p: &[f64], c: &[f64], time: f64, mu: f64, report: &DiagnosticsReport) -> FinalNorms {
    FinalNorms {
        time,
        mass: total_mass(grid, p),
        l1: lq_norm(grid, p, 1.0),
        l2: lq_norm(grid, p, 2.0),
        inf: sup_norm(p),
        weighted_sup: weighted_sup_norm(grid, p, mu),
        min_p: report.min_p,
        min_c: report.min_c,
        c_l2: if c.is_empty() { 0.0 } else { crate::diffusion::l2_norm(&grid.space, c) },
    }
}

fn new_monitor<'g>(cfg: &RunConfig, grid: &'g PhaseGrid) -> Monitor<'g> {
    let mut m = Monitor::new(grid, cfg.params.beta, cfg.params.sigma);
    m.mu = cfg.diagnostics.mu;
    m.mu_max = cfg.diagnostics.mu.ceil() as u32;
    m.toggles = MonitorToggles { balance: cfg.diagnostics.balance, bounds: cfg.diagnostics.bounds, interpolation: cfg.diagnostics.interpolation };
    m.interp = InterpolationSettings { mu: cfg.diagnostics.mu, ell: cfg.diagnostics.ell };
    m
}

fn run_coupled(cfg: &RunConfig, dir: &Path, opts: &RunOptions, summary: &mut Summary) -> Result<DiagnosticsReport> {
    let pb = coupled_problem(cfg)?;
    let g = &pb.grid;
    summary.vmax = g.vel.vmax;
    let (nsteps, dt) = step_plan(pb.t_final, pb.controls.dt)?;
    summary.dt = dt;
    summary.nsteps = nsteps;
    let mut mon = new_monitor(cfg, g);
    let seed = match &pb.bc {
        CoupledBc::FixedG(v) => v.clone(),
        CoupledBc::Nonlocal { seed, .. } => seed.clone(),
    };
    mon.set_initial(&pb.p0, &seed);
    let run: CoupledRun = match cfg.mode {
        Mode::Picard => {
            let res = picard_solve(&pb, &cfg.picard, &mut mon)?;
            mon.retain_iterate(res.state.m);
            summary.picard = Some(res.state);
            res.run
        }
        _ => {
            let start = match &opts.resume {
                Some(path) => {
                    let s = checkpoint_read(path)?;
                    if [s.nr, s.nth, s.nv] != dims(g) {
                        return Err(Error::Param("checkpoint dimensions differ from the configuration".into()));
                    }
                    s.to_march_state()
                }
                None => crate::coupling::initial_state(&pb),
            };
            let run = march_from(&pb, start, opts.stop_at, &mut mon)?;
            if opts.stop_at.is_some() && run.state.step < nsteps {
                let ck = Snapshot::from_march_state(&run.state, run.state.step as f64 * dt, dims(g), geometry(g));
                checkpoint_write(&dir.join("checkpoint.bin"), &ck)?;
            }
            run
        }
    };
    summary.admissibility = run.admissibility;
    for s in &run.snapshots {
        write_snapshot(&snapshot_path(dir, s.step as u64), &state_snapshot(g, s))?;
    }
    let mut report = mon.report;
    report.admissibility = run.admissibility;
    let last_t = run.state.step as f64 * dt;
    summary.final_norms = final_norms(g, &run.state.p, &run.state.c, last_t, cfg.diagnostics.mu, &report);
    summary.residual_maxima = residual_maxima(&report);
    summary.residual_maxima.bc_identity = summary.residual_maxima.bc_identity.max(run.max_bc_residual);
    summary.residual_maxima.clamp_total = run.clamp_total;
    common_gates(cfg, &report, &mut summary.gates);
    if cfg.bc.mode == BcKind::Nonlocal {
        let r = run.max_bc_residual;
        summary.gates.push(gate("bc.identity", r <= cfg.tolerances.bc_identity, r, cfg.tolerances.bc_identity));
        if let Some(a) = &run.admissibility {
            summary.gates.push(gate("admissibility", a.pass, a.product, 1.0));
        }
    }
    if let Some(ps) = &summary.picard {
        let d = ps.distances.last().map_or(f64::INFINITY, |x| x.1);
        summary.gates.push(gate("picard.converged", ps.converged, d, cfg.picard.tol));
    }
    Ok(report)
}

fn run_linear(cfg: &RunConfig, dir: &Path, summary: &mut Summary) -> Result<DiagnosticsReport> {
    let grid = build_grid(cfg)?;
    summary.vmax = grid.vel.vmax;
    let dt = linear_dt(cfg, &grid)?;
    let (nsteps, dt) = step_plan(cfg.time.t_final, dt)?;
    summary.dt = dt;
    summary.nsteps = nsteps;
    let ns = grid.space.ncells();
    let g = inflow_data(cfg, &grid);
    let a = cfg.linear.absorption;
    let absorption = if a == 0.0 { AbsorptionField::Zero } else { AbsorptionField::Phase(vec![a; grid.len()]) };
    let source = source_field(&cfg.linear.source, &grid);
    let force = vec![cfg.linear.force; ns];
    let spec = LinearProblemSpec {
        beta: cfg.params.beta,
        sigma: cfg.params.sigma,
        p0: cfg.initial.p.phase(&grid),
        force: Coefficient::Steady(force.clone()),
        absorption: Coefficient::Steady(absorption.clone()),
        source: source.clone().map(Coefficient::Steady),
        inflow: Coefficient::Steady(g.clone()),
        j0: Some(Coefficient::Steady(vec![cfg.linear.j0; grid.space.nth])),
    };
    let bc = match cfg.bc.mode {
        BcKind::FixedG => BcMode::Fixed,
        BcKind::Nonlocal => {
            let rep = admissibility_report(&grid, &cfg.params)?;
            summary.admissibility = Some(rep);
            BcMode::Nonlocal { params: &cfg.params, enforce_admissibility: cfg.bc.admissibility == AdmissibilityPolicy::Enforce }
        }
    };
    let ctl = StepControls { dt, safety: cfg.time.safety, splitting: cfg.time.splitting };
    let mut per_step: Vec<(f64, f64, f64)> = Vec::with_capacity(nsteps);
    let mut min_p = min_value(&spec.p0);
    let mut g_sup: f64 = g.sup();
    let mut g_weighted: f64 = weighted_sup_boundary(&grid, &g, cfg.diagnostics.mu);
    let balance = cfg.diagnostics.balance;
    let sol = solve_linear_fp(&grid, &spec, &bc, &ctl, cfg.time.t_final, cfg.time.snapshot_every, &mut |ev| {
        min_p = min_p.min(min_value(ev.p_after));
        g_sup = g_sup.max(ev.inflow.sup());
        g_weighted = g_weighted.max(weighted_sup_boundary(&grid, ev.inflow, cfg.diagnostics.mu));
        let mass = ev.record.mass_before.max(ev.record.mass_after);
        let scale = if mass > 0.0 { mass } else { 1.0 };
        let cons = ev.record.relative_conservative_residual(ev.dt);
        let full = if balance {
            let inp = BalanceInputs {
                beta: spec.beta,
                sigma: spec.sigma,
                force: &force,
                absorption: absorption.as_absorption(),
                source: source.as_deref(),
                inflow: ev.inflow,
                dt: ev.dt,
            };
            mass_balance_residual(&grid, ev.p_before, ev.p_after, &inp) / scale
        } else {
            0.0
        };
        per_step.push((cons, full, ev.record.fluxes.mass_in));
        Ok(())
    })?;
    let a_minus = absorption.negative_part_sup();
    let h_sup = source.as_deref().map_or(0.0, sup_norm);
    let f_sup = cfg.linear.force[0].hypot(cfg.linear.force[1]);
    let mu = cfg.diagnostics.mu;
    let rate = weighted_growth_rate(spec.beta, spec.sigma, mu, f_sup, a_minus);
    let p0_sup = sup_norm(&spec.p0);
    let p0_w = weighted_sup_norm(&grid, &spec.p0, mu);
    let every = cfg.time.snapshot_every.max(1);
    let mut report = DiagnosticsReport { schema_version: SCHEMA_VERSION, min_p, min_c: f64::INFINITY, ..Default::default() };
    let [nr, nth, nv] = dims(&grid);
    for (k, s) in sol.snapshots.iter().enumerate() {
        let step = if k == 0 { 0 } else { ((k * every).min(nsteps)) as u64 };
        let lo = if k == 0 { 0 } else { (k - 1) * every };
        let window = &per_step[lo.min(per_step.len())..(step as usize).min(per_step.len())];
        let p = &s.values;
        let inf = sup_norm(p);
        let lb = linf_bound(s.time, spec.beta, a_minus, p0_sup, g_sup, s.time * h_sup);
        let wb = (p0_w + weighted_sup_boundary(&grid, &g, mu).max(g_weighted)) * (rate * s.time).exp();
        let ws = weighted_sup_norm(&grid, p, mu);
        report.records.push(SnapshotRecord {
            step: step as usize,
            time: s.time,
            mass: total_mass(&grid, p),
            inflow: window.last().map_or(0.0, |w| w.2),
            mass_residual_conservative: window.iter().fold(0.0, |m, w| m.max(w.0)),
            mass_residual: window.iter().fold(0.0, |m, w| m.max(w.1)),
            norm_l1: lq_norm(&grid, p, 1.0),
            norm_l2: lq_norm(&grid, p, 2.0),
            norm_inf: inf,
            moments: (0..=mu.ceil() as u32).map(|l| crate::fields::moment(&grid, p, l)).collect(),
            weighted_sup: ws,
            weighted_bound: wb,
            weighted_margin: if cfg.diagnostics.bounds { wb - ws } else { 0.0 },
            linf_bound: lb,
            linf_margin: if cfg.diagnostics.bounds { lb - inf } else { 0.0 },
            interpolation: if cfg.diagnostics.interpolation {
                interpolation_report(&grid, p, &InterpolationSettings { mu, ell: cfg.diagnostics.ell })
            } else {
                Default::default()
            },
            min_p: min_value(p),
            min_c: f64::INFINITY,
            ..Default::default()
        });
        let snap = Snapshot {
            kind: SnapshotKind::State,
            nr,
            nth,
            nv,
            step,
            time: s.time,
            r0: grid.space.r0,
            r1: grid.space.r1,
            vmax: grid.vel.vmax,
            p: p.clone(),
            c: Vec::new(),
            b: Vec::new(),
            inflow: if k == 0 { g.clone() } else { sol.last_inflow.clone() },
            trace: outgoing_trace(&grid, p),
        };
        write_snapshot(&snapshot_path(dir, step), &snap)?;
    }
    summary.final_norms = final_norms(&grid, &sol.p.values, &[], sol.p.time, mu, &report);
    summary.residual_maxima = residual_maxima(&report);
    summary.residual_maxima.clamp_total = sol.clamp_total;
    common_gates(cfg, &report, &mut summary.gates);
    Ok(report)
}

fn run_heat(cfg: &RunConfig, dir: &Path, summary: &mut Summary) -> Result<DiagnosticsReport> {
    let h = &cfg.heat;
    let space = build_annulus_grid(cfg.grid.r0, cfg.grid.r1, cfg.grid.nr, cfg.grid.nth)?;
    let dt = heat_dt(cfg, &space)?;
    summary.dt = dt;
    let u0 = h.u0.spatial(&space);
    let src = if h.source == Profile::Zero { None } else { Some(h.source.spatial(&space)) };
    let mut stops = h.check_times.clone();
    if let Some(w) = h.slope_window {
        stops.extend_from_slice(&w);
    }
    let traj = solve_heat_with_stops(&space, h.d, &u0, src.as_deref(), cfg.time.t_final, dt, cfg.time.snapshot_every, h.scheme, &stops)?;
    summary.nsteps = step_plan(cfg.time.t_final, dt)?.0;
    let h_sup = src.as_deref().map_or(0.0, sup_norm);
    let runs = HeatRuns {
        homogeneous: if src.is_none() { Some(&traj) } else { None },
        check_times: &h.check_times,
        inhomogeneous: if src.is_some() && sup_norm(&u0) == 0.0 { Some((&traj, h_sup)) } else { None },
        point_like: h.slope_window.map(|w| (traj.as_slice(), w)),
        slack: h.slack,
    };
    let rep = heat_decay_report(&space, &runs);
    let mut report = DiagnosticsReport { schema_version: SCHEMA_VERSION, min_p: 0.0, min_c: f64::INFINITY, ..Default::default() };
    for (k, s) in traj.iter().enumerate() {
        report.min_c = report.min_c.min(min_value(&s.values));
        report.records.push(SnapshotRecord { step: k, time: s.time, min_c: min_value(&s.values), ..Default::default() });
        let snap = Snapshot {
            kind: SnapshotKind::State,
            nr: space.nr as u32,
            nth: space.nth as u32,
            nv: 0,
            step: k as u64,
            time: s.time,
            r0: space.r0,
            r1: space.r1,
            vmax: 0.0,
            p: Vec::new(),
            c: s.values.clone(),
            b: Vec::new(),
            inflow: BoundaryValues::default(),
            trace: BoundaryValues::default(),
        };
        write_snapshot(&snapshot_path(dir, k as u64), &snap)?;
    }
    let last = traj.last().unwrap();
    summary.final_norms = FinalNorms {
        time: last.time,
        min_c: report.min_c,
        c_l2: crate::diffusion::l2_norm(&space, &last.values),
        ..Default::default()
    };
    summary.gates.push(gate("positivity.c", report.min_c >= 0.0, report.min_c, 0.0));
    summary.gates.push(gate("heat.decay", rep.pass(), rep.smoothing_slope.unwrap_or(f64::NAN), -1.5));
    summary.heat = Some(rep);
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(path, text)?;
    Ok(())
}

/// Runs `cfg` into `dir`. `summary.json` is written on every exit path.
pub fn run(cfg: &RunConfig, dir: &Path, opts: &RunOptions) -> RunOutcome {
    let mut summary = Summary { schema_version: SCHEMA_VERSION, mode: Some(cfg.mode), ..Default::default() };
    let body = |summary: &mut Summary| -> Result<DiagnosticsReport> {
        fs::create_dir_all(dir.join("snapshots"))?;
        let text = toml::to_string(cfg).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        fs::write(dir.join("config.toml"), text)?;
        match cfg.mode {
            Mode::Picard | Mode::Direct => run_coupled(cfg, dir, opts, summary),
            Mode::LinearFp => run_linear(cfg, dir, summary),
            Mode::HeatLab => run_heat(cfg, dir, summary),
        }
    };
    // Parallel reductions only reproduce bit for bit on a fixed single thread.
    let result = if cfg.deterministic {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(|| body(&mut summary)),
            Err(e) => Err(Error::Io(std::io::Error::other(e))),
        }
    } else {
        body(&mut summary)
    };
    let report = match result {
        Ok(report) => {
            let failed: Vec<&str> = summary.gates.iter().filter(|g| !g.pass).map(|g| g.name.as_str()).collect();
            if failed.is_empty() {
                summary.status = "ok".into();
                summary.exit_code = EXIT_OK;
            } else {
                summary.status = "gate-failure".into();
                summary.exit_code = EXIT_GATE;
                summary.reason = Some(format!("gates failed: {}", failed.join(", ")));
            }
            report
        }
        Err(e) => {
            summary.status = "error".into();
            summary.exit_code = exit_code(&e);
            summary.error_code = Some(error_code(&e));
            summary.reason = Some(e.to_string());
            DiagnosticsReport { schema_version: SCHEMA_VERSION, ..Default::default() }
        }
    };
    let _ = fs::create_dir_all(dir);
    let mut code = summary.exit_code;
    if let Err(e) = write_json(&dir.join("diagnostics.json"), &report) {
        summary.reason = Some(format!("{}; could not write diagnostics: {e}", summary.reason.clone().unwrap_or_default()));
        code = if code == EXIT_OK { EXIT_IO } else { code };
    }
    summary.exit_code = code;
    if write_json(&dir.join("summary.json"), &summary).is_err() && code == EXIT_OK {
        code = EXIT_IO;
        summary.exit_code = code;
    }
    RunOutcome { exit_code: code, summary, report }
}

/// Sizes the global thread pool from `VESSELKIN_THREADS` (unset or 0 keeps
/// the rayon default). Call once before any parallel work.
pub fn init_thread_pool() -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| Error::Param(format!("{THREADS_ENV} must be a thread count, got `{v}`")))?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(rayon::current_num_threads())
}

/// Reads a diagnostics report, given the file or its run directory.
pub fn read_report(path: &Path) -> Result<DiagnosticsReport> {
    let file = if path.is_dir() { path.join("diagnostics.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(file)?;
    serde_json::from_str(&text).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Reads `summary.json` of a run directory.
pub fn read_summary(dir: &Path) -> Result<Summary> {
    let text = fs::read_to_string(dir.join("summary.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Io(std::io::Error::other(e)))
}
