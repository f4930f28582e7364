//! Coupled tip-density / TAF solvers: global-in-time Picard iteration and a
//! direct time march sharing the same per-step update.
//!
//! Step n → n+1 of the direct march:
//! c^{n+1} = S_c(c^n; j(p^n)), then p^{n+1} = S_p(p^n; F(c^{n+1}), α(c^{n+1}),
//! γb^n, inflow^n), then b^{n+1} = b^n + dt(ρ^n + ρ^{n+1})/2.
//! Picard iterate m runs the same step with c, b and boundary inputs taken
//! from iterate m−1, so a fixed point of the iteration is the direct march.

pub mod admissibility;

use serde::{Deserialize, Serialize};

use crate::diffusion::{neumann_step, DiffusionProblem};
use crate::error::{Error, Result};
use crate::fields::{alpha, flux_weights, marginal_density, regularized_delta, taf_force, tip_flux, BoundaryValues};
use crate::grid::PhaseGrid;
use crate::kinetic::boundary::{
    compute_boundary_constants, compute_j0, inner_inflow_from_moments, outer_inflow_from_moments, outer_outgoing_flux,
    BoundaryConstants,
};
use crate::kinetic::linear::{inner_inflow_mass, step_plan};
use crate::kinetic::{fp_step, Absorption, StepCoefficients, StepControls, StepRecord, Workspace};
use crate::params::ModelParams;

pub use admissibility::{admissibility_report, compute_k1, compute_k2, AdmissibilityReport};

/// Inflow treatment of the coupled problem.
#[derive(Clone, Debug)]
pub enum CoupledBc {
    /// Known inflow g.
    FixedG(BoundaryValues),
    /// Nonlocal operators; `seed` is the inflow before the first update.
    Nonlocal { seed: BoundaryValues, enforce_admissibility: bool },
}

/// Everything needed to integrate the coupled model on [0, T].
#[derive(Clone, Debug)]
pub struct CoupledProblem {
    pub grid: PhaseGrid,
    pub params: ModelParams,
    pub p0: Vec<f64>,
    pub c0: Vec<f64>,
    pub taf: DiffusionProblem,
    pub bc: CoupledBc,
    pub controls: StepControls,
    pub t_final: f64,
    pub snapshot_every: usize,
}

/// Boundary-operator inputs extracted from one state, per θ-cell.
#[derive(Clone, Debug, Default)]
pub struct StepMoments {
    /// Trace marginal at r0: outgoing mass of p plus incoming mass of the
    /// previous inflow.
    pub inner_rho: Vec<f64>,
    pub inner_out: Vec<f64>,
    pub outer_j0: Vec<f64>,
    pub outer_out: Vec<f64>,
}

/// Per-step view for observers.
pub struct CoupledStepEvent<'a> {
    /// Picard iterate index, 0 for the direct march.
    pub iterate: usize,
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub p_before: &'a [f64],
    pub p_after: &'a [f64],
    pub c_after: &'a [f64],
    pub inflow: &'a BoundaryValues,
    pub record: &'a StepRecord,
    pub force: &'a [[f64; 2]],
    /// α per spatial cell.
    pub rate: &'a [f64],
    /// γb per spatial cell.
    pub decay: &'a [f64],
    /// ν per velocity cell.
    pub profile: &'a [f64],
    /// Relative residuals of the inner and outer identities (nonlocal mode).
    pub bc_inner_residual: f64,
    pub bc_outer_residual: f64,
    pub clamp: f64,
}

/// State stored at snapshot cadence.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSnapshot {
    pub step: usize,
    pub time: f64,
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub inflow: BoundaryValues,
}

pub trait Observer {
    fn iterate_start(&mut self, _m: usize) {}
    fn step(&mut self, _ev: &CoupledStepEvent) -> Result<()> {
        Ok(())
    }
    fn snapshot(&mut self, _iterate: usize, _snap: &CoupledSnapshot) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;
impl Observer for NoopObserver {}

/// Full state of the direct march between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct MarchState {
    pub step: usize,
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    /// Inflow used by the previous step (the seed before step 0).
    pub prev_inflow: BoundaryValues,
}

#[derive(Clone, Debug)]
pub struct CoupledRun {
    pub state: MarchState,
    pub snapshots: Vec<CoupledSnapshot>,
    pub records: Vec<StepRecord>,
    pub dt: f64,
    pub nsteps: usize,
    pub admissibility: Option<AdmissibilityReport>,
    pub clamp_total: f64,
    pub max_bc_residual: f64,
}

struct Ctx<'a> {
    pb: &'a CoupledProblem,
    nsteps: usize,
    ctl: StepControls,
    jw: Vec<f64>,
    nu: Vec<f64>,
    consts: Option<BoundaryConstants>,
    report: Option<AdmissibilityReport>,
}

impl<'a> Ctx<'a> {
    fn new(pb: &'a CoupledProblem) -> Result<Self> {
        let g = &pb.grid;
        if pb.p0.len() != g.len() || pb.c0.len() != g.space.ncells() {
            return Err(Error::Param("initial data has the wrong size".into()));
        }
        if pb.taf.data.c_r0.len() != g.space.nth {
            return Err(Error::Param("c_r0 needs one value per angular cell".into()));
        }
        let (nsteps, dt) = step_plan(pb.t_final, pb.controls.dt)?;
        let (consts, report) = match &pb.bc {
            CoupledBc::FixedG(_) => (None, None),
            CoupledBc::Nonlocal { enforce_admissibility, .. } => {
                if !g.vel.contains(pb.params.v0) {
                    return Err(Error::Param("v0 lies outside the velocity box".into()));
                }
                let rep = admissibility_report(g, &pb.params)?;
                if *enforce_admissibility && !rep.pass {
                    return Err(Error::Admissibility { product: rep.product });
                }
                (Some(compute_boundary_constants(g, &pb.params)?), Some(rep))
            }
        };
        Ok(Ctx {
            pb,
            nsteps,
            ctl: StepControls { dt, ..pb.controls },
            jw: flux_weights(&pb.params, &g.vel),
            nu: g.vel.tabulate(|v| regularized_delta(&pb.params, v)),
            consts,
            report,
        })
    }

    fn dt(&self) -> f64 {
        self.ctl.dt
    }

    fn seed(&self) -> BoundaryValues {
        match &self.pb.bc {
            CoupledBc::FixedG(g) => g.clone(),
            CoupledBc::Nonlocal { seed, .. } => seed.clone(),
        }
    }

    fn evolve_c(&self, c: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let j = tip_flux(&self.pb.grid, p, &self.jw);
        neumann_step(&self.pb.grid.space, &self.pb.taf, c, out, Some(&j), None, self.dt())
    }

    /// Boundary-operator inputs from state `p`, previous inflow and c at r1.
    fn moments(&self, p: &[f64], prev: &BoundaryValues, c_next: &[f64]) -> Result<StepMoments> {
        let g = &self.pb.grid;
        let consts = self.consts.as_ref().expect("nonlocal mode");
        let nv2 = g.nv2();
        let nr = g.space.nr;
        let nth = g.space.nth;
        let mut m = StepMoments {
            inner_rho: vec![0.0; nth],
            inner_out: vec![0.0; nth],
            outer_j0: vec![0.0; nth],
            outer_out: vec![0.0; nth],
        };
        for j in 0..nth {
            let slab = g.slab(p, 0, j);
            let hs = &g.inner[j];
            let out = hs.integrate_outgoing(|kv| slab[kv]);
            m.inner_out[j] = out;
            m.inner_rho[j] = out + hs.integrate_incoming(|kv| prev.inner[j * nv2 + kv]);
            let slab = g.slab(p, nr - 1, j);
            m.outer_j0[j] = compute_j0(g, &self.pb.params, c_next[g.space.idx(nr - 1, j)], slab)?;
            m.outer_out[j] = outer_outgoing_flux(g, consts, j, slab);
        }
        Ok(m)
    }

    /// Applies both operators; returns (clamp, inner residual, outer residual).
    fn inflow_from(&self, m: &StepMoments, out: &mut BoundaryValues) -> (f64, f64, f64) {
        let g = &self.pb.grid;
        let consts = self.consts.as_ref().expect("nonlocal mode");
        let nv2 = g.nv2();
        let mut clamp = 0.0;
        let mut ri: f64 = 0.0;
        let mut ro: f64 = 0.0;
        for j in 0..g.space.nth {
            let dst = &mut out.inner[j * nv2..(j + 1) * nv2];
            let o = inner_inflow_from_moments(g, consts, j, m.inner_rho[j], m.inner_out[j], dst);
            clamp += o.clamp;
            let hs = &g.inner[j];
            let lhs = hs.integrate_incoming(|kv| dst[kv]) + m.inner_out[j];
            let scale = m.inner_rho[j].abs().max(m.inner_out[j].abs());
            if scale > 0.0 {
                ri = ri.max(((lhs - m.inner_rho[j]).abs() - o.clamp) / scale);
            }
            let dst = &mut out.outer[j * nv2..(j + 1) * nv2];
            let o = outer_inflow_from_moments(g, consts, j, m.outer_j0[j], m.outer_out[j], dst);
            clamp += o.clamp;
            let ho = &g.outer[j];
            let lhs = ho.integrate_incoming(|kv| ho.vn[kv].abs() * consts.fermi[kv] * dst[kv]) + m.outer_out[j];
            let scale = m.outer_j0[j].abs().max(m.outer_out[j].abs());
            if scale > 0.0 {
                ro = ro.max(((lhs - m.outer_j0[j]).abs() - o.clamp) / scale);
            }
        }
        (clamp, ri, ro)
    }
}

/// Per-step coefficient arrays.
struct Coeffs {
    force: Vec<[f64; 2]>,
    rate: Vec<f64>,
    decay: Vec<f64>,
}

fn coefficients(ctx: &Ctx, c: &[f64], b: &[f64]) -> Coeffs {
    let pb = ctx.pb;
    Coeffs {
        force: taf_force(&pb.grid.space, c, &pb.taf.data.c_r0, &pb.params),
        rate: c.iter().map(|&x| alpha(&pb.params, x)).collect(),
        decay: b.iter().map(|&x| pb.params.gamma * x).collect(),
    }
}

fn advance(ctx: &Ctx, ws: &mut Workspace, p: &mut Vec<f64>, k: &Coeffs, inflow: &BoundaryValues) -> Result<StepRecord> {
    let pb = ctx.pb;
    let coeffs = StepCoefficients {
        beta: pb.params.beta,
        sigma: pb.params.sigma,
        force: &k.force,
        absorption: Absorption::Separable { decay: &k.decay, rate: &k.rate, profile: &ctx.nu },
        source: None,
    };
    fp_step(&pb.grid, p, ws, &coeffs, inflow, &ctx.ctl)
}

fn snapshot_due(n: usize, every: usize, nsteps: usize) -> bool {
    (n + 1) % every.max(1) == 0 || n + 1 == nsteps
}

/// Initial march state: p0, c0, b = 0 and the seed (or fixed) inflow.
pub fn initial_state(pb: &CoupledProblem) -> MarchState {
    let seed = match &pb.bc {
        CoupledBc::FixedG(g) => g.clone(),
        CoupledBc::Nonlocal { seed, .. } => seed.clone(),
    };
    MarchState { step: 0, p: pb.p0.clone(), c: pb.c0.clone(), b: vec![0.0; pb.c0.len()], prev_inflow: seed }
}

/// Direct coupled march on [0, T].
pub fn direct_coupled_march(pb: &CoupledProblem, obs: &mut dyn Observer) -> Result<CoupledRun> {
    march_from(pb, initial_state(pb), None, obs)
}

/// Continues the direct march from `state`, optionally stopping after
/// `stop_at` total steps (for checkpoints).
pub fn march_from(pb: &CoupledProblem, mut st: MarchState, stop_at: Option<usize>, obs: &mut dyn Observer) -> Result<CoupledRun> {
    let ctx = Ctx::new(pb)?;
    let g = &pb.grid;
    let dt = ctx.dt();
    let end = stop_at.unwrap_or(ctx.nsteps).min(ctx.nsteps);
    let mut ws = Workspace::default();
    let mut c_next = vec![0.0; st.c.len()];
    let mut inflow = st.prev_inflow.clone();
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    let mut clamp_total = 0.0;
    let mut max_res: f64 = 0.0;
    let mut before = Vec::new();
    obs.iterate_start(0);
    if st.step == 0 {
        let s0 = CoupledSnapshot {
            step: 0,
            time: 0.0,
            p: st.p.clone(),
            c: st.c.clone(),
            b: st.b.clone(),
            inflow: st.prev_inflow.clone(),
        };
        obs.snapshot(0, &s0)?;
        snapshots.push(s0);
    }
    let mut rho = marginal_density(g, &st.p);
    for n in st.step..end {
        ctx.evolve_c(&st.c, &st.p, &mut c_next)?;
        let k = coefficients(&ctx, &c_next, &st.b);
        let (mut clamp, mut ri, mut ro) = (0.0, 0.0, 0.0);
        match &pb.bc {
            CoupledBc::FixedG(gv) => inflow.clone_from(gv),
            CoupledBc::Nonlocal { .. } => {
                let m = ctx.moments(&st.p, &st.prev_inflow, &c_next)?;
                (clamp, ri, ro) = ctx.inflow_from(&m, &mut inflow);
            }
        }
        clamp_total += clamp;
        max_res = max_res.max(ri).max(ro);
        before.clone_from(&st.p);
        let rec = advance(&ctx, &mut ws, &mut st.p, &k, &inflow)?;
        let rho_new = marginal_density(g, &st.p);
        for ((b, a), c) in st.b.iter_mut().zip(&rho).zip(&rho_new) {
            *b += 0.5 * dt * (a + c);
        }
        rho = rho_new;
        std::mem::swap(&mut st.c, &mut c_next);
        st.prev_inflow.clone_from(&inflow);
        st.step = n + 1;
        obs.step(&CoupledStepEvent {
            iterate: 0,
            step: n,
            t: n as f64 * dt,
            dt,
            p_before: &before,
            p_after: &st.p,
            c_after: &st.c,
            inflow: &inflow,
            record: &rec,
            force: &k.force,
            rate: &k.rate,
            decay: &k.decay,
            profile: &ctx.nu,
            bc_inner_residual: ri,
            bc_outer_residual: ro,
            clamp,
        })?;
        records.push(rec);
        if snapshot_due(n, pb.snapshot_every, ctx.nsteps) {
            let s = CoupledSnapshot {
                step: n + 1,
                time: (n + 1) as f64 * dt,
                p: st.p.clone(),
                c: st.c.clone(),
                b: st.b.clone(),
                inflow: inflow.clone(),
            };
            obs.snapshot(0, &s)?;
            snapshots.push(s);
        }
    }
    Ok(CoupledRun {
        state: st,
        snapshots,
        records,
        dt,
        nsteps: ctx.nsteps,
        admissibility: ctx.report,
        clamp_total,
        max_bc_residual: max_res,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSettings {
    pub tol: f64,
    pub m_max: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings { tol: 1e-6, m_max: 20 }
    }
}

/// History of the Picard iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PicardState {
    /// Index of the last iterate computed.
    pub m: usize,
    /// (m, relative L¹ distance ‖p_m − p_{m−1}‖ / ‖p_m‖, sup over snapshots).
    pub distances: Vec<(usize, f64)>,
    /// (m, ‖c_m − c_{m−1}‖_{L²} at T).
    pub c_distances: Vec<(usize, f64)>,
    /// (m, ∫ p_m⁻ over the inner inflow boundary).
    pub inner_trace_l1: Vec<(usize, f64)>,
    /// (m, observed sup |v·n| p_m⁻ at r1 over the bound K₁‖j₀‖ + K₁K₂‖p_{m−1}⁺‖).
    pub outer_trace_ratio: Vec<(usize, f64)>,
    pub converged: bool,
}

pub struct PicardResult {
    pub run: CoupledRun,
    pub state: PicardState,
}

/// Stored trajectory of one iterate.
struct IterateRecord {
    c: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    moments: Vec<StepMoments>,
    snaps: Vec<Vec<f64>>,
    /// sup over steps of the |v·n|-weighted outgoing trace at r1, and of j₀.
    out_trace_sup: f64,
    j0_sup: f64,
}

fn first_iterate(ctx: &Ctx) -> Result<IterateRecord> {
    let pb = ctx.pb;
    let nsp = pb.c0.len();
    let zero_p = vec![0.0; pb.grid.len()];
    let zeros = vec![0.0; nsp];
    let mut c = vec![pb.c0.clone()];
    let mut next = vec![0.0; nsp];
    for n in 0..ctx.nsteps {
        ctx.evolve_c(&c[n], &zero_p, &mut next)?;
        c.push(next.clone());
    }
    let nth = pb.grid.space.nth;
    let zm = StepMoments {
        inner_rho: vec![0.0; nth],
        inner_out: vec![0.0; nth],
        outer_j0: vec![0.0; nth],
        outer_out: vec![0.0; nth],
    };
    let nsnap = (0..ctx.nsteps).filter(|&n| snapshot_due(n, pb.snapshot_every, ctx.nsteps)).count() + 1;
    Ok(IterateRecord {
        c,
        b: vec![zeros; ctx.nsteps + 1],
        moments: vec![zm; ctx.nsteps],
        snaps: vec![zero_p; nsnap],
        out_trace_sup: 0.0,
        j0_sup: 0.0,
    })
}

struct IterateOutput {
    rec: IterateRecord,
    run: CoupledRun,
    inner_l1: f64,
    in_trace_sup: f64,
}

fn weighted_outgoing_sup(grid: &PhaseGrid, p: &[f64]) -> f64 {
    let nr = grid.space.nr;
    let mut s: f64 = 0.0;
    for j in 0..grid.space.nth {
        let hs = &grid.outer[j];
        let slab = grid.slab(p, nr - 1, j);
        for &kv in &hs.outgoing {
            s = s.max(hs.vn[kv] * slab[kv]);
        }
    }
    s
}

fn run_iterate(ctx: &Ctx, prev: &IterateRecord, m: usize, obs: &mut dyn Observer) -> Result<IterateOutput> {
    let pb = ctx.pb;
    let g = &pb.grid;
    let dt = ctx.dt();
    let nonlocal = matches!(pb.bc, CoupledBc::Nonlocal { .. });
    let mut st = initial_state(pb);
    let mut ws = Workspace::default();
    let mut c_next = vec![0.0; st.c.len()];
    let mut inflow = ctx.seed();
    let mut rec = IterateRecord {
        c: Vec::with_capacity(ctx.nsteps + 1),
        b: Vec::with_capacity(ctx.nsteps + 1),
        moments: Vec::new(),
        snaps: vec![st.p.clone()],
        out_trace_sup: 0.0,
        j0_sup: 0.0,
    };
    rec.c.push(st.c.clone());
    rec.b.push(st.b.clone());
    let mut snapshots = Vec::new();
    let mut records = Vec::with_capacity(ctx.nsteps);
    let s0 = CoupledSnapshot { step: 0, time: 0.0, p: st.p.clone(), c: st.c.clone(), b: st.b.clone(), inflow: inflow.clone() };
    obs.iterate_start(m);
    obs.snapshot(m, &s0)?;
    snapshots.push(s0);
    let mut clamp_total = 0.0;
    let mut max_res: f64 = 0.0;
    let mut inner_l1 = 0.0;
    let mut in_sup: f64 = 0.0;
    let mut rho = marginal_density(g, &st.p);
    let mut before = Vec::new();
    for n in 0..ctx.nsteps {
        ctx.evolve_c(&st.c, &st.p, &mut c_next)?;
        if nonlocal {
            let mom = ctx.moments(&st.p, &st.prev_inflow, &c_next)?;
            rec.out_trace_sup = rec.out_trace_sup.max(weighted_outgoing_sup(g, &st.p));
            rec.j0_sup = rec.j0_sup.max(mom.outer_j0.iter().fold(0.0, |a: f64, &b| a.max(b)));
            rec.moments.push(mom);
        }
        let k = coefficients(ctx, &prev.c[n + 1], &prev.b[n]);
        let (mut clamp, mut ri, mut ro) = (0.0, 0.0, 0.0);
        match &pb.bc {
            CoupledBc::FixedG(gv) => inflow.clone_from(gv),
            CoupledBc::Nonlocal { seed, .. } => {
                if m == 2 {
                    inflow.clone_from(seed);
                } else {
                    (clamp, ri, ro) = ctx.inflow_from(&prev.moments[n], &mut inflow);
                }
            }
        }
        clamp_total += clamp;
        max_res = max_res.max(ri).max(ro);
        inner_l1 += dt * inner_inflow_mass(g, &inflow);
        if nonlocal {
            for j in 0..g.space.nth {
                let ho = &g.outer[j];
                let nv2 = g.nv2();
                for &kv in &ho.incoming {
                    in_sup = in_sup.max(ho.vn[kv].abs() * inflow.outer[j * nv2 + kv]);
                }
            }
        }
        before.clone_from(&st.p);
        let r = advance(ctx, &mut ws, &mut st.p, &k, &inflow)?;
        let rho_new = marginal_density(g, &st.p);
        for ((b, a), c) in st.b.iter_mut().zip(&rho).zip(&rho_new) {
            *b += 0.5 * dt * (a + c);
        }
        rho = rho_new;
        std::mem::swap(&mut st.c, &mut c_next);
        st.prev_inflow.clone_from(&inflow);
        st.step = n + 1;
        rec.c.push(st.c.clone());
        rec.b.push(st.b.clone());
        obs.step(&CoupledStepEvent {
            iterate: m,
            step: n,
            t: n as f64 * dt,
            dt,
            p_before: &before,
            p_after: &st.p,
            c_after: &st.c,
            inflow: &inflow,
            record: &r,
            force: &k.force,
            rate: &k.rate,
            decay: &k.decay,
            profile: &ctx.nu,
            bc_inner_residual: ri,
            bc_outer_residual: ro,
            clamp,
        })?;
        records.push(r);
        if snapshot_due(n, pb.snapshot_every, ctx.nsteps) {
            rec.snaps.push(st.p.clone());
            let s = CoupledSnapshot {
                step: n + 1,
                time: (n + 1) as f64 * dt,
                p: st.p.clone(),
                c: st.c.clone(),
                b: st.b.clone(),
                inflow: inflow.clone(),
            };
            obs.snapshot(m, &s)?;
            snapshots.push(s);
        }
    }
    let run = CoupledRun {
        state: st,
        snapshots,
        records,
        dt,
        nsteps: ctx.nsteps,
        admissibility: ctx.report,
        clamp_total,
        max_bc_residual: max_res,
    };
    Ok(IterateOutput { rec, run, inner_l1, in_trace_sup: in_sup })
}

/// Σ A ω |p|.
fn l1(grid: &PhaseGrid, p: &[f64]) -> f64 {
    let nv2 = grid.nv2();
    let nth = grid.space.nth;
    p.chunks(nv2)
        .enumerate()
        .map(|(c, s)| grid.space.area(c / nth) * s.iter().map(|x| x.abs()).sum::<f64>())
        .sum::<f64>()
        * grid.vel.weight()
}

/// Relative phase-space L¹ distance, 0 when both states vanish.
pub fn relative_l1_distance(grid: &PhaseGrid, a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let num = l1(grid, &diff);
    let den = l1(grid, a);
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Global-in-time Picard iteration: p₁ = 0, c₁ the TAF solution without
/// consumption, then p_m with coefficients and boundary inputs frozen at
/// iterate m−1 and c_m driven by j(p_m).
pub fn picard_solve(pb: &CoupledProblem, settings: &PicardSettings, obs: &mut dyn Observer) -> Result<PicardResult> {
    let ctx = Ctx::new(pb)?;
    let g = &pb.grid;
    let mut prev = first_iterate(&ctx)?;
    let mut state = PicardState { m: 1, ..Default::default() };
    let m_max = settings.m_max.max(2);
    let mut last: Option<CoupledRun> = None;
    for m in 2..=m_max {
        let out = run_iterate(&ctx, &prev, m, obs)?;
        let d = out
            .rec
            .snaps
            .iter()
            .zip(&prev.snaps)
            .map(|(a, b)| relative_l1_distance(g, a, b))
            .fold(0.0_f64, f64::max);
        let cn = out.rec.c.last().unwrap();
        let cp = prev.c.last().unwrap();
        let dc: Vec<f64> = cn.iter().zip(cp).map(|(a, b)| a - b).collect();
        state.c_distances.push((m, crate::diffusion::l2_norm(&g.space, &dc)));
        state.distances.push((m, d));
        state.inner_trace_l1.push((m, out.inner_l1));
        if m >= 3 {
            if let Some(rep) = &ctx.report {
                let bound = rep.k1 * prev.j0_sup + rep.product * prev.out_trace_sup;
                let ratio = if bound > 0.0 { out.in_trace_sup / bound } else if out.in_trace_sup == 0.0 { 0.0 } else { f64::INFINITY };
                state.outer_trace_ratio.push((m, ratio));
            }
        }
        state.m = m;
        last = Some(out.run);
        prev = out.rec;
        if d <= settings.tol {
            state.converged = true;
            break;
        }
    }
    Ok(PicardResult { run: last.expect("at least one iterate"), state })
}
