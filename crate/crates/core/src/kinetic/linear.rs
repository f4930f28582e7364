//! Time loop for the linear problem with fixed or nonlocal inflow.

use std::borrow::Cow;

use crate::coupling::admissibility::admissibility_report;
use crate::error::{Error, Result};
use crate::fields::{BoundaryValues, TipDensity};
use crate::grid::PhaseGrid;
use crate::kinetic::boundary::{
    compute_boundary_constants, inner_inflow_from_moments, outer_inflow_from_moments, BoundaryConstants,
};
use crate::kinetic::{fp_step, Absorption, StepCoefficients, StepControls, StepRecord, Workspace};
use crate::params::ModelParams;

/// Data that is either fixed or a function of time (evaluated at mid-step).
pub enum Coefficient<T> {
    Steady(T),
    Unsteady(Box<dyn Fn(f64) -> T + Send + Sync>),
}

impl<T: Clone> Coefficient<T> {
    pub fn at(&self, t: f64) -> Cow<'_, T> {
        match self {
            Coefficient::Steady(x) => Cow::Borrowed(x),
            Coefficient::Unsteady(f) => Cow::Owned(f(t)),
        }
    }
}

/// Owned absorption coefficient.
#[derive(Clone, Debug, PartialEq)]
pub enum AbsorptionField {
    Zero,
    Phase(Vec<f64>),
    Separable { decay: Vec<f64>, rate: Vec<f64>, profile: Vec<f64> },
}

impl AbsorptionField {
    pub fn as_absorption(&self) -> Absorption<'_> {
        match self {
            AbsorptionField::Zero => Absorption::Zero,
            AbsorptionField::Phase(a) => Absorption::Field(a),
            AbsorptionField::Separable { decay, rate, profile } => Absorption::Separable { decay, rate, profile },
        }
    }

    /// ‖a⁻‖_∞.
    pub fn negative_part_sup(&self) -> f64 {
        match self {
            AbsorptionField::Zero => 0.0,
            AbsorptionField::Phase(a) => a.iter().fold(0.0_f64, |m, &x| m.max(-x)),
            AbsorptionField::Separable { decay, rate, profile } => {
                let pmax = profile.iter().fold(0.0_f64, |m, &x| m.max(x));
                let pmin = profile.iter().fold(f64::INFINITY, |m, &x| m.min(x));
                decay.iter().zip(rate).fold(0.0_f64, |m, (d, r)| {
                    let worst = if *r >= 0.0 { r * pmax } else { r * pmin };
                    m.max(worst - d)
                })
            }
        }
    }
}

/// The linear problem: coefficients, source, inflow data and initial state.
pub struct LinearProblemSpec {
    pub beta: f64,
    pub sigma: f64,
    pub p0: Vec<f64>,
    /// F per spatial cell.
    pub force: Coefficient<Vec<[f64; 2]>>,
    pub absorption: Coefficient<AbsorptionField>,
    /// h on the phase grid.
    pub source: Option<Coefficient<Vec<f64>>>,
    /// Fixed inflow g; the seed of the first step in nonlocal mode.
    pub inflow: Coefficient<BoundaryValues>,
    /// Outer flux datum j₀ per θ-cell, used in nonlocal mode.
    pub j0: Option<Coefficient<Vec<f64>>>,
}

/// Boundary condition mode of a linear solve.
pub enum BcMode<'a> {
    Fixed,
    /// Nonlocal operators built from `params`; the admissibility gate aborts
    /// unless `enforce_admissibility` is false.
    Nonlocal { params: &'a ModelParams, enforce_admissibility: bool },
}

/// Per-step view handed to observers.
pub struct StepEvent<'a> {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub p_before: &'a [f64],
    pub p_after: &'a [f64],
    pub inflow: &'a BoundaryValues,
    pub record: &'a StepRecord,
}

pub struct LinearSolution {
    pub p: TipDensity,
    /// States at t = 0 and every `snapshot_every` steps (always including T).
    pub snapshots: Vec<TipDensity>,
    pub records: Vec<StepRecord>,
    /// ∫ p⁻ dS dv dt over the inner inflow boundary.
    pub inner_inflow_l1: f64,
    pub clamp_total: f64,
    pub last_inflow: BoundaryValues,
}

/// Uniform step count and size covering [0, T] with steps ≤ `dt`.
pub fn step_plan(t_final: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t_final >= 0.0 && dt > 0.0) {
        return Err(Error::Param(format!("invalid time plan T={t_final}, dt={dt}")));
    }
    if t_final == 0.0 {
        return Ok((0, dt));
    }
    let n = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((n, t_final / n as f64))
}

/// Inner-boundary inflow mass Σ_j L ω Σ_in p⁻ (per unit time).
pub fn inner_inflow_mass(grid: &PhaseGrid, g: &BoundaryValues) -> f64 {
    let nv2 = grid.nv2();
    let len = grid.space.arc_length(0);
    (0..grid.space.nth)
        .map(|j| grid.inner[j].integrate_incoming(|kv| g.inner[j * nv2 + kv]))
        .sum::<f64>()
        * len
}

/// Nonlocal inflow for the next step from the current state `p`, the
/// previous inflow and the outer datum. Returns the summed clamp magnitude.
pub fn nonlocal_inflow(
    grid: &PhaseGrid,
    consts: &BoundaryConstants,
    p: &[f64],
    prev: &BoundaryValues,
    j0: &[f64],
    out: &mut BoundaryValues,
) -> f64 {
    let nv2 = grid.nv2();
    let nr = grid.space.nr;
    let mut clamp = 0.0;
    for j in 0..grid.space.nth {
        let slab = grid.slab(p, 0, j);
        let hs = &grid.inner[j];
        let out_mass = hs.integrate_outgoing(|kv| slab[kv]);
        let rho = out_mass + hs.integrate_incoming(|kv| prev.inner[j * nv2 + kv]);
        let o = inner_inflow_from_moments(grid, consts, j, rho, out_mass, &mut out.inner[j * nv2..(j + 1) * nv2]);
        clamp += o.clamp;
        let slab = grid.slab(p, nr - 1, j);
        let x = crate::kinetic::boundary::outer_outgoing_flux(grid, consts, j, slab);
        let o = outer_inflow_from_moments(grid, consts, j, j0[j], x, &mut out.outer[j * nv2..(j + 1) * nv2]);
        clamp += o.clamp;
    }
    clamp
}

/// Integrates the linear problem on [0, T].
pub fn solve_linear_fp(
    grid: &PhaseGrid,
    spec: &LinearProblemSpec,
    bc: &BcMode,
    controls: &StepControls,
    t_final: f64,
    snapshot_every: usize,
    observer: &mut dyn FnMut(&StepEvent) -> Result<()>,
) -> Result<LinearSolution> {
    if spec.p0.len() != grid.len() {
        return Err(Error::Param("initial density has the wrong size".into()));
    }
    let consts = match bc {
        BcMode::Fixed => None,
        BcMode::Nonlocal { params, enforce_admissibility } => {
            let rep = admissibility_report(grid, params)?;
            if *enforce_admissibility && !rep.pass {
                return Err(Error::Admissibility { product: rep.product });
            }
            if spec.j0.is_none() {
                return Err(Error::Param("nonlocal mode needs the outer datum j0".into()));
            }
            Some(compute_boundary_constants(grid, params)?)
        }
    };
    let (nsteps, dt) = step_plan(t_final, controls.dt)?;
    let ctl = StepControls { dt, ..*controls };
    let every = snapshot_every.max(1);
    let mut p = spec.p0.clone();
    let mut ws = Workspace::default();
    let mut snapshots = vec![TipDensity { time: 0.0, values: p.clone() }];
    let mut records = Vec::with_capacity(nsteps);
    let mut prev = spec.inflow.at(0.5 * dt).into_owned();
    let mut inflow = prev.clone();
    let mut inner_l1 = 0.0;
    let mut clamp_total = 0.0;
    let mut before = Vec::new();
    for n in 0..nsteps {
        let t = n as f64 * dt;
        let tm = t + 0.5 * dt;
        match &consts {
            None => inflow = spec.inflow.at(tm).into_owned(),
            Some(k) => {
                let j0 = spec.j0.as_ref().map(|c| c.at(tm)).unwrap();
                clamp_total += nonlocal_inflow(grid, k, &p, &prev, &j0, &mut inflow);
            }
        }
        let force = spec.force.at(tm);
        let absorption = spec.absorption.at(tm);
        let source = spec.source.as_ref().map(|s| s.at(tm));
        let coeffs = StepCoefficients {
            beta: spec.beta,
            sigma: spec.sigma,
            force: &force,
            absorption: absorption.as_absorption(),
            source: source.as_deref().map(|v| v.as_slice()),
        };
        before.clone_from(&p);
        let rec = fp_step(grid, &mut p, &mut ws, &coeffs, &inflow, &ctl)?;
        inner_l1 += dt * inner_inflow_mass(grid, &inflow);
        observer(&StepEvent { step: n, t, dt, p_before: &before, p_after: &p, inflow: &inflow, record: &rec })?;
        records.push(rec);
        std::mem::swap(&mut prev, &mut inflow);
        if (n + 1) % every == 0 || n + 1 == nsteps {
            snapshots.push(TipDensity { time: (n + 1) as f64 * dt, values: p.clone() });
        }
    }
    Ok(LinearSolution {
        p: TipDensity { time: nsteps as f64 * dt, values: p },
        snapshots,
        records,
        inner_inflow_l1: inner_l1,
        clamp_total,
        last_inflow: prev,
    })
}
