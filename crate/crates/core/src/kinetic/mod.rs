//! Split explicit finite-volume solver for the linear Fokker-Planck problem
//!
//! ∂p/∂t + v·∇ₓp + div_v((F − βv)p) − σΔ_v p + a p = h.
//!
//! Every sub-step is written as a nonnegative combination of old values, so
//! positivity and order preservation hold exactly in floating point.

pub mod boundary;
pub mod linear;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::BoundaryValues;
use crate::grid::{PhaseGrid, Side};

pub use boundary::{
    apply_inner_bc, apply_outer_bc, compute_boundary_constants, compute_j0, BcOutcome, BoundaryConstants,
};
pub use linear::{solve_linear_fp, AbsorptionField, BcMode, Coefficient, LinearProblemSpec, LinearSolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splitting {
    Lie,
    Strang,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControls {
    pub dt: f64,
    pub safety: f64,
    pub splitting: Splitting,
}

impl StepControls {
    pub fn new(dt: f64) -> Self {
        StepControls { dt, safety: 0.3, splitting: Splitting::Strang }
    }
}

/// The three explicit time-step limits, before the safety factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CflLimits {
    pub transport: f64,
    pub advection: f64,
    pub diffusion: f64,
}

impl CflLimits {
    pub fn min(&self) -> f64 {
        self.transport.min(self.advection).min(self.diffusion)
    }
}

/// Componentwise bound on |F − βv| over the velocity box.
pub fn max_drift(grid: &PhaseGrid, beta: f64, force: &[[f64; 2]]) -> f64 {
    let fmax = force.iter().fold(0.0_f64, |m, f| m.max(f[0].abs()).max(f[1].abs()));
    fmax + beta.abs() * grid.vel.vmax
}

pub fn cfl_limits(grid: &PhaseGrid, beta: f64, sigma: f64, force: &[[f64; 2]]) -> CflLimits {
    let transport = grid.space.min_spacing() / grid.vel.vmax;
    let drift = max_drift(grid, beta, force);
    let advection = if drift > 0.0 { grid.vel.dv / drift } else { f64::INFINITY };
    let diffusion = if sigma > 0.0 { grid.vel.dv * grid.vel.dv / (4.0 * sigma) } else { f64::INFINITY };
    CflLimits { transport, advection, diffusion }
}

/// safety · min(Δx/Vmax, Δv/max|F − βv|, Δv²/(4σ)).
pub fn cfl_dt(grid: &PhaseGrid, beta: f64, sigma: f64, force: &[[f64; 2]], safety: f64) -> f64 {
    safety * cfl_limits(grid, beta, sigma, force).min()
}

/// Kinetic-measure integrals ∫|v·n| w(v) (·) dS dv of the traces seen by one
/// transport sub-step, per unit time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFluxes {
    pub mass_in: f64,
    pub mass_out: f64,
    /// |v|-weighted.
    pub m1_in: f64,
    pub m1_out: f64,
    /// |v|²-weighted.
    pub m2_in: f64,
    pub m2_out: f64,
    /// Square traces, ∫|v·n| (Tr p)².
    pub sq_in: f64,
    pub sq_out: f64,
}

impl BoundaryFluxes {
    fn scaled_add(&mut self, o: &BoundaryFluxes, s: f64) {
        self.mass_in += s * o.mass_in;
        self.mass_out += s * o.mass_out;
        self.m1_in += s * o.m1_in;
        self.m1_out += s * o.m1_out;
        self.m2_in += s * o.m2_in;
        self.m2_out += s * o.m2_out;
        self.sq_in += s * o.sq_in;
        self.sq_out += s * o.sq_out;
    }
}

/// Total-mass bookkeeping of one fp_step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepRecord {
    pub mass_before: f64,
    pub mass_after: f64,
    /// Boundary fluxes of the transport sub-step (rates).
    pub fluxes: BoundaryFluxes,
    /// Exact mass change of all reaction sub-steps (absorption and source).
    pub reaction_delta: f64,
}

impl StepRecord {
    /// |Δmass/dt − (in − out) − reaction/dt|: closes to rounding for the
    /// split scheme.
    pub fn conservative_residual(&self, dt: f64) -> f64 {
        ((self.mass_after - self.mass_before) / dt
            - (self.fluxes.mass_in - self.fluxes.mass_out)
            - self.reaction_delta / dt)
            .abs()
    }

    /// Per-step residual dt·[`Self::conservative_residual`] relative to the
    /// largest term of the balance (the mass itself in closed runs).
    pub fn relative_conservative_residual(&self, dt: f64) -> f64 {
        let scale = self
            .mass_before
            .max(self.mass_after)
            .max(dt * self.fluxes.mass_in)
            .max(dt * self.fluxes.mass_out)
            .max(self.reaction_delta.abs());
        if scale > 0.0 {
            dt * self.conservative_residual(dt) / scale
        } else {
            0.0
        }
    }
}

/// Absorption coefficient a(x, v) of one step.
#[derive(Clone, Copy, Debug)]
pub enum Absorption<'a> {
    Zero,
    /// a on the phase grid.
    Field(&'a [f64]),
    /// a = decay(x) − rate(x)·profile(v), i.e. γb − α(c)ν(v) in the model.
    Separable { decay: &'a [f64], rate: &'a [f64], profile: &'a [f64] },
}

/// Frozen coefficients for one step.
#[derive(Clone, Copy, Debug)]
pub struct StepCoefficients<'a> {
    pub beta: f64,
    pub sigma: f64,
    /// F per spatial cell.
    pub force: &'a [[f64; 2]],
    pub absorption: Absorption<'a>,
    /// h on the phase grid.
    pub source: Option<&'a [f64]>,
}

fn area_sum(grid: &PhaseGrid, p: &[f64]) -> f64 {
    let nv2 = grid.nv2();
    let nth = grid.space.nth;
    let per: Vec<f64> = p
        .par_chunks(nv2)
        .enumerate()
        .map(|(c, s)| grid.space.area(c / nth) * s.iter().sum::<f64>())
        .collect();
    per.iter().sum::<f64>() * grid.vel.weight()
}

/// Total mass Σ A ω p.
pub fn total_mass(grid: &PhaseGrid, p: &[f64]) -> f64 {
    area_sum(grid, p)
}

/// Upwind transport at fixed v over dt, reading `p` and writing `out`.
/// Incoming boundary faces use `inflow`. Returns the boundary fluxes.
pub fn transport_step(grid: &PhaseGrid, p: &[f64], out: &mut [f64], inflow: &BoundaryValues, dt: f64) -> Result<BoundaryFluxes> {
    if dt * grid.max_transport_rate > 1.0 + 1e-12 {
        return Err(Error::Cfl(format!(
            "transport dt = {dt} exceeds monotone limit {}",
            grid.transport_dt_limit()
        )));
    }
    let s = &grid.space;
    let (nr, nth) = (s.nr, s.nth);
    let nv2 = grid.nv2();
    out.par_chunks_mut(nv2).enumerate().for_each(|(c, dst)| {
        let i = c / nth;
        let j = c % nth;
        let jp = (j + 1) % nth;
        let jm = (j + nth - 1) % nth;
        let lo = s.chord_length(i);
        let hi = s.chord_length(i + 1);
        let dta = dt / s.area(i);
        let vr = &grid.vr[j * nv2..(j + 1) * nv2];
        let vp = &grid.vth[j * nv2..(j + 1) * nv2];
        let vm = &grid.vth[jm * nv2..(jm + 1) * nv2];
        let own = &p[c * nv2..(c + 1) * nv2];
        let ang_p = &p[s.idx(i, jp) * nv2..(s.idx(i, jp) + 1) * nv2];
        let ang_m = &p[s.idx(i, jm) * nv2..(s.idx(i, jm) + 1) * nv2];
        for kv in 0..nv2 {
            let mut outr = 0.0;
            let mut inn = 0.0;
            let ur = vr[kv];
            // face at r_{i+1/2}
            if i + 1 < nr {
                let f = ur * hi;
                if f > 0.0 {
                    outr += f;
                } else {
                    inn += -f * p[(c + nth) * nv2 + kv];
                }
            } else {
                match grid.outer[j].class[kv] {
                    1 => outr += ur * hi,
                    -1 => inn += -ur * hi * inflow.outer[j * nv2 + kv],
                    _ => {}
                }
            }
            // face at r_{i-1/2}, outward normal −ê_r
            if i > 0 {
                let f = -ur * lo;
                if f > 0.0 {
                    outr += f;
                } else {
                    inn += -f * p[(c - nth) * nv2 + kv];
                }
            } else {
                match grid.inner[j].class[kv] {
                    1 => outr += -ur * lo,
                    -1 => inn += ur * lo * inflow.inner[j * nv2 + kv],
                    _ => {}
                }
            }
            let f = vp[kv] * s.dr;
            if f > 0.0 {
                outr += f;
            } else {
                inn += -f * ang_p[kv];
            }
            let f = -vm[kv] * s.dr;
            if f > 0.0 {
                outr += f;
            } else {
                inn += -f * ang_m[kv];
            }
            dst[kv] = (1.0 - dta * outr).max(0.0) * own[kv] + dta * inn;
        }
    });
    Ok(boundary_fluxes(grid, p, inflow))
}

/// Boundary flux integrals for outgoing values taken from `p` and incoming
/// values from `inflow`.
pub fn boundary_fluxes(grid: &PhaseGrid, p: &[f64], inflow: &BoundaryValues) -> BoundaryFluxes {
    let nv2 = grid.nv2();
    let w = grid.vel.weight();
    let speed: Vec<f64> = grid.vel.tabulate(|v| v[0].hypot(v[1]));
    let mut fx = BoundaryFluxes::default();
    for side in [Side::Inner, Side::Outer] {
        let i = grid.space.boundary_layer(side);
        let len = match side {
            Side::Inner => grid.space.chord_length(0),
            Side::Outer => grid.space.chord_length(grid.space.nr),
        };
        let g = inflow.side(side);
        for j in 0..grid.space.nth {
            let hs = grid.half_space(side, j);
            let slab = grid.slab(p, i, j);
            for &kv in &hs.outgoing {
                let m = hs.vn[kv] * len * w;
                let x = slab[kv];
                fx.mass_out += m * x;
                fx.m1_out += m * speed[kv] * x;
                fx.m2_out += m * speed[kv] * speed[kv] * x;
                fx.sq_out += m * x * x;
            }
            for &kv in &hs.incoming {
                let m = -hs.vn[kv] * len * w;
                let x = g[j * nv2 + kv];
                fx.mass_in += m * x;
                fx.m1_in += m * speed[kv] * x;
                fx.m2_in += m * speed[kv] * speed[kv] * x;
                fx.sq_in += m * x * x;
            }
        }
    }
    fx
}

/// Bernoulli function B(x) = x / (e^x − 1).
#[inline]
pub(crate) fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else if x > 700.0 {
        x * (-x).exp()
    } else {
        x / x.exp_m1()
    }
}

/// Transfer rates across the velocity faces of one axis: `up[k]` moves mass
/// from cell k to k+1, `down[k]` from k+1 to k. Exponentially fitted
/// (Scharfetter-Gummel) fluxes: upwind for strong drift, centered diffusion
/// for weak drift, and exact on the Maxwellian equilibrium.
fn face_rates(grid: &PhaseGrid, force: f64, beta: f64, sigma: f64, up: &mut [f64], down: &mut [f64]) {
    let dv = grid.vel.dv;
    for k in 0..grid.vel.nv - 1 {
        let u = force - beta * grid.vel.face(k + 1);
        if sigma > 0.0 {
            let pe = u * dv / sigma;
            let d = sigma / (dv * dv);
            up[k] = d * bernoulli(-pe);
            down[k] = d * bernoulli(pe);
        } else {
            up[k] = u.max(0.0) / dv;
            down[k] = (-u).max(0.0) / dv;
        }
    }
}

/// The semi-discrete velocity operator L with p' = p + dt·L p for one
/// explicit velocity step.
pub fn velocity_operator(grid: &PhaseGrid, p: &[f64], force: &[[f64; 2]], beta: f64, sigma: f64) -> Vec<f64> {
    let nv = grid.vel.nv;
    let nv2 = grid.nv2();
    let mut out = vec![0.0; p.len()];
    out.par_chunks_mut(nv2).zip(p.par_chunks(nv2)).enumerate().for_each(|(c, (dst, src))| {
        let mut ux = vec![0.0; nv - 1];
        let mut dx = vec![0.0; nv - 1];
        let mut uy = vec![0.0; nv - 1];
        let mut dy = vec![0.0; nv - 1];
        face_rates(grid, force[c][0], beta, sigma, &mut ux, &mut dx);
        face_rates(grid, force[c][1], beta, sigma, &mut uy, &mut dy);
        for k in 0..nv {
            for l in 0..nv {
                let i = k * nv + l;
                let mut r = 0.0;
                if k + 1 < nv {
                    r += dx[k] * src[i + nv] - ux[k] * src[i];
                }
                if k > 0 {
                    r += ux[k - 1] * src[i - nv] - dx[k - 1] * src[i];
                }
                if l + 1 < nv {
                    r += dy[l] * src[i + 1] - uy[l] * src[i];
                }
                if l > 0 {
                    r += uy[l - 1] * src[i - 1] - dy[l - 1] * src[i];
                }
                dst[i] = r;
            }
        }
    });
    out
}

/// One explicit step of the velocity drift-diffusion operator with zero
/// flux through the box faces. Reads `p`, writes `out`.
pub fn velocity_step(grid: &PhaseGrid, p: &[f64], out: &mut [f64], force: &[[f64; 2]], beta: f64, sigma: f64, dt: f64) -> Result<()> {
    let nv = grid.vel.nv;
    let nv2 = grid.nv2();
    out.par_chunks_mut(nv2).zip(p.par_chunks(nv2)).enumerate().try_for_each(|(c, (dst, src))| {
        let mut ux = vec![0.0; nv - 1];
        let mut dx = vec![0.0; nv - 1];
        let mut uy = vec![0.0; nv - 1];
        let mut dy = vec![0.0; nv - 1];
        face_rates(grid, force[c][0], beta, sigma, &mut ux, &mut dx);
        face_rates(grid, force[c][1], beta, sigma, &mut uy, &mut dy);
        for k in 0..nv {
            for l in 0..nv {
                let mut leave = 0.0;
                let mut gain = 0.0;
                if k + 1 < nv {
                    leave += ux[k];
                    gain += dx[k] * src[(k + 1) * nv + l];
                }
                if k > 0 {
                    leave += dx[k - 1];
                    gain += ux[k - 1] * src[(k - 1) * nv + l];
                }
                if l + 1 < nv {
                    leave += uy[l];
                    gain += dy[l] * src[k * nv + l + 1];
                }
                if l > 0 {
                    leave += dy[l - 1];
                    gain += uy[l - 1] * src[k * nv + l - 1];
                }
                let diag = 1.0 - dt * leave;
                if diag < 0.0 {
                    return Err(Error::Cfl(format!(
                        "velocity dt = {dt} not monotone in spatial cell {c} (diagonal {diag:.3e})"
                    )));
                }
                dst[k * nv + l] = diag * src[k * nv + l] + dt * gain;
            }
        }
        Ok(())
    })
}

/// Exact exponential integrator of ∂p/∂t = −a p + h over dt, in place.
/// Returns the exact mass change Σ A ω Δp.
pub fn reaction_step(grid: &PhaseGrid, p: &mut [f64], absorption: Absorption, source: Option<&[f64]>, dt: f64) -> f64 {
    if matches!(absorption, Absorption::Zero) && source.is_none() {
        return 0.0;
    }
    let nv2 = grid.nv2();
    let nth = grid.space.nth;
    let w = grid.vel.weight();
    let deltas: Vec<f64> = p
        .par_chunks_mut(nv2)
        .enumerate()
        .map(|(c, slab)| {
            let mut d = 0.0;
            for kv in 0..nv2 {
                let a = match absorption {
                    Absorption::Zero => 0.0,
                    Absorption::Field(f) => f[c * nv2 + kv],
                    Absorption::Separable { decay, rate, profile } => decay[c] - rate[c] * profile[kv],
                };
                let old = slab[kv];
                let mut new = old * (-a * dt).exp();
                if let Some(h) = source {
                    let x = a * dt;
                    let phi = if x.abs() < 1e-12 { dt } else { -(-x).exp_m1() / a };
                    new += h[c * nv2 + kv] * phi;
                }
                slab[kv] = new;
                d += new - old;
            }
            d * grid.space.area(c / nth) * w
        })
        .collect();
    deltas.iter().sum()
}

/// Reusable buffer for [`fp_step`].
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    buf: Vec<f64>,
}

/// One split step R(dt/2) V(dt/2) T(dt) V(dt/2) R(dt/2) (Strang) or
/// R(dt) V(dt) T(dt) (Lie), in place.
pub fn fp_step(
    grid: &PhaseGrid,
    p: &mut Vec<f64>,
    ws: &mut Workspace,
    coeffs: &StepCoefficients,
    inflow: &BoundaryValues,
    controls: &StepControls,
) -> Result<StepRecord> {
    let dt = controls.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Cfl(format!("time step must be positive and finite, got {dt}")));
    }
    if ws.buf.len() != p.len() {
        ws.buf = vec![0.0; p.len()];
    }
    let mass_before = total_mass(grid, p);
    let mut reaction_delta = 0.0;
    let mut fluxes = BoundaryFluxes::default();
    match controls.splitting {
        Splitting::Strang => {
            let h = 0.5 * dt;
            reaction_delta += reaction_step(grid, p, coeffs.absorption, coeffs.source, h);
            velocity_step(grid, p, &mut ws.buf, coeffs.force, coeffs.beta, coeffs.sigma, h)?;
            std::mem::swap(p, &mut ws.buf);
            let f = transport_step(grid, p, &mut ws.buf, inflow, dt)?;
            fluxes.scaled_add(&f, 1.0);
            std::mem::swap(p, &mut ws.buf);
            velocity_step(grid, p, &mut ws.buf, coeffs.force, coeffs.beta, coeffs.sigma, h)?;
            std::mem::swap(p, &mut ws.buf);
            reaction_delta += reaction_step(grid, p, coeffs.absorption, coeffs.source, h);
        }
        Splitting::Lie => {
            reaction_delta += reaction_step(grid, p, coeffs.absorption, coeffs.source, dt);
            velocity_step(grid, p, &mut ws.buf, coeffs.force, coeffs.beta, coeffs.sigma, dt)?;
            std::mem::swap(p, &mut ws.buf);
            let f = transport_step(grid, p, &mut ws.buf, inflow, dt)?;
            fluxes.scaled_add(&f, 1.0);
            std::mem::swap(p, &mut ws.buf);
        }
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite tip density".into()));
    }
    let mass_after = total_mass(grid, p);
    Ok(StepRecord { mass_before, mass_after, fluxes, reaction_delta })
}
