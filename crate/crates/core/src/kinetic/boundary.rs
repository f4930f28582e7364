//! Nonlocal inflow operators at r0 and r1.

use crate::error::{Error, Result};
use crate::fields::{alpha, boundary_gaussian, fermi_weight};
use crate::grid::{PhaseGrid, VelocityGrid};
use crate::params::ModelParams;

/// Normalizers of the boundary Gaussians.
#[derive(Clone, Debug)]
pub struct BoundaryConstants {
    /// Σ_{v·n<0} ω G(v) per inner cell.
    pub i0: Vec<f64>,
    /// Σ_{v·n<0} ω G(v) f₁(v) per outer cell (negative).
    pub i1: Vec<f64>,
    /// G(v) = e^{-(β/σ)|v − v0|²} per velocity cell.
    pub gauss: Vec<f64>,
    /// Fermi window w(v) per velocity cell.
    pub fermi: Vec<f64>,
}

pub fn compute_boundary_constants(grid: &PhaseGrid, params: &ModelParams) -> Result<BoundaryConstants> {
    let gauss = grid.vel.tabulate(|v| boundary_gaussian(params, v));
    let fermi = grid.vel.tabulate(|v| fermi_weight(params, v));
    let mut i0 = Vec::with_capacity(grid.space.nth);
    let mut i1 = Vec::with_capacity(grid.space.nth);
    for j in 0..grid.space.nth {
        let hs = &grid.inner[j];
        let a = hs.integrate_incoming(|kv| gauss[kv]);
        let ho = &grid.outer[j];
        let b = ho.integrate_incoming(|kv| gauss[kv] * ho.vn[kv] * fermi[kv]);
        if !(a > 1e-300) {
            return Err(Error::Param(format!("inner normalizer I0 = {a:e} underflows at θ-cell {j}")));
        }
        if !(b.abs() > 1e-300) {
            return Err(Error::Param(format!("outer normalizer |I1| = {:e} underflows at θ-cell {j}", b.abs())));
        }
        i0.push(a);
        i1.push(b);
    }
    Ok(BoundaryConstants { i0, i1, gauss, fermi })
}

/// Result of one boundary-operator application.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BcOutcome {
    /// The bracket before clamping.
    pub bracket: f64,
    /// Magnitude removed by clamping a negative bracket (0 if none).
    pub clamp: f64,
}

fn clamp(bracket: f64) -> BcOutcome {
    if bracket < 0.0 {
        BcOutcome { bracket, clamp: -bracket }
    } else {
        BcOutcome { bracket, clamp: 0.0 }
    }
}

/// Σ_{v·n>0} ω p⁺ at inner cell `j`.
pub fn inner_outgoing_mass(grid: &PhaseGrid, j: usize, p_out: &[f64]) -> f64 {
    grid.inner[j].integrate_outgoing(|kv| p_out[kv])
}

/// Σ_{v·n>0} ω f₁ p⁺ at outer cell `j`.
pub fn outer_outgoing_flux(grid: &PhaseGrid, consts: &BoundaryConstants, j: usize, p_out: &[f64]) -> f64 {
    let hs = &grid.outer[j];
    hs.integrate_outgoing(|kv| hs.vn[kv] * consts.fermi[kv] * p_out[kv])
}

/// Writes p⁻ = G/I0 · [ρ − ∫_{out} p⁺]₊ into the incoming cells of `dst`
/// (other cells zeroed) given the bracket's ingredients.
pub fn inner_inflow_from_moments(grid: &PhaseGrid, consts: &BoundaryConstants, j: usize, rho: f64, out_mass: f64, dst: &mut [f64]) -> BcOutcome {
    let o = clamp(rho - out_mass);
    let s = o.bracket.max(0.0) / consts.i0[j];
    dst.iter_mut().for_each(|x| *x = 0.0);
    for &kv in &grid.inner[j].incoming {
        dst[kv] = consts.gauss[kv] * s;
    }
    o
}

/// Writes p⁻ = G/|I1| · [j₀ − ∫_{out} f₁ p⁺]₊ into the incoming cells of `dst`.
pub fn outer_inflow_from_moments(grid: &PhaseGrid, consts: &BoundaryConstants, j: usize, j0: f64, out_flux: f64, dst: &mut [f64]) -> BcOutcome {
    let o = clamp(j0 - out_flux);
    let s = o.bracket.max(0.0) / consts.i1[j].abs();
    dst.iter_mut().for_each(|x| *x = 0.0);
    for &kv in &grid.outer[j].incoming {
        dst[kv] = consts.gauss[kv] * s;
    }
    o
}

/// Inner operator at cell `j` from the outgoing slab and the marginal ρ(r0).
pub fn apply_inner_bc(grid: &PhaseGrid, consts: &BoundaryConstants, j: usize, p_out: &[f64], rho: f64, dst: &mut [f64]) -> BcOutcome {
    let m = inner_outgoing_mass(grid, j, p_out);
    inner_inflow_from_moments(grid, consts, j, rho, m, dst)
}

/// Outer operator at cell `j` from the outgoing slab and j₀.
pub fn apply_outer_bc(grid: &PhaseGrid, consts: &BoundaryConstants, j: usize, p_out: &[f64], j0: f64, dst: &mut [f64]) -> BcOutcome {
    let x = outer_outgoing_flux(grid, consts, j, p_out);
    outer_inflow_from_moments(grid, consts, j, j0, x, dst)
}

/// Bilinear interpolation of a velocity slab at `v`; outside the span of the
/// cell centers the nearest center line is used.
pub fn interpolate_velocity(vel: &VelocityGrid, slab: &[f64], v: [f64; 2]) -> Result<f64> {
    if !vel.contains(v) {
        return Err(Error::Param(format!("velocity ({}, {}) lies outside the velocity box", v[0], v[1])));
    }
    let locate = |x: f64| -> (usize, f64) {
        let s = (x + vel.vmax) / vel.dv - 0.5;
        if s <= 0.0 {
            (0, 0.0)
        } else if s >= (vel.nv - 1) as f64 {
            (vel.nv - 2, 1.0)
        } else {
            let k = (s.floor() as usize).min(vel.nv - 2);
            (k, s - k as f64)
        }
    };
    let (k, tx) = locate(v[0]);
    let (l, ty) = locate(v[1]);
    let f = |a: usize, b: usize| slab[vel.idx(a, b)];
    Ok((1.0 - tx) * ((1.0 - ty) * f(k, l) + ty * f(k, l + 1)) + tx * ((1.0 - ty) * f(k + 1, l) + ty * f(k + 1, l + 1)))
}

/// j₀ = v0ₓ α(c(r1, θ)) p(r1, θ, v0) for one outer cell.
pub fn compute_j0(grid: &PhaseGrid, params: &ModelParams, c_r1: f64, slab: &[f64]) -> Result<f64> {
    let pv = interpolate_velocity(&grid.vel, slab, params.v0)?;
    Ok(params.v0[0] * alpha(params, c_r1) * pv)
}

/// Residual of the inner marginal identity Σ_in p⁻ + Σ_out p⁺ = ρ.
pub fn inner_identity_residual(grid: &PhaseGrid, j: usize, p_in: &[f64], p_out: &[f64], rho: f64) -> f64 {
    let hs = &grid.inner[j];
    (hs.integrate_incoming(|kv| p_in[kv]) + hs.integrate_outgoing(|kv| p_out[kv]) - rho).abs()
}

/// Residual of the outer flux identity Σ_in |f₁| p⁻ + Σ_out f₁ p⁺ = j₀.
pub fn outer_identity_residual(grid: &PhaseGrid, consts: &BoundaryConstants, j: usize, p_in: &[f64], p_out: &[f64], j0: f64) -> f64 {
    let hs = &grid.outer[j];
    let a = hs.integrate_incoming(|kv| hs.vn[kv].abs() * consts.fermi[kv] * p_in[kv]);
    (a + outer_outgoing_flux(grid, consts, j, p_out) - j0).abs()
}
