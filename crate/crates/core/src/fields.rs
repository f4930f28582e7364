//! Field containers and pointwise / nonlocal coefficient evaluations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AnnulusGrid, PhaseGrid, Side, VelocityGrid};
use crate::params::ModelParams;

/// Phase-space tip density p[i, j, kv] with kv = k * Nv + l.
#[derive(Clone, Debug, PartialEq)]
pub struct TipDensity {
    pub time: f64,
    pub values: Vec<f64>,
}

/// TAF concentration c[i, j].
#[derive(Clone, Debug, PartialEq)]
pub struct Concentration {
    pub time: f64,
    pub values: Vec<f64>,
}

/// Running integral b = ∫₀^t ρ ds per spatial cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AnastomosisAccumulator {
    pub time: f64,
    pub values: Vec<f64>,
}

/// Values on the boundary cell layers, layout [j * Nv² + kv] per side.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryValues {
    pub inner: Vec<f64>,
    pub outer: Vec<f64>,
}

impl BoundaryValues {
    pub fn zeros(grid: &PhaseGrid) -> Self {
        let n = grid.space.nth * grid.nv2();
        BoundaryValues { inner: vec![0.0; n], outer: vec![0.0; n] }
    }

    pub fn side(&self, side: Side) -> &[f64] {
        match side {
            Side::Inner => &self.inner,
            Side::Outer => &self.outer,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut Vec<f64> {
        match side {
            Side::Inner => &mut self.inner,
            Side::Outer => &mut self.outer,
        }
    }

    /// Largest stored value.
    pub fn sup(&self) -> f64 {
        self.inner.iter().chain(&self.outer).fold(0.0, |m, &x| m.max(x.abs()))
    }
}

/// Inflow (p⁻ on incoming cells) and outflow (p⁺ on outgoing cells) traces.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BoundaryTrace {
    pub inflow: BoundaryValues,
    pub outflow: BoundaryValues,
}

impl BoundaryTrace {
    pub fn zeros(grid: &PhaseGrid) -> Self {
        BoundaryTrace { inflow: BoundaryValues::zeros(grid), outflow: BoundaryValues::zeros(grid) }
    }
}

/// Outgoing trace of `p`: boundary-cell values on outgoing cells, zero elsewhere.
pub fn outgoing_trace(grid: &PhaseGrid, p: &[f64]) -> BoundaryValues {
    let nv2 = grid.nv2();
    let mut out = BoundaryValues::zeros(grid);
    for side in [Side::Inner, Side::Outer] {
        let i = grid.space.boundary_layer(side);
        let dst = out.side_mut(side);
        for j in 0..grid.space.nth {
            let hs = grid.half_space(side, j);
            let slab = grid.slab(p, i, j);
            for &kv in &hs.outgoing {
                dst[j * nv2 + kv] = slab[kv];
            }
        }
    }
    out
}

/// α(c) = α₁ (c/c_R) / (1 + c/c_R).
pub fn branching_rate(params: &ModelParams, c: f64) -> Result<f64> {
    if c < 0.0 || c.is_nan() {
        return Err(Error::Param(format!("branching rate needs c >= 0, got {c}")));
    }
    Ok(alpha(params, c))
}

#[inline]
pub(crate) fn alpha(params: &ModelParams, c: f64) -> f64 {
    let s = c.max(0.0) / params.c_r;
    params.alpha1 * s / (1.0 + s)
}

/// ν(v) = (2π ε²)^{-1} exp(-|v - v0|² / (2ε²)).
pub fn regularized_delta(params: &ModelParams, v: [f64; 2]) -> f64 {
    let e2 = params.eps_nu * params.eps_nu;
    let dx = v[0] - params.v0[0];
    let dy = v[1] - params.v0[1];
    (-(dx * dx + dy * dy) / (2.0 * e2)).exp() / (2.0 * std::f64::consts::PI * e2)
}

/// Fermi window w(v) = [1 + exp(|v - χv0|² / σ_v²)]^{-1}, evaluated as
/// e^{-x} / (1 + e^{-x}) so it never overflows. Values below 1e-300 are 0.
pub fn fermi_weight(params: &ModelParams, v: [f64; 2]) -> f64 {
    let c = params.window_center();
    let dx = v[0] - c[0];
    let dy = v[1] - c[1];
    let x = (dx * dx + dy * dy) / (params.sigma_v * params.sigma_v);
    let e = (-x).exp();
    let w = e / (1.0 + e);
    if w < 1e-300 {
        0.0
    } else {
        w
    }
}

/// Gaussian boundary profile e^{-(β/σ)|v - v0|²}.
pub fn boundary_gaussian(params: &ModelParams, v: [f64; 2]) -> f64 {
    let dx = v[0] - params.v0[0];
    let dy = v[1] - params.v0[1];
    (-(params.beta / params.sigma) * (dx * dx + dy * dy)).exp()
}

/// Pretabulated |v| w(v), the weight of the tip flux.
pub fn flux_weights(params: &ModelParams, vel: &VelocityGrid) -> Vec<f64> {
    vel.tabulate(|v| v[0].hypot(v[1]) * fermi_weight(params, v))
}

/// Gradient of c at cell centers in Cartesian components. Central
/// differences in (∂_r, r^{-1}∂_θ); in the first and last radial layers the
/// radial derivative averages the face difference with the Neumann datum,
/// which is second order at the cell center.
pub fn concentration_gradient(space: &AnnulusGrid, c: &[f64], c_r0: &[f64]) -> Vec<[f64; 2]> {
    let (nr, nth) = (space.nr, space.nth);
    let mut g = vec![[0.0; 2]; nr * nth];
    for i in 0..nr {
        for j in 0..nth {
            let jp = (j + 1) % nth;
            let jm = (j + nth - 1) % nth;
            let gr = if i == 0 {
                0.5 * ((c[space.idx(1, j)] - c[space.idx(0, j)]) / space.dr + c_r0[j])
            } else if i == nr - 1 {
                0.5 * (c[space.idx(i, j)] - c[space.idx(i - 1, j)]) / space.dr
            } else {
                (c[space.idx(i + 1, j)] - c[space.idx(i - 1, j)]) / (2.0 * space.dr)
            };
            let gt = (c[space.idx(i, jp)] - c[space.idx(i, jm)]) / (2.0 * space.r(i) * space.dth);
            let t = space.theta(j);
            let (s, co) = t.sin_cos();
            g[space.idx(i, j)] = [gr * co - gt * s, gr * s + gt * co];
        }
    }
    g
}

/// Chemotactic force F(c) = d₁(1 + γ₁c)^{-q₁} ∇c.
pub fn taf_force(space: &AnnulusGrid, c: &[f64], c_r0: &[f64], params: &ModelParams) -> Vec<[f64; 2]> {
    let mut g = concentration_gradient(space, c, c_r0);
    for (gi, &ci) in g.iter_mut().zip(c) {
        let f = params.d1 * (1.0 + params.gamma1 * ci.max(0.0)).powf(-params.q1);
        gi[0] *= f;
        gi[1] *= f;
    }
    g
}

/// ρ = Σ ω p per spatial cell.
pub fn marginal_density(grid: &PhaseGrid, p: &[f64]) -> Vec<f64> {
    let w = grid.vel.weight();
    p.par_chunks(grid.nv2()).map(|slab| slab.iter().sum::<f64>() * w).collect()
}

/// j = Σ ω |v| w(v) p per spatial cell, with `weights` from [`flux_weights`].
pub fn tip_flux(grid: &PhaseGrid, p: &[f64], weights: &[f64]) -> Vec<f64> {
    let w = grid.vel.weight();
    p.par_chunks(grid.nv2())
        .map(|slab| slab.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() * w)
        .collect()
}

/// Trapezoidal update b += dt (ρ_prev + ρ_new) / 2.
pub fn accumulate_anastomosis(b: &mut AnastomosisAccumulator, rho_prev: &[f64], rho_new: &[f64], dt: f64) -> Result<()> {
    if !(dt >= 0.0) {
        return Err(Error::Param(format!("anastomosis update needs dt >= 0, got {dt}")));
    }
    for ((bi, a), c) in b.values.iter_mut().zip(rho_prev).zip(rho_new) {
        *bi += 0.5 * dt * (a + c);
    }
    b.time += dt;
    Ok(())
}

/// m^ℓ = Σ A ω |v|^ℓ p.
pub fn moment(grid: &PhaseGrid, p: &[f64], ell: u32) -> f64 {
    let wv = grid.vel.tabulate(|v| v[0].hypot(v[1]).powi(ell as i32));
    weighted_mass(grid, p, &wv)
}

/// Σ A ω w(v) p with pretabulated velocity weights.
pub fn weighted_mass(grid: &PhaseGrid, p: &[f64], wv: &[f64]) -> f64 {
    let nv2 = grid.nv2();
    let nth = grid.space.nth;
    let per_cell: Vec<f64> = p
        .par_chunks(nv2)
        .enumerate()
        .map(|(c, slab)| {
            let a = grid.space.area(c / nth);
            a * slab.iter().zip(wv).map(|(x, w)| x * w).sum::<f64>()
        })
        .collect();
    per_cell.iter().sum::<f64>() * grid.vel.weight()
}

/// ‖(1 + |v|²)^{μ/2} p‖_∞.
pub fn weighted_sup_norm(grid: &PhaseGrid, p: &[f64], mu: f64) -> f64 {
    let wv = grid.vel.tabulate(|v| (1.0 + v[0] * v[0] + v[1] * v[1]).powf(0.5 * mu));
    p.par_chunks(grid.nv2())
        .map(|slab| slab.iter().zip(&wv).fold(0.0_f64, |m, (x, w)| m.max((x * w).abs())))
        .reduce(|| 0.0, f64::max)
}

/// Same weighted sup over stored boundary values.
pub fn weighted_sup_boundary(grid: &PhaseGrid, g: &BoundaryValues, mu: f64) -> f64 {
    let wv = grid.vel.tabulate(|v| (1.0 + v[0] * v[0] + v[1] * v[1]).powf(0.5 * mu));
    let nv2 = grid.nv2();
    g.inner
        .iter()
        .chain(&g.outer)
        .enumerate()
        .fold(0.0, |m, (n, x)| m.max((x * wv[n % nv2]).abs()))
}

pub fn sup_norm(p: &[f64]) -> f64 {
    p.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

pub fn min_value(p: &[f64]) -> f64 {
    p.iter().fold(f64::INFINITY, |m, &x| m.min(x))
}
