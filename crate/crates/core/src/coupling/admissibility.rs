//! K₁, K₂ constants of the outer boundary fixed-point map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{boundary_gaussian, fermi_weight};
use crate::grid::{HalfSpaceQuadrature, PhaseGrid};
use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub k1: f64,
    pub k2: f64,
    pub product: f64,
    pub pass: bool,
}

/// K₁ for one outer normal:
/// max_{v·n>0} |v·n| G(v) / Σ_{v·n<0} ω |v·n| G(v) w(v).
pub fn k1_for_normal(hs: &HalfSpaceQuadrature, gauss: &[f64], fermi: &[f64]) -> Result<f64> {
    let den = hs.integrate_incoming(|kv| hs.vn[kv].abs() * gauss[kv] * fermi[kv]);
    if !(den > 1e-300) {
        return Err(Error::Param(format!("K1 denominator underflows ({den:e}): Fermi window too narrow")));
    }
    let num = hs.outgoing.iter().fold(0.0_f64, |m, &kv| m.max(hs.vn[kv] * gauss[kv]));
    Ok(num / den)
}

/// K₂ for one outer normal: Σ_{v·n>0} ω w(v).
pub fn k2_for_normal(hs: &HalfSpaceQuadrature, fermi: &[f64]) -> f64 {
    hs.integrate_outgoing(|kv| fermi[kv])
}

/// K₁ = max over outer boundary normals.
pub fn compute_k1(grid: &PhaseGrid, params: &ModelParams) -> Result<f64> {
    let gauss = grid.vel.tabulate(|v| boundary_gaussian(params, v));
    let fermi = grid.vel.tabulate(|v| fermi_weight(params, v));
    let mut k1: f64 = 0.0;
    for hs in &grid.outer {
        k1 = k1.max(k1_for_normal(hs, &gauss, &fermi)?);
    }
    Ok(k1)
}

/// K₂ = max over outer boundary normals.
pub fn compute_k2(grid: &PhaseGrid, params: &ModelParams) -> f64 {
    let fermi = grid.vel.tabulate(|v| fermi_weight(params, v));
    grid.outer.iter().fold(0.0_f64, |m, hs| m.max(k2_for_normal(hs, &fermi)))
}

pub fn admissibility_report(grid: &PhaseGrid, params: &ModelParams) -> Result<AdmissibilityReport> {
    let k1 = compute_k1(grid, params)?;
    let k2 = compute_k2(grid, params);
    let product = k1 * k2;
    Ok(AdmissibilityReport { k1, k2, product, pass: product < 1.0 })
}
