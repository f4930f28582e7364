//! Moment interpolation inequalities in N = 2, evaluated with the grid
//! quadrature. Margins are relative: (rhs − lhs) / rhs.
//!
//! Constants (obtained by splitting the velocity integral at the radius
//! R^μ = ‖Y‖_∞/‖p‖_∞ and using (1 + |v|²)^{−μ/2} ≤ |v|^{−μ}):
//! ‖∫ p dv‖_∞ ≤ πμ/(μ − 2) · ‖p‖_∞^{1−2/μ} ‖Y‖_∞^{2/μ},
//! ‖∫ |v| p dv‖_∞ ≤ 2πμ/(3(μ − 3)) · ‖p‖_∞^{1−3/μ} ‖Y‖_∞^{3/μ},
//! the Hölder and pointwise inequalities hold with C = 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::PhaseGrid;

const N: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSettings {
    pub mu: f64,
    pub ell: f64,
}

impl Default for InterpolationSettings {
    fn default() -> Self {
        InterpolationSettings { mu: 3.0, ell: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterpolationMargins {
    /// ‖|v|^ℓ p‖₁ ≤ ‖p‖₁^{1−ℓ/μ} ‖|v|^μ p‖₁^{ℓ/μ}.
    pub mlp1: f64,
    /// ‖∫|v|^ℓ p dv‖_{L^r} over ‖p‖_∞^{(μ−ℓ)/(N+μ)} ‖|v|^μ p‖₁^{(N+ℓ)/(N+μ)},
    /// r = (N+μ)/(N+ℓ). The constant is unknown, so only this ratio is kept.
    pub mlpinf_ratio: f64,
    /// Relative change of that ratio when p is rescaled (0 if the exponents
    /// are consistent).
    pub mlpinf_scaling_defect: f64,
    pub vinf: f64,
    /// μ used for the |v|-moment bound (needs μ > 3).
    pub vinf_mu: f64,
    pub inf: f64,
    /// μ used for the marginal bound (needs μ > 2).
    pub inf_mu: f64,
    pub interp: f64,
}

fn margin(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        (rhs - lhs) / rhs
    } else if lhs <= 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

struct Tables {
    speed: Vec<f64>,
    one_plus: Vec<f64>,
}

fn tables(grid: &PhaseGrid) -> Tables {
    Tables {
        speed: grid.vel.tabulate(|v| v[0].hypot(v[1])),
        one_plus: grid.vel.tabulate(|v| 1.0 + v[0] * v[0] + v[1] * v[1]),
    }
}

fn weighted_sup(p: &[f64], nv2: usize, w: &[f64]) -> f64 {
    p.par_chunks(nv2)
        .map(|s| s.iter().zip(w).fold(0.0_f64, |m, (x, y)| m.max(x.abs() * y)))
        .reduce(|| 0.0, f64::max)
}

/// Per-cell Σ ω w(v) p.
fn cell_moments(grid: &PhaseGrid, p: &[f64], w: &[f64]) -> Vec<f64> {
    let om = grid.vel.weight();
    p.par_chunks(grid.nv2()).map(|s| s.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() * om).collect()
}

fn area_sum(grid: &PhaseGrid, per_cell: &[f64]) -> f64 {
    let nth = grid.space.nth;
    per_cell.iter().enumerate().map(|(c, x)| grid.space.area(c / nth) * x).sum()
}

fn mlpinf_ratio(grid: &PhaseGrid, t: &Tables, p: &[f64], mu: f64, ell: f64) -> f64 {
    let wl: Vec<f64> = t.speed.iter().map(|s| s.powf(ell)).collect();
    let wm: Vec<f64> = t.speed.iter().map(|s| s.powf(mu)).collect();
    let r = (N + mu) / (N + ell);
    let ml = cell_moments(grid, p, &wl);
    let lhs = area_sum(grid, &ml.iter().map(|x| x.abs().powf(r)).collect::<Vec<_>>()).powf(1.0 / r);
    let psup = p.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mm = area_sum(grid, &cell_moments(grid, p, &wm));
    let rhs = psup.powf((mu - ell) / (N + mu)) * mm.powf((N + ell) / (N + mu));
    if rhs > 0.0 {
        lhs / rhs
    } else {
        0.0
    }
}

/// Evaluates every inequality on a nonnegative phase-space field.
pub fn interpolation_report(grid: &PhaseGrid, p: &[f64], s: &InterpolationSettings) -> InterpolationMargins {
    let t = tables(grid);
    let nv2 = grid.nv2();
    let (mu, ell) = (s.mu, s.ell);
    let psup = p.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let y_sup = |m: f64| weighted_sup(p, nv2, &t.one_plus.iter().map(|x| x.powf(0.5 * m)).collect::<Vec<_>>());

    let m0 = area_sum(grid, &cell_moments(grid, p, &vec![1.0; nv2]));
    let ml = area_sum(grid, &cell_moments(grid, p, &t.speed.iter().map(|x| x.powf(ell)).collect::<Vec<_>>()));
    let mm = area_sum(grid, &cell_moments(grid, p, &t.speed.iter().map(|x| x.powf(mu)).collect::<Vec<_>>()));
    let mlp1 = margin(ml, m0.powf(1.0 - ell / mu) * mm.powf(ell / mu));

    let ratio = mlpinf_ratio(grid, &t, p, mu, ell);
    let scaled: Vec<f64> = p.iter().map(|x| 7.25 * x).collect();
    let ratio2 = mlpinf_ratio(grid, &t, &scaled, mu, ell);
    let defect = if ratio > 0.0 { (ratio2 - ratio).abs() / ratio } else { 0.0 };

    let vinf_mu = if mu > N + 1.0 { mu } else { N + 2.0 };
    let c_vinf = 2.0 * std::f64::consts::PI * vinf_mu / (3.0 * (vinf_mu - 3.0));
    let j1 = cell_moments(grid, p, &t.speed).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let vinf = margin(j1, c_vinf * psup.powf(1.0 - (N + 1.0) / vinf_mu) * y_sup(vinf_mu).powf((N + 1.0) / vinf_mu));

    let inf_mu = if mu > N { mu } else { N + 1.0 };
    let c_inf = std::f64::consts::PI * inf_mu / (inf_mu - 2.0);
    let rho = cell_moments(grid, p, &vec![1.0; nv2]).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let inf = margin(rho, c_inf * psup.powf(1.0 - N / inf_mu) * y_sup(inf_mu).powf(N / inf_mu));

    let lhs = weighted_sup(p, nv2, &t.one_plus.iter().map(|x| x.powf(0.5 * (mu - 1.0))).collect::<Vec<_>>());
    let interp = margin(lhs, psup.powf(1.0 / mu) * y_sup(mu).powf(1.0 - 1.0 / mu));

    InterpolationMargins {
        mlp1,
        mlpinf_ratio: ratio,
        mlpinf_scaling_defect: defect,
        vinf,
        vinf_mu,
        inf,
        inf_mu,
        interp,
    }
}

impl InterpolationMargins {
    /// Smallest margin of the inequalities with known constants.
    pub fn worst(&self) -> f64 {
        self.mlp1.min(self.vinf).min(self.inf).min(self.interp)
    }
}
