//! Decay checks for the Neumann heat flow.

use serde::{Deserialize, Serialize};

use crate::diffusion::{apply_laplacian, area_integral, grad_l2_norm, grad_sup_norm, l2_norm};
use crate::fields::{sup_norm, Concentration};
use crate::grid::AnnulusGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub t: f64,
    pub observed: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousDecay {
    /// min over snapshots of ‖u₀‖_∞ − ‖u(t)‖_∞.
    #[serde(with = "crate::json_float")]
    pub sup_margin: f64,
    /// Largest increase of ‖u‖₂ between consecutive snapshots.
    #[serde(with = "crate::json_float")]
    pub l2_increase: f64,
    /// max |Σ A u(t) − Σ A u₀| / Σ A |u₀|.
    pub mean_drift: f64,
    /// ‖∇u(t)‖₂ ≤ slack · t^{−1/2} ‖u₀‖₂.
    pub gradient: Vec<GradientCheck>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneousDecay {
    /// min over t of slack · t‖h‖_∞ − ‖u(t)‖_∞.
    #[serde(with = "crate::json_float")]
    pub sup_margin: f64,
    /// min over t of slack · 2t^{1/2}‖h‖_∞ − ‖∇u(t)‖_∞.
    #[serde(with = "crate::json_float")]
    pub gradient_margin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeatDecayReport {
    pub homogeneous: Option<HomogeneousDecay>,
    pub inhomogeneous: Option<InhomogeneousDecay>,
    /// Fitted exponent of ‖∇u(t)‖_∞ for point-like data.
    pub smoothing_slope: Option<f64>,
}

/// Input runs for [`heat_decay_report`].
pub struct HeatRuns<'a> {
    pub homogeneous: Option<&'a [Concentration]>,
    pub check_times: &'a [f64],
    /// Zero-data run with a steady source of the given sup norm.
    pub inhomogeneous: Option<(&'a [Concentration], f64)>,
    /// Run from point-like data and the fit window [t_a, t_b].
    pub point_like: Option<(&'a [Concentration], [f64; 2])>,
    pub slack: f64,
}

fn at_time(traj: &[Concentration], t: f64) -> Option<&Concentration> {
    traj.iter().find(|s| (s.time - t).abs() <= 1e-9 * t.max(1.0))
}

pub fn homogeneous_decay(space: &AnnulusGrid, traj: &[Concentration], check_times: &[f64], slack: f64) -> HomogeneousDecay {
    let u0 = &traj[0].values;
    let sup0 = sup_norm(u0);
    let l20 = l2_norm(space, u0);
    let mass0 = area_integral(space, u0);
    let abs0 = area_integral(space, &u0.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let mut out = HomogeneousDecay { sup_margin: f64::INFINITY, l2_increase: f64::NEG_INFINITY, ..Default::default() };
    let mut prev = l20;
    for s in traj {
        out.sup_margin = out.sup_margin.min(sup0 - sup_norm(&s.values));
        let l2 = l2_norm(space, &s.values);
        if s.time > 0.0 {
            out.l2_increase = out.l2_increase.max(l2 - prev);
        }
        prev = l2;
        let drift = (area_integral(space, &s.values) - mass0).abs();
        out.mean_drift = out.mean_drift.max(if abs0 > 0.0 { drift / abs0 } else { drift });
    }
    if out.l2_increase == f64::NEG_INFINITY {
        out.l2_increase = 0.0;
    }
    for &t in check_times {
        if let Some(s) = at_time(traj, t) {
            let observed = grad_l2_norm(space, &s.values);
            let bound = slack * l20 / t.sqrt();
            out.gradient.push(GradientCheck { t, observed, bound, margin: bound - observed });
        }
    }
    out
}

pub fn inhomogeneous_decay(space: &AnnulusGrid, traj: &[Concentration], h_sup: f64, slack: f64) -> InhomogeneousDecay {
    let mut out = InhomogeneousDecay { sup_margin: f64::INFINITY, gradient_margin: f64::INFINITY };
    for s in traj {
        let t = s.time;
        out.sup_margin = out.sup_margin.min(slack * t * h_sup - sup_norm(&s.values));
        out.gradient_margin = out.gradient_margin.min(slack * 2.0 * t.sqrt() * h_sup - grad_sup_norm(space, &s.values));
    }
    out
}

/// Least-squares slope of log y against log t over positive samples.
pub fn fit_loglog_slope(t: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx > 0.0 {
        Some(sxy / sxx)
    } else {
        None
    }
}

/// Exponent of ‖∇u(t)‖_∞ over the window.
pub fn smoothing_slope(space: &AnnulusGrid, traj: &[Concentration], window: [f64; 2]) -> Option<f64> {
    let (t, y): (Vec<f64>, Vec<f64>) = traj
        .iter()
        .filter(|s| s.time >= window[0] && s.time <= window[1])
        .map(|s| (s.time, grad_sup_norm(space, &s.values)))
        .unzip();
    fit_loglog_slope(&t, &y)
}

/// |‖u'‖₂² − ‖u‖₂² − 2dt⟨u, Lu⟩ − dt²‖Lu‖₂²| / ‖u‖₂² for one explicit step
/// u' = u + dt L u.
pub fn heat_energy_residual(space: &AnnulusGrid, d: f64, u: &[f64], u_next: &[f64], dt: f64) -> f64 {
    let lu = apply_laplacian(space, d, u);
    let ip = area_integral(space, &u.iter().zip(&lu).map(|(a, b)| a * b).collect::<Vec<_>>());
    let n0 = l2_norm(space, u).powi(2);
    let n1 = l2_norm(space, u_next).powi(2);
    let nl = l2_norm(space, &lu).powi(2);
    let r = (n1 - n0 - 2.0 * dt * ip - dt * dt * nl).abs();
    if n0 > 0.0 {
        r / n0
    } else {
        r
    }
}

pub fn heat_decay_report(space: &AnnulusGrid, runs: &HeatRuns) -> HeatDecayReport {
    HeatDecayReport {
        homogeneous: runs.homogeneous.map(|t| homogeneous_decay(space, t, runs.check_times, runs.slack)),
        inhomogeneous: runs.inhomogeneous.map(|(t, h)| inhomogeneous_decay(space, t, h, runs.slack)),
        smoothing_slope: runs.point_like.and_then(|(t, w)| smoothing_slope(space, t, w)),
    }
}

impl HeatDecayReport {
    /// Gates: exact max principle, monotone L², mean to 1e-12, gradient
    /// margins ≥ 0, slope within −1.5 ± 0.15.
    pub fn pass(&self) -> bool {
        let h = self.homogeneous.as_ref().map_or(true, |h| {
            h.sup_margin >= 0.0 && h.l2_increase <= 0.0 && h.mean_drift <= 1e-12 && h.gradient.iter().all(|g| g.margin >= 0.0)
        });
        let i = self.inhomogeneous.as_ref().map_or(true, |i| i.sup_margin >= 0.0 && i.gradient_margin >= 0.0);
        let s = self.smoothing_slope.map_or(true, |s| (s + 1.5).abs() <= 0.15);
        h && i && s
    }
}
