//! Balance laws, bounds and identities evaluated on discrete states.
//!
//! Every function here only reads its inputs. Integrals over Ω × ℝ² use the
//! grid quadrature Σ A ω (·); boundary integrals use the kinetic measure of
//! the transport sub-step.

pub mod heat;
pub mod interp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{AdmissibilityReport, CoupledSnapshot, CoupledStepEvent, Observer};
use crate::error::Result;
use crate::fields::{min_value, moment, sup_norm, weighted_sup_boundary, weighted_sup_norm, BoundaryValues};
use crate::grid::PhaseGrid;
use crate::kinetic::boundary::{inner_identity_residual, outer_identity_residual, BoundaryConstants};
use crate::kinetic::{boundary_fluxes, total_mass, velocity_operator, Absorption, BoundaryFluxes};

pub use heat::{fit_loglog_slope, heat_decay_report, HeatDecayReport, HeatRuns, HomogeneousDecay, InhomogeneousDecay};
pub use interp::{interpolation_report, InterpolationMargins, InterpolationSettings};

pub const SCHEMA_VERSION: u32 = 1;

/// Space dimension.
const N: f64 = 2.0;

/// Coefficients and boundary data acting over one step.
#[derive(Clone, Copy, Debug)]
pub struct BalanceInputs<'a> {
    pub beta: f64,
    pub sigma: f64,
    pub force: &'a [[f64; 2]],
    pub absorption: Absorption<'a>,
    pub source: Option<&'a [f64]>,
    pub inflow: &'a BoundaryValues,
    pub dt: f64,
}

fn absorption_at(a: &Absorption, c: usize, kv: usize, nv2: usize) -> f64 {
    match a {
        Absorption::Zero => 0.0,
        Absorption::Field(f) => f[c * nv2 + kv],
        Absorption::Separable { decay, rate, profile } => decay[c] - rate[c] * profile[kv],
    }
}

/// Σ A ω f(c, kv) with a deterministic reduction order.
pub fn phase_integral(grid: &PhaseGrid, f: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
    let nv2 = grid.nv2();
    let nth = grid.space.nth;
    let per: Vec<f64> = (0..grid.space.ncells())
        .into_par_iter()
        .map(|c| grid.space.area(c / nth) * (0..nv2).map(|kv| f(c, kv)).sum::<f64>())
        .collect();
    per.iter().sum::<f64>() * grid.vel.weight()
}

/// (Σ A ω |p|^q)^{1/q}; q = ∞ gives the max norm.
pub fn lq_norm(grid: &PhaseGrid, p: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return sup_norm(p);
    }
    let nv2 = grid.nv2();
    phase_integral(grid, |c, kv| p[c * nv2 + kv].abs().powf(q)).powf(1.0 / q)
}

/// Right-hand side of the mass balance at one state: in − out + ∫h − ∫ap.
fn mass_rhs(grid: &PhaseGrid, p: &[f64], inp: &BalanceInputs, fx: &BoundaryFluxes) -> f64 {
    let nv2 = grid.nv2();
    let bulk = phase_integral(grid, |c, kv| {
        let i = c * nv2 + kv;
        inp.source.map_or(0.0, |h| h[i]) - absorption_at(&inp.absorption, c, kv, nv2) * p[i]
    });
    fx.mass_in - fx.mass_out + bulk
}

/// |Δmass/dt − (in − out + ∫h − ∫ap)| with the right-hand side averaged over
/// the two states (trapezoidal rule in time).
pub fn mass_balance_residual(grid: &PhaseGrid, p_before: &[f64], p_after: &[f64], inp: &BalanceInputs) -> f64 {
    let fb = boundary_fluxes(grid, p_before, inp.inflow);
    let fa = boundary_fluxes(grid, p_after, inp.inflow);
    let lhs = (total_mass(grid, p_after) - total_mass(grid, p_before)) / inp.dt;
    let rhs = 0.5 * (mass_rhs(grid, p_before, inp, &fb) + mass_rhs(grid, p_after, inp, &fa));
    (lhs - rhs).abs()
}

/// |v|^{μ−2} with the regularization max(|v|, Δv/2) for μ < 2.
fn reg_power(grid: &PhaseGrid, s: f64, mu: u32) -> f64 {
    if mu >= 2 {
        s.powi(mu as i32 - 2)
    } else {
        s.max(0.5 * grid.vel.dv).powi(mu as i32 - 2)
    }
}

/// Right-hand side of the moment identity for m^μ, without boundary terms.
pub fn momentum_rhs(grid: &PhaseGrid, p: &[f64], inp: &BalanceInputs, mu: u32) -> f64 {
    let nv2 = grid.nv2();
    let m = mu as f64;
    let speed = grid.vel.tabulate(|v| v[0].hypot(v[1]));
    let vel: Vec<[f64; 2]> = (0..nv2).map(|kv| grid.vel.v(kv)).collect();
    phase_integral(grid, |c, kv| {
        let i = c * nv2 + kv;
        let s = speed[kv];
        let sm = s.powi(mu as i32);
        let w = reg_power(grid, s, mu);
        let f = inp.force[c];
        let fv = f[0] * vel[kv][0] + f[1] * vel[kv][1];
        let a = absorption_at(&inp.absorption, c, kv, nv2);
        let h = inp.source.map_or(0.0, |h| h[i]);
        p[i] * (-inp.beta * m * sm + m * (m - 2.0 + N) * inp.sigma * w + m * fv * w - a * sm) + h * sm
    })
}

fn boundary_moment(fx: &BoundaryFluxes, mu: u32) -> f64 {
    match mu {
        0 => fx.mass_in - fx.mass_out,
        1 => fx.m1_in - fx.m1_out,
        _ => fx.m2_in - fx.m2_out,
    }
}

/// Residual of the μ-th moment balance (μ ∈ {1, 2}) over one step, with the
/// right-hand side averaged over both states.
pub fn momentum_balance_residual(grid: &PhaseGrid, p_before: &[f64], p_after: &[f64], inp: &BalanceInputs, mu: u32) -> f64 {
    assert!(mu == 1 || mu == 2, "momentum balance is implemented for mu in {{1, 2}}");
    let fb = boundary_fluxes(grid, p_before, inp.inflow);
    let fa = boundary_fluxes(grid, p_after, inp.inflow);
    let lhs = (moment(grid, p_after, mu) - moment(grid, p_before, mu)) / inp.dt;
    let rb = boundary_moment(&fb, mu) + momentum_rhs(grid, p_before, inp, mu);
    let ra = boundary_moment(&fa, mu) + momentum_rhs(grid, p_after, inp, mu);
    (lhs - 0.5 * (rb + ra)).abs()
}

/// Σ A ω |∇_v p|² on the velocity faces, the seminorm paired with the
/// diffusion stencil of the velocity step.
pub fn velocity_gradient_sq(grid: &PhaseGrid, p: &[f64]) -> f64 {
    let nv = grid.vel.nv;
    let nv2 = grid.nv2();
    let dv = grid.vel.dv;
    let nth = grid.space.nth;
    let per: Vec<f64> = p
        .par_chunks(nv2)
        .enumerate()
        .map(|(c, s)| {
            let mut acc = 0.0;
            for k in 0..nv {
                for l in 0..nv {
                    let i = k * nv + l;
                    if k + 1 < nv {
                        let d = (s[i + nv] - s[i]) / dv;
                        acc += d * d;
                    }
                    if l + 1 < nv {
                        let d = (s[i + 1] - s[i]) / dv;
                        acc += d * d;
                    }
                }
            }
            acc * grid.space.area(c / nth)
        })
        .collect();
    per.iter().sum::<f64>() * grid.vel.weight()
}

/// Semi-discrete rate 2⟨p, L_v p⟩ of ‖p‖₂² under the velocity operator.
pub fn velocity_l2_rate(grid: &PhaseGrid, p: &[f64], force: &[[f64; 2]], beta: f64, sigma: f64) -> f64 {
    let lp = velocity_operator(grid, p, force, beta, sigma);
    let nv2 = grid.nv2();
    2.0 * phase_integral(grid, |c, kv| p[c * nv2 + kv] * lp[c * nv2 + kv])
}

fn l2_rhs(grid: &PhaseGrid, p: &[f64], inp: &BalanceInputs, fx: &BoundaryFluxes) -> f64 {
    let nv2 = grid.nv2();
    let bulk = phase_integral(grid, |c, kv| {
        let i = c * nv2 + kv;
        let a = absorption_at(&inp.absorption, c, kv, nv2);
        let h = inp.source.map_or(0.0, |h| h[i]);
        N * inp.beta * p[i] * p[i] - 2.0 * a * p[i] * p[i] + 2.0 * h * p[i]
    });
    fx.sq_in - fx.sq_out + bulk - 2.0 * inp.sigma * velocity_gradient_sq(grid, p)
}

/// Residual of the q = 2 identity for d‖p‖₂²/dt over one step.
pub fn lq_identity_residual(grid: &PhaseGrid, p_before: &[f64], p_after: &[f64], inp: &BalanceInputs) -> f64 {
    let fb = boundary_fluxes(grid, p_before, inp.inflow);
    let fa = boundary_fluxes(grid, p_after, inp.inflow);
    let n2 = |p: &[f64]| lq_norm(grid, p, 2.0).powi(2);
    let lhs = (n2(p_after) - n2(p_before)) / inp.dt;
    (lhs - 0.5 * (l2_rhs(grid, p_before, inp, &fb) + l2_rhs(grid, p_after, inp, &fa))).abs()
}

/// e^{(Nβ + ‖a⁻‖)t} (‖p₀‖_∞ + ‖g‖_∞ + ∫₀ᵗ‖h‖_∞).
pub fn linf_bound(t: f64, beta: f64, a_minus: f64, p0_sup: f64, g_sup: f64, h_int: f64) -> f64 {
    ((N * beta + a_minus) * t).exp() * (p0_sup + g_sup + h_int)
}

/// e^{(Nβ/q' + ‖a⁻‖)t} (‖p₀‖_q + ‖g‖_{L^q_k}) for finite q ≥ 1.
pub fn lq_bound(t: f64, q: f64, beta: f64, a_minus: f64, p0_q: f64, g_q: f64) -> f64 {
    let inv_qprime = 1.0 - 1.0 / q;
    ((N * beta * inv_qprime + a_minus) * t).exp() * (p0_q + g_q)
}

/// Growth rate A = (N‖F‖ + β)μ + σμ(μ + 2 + N) + Nβ + ‖a⁻‖ of the weighted
/// sup norm ‖(1 + |v|²)^{μ/2} p‖_∞.
pub fn weighted_growth_rate(beta: f64, sigma: f64, mu: f64, f_sup: f64, a_minus: f64) -> f64 {
    (N * f_sup + beta) * mu + sigma * mu * (mu + 2.0 + N) + N * beta + a_minus
}

/// Residuals of both boundary identities at every θ-cell, relative to the
/// size of the data (the larger of the target and the outgoing part).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryIdentityResiduals {
    pub inner: f64,
    pub outer: f64,
    /// Sum over cells of the recorded clamp magnitudes.
    pub clamp: f64,
}

/// Re-evaluates Σ_in p⁻ + Σ_out p⁺ = ρ(r0) and Σ_in |f₁| p⁻ + Σ_out f₁ p⁺ = j₀
/// per θ-cell. `p` supplies the outgoing traces, `inflow` the applied p⁻.
/// Clamped cells report their residual net of the clamp.
pub fn boundary_identity_check(
    grid: &PhaseGrid,
    consts: &BoundaryConstants,
    p: &[f64],
    inflow: &BoundaryValues,
    rho_r0: &[f64],
    j0: &[f64],
) -> BoundaryIdentityResiduals {
    let nv2 = grid.nv2();
    let nr = grid.space.nr;
    let mut out = BoundaryIdentityResiduals::default();
    for j in 0..grid.space.nth {
        let pin = &inflow.inner[j * nv2..(j + 1) * nv2];
        let slab = grid.slab(p, 0, j);
        let outgoing = grid.inner[j].integrate_outgoing(|kv| slab[kv]);
        let clamp = (outgoing - rho_r0[j]).max(0.0);
        let r = inner_identity_residual(grid, j, pin, slab, rho_r0[j]);
        let scale = rho_r0[j].abs().max(outgoing.abs());
        if scale > 0.0 {
            out.inner = out.inner.max((r - clamp).abs() / scale);
        }
        out.clamp += clamp;
        let pin = &inflow.outer[j * nv2..(j + 1) * nv2];
        let slab = grid.slab(p, nr - 1, j);
        let flux = crate::kinetic::boundary::outer_outgoing_flux(grid, consts, j, slab);
        let clamp = (flux - j0[j]).max(0.0);
        let r = outer_identity_residual(grid, consts, j, pin, slab, j0[j]);
        let scale = j0[j].abs().max(flux.abs());
        if scale > 0.0 {
            out.outer = out.outer.max((r - clamp).abs() / scale);
        }
        out.clamp += clamp;
    }
    out
}

/// One record per snapshot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub iterate: usize,
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    /// Kinetic-measure inflow and outflow rates of the last step.
    pub inflow: f64,
    pub outflow: f64,
    /// Largest per-step residuals since the previous snapshot. The
    /// conservative one is the mass defect of a step over the largest term of
    /// its balance; the others are rates relative to the mass (or to ‖p‖₂²
    /// for the L² identity).
    pub mass_residual_conservative: f64,
    pub mass_residual: f64,
    pub momentum_residual_1: f64,
    pub momentum_residual_2: f64,
    pub l2_identity_residual: f64,
    pub norm_l1: f64,
    pub norm_l2: f64,
    pub norm_inf: f64,
    /// m^ℓ for ℓ = 0..=μ_max.
    pub moments: Vec<f64>,
    pub weighted_sup: f64,
    pub weighted_bound: f64,
    #[serde(with = "crate::json_float")]
    pub weighted_margin: f64,
    pub linf_bound: f64,
    #[serde(with = "crate::json_float")]
    pub linf_margin: f64,
    pub interpolation: InterpolationMargins,
    /// ∫|v·n| (Tr p)² over the outflow boundary (recorded, not gated).
    pub trace_square: f64,
    #[serde(with = "crate::json_float")]
    pub min_p: f64,
    #[serde(with = "crate::json_float")]
    pub min_c: f64,
    pub clamp_events: usize,
    pub clamp_total: f64,
    pub bc_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub records: Vec<SnapshotRecord>,
    pub admissibility: Option<AdmissibilityReport>,
    /// Smallest p and c over every step of every iterate.
    #[serde(with = "crate::json_float")]
    pub min_p: f64,
    #[serde(with = "crate::json_float")]
    pub min_c: f64,
}

impl DiagnosticsReport {
    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [
                r.mass_residual_conservative,
                r.mass_residual,
                r.momentum_residual_1,
                r.momentum_residual_2,
                r.l2_identity_residual,
                r.weighted_margin,
                r.linf_margin,
            ]
            .iter()
            .all(|x| x.is_finite())
        })
    }
}

/// Which per-step balance checks to run (each costs a few passes over p).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorToggles {
    pub balance: bool,
    pub bounds: bool,
    pub interpolation: bool,
}

impl Default for MonitorToggles {
    fn default() -> Self {
        MonitorToggles { balance: true, bounds: true, interpolation: true }
    }
}

#[derive(Clone, Debug, Default)]
struct Window {
    cons: f64,
    mass: f64,
    m1: f64,
    m2: f64,
    l2: f64,
    clamp_events: usize,
    clamp_total: f64,
    bc: f64,
    last_fluxes: BoundaryFluxes,
}

/// Observer of coupled runs that builds a [`DiagnosticsReport`].
pub struct Monitor<'g> {
    grid: &'g PhaseGrid,
    beta: f64,
    sigma: f64,
    /// μ of the weighted sup norm.
    pub mu: f64,
    pub mu_max: u32,
    pub toggles: MonitorToggles,
    pub interp: InterpolationSettings,
    /// Only iterates in this set are recorded (None records all).
    pub iterate_filter: Option<usize>,
    pub report: DiagnosticsReport,
    win: Window,
    p0_sup: f64,
    p0_weighted: f64,
    g_sup: f64,
    g_weighted: f64,
    f_sup: f64,
    a_minus: f64,
    g0: Option<(f64, f64)>,
}

impl<'g> Monitor<'g> {
    pub fn new(grid: &'g PhaseGrid, beta: f64, sigma: f64) -> Self {
        Monitor {
            grid,
            beta,
            sigma,
            mu: 3.0,
            mu_max: 3,
            toggles: MonitorToggles::default(),
            interp: InterpolationSettings::default(),
            iterate_filter: None,
            report: DiagnosticsReport { schema_version: SCHEMA_VERSION, min_p: f64::INFINITY, min_c: f64::INFINITY, ..Default::default() },
            win: Window::default(),
            p0_sup: 0.0,
            p0_weighted: 0.0,
            g_sup: 0.0,
            g_weighted: 0.0,
            f_sup: 0.0,
            a_minus: 0.0,
            g0: None,
        }
    }

    /// Data norms entering the bounds (otherwise taken from the first
    /// snapshot at step 0).
    pub fn set_initial(&mut self, p0: &[f64], g: &BoundaryValues) {
        self.p0_sup = sup_norm(p0);
        self.p0_weighted = weighted_sup_norm(self.grid, p0, self.mu);
        self.g0 = Some((g.sup(), weighted_sup_boundary(self.grid, g, self.mu)));
    }

    /// Keeps only the records of iterate `m`.
    pub fn retain_iterate(&mut self, m: usize) {
        self.report.records.retain(|r| r.iterate == m);
    }

    fn wanted(&self, m: usize) -> bool {
        self.iterate_filter.map_or(true, |f| f == m)
    }
}

impl Observer for Monitor<'_> {
    fn iterate_start(&mut self, m: usize) {
        if self.wanted(m) {
            self.report.records.retain(|r| r.iterate != m);
            self.win = Window::default();
            self.f_sup = 0.0;
            self.a_minus = 0.0;
            let (a, b) = self.g0.unwrap_or((0.0, 0.0));
            self.g_sup = a;
            self.g_weighted = b;
        }
    }

    fn step(&mut self, ev: &CoupledStepEvent) -> Result<()> {
        self.report.min_p = self.report.min_p.min(min_value(ev.p_after));
        self.report.min_c = self.report.min_c.min(min_value(ev.c_after));
        if !self.wanted(ev.iterate) {
            return Ok(());
        }
        let g = self.grid;
        let mass = ev.record.mass_before.max(ev.record.mass_after);
        let rel = |x: f64, s: f64| if s > 0.0 { x / s } else { x };
        self.win.cons = self.win.cons.max(ev.record.relative_conservative_residual(ev.dt));
        self.win.last_fluxes = ev.record.fluxes;
        if ev.clamp > 0.0 {
            self.win.clamp_events += 1;
        }
        self.win.clamp_total += ev.clamp;
        self.win.bc = self.win.bc.max(ev.bc_inner_residual).max(ev.bc_outer_residual);
        self.f_sup = ev.force.iter().fold(self.f_sup, |m, f| m.max(f[0].hypot(f[1])));
        let pmax = ev.profile.iter().fold(0.0_f64, |m, &x| m.max(x));
        self.a_minus = ev.decay.iter().zip(ev.rate).fold(self.a_minus, |m, (d, r)| m.max(r * pmax - d));
        self.g_sup = self.g_sup.max(ev.inflow.sup());
        self.g_weighted = self.g_weighted.max(weighted_sup_boundary(g, ev.inflow, self.mu));
        if self.toggles.balance {
            let inp = BalanceInputs {
                beta: self.beta,
                sigma: self.sigma,
                force: ev.force,
                absorption: Absorption::Separable { decay: ev.decay, rate: ev.rate, profile: ev.profile },
                source: None,
                inflow: ev.inflow,
                dt: ev.dt,
            };
            self.win.mass = self.win.mass.max(rel(mass_balance_residual(g, ev.p_before, ev.p_after, &inp), mass));
            let m1 = moment(g, ev.p_after, 1);
            let m2 = moment(g, ev.p_after, 2);
            self.win.m1 = self.win.m1.max(rel(momentum_balance_residual(g, ev.p_before, ev.p_after, &inp, 1), m1));
            self.win.m2 = self.win.m2.max(rel(momentum_balance_residual(g, ev.p_before, ev.p_after, &inp, 2), m2));
            let n2 = lq_norm(g, ev.p_after, 2.0).powi(2);
            self.win.l2 = self.win.l2.max(rel(lq_identity_residual(g, ev.p_before, ev.p_after, &inp), n2));
        }
        Ok(())
    }

    fn snapshot(&mut self, iterate: usize, snap: &CoupledSnapshot) -> Result<()> {
        if !self.wanted(iterate) {
            return Ok(());
        }
        let g = self.grid;
        let p = &snap.p;
        if snap.step == 0 && self.g0.is_none() {
            self.p0_sup = sup_norm(p);
            self.p0_weighted = weighted_sup_norm(g, p, self.mu);
            self.g_sup = snap.inflow.sup();
            self.g_weighted = weighted_sup_boundary(g, &snap.inflow, self.mu);
        }
        let mut r = SnapshotRecord {
            iterate,
            step: snap.step,
            time: snap.time,
            mass: total_mass(g, p),
            inflow: self.win.last_fluxes.mass_in,
            outflow: self.win.last_fluxes.mass_out,
            mass_residual_conservative: self.win.cons,
            mass_residual: self.win.mass,
            momentum_residual_1: self.win.m1,
            momentum_residual_2: self.win.m2,
            l2_identity_residual: self.win.l2,
            norm_l1: lq_norm(g, p, 1.0),
            norm_l2: lq_norm(g, p, 2.0),
            norm_inf: sup_norm(p),
            moments: (0..=self.mu_max).map(|l| moment(g, p, l)).collect(),
            trace_square: boundary_fluxes(g, p, &snap.inflow).sq_out,
            min_p: min_value(p),
            min_c: min_value(&snap.c),
            clamp_events: self.win.clamp_events,
            clamp_total: self.win.clamp_total,
            bc_residual: self.win.bc,
            ..Default::default()
        };
        if self.toggles.bounds {
            let a = weighted_growth_rate(self.beta, self.sigma, self.mu, self.f_sup, self.a_minus);
            r.weighted_sup = weighted_sup_norm(g, p, self.mu);
            r.weighted_bound = (self.p0_weighted + self.g_weighted) * (a * snap.time).exp();
            r.weighted_margin = r.weighted_bound - r.weighted_sup;
            r.linf_bound = linf_bound(snap.time, self.beta, self.a_minus, self.p0_sup, self.g_sup, 0.0);
            r.linf_margin = r.linf_bound - r.norm_inf;
        }
        if self.toggles.interpolation {
            r.interpolation = interpolation_report(g, p, &self.interp);
        }
        self.report.records.push(r);
        let keep = BoundaryFluxes::default();
        self.win = Window { last_fluxes: keep, ..Default::default() };
        Ok(())
    }
}
