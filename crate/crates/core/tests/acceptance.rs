//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! nonzero status if any criterion fails.

mod common;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use vesselkin::coupling::{compute_k1, compute_k2, picard_solve, NoopObserver, PicardSettings};
use vesselkin::diagnostics::{interpolation_report, InterpolationSettings};
use vesselkin::diffusion::{
    diffusion_dt_limit, grad_l2_norm, grad_sup_norm, neumann_step, radial_oracle_solve, solve_heat, DiffusionProblem,
    DiffusionScheme, NeumannData, RadialSpectralOracle,
};
use vesselkin::fields::BoundaryValues;
use vesselkin::io::config::Mode;
use vesselkin::io::profiles::boundary_profile;
use vesselkin::io::run::{self, RunOptions, RunOutcome};
use vesselkin::io::RunConfig;
use vesselkin::kinetic::boundary::{apply_inner_bc, apply_outer_bc, compute_boundary_constants};
use vesselkin::kinetic::linear::step_plan;
use vesselkin::kinetic::{
    cfl_dt, solve_linear_fp, velocity_step, AbsorptionField, BcMode, Coefficient, LinearProblemSpec, StepControls,
};
use vesselkin::{build_annulus_grid, ModelParams, PhaseGrid, Side};

use common::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Ran {
    dir: TempDir,
    cfg: RunConfig,
    outcome: RunOutcome,
}

#[derive(Default)]
struct Ctx {
    runs: HashMap<String, Ran>,
}

impl Ctx {
    fn run(&mut self, name: &str) -> &Ran {
        self.runs.entry(name.to_string()).or_insert_with(|| {
            let cfg = scenario(name);
            let dir = TempDir::new().unwrap();
            let outcome = run::run(&cfg, dir.path(), &RunOptions::default());
            Ran { dir, cfg, outcome }
        })
    }
}

fn orders(res: &[f64]) -> Vec<f64> {
    res.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn sci(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
}

fn fixed(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
}

// 1
fn positivity(ctx: &mut Ctx) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["zero", "linear", "standard", "direct", "nonlocal"] {
        let r = ctx.run(name);
        let rep = &r.outcome.report;
        let finished = r.outcome.summary.status != "error";
        let c_ok = !rep.min_c.is_finite() || rep.min_c >= 0.0;
        ok &= finished && rep.min_p >= 0.0 && c_ok;
        notes.push(format!("{name}: min p {:.2e}", rep.min_p));
    }
    // heat-lab, checked after every step
    let cfg = scenario("heat-lab");
    let space = build_annulus_grid(cfg.grid.r0, cfg.grid.r1, cfg.grid.nr, cfg.grid.nth).unwrap();
    let prob = DiffusionProblem { d: cfg.heat.d, eta: 0.0, data: NeumannData::homogeneous(&space), scheme: cfg.heat.scheme };
    let (n, dt) = step_plan(cfg.time.t_final, 0.9 * diffusion_dt_limit(&space, prob.d, prob.scheme)).unwrap();
    let mut u = cfg.heat.u0.spatial(&space);
    let mut next = vec![0.0; u.len()];
    let mut min_u = minimum(&u);
    for _ in 0..n {
        neumann_step(&space, &prob, &u, &mut next, None, None, dt).unwrap();
        std::mem::swap(&mut u, &mut next);
        min_u = min_u.min(minimum(&u));
    }
    ok &= min_u >= 0.0;
    notes.push(format!("heat-lab: min c {min_u:.2e} over {n} steps"));
    verdict(ok, notes.join("; "))
}

// 2
fn velocity_equilibrium(_: &mut Ctx) -> Verdict {
    let (beta, sigma, vmax) = (1.0, 1.0, 6.0_f64);
    let mut res = Vec::new();
    for dv in [0.25, 0.125, 0.0625] {
        let nv = (2.0 * vmax / dv).round() as usize;
        let grid = phase_grid(1.0, 2.0, 2, 4, vmax, nv);
        let m = maxwellian_averages(&grid.vel, beta, sigma);
        let p: Vec<f64> = (0..grid.space.ncells()).flat_map(|_| m.iter().copied()).collect();
        let force = vec![[0.0, 0.0]; grid.space.ncells()];
        let dt = 0.5 * dv * dv / (4.0 * sigma);
        let mut out = vec![0.0; p.len()];
        velocity_step(&grid, &p, &mut out, &force, beta, sigma, dt).unwrap();
        let r = out.iter().zip(&p).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs())) / dt / sup(&p);
        res.push(r);
    }
    let o = orders(&res);
    let pass = o.iter().all(|&x| x >= 1.8);
    verdict(pass, format!("residuals [{}], orders [{}] (need >= 1.8)", sci(&res), fixed(&o)))
}

/// Smooth linear problem with inflow, absorption and source compatible with
/// the initial state, used for the refinement study.
fn refinement_residual(nr: usize, nth: usize, nv: usize) -> f64 {
    let (beta, sigma, vmax) = (1.0, 0.5, 3.0);
    let grid = phase_grid(1.0, 2.0, nr, nth, vmax, nv);
    let nv2 = grid.nv2();
    let m: Vec<f64> = (0..nv2).map(|kv| {
        let v = velocity_center(&grid.vel, kv);
        (-(v[0] * v[0] + v[1] * v[1]) / (2.0 * sigma / beta)).exp()
    }).collect();
    let ang = |j: usize| 1.0 + 0.3 * grid.space.theta(j).cos();
    let mut p0 = Vec::with_capacity(grid.len());
    let mut a = Vec::with_capacity(grid.len());
    let mut h = Vec::with_capacity(grid.len());
    for i in 0..nr {
        let r = grid.space.r(i);
        for j in 0..nth {
            let th = grid.space.theta(j);
            for kv in 0..nv2 {
                let v = velocity_center(&grid.vel, kv);
                p0.push(ang(j) * m[kv]);
                a.push(0.3 * th.sin() - 0.2 + 0.05 * (v[0] * v[0] + v[1] * v[1]));
                h.push(0.2 * (1.0 + 0.5 * (r - 1.5)) * m[kv]);
            }
        }
    }
    let mut g = BoundaryValues::zeros(&grid);
    for j in 0..nth {
        for kv in 0..nv2 {
            g.inner[j * nv2 + kv] = ang(j) * m[kv];
            g.outer[j * nv2 + kv] = ang(j) * m[kv];
        }
    }
    let force = vec![[0.2, 0.1]; grid.space.ncells()];
    let absorption = AbsorptionField::Phase(a);
    let spec = LinearProblemSpec {
        beta,
        sigma,
        p0,
        force: Coefficient::Steady(force.clone()),
        absorption: Coefficient::Steady(absorption.clone()),
        source: Some(Coefficient::Steady(h.clone())),
        inflow: Coefficient::Steady(g.clone()),
        j0: None,
    };
    let dt = cfl_dt(&grid, beta, sigma, &force, 0.3).min(0.9 * grid.transport_dt_limit());
    let ctl = StepControls::new(dt);
    let mut worst: f64 = 0.0;
    solve_linear_fp(&grid, &spec, &BcMode::Fixed, &ctl, 0.2, 1000, &mut |ev| {
        let inp = vesselkin::diagnostics::BalanceInputs {
            beta,
            sigma,
            force: &force,
            absorption: absorption.as_absorption(),
            source: Some(&h),
            inflow: ev.inflow,
            dt: ev.dt,
        };
        let r = vesselkin::diagnostics::mass_balance_residual(&grid, ev.p_before, ev.p_after, &inp);
        worst = worst.max(r / mass(&grid, ev.p_after));
        Ok(())
    })
    .unwrap();
    worst
}

// 3
fn mass_balance(_: &mut Ctx) -> Verdict {
    // closed run: no inflow, absorption or source; mass leaves by outflow only
    let (beta, sigma) = (1.0, 0.2);
    let grid = phase_grid(1.0, 2.0, 8, 16, 3.0, 16);
    let nv2 = grid.nv2();
    let mut p0 = Vec::with_capacity(grid.len());
    for i in 0..8 {
        let r = grid.space.r(i);
        for _ in 0..16 {
            for kv in 0..nv2 {
                let v = velocity_center(&grid.vel, kv);
                p0.push((-(r - 1.5f64).powi(2) / 0.045).exp() * (-(v[0] * v[0] + v[1] * v[1]) / 0.32).exp());
            }
        }
    }
    let force = vec![[0.3, -0.1]; grid.space.ncells()];
    let spec = LinearProblemSpec {
        beta,
        sigma,
        p0,
        force: Coefficient::Steady(force.clone()),
        absorption: Coefficient::Steady(AbsorptionField::Zero),
        source: None,
        inflow: Coefficient::Steady(BoundaryValues::zeros(&grid)),
        j0: None,
    };
    let dt = cfl_dt(&grid, beta, sigma, &force, 0.3).min(0.9 * grid.transport_dt_limit());
    let mut worst: f64 = 0.0;
    solve_linear_fp(&grid, &spec, &BcMode::Fixed, &StepControls::new(dt), 0.5, 1000, &mut |ev| {
        let (m0, m1) = (mass(&grid, ev.p_before), mass(&grid, ev.p_after));
        let fx = &ev.record.fluxes;
        let defect = (m1 - m0 - ev.dt * (fx.mass_in - fx.mass_out)).abs();
        worst = worst.max(defect / m0.max(m1));
        Ok(())
    })
    .unwrap();
    let res: Vec<f64> = [(6, 12, 8), (12, 24, 16), (24, 48, 32)].iter().map(|&(a, b, c)| refinement_residual(a, b, c)).collect();
    let o = orders(&res);
    let pass = worst <= 1e-12 && o.iter().all(|&x| x >= 0.8);
    verdict(pass, format!("closed-run core residual {worst:.2e} (<= 1e-12); full residuals [{}], orders [{}] (>= 0.8)", sci(&res), fixed(&o)))
}

// 4
fn linf_bound(ctx: &mut Ctx) -> Verdict {
    let r = ctx.run("linear");
    let cfg = &r.cfg;
    let grid = run::build_grid(cfg).unwrap();
    let mut g = BoundaryValues::zeros(&grid);
    boundary_profile(&grid, Side::Inner, &cfg.bc.g_inner, &mut g);
    boundary_profile(&grid, Side::Outer, &cfg.bc.g_outer, &mut g);
    let p0 = cfg.initial.p.phase(&grid);
    let a_minus = (-cfg.linear.absorption).max(0.0);
    assert_eq!(a_minus, 0.5);
    assert_eq!(cfg.params.beta, 1.0);
    let base = sup(&p0) + sup(&g.inner).max(sup(&g.outer));
    let snaps = read_snapshots(r.dir.path());
    let mut worst = f64::INFINITY;
    for s in &snaps {
        let bound = ((2.0 * cfg.params.beta + a_minus) * s.time).exp() * base;
        worst = worst.min(bound - sup(&s.p));
    }
    verdict(worst >= 0.0 && !snaps.is_empty(), format!("{} snapshots, smallest margin {worst:.4e}", snaps.len()))
}

// 5
fn comparison(_: &mut Ctx) -> Verdict {
    let (beta, sigma) = (1.0, 0.2);
    let grid = phase_grid(1.0, 2.0, 8, 16, 3.0, 16);
    let nv2 = grid.nv2();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = grid.len();
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.8)).collect();
    let p_lo: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let p_hi: Vec<f64> = p_lo.iter().map(|x| x + rng.gen_range(0.0..0.2)).collect();
    let h_lo: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.3)).collect();
    let h_hi: Vec<f64> = h_lo.iter().map(|x| x + rng.gen_range(0.0..0.1)).collect();
    let nb = grid.space.nth * nv2;
    let g_lo = BoundaryValues {
        inner: (0..nb).map(|_| rng.gen_range(0.0..0.5)).collect(),
        outer: (0..nb).map(|_| rng.gen_range(0.0..0.5)).collect(),
    };
    let g_hi = BoundaryValues {
        inner: g_lo.inner.iter().map(|x| x + rng.gen_range(0.0..0.1)).collect(),
        outer: g_lo.outer.iter().map(|x| x + rng.gen_range(0.0..0.1)).collect(),
    };
    let force: Vec<[f64; 2]> = (0..grid.space.ncells()).map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]).collect();
    let dt = cfl_dt(&grid, beta, sigma, &force, 0.3).min(0.9 * grid.transport_dt_limit());
    let solve = |p0: &Vec<f64>, h: &Vec<f64>, g: &BoundaryValues| {
        let spec = LinearProblemSpec {
            beta,
            sigma,
            p0: p0.clone(),
            force: Coefficient::Steady(force.clone()),
            absorption: Coefficient::Steady(AbsorptionField::Phase(a.clone())),
            source: Some(Coefficient::Steady(h.clone())),
            inflow: Coefficient::Steady(g.clone()),
            j0: None,
        };
        solve_linear_fp(&grid, &spec, &BcMode::Fixed, &StepControls::new(dt), 0.5, 1, &mut |_| Ok(())).unwrap()
    };
    let lo = solve(&p_lo, &h_lo, &g_lo);
    let hi = solve(&p_hi, &h_hi, &g_hi);
    let mut worst = f64::INFINITY;
    for (x, y) in lo.snapshots.iter().zip(&hi.snapshots) {
        for (a, b) in x.values.iter().zip(&y.values) {
            worst = worst.min(b - a);
        }
    }
    let pass = worst >= 0.0 && lo.snapshots.len() == hi.snapshots.len() && lo.snapshots.len() > 2;
    verdict(pass, format!("{} steps, min(p_hi - p_lo) = {worst:.3e}", lo.snapshots.len() - 1))
}

// 6
fn neumann_decay(ctx: &mut Ctx) -> Verdict {
    let r = ctx.run("heat-lab");
    let cfg = r.cfg.clone();
    let space = build_annulus_grid(cfg.grid.r0, cfg.grid.r1, cfg.grid.nr, cfg.grid.nth).unwrap();
    let snaps = read_snapshots(r.dir.path());
    let area = |i: usize| space.r(i) * space.dr * space.dth;
    let integral = |u: &[f64], f: &dyn Fn(f64) -> f64| -> f64 {
        (0..space.nr).map(|i| area(i) * (0..space.nth).map(|j| f(u[i * space.nth + j])).sum::<f64>()).sum()
    };
    let u0 = &snaps[0].c;
    let sup0 = sup(u0);
    let l2_0 = integral(u0, &|x| x * x).sqrt();
    let mean0 = integral(u0, &|x| x);
    let abs0 = integral(u0, &|x| x.abs());
    let mut sup_ok = true;
    let mut l2_ok = true;
    let mut drift: f64 = 0.0;
    let mut prev = l2_0;
    for s in &snaps {
        sup_ok &= sup(&s.c) <= sup0;
        let l2 = integral(&s.c, &|x| x * x).sqrt();
        l2_ok &= l2 <= prev;
        prev = l2;
        drift = drift.max((integral(&s.c, &|x| x) - mean0).abs() / abs0);
    }
    let mut grad_ok = true;
    let mut grad_notes = Vec::new();
    for t in [0.01, 0.1, 1.0] {
        match snaps.iter().find(|s| (s.time - t).abs() < 1e-9) {
            Some(s) => {
                let g = grad_l2_norm(&space, &s.c);
                let bound = 1.1 * l2_0 / t.sqrt();
                grad_ok &= g <= bound;
                grad_notes.push(format!("t={t}: {:.3}", g / bound));
            }
            None => {
                grad_ok = false;
                grad_notes.push(format!("t={t}: missing"));
            }
        }
    }
    let w = cfg.heat.slope_window.expect("heat-lab has a fit window");
    let (ts, gs): (Vec<f64>, Vec<f64>) =
        snaps.iter().filter(|s| s.time >= w[0] && s.time <= w[1]).map(|s| (s.time, grad_sup_norm(&space, &s.c))).unzip();
    let slope = if ts.len() >= 2 { loglog_slope(&ts, &gs) } else { f64::NAN };
    let slope_ok = (slope + 1.5).abs() <= 0.15;
    let pass = sup_ok && l2_ok && drift <= 1e-12 && grad_ok && slope_ok;
    verdict(
        pass,
        format!(
            "sup {sup_ok}, L2 nonincreasing {l2_ok}, mean drift {drift:.2e}, gradient/bound [{}], slope {slope:.3} over {} points",
            grad_notes.join(", "),
            ts.len()
        ),
    )
}

// 7
fn inhomogeneous_decay(_: &mut Ctx) -> Verdict {
    let space = build_annulus_grid(1.0, 2.0, 16, 32).unwrap();
    let mut h = vec![0.0; space.ncells()];
    for i in 0..space.nr {
        for j in 0..space.nth {
            h[space.idx(i, j)] = 1.0 + 0.5 * space.theta(j).cos() * (space.r(i) - 1.0);
        }
    }
    let h_sup = sup(&h);
    let u0 = vec![0.0; space.ncells()];
    let dt = 0.9 * diffusion_dt_limit(&space, 1.0, DiffusionScheme::Explicit);
    let (traj, _) = solve_heat(&space, 1.0, &u0, Some(&h), 1.0, dt, 1, DiffusionScheme::Explicit).unwrap();
    let mut sup_margin = f64::INFINITY;
    let mut grad_margin = f64::INFINITY;
    for s in traj.iter().filter(|s| s.time > 0.0) {
        sup_margin = sup_margin.min(1.1 * s.time * h_sup - sup(&s.values));
        grad_margin = grad_margin.min(1.1 * 2.0 * s.time.sqrt() * h_sup - grad_sup_norm(&space, &s.values));
    }
    let pass = sup_margin >= 0.0 && grad_margin >= 0.0 && (traj.last().unwrap().time - 1.0).abs() < 1e-12;
    verdict(pass, format!("{} states on [0,1]; sup margin {sup_margin:.3e}, gradient margin {grad_margin:.3e}", traj.len()))
}

// 8
fn diffusion_oracle(_: &mut Ctx) -> Verdict {
    let space = build_annulus_grid(1.0, 2.0, 16, 32).unwrap();
    let d = 1.0;
    let f = |r: f64| (-(r - 1.5f64).powi(2) / (2.0 * 0.2f64.powi(2))).exp();
    let oracle = RadialSpectralOracle::new(1.0, 2.0, d, 4000, 80).unwrap();
    let f0 = oracle.sample(f);
    // cell averages of the datum, so both sides start from the same state
    let mut u0 = vec![0.0; space.ncells()];
    for i in 0..space.nr {
        let ra = space.r0 + i as f64 * space.dr;
        let avg = oracle.cell_average(&f0, ra, ra + space.dr);
        for j in 0..space.nth {
            u0[space.idx(i, j)] = avg;
        }
    }
    let dt = 0.9 * diffusion_dt_limit(&space, d, DiffusionScheme::Explicit);
    let (traj, _) = solve_heat(&space, d, &u0, None, 0.1, dt, 1_000_000, DiffusionScheme::Explicit).unwrap();
    let u = &traj.last().unwrap().values;
    let sol = radial_oracle_solve(&oracle, &f0, 0.1);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..space.nr {
        let ra = space.r0 + i as f64 * space.dr;
        let exact = oracle.cell_average(&sol.profile, ra, ra + space.dr);
        for j in 0..space.nth {
            let a = space.r(i) * space.dr * space.dth;
            num += a * (u[space.idx(i, j)] - exact).powi(2);
            den += a * exact * exact;
        }
    }
    let rel = (num / den).sqrt();
    verdict(rel <= 1e-3 && !sol.truncation_warning, format!("relative L2 error {rel:.3e} at t = 0.1 (<= 1e-3)"))
}

fn unit_normal(th: f64, outward: f64) -> [f64; 2] {
    [outward * th.cos(), outward * th.sin()]
}

// 9
fn boundary_identities(ctx: &mut Ctx) -> Verdict {
    let r = ctx.run("nonlocal");
    let run_res = r.outcome.summary.residual_maxima.bc_identity;
    let cfg = r.cfg.clone();
    let params = cfg.params.clone();

    // direct re-evaluation with independently computed half-spaces and weights
    let grid = run::build_grid(&cfg).unwrap();
    let consts = compute_boundary_constants(&grid, &params).unwrap();
    let nv2 = grid.nv2();
    let om = grid.vel.dv * grid.vel.dv;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for j in 0..grid.space.nth {
        let th = grid.space.theta(j);
        for (side, outward) in [(Side::Inner, -1.0), (Side::Outer, 1.0)] {
            let n = unit_normal(th, outward);
            let p_out: Vec<f64> = (0..nv2).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut dst = vec![0.0; nv2];
            let (mut acc_in, mut acc_out) = (0.0, 0.0);
            let target;
            match side {
                Side::Inner => {
                    let out_mass: f64 = (0..nv2)
                        .filter(|&kv| {
                            let v = velocity_center(&grid.vel, kv);
                            v[0] * n[0] + v[1] * n[1] > 0.0
                        })
                        .map(|kv| om * p_out[kv])
                        .sum();
                    target = out_mass * rng.gen_range(1.0..3.0);
                    apply_inner_bc(&grid, &consts, j, &p_out, target, &mut dst);
                    for kv in 0..nv2 {
                        let v = velocity_center(&grid.vel, kv);
                        let vn = v[0] * n[0] + v[1] * n[1];
                        if vn < 0.0 {
                            acc_in += om * dst[kv];
                        } else if vn > 0.0 {
                            acc_out += om * p_out[kv];
                        }
                    }
                }
                Side::Outer => {
                    let f1 = |v: [f64; 2]| {
                        let c = [params.chi * params.v0[0], params.chi * params.v0[1]];
                        let x = ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2)) / params.sigma_v.powi(2);
                        (v[0] * n[0] + v[1] * n[1]) / (1.0 + x.exp())
                    };
                    let out_flux: f64 = (0..nv2)
                        .filter(|&kv| {
                            let v = velocity_center(&grid.vel, kv);
                            v[0] * n[0] + v[1] * n[1] > 0.0
                        })
                        .map(|kv| om * f1(velocity_center(&grid.vel, kv)) * p_out[kv])
                        .sum();
                    target = out_flux * rng.gen_range(1.0..3.0) + 1e-3;
                    apply_outer_bc(&grid, &consts, j, &p_out, target, &mut dst);
                    for kv in 0..nv2 {
                        let v = velocity_center(&grid.vel, kv);
                        let vn = v[0] * n[0] + v[1] * n[1];
                        if vn < 0.0 {
                            acc_in += om * f1(v).abs() * dst[kv];
                        } else if vn > 0.0 {
                            acc_out += om * f1(v) * p_out[kv];
                        }
                    }
                }
            }
            worst = worst.max((acc_in + acc_out - target).abs() / target);
        }
    }

    // inner trace L1 across Picard iterates, nonlocal mode
    let mut pcfg = cfg.clone();
    pcfg.mode = Mode::Picard;
    pcfg.time.t_final = 0.1;
    let pb = run::coupled_problem(&pcfg).unwrap();
    let res = picard_solve(&pb, &PicardSettings { tol: 1e-10, m_max: 5 }, &mut NoopObserver).unwrap();
    let traces: Vec<f64> = res.state.inner_trace_l1.iter().map(|x| x.1).collect();
    let first = traces[0];
    let spread = traces.iter().fold(0.0_f64, |m, x| m.max((x - first).abs())) / first.abs();
    let pass = run_res <= 1e-12 && worst <= 1e-12 && spread <= 1e-12 && traces.len() >= 3;
    verdict(
        pass,
        format!(
            "run residual {run_res:.2e}, re-evaluated {worst:.2e}, inner trace L1 spread {spread:.2e} over {} iterates",
            traces.len()
        ),
    )
}

struct McEstimate {
    mean: f64,
    se: f64,
}

fn mc<F: Fn(&mut ChaCha8Rng) -> f64>(n: usize, seed: u64, f: F) -> McEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let x = f(&mut rng);
        s += x;
        s2 += x * x;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0) * n as f64 / (n as f64 - 1.0);
    McEstimate { mean, se: (var / n as f64).sqrt() }
}

fn normal_pair(rng: &mut ChaCha8Rng) -> [f64; 2] {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let rad = (-2.0 * u1.ln()).sqrt();
    [rad * (2.0 * PI * u2).cos(), rad * (2.0 * PI * u2).sin()]
}

/// K₁ and K₂ of one grid and parameter set against Monte-Carlo oracles.
fn admissibility_case(params: &ModelParams, grid: &PhaseGrid, fine: &PhaseGrid, samples: usize) -> (bool, String) {
    let k1 = compute_k1(grid, params).unwrap();
    let k2 = compute_k2(grid, params);
    let k1_fine = compute_k1(fine, params).unwrap();
    let k2_fine = compute_k2(fine, params);
    let kappa = params.beta / params.sigma;
    let c = [params.chi * params.v0[0], params.chi * params.v0[1]];
    let sv = params.sigma_v;
    let window = |v: [f64; 2]| 1.0 / (1.0 + (((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2)) / (sv * sv)).exp());
    let nv2 = grid.nv2();
    let mut k1_best = (0.0, 0.0, 0.0);
    let mut k2_best = (0.0, 0.0);
    for j in 0..grid.space.nth {
        let n = unit_normal(grid.space.theta(j), 1.0);
        // numerator: max over the grid's outgoing cells
        let num = (0..nv2)
            .map(|kv| velocity_center(&grid.vel, kv))
            .filter(|v| v[0] * n[0] + v[1] * n[1] > 0.0)
            .map(|v| (v[0] * n[0] + v[1] * n[1]) * (-kappa * ((v[0] - params.v0[0]).powi(2) + (v[1] - params.v0[1]).powi(2))).exp())
            .fold(0.0_f64, f64::max);
        // denominator: v ~ N(v0, 1/(2κ)) so that E[1{v·n<0} |v·n| w(v)] π/κ is the integral
        let s = (0.5 / kappa).sqrt();
        let den = mc(samples, 1000 + j as u64, |rng| {
            let z = normal_pair(rng);
            let v = [params.v0[0] + s * z[0], params.v0[1] + s * z[1]];
            let vn = v[0] * n[0] + v[1] * n[1];
            if vn < 0.0 && v[0].abs() <= grid.vel.vmax && v[1].abs() <= grid.vel.vmax {
                PI / kappa * vn.abs() * window(v)
            } else {
                0.0
            }
        });
        let ratio = num / den.mean;
        if ratio > k1_best.0 {
            k1_best = (ratio, ratio * den.se / den.mean, num);
        }
        // K2: v ~ N(c, σ_v²/2); w/q is bounded so the estimator has small variance
        let s2 = sv / 2f64.sqrt();
        let k2e = mc(samples, 5000 + j as u64, |rng| {
            let z = normal_pair(rng);
            let v = [c[0] + s2 * z[0], c[1] + s2 * z[1]];
            let vn = v[0] * n[0] + v[1] * n[1];
            if vn > 0.0 && v[0].abs() <= grid.vel.vmax && v[1].abs() <= grid.vel.vmax {
                let x = ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2)) / (sv * sv);
                PI * sv * sv * window(v) * x.exp()
            } else {
                0.0
            }
        });
        if k2e.mean > k2_best.0 {
            k2_best = (k2e.mean, k2e.se);
        }
    }
    let z1 = (k1 - k1_best.0).abs() / k1_best.1;
    let z2 = (k2 - k2_best.0).abs() / k2_best.1;
    let r1 = (k1 - k1_fine).abs() / k1_fine;
    let r2 = (k2 - k2_fine).abs() / k2_fine;
    let pass = z1 <= 3.0 && z2 <= 3.0 && r1 <= 0.01 && r2 <= 0.01;
    (
        pass,
        format!(
            "K1 {k1:.6e} (MC {:.6e}, {z1:.2} SE; 4x-refined {r1:.2e}), K2 {k2:.6e} (MC {:.6e}, {z2:.2} SE; 4x-refined {r2:.2e})",
            k1_best.0, k2_best.0
        ),
    )
}

// 10
fn admissibility_quadratures(_: &mut Ctx) -> Verdict {
    let params = ModelParams { beta: 1.0, sigma: 1.0, chi: 2.0, sigma_v: 1.0, v0: [0.3, 0.1], ..ModelParams::default() };
    let vmax = vesselkin::params::default_vmax(&params, 1e-12);
    let nv = 96;
    let grid = phase_grid(1.0, 2.0, 4, 32, vmax, nv);
    let fine = phase_grid(1.0, 2.0, 4, 32, vmax, 4 * nv);
    let (pass, detail) = admissibility_case(&params, &grid, &fine, 1_000_000);
    verdict(pass, format!("generic parameters, Vmax = {vmax:.2}, Nv = {nv}: {detail}"))
}

// 11
fn picard_vs_direct(ctx: &mut Ctx) -> Verdict {
    let (ps, picard_final) = {
        let r = ctx.run("standard");
        let ps = r.outcome.summary.picard.clone().expect("picard history");
        (ps, read_snapshots(r.dir.path()).pop().unwrap())
    };
    let direct_final = read_snapshots(ctx.run("direct").dir.path()).pop().unwrap();
    let cfg = ctx.run("standard").cfg.clone();
    let grid = run::build_grid(&cfg).unwrap();
    let d: Vec<(usize, f64)> = ps.distances.clone();
    let monotone = d.windows(2).filter(|w| w[0].0 >= 3).all(|w| w[1].1 < w[0].1);
    let converged = ps.converged && ps.m <= 12;
    let at_t = (picard_final.time - 1.0).abs() < 1e-12 && (direct_final.time - 1.0).abs() < 1e-12;
    let dist = rel_l1(&grid, &picard_final.p, &direct_final.p);
    let pass = monotone && converged && at_t && dist <= 1e-3;
    let hist: Vec<String> = d.iter().map(|(m, x)| format!("{m}:{x:.1e}")).collect();
    verdict(
        pass,
        format!("distances [{}], converged at m = {} ({}), picard vs direct rel L1 {dist:.3e}", hist.join(" "), ps.m, ps.converged),
    )
}

// 12
fn weighted_decay(ctx: &mut Ctx) -> Verdict {
    let r = ctx.run("standard");
    let cfg = r.cfg.clone();
    let grid = run::build_grid(&cfg).unwrap();
    let snaps = read_snapshots(r.dir.path());
    let recs = &r.outcome.report.records;
    let nv2 = grid.nv2();
    let y: Vec<f64> = (0..nv2)
        .map(|kv| {
            let v = velocity_center(&grid.vel, kv);
            (1.0 + v[0] * v[0] + v[1] * v[1]).powf(1.5)
        })
        .collect();
    let mut worst = f64::INFINITY;
    let mut matched = 0;
    for s in &snaps {
        let Some(rec) = recs.iter().find(|x| x.step as u64 == s.step) else { continue };
        matched += 1;
        let ws = s.p.chunks(nv2).flat_map(|sl| sl.iter().zip(&y).map(|(a, b)| a * b)).fold(0.0_f64, f64::max);
        worst = worst.min(rec.weighted_bound - ws);
    }
    let pass = matched == snaps.len() && matched > 0 && worst >= 0.0 && cfg.diagnostics.mu == 3.0;
    verdict(pass, format!("{matched} snapshots, smallest margin {worst:.4e}"))
}

// 13
fn interpolation(ctx: &mut Ctx) -> Verdict {
    let r = ctx.run("standard");
    let snap_worst = r.outcome.report.records.iter().map(|x| x.interpolation.worst()).fold(f64::INFINITY, f64::min);
    let nrec = r.outcome.report.records.len();
    let grid = phase_grid(1.0, 2.0, 4, 8, 3.0, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let settings = InterpolationSettings::default();
    let mut rand_worst = f64::INFINITY;
    for k in 0..100 {
        let p: Vec<f64> = match k % 3 {
            0 => (0..grid.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
            1 => (0..grid.len()).map(|_| if rng.gen_bool(0.05) { rng.gen_range(0.0..10.0) } else { 0.0 }).collect(),
            _ => (0..grid.len()).map(|_| rng.gen_range(0.0f64..1.0).powi(8)).collect(),
        };
        rand_worst = rand_worst.min(interpolation_report(&grid, &p, &settings).worst());
    }
    let pass = nrec > 0 && snap_worst >= -1e-10 && rand_worst >= -1e-10;
    verdict(pass, format!("{nrec} snapshots worst margin {snap_worst:.3e}; 100 random fields worst {rand_worst:.3e}"))
}

fn snapshot_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("snapshots"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

// 14
fn determinism(ctx: &mut Ctx) -> Verdict {
    let (cfg, first) = {
        let r = ctx.run("nonlocal");
        (r.cfg.clone(), snapshot_bytes(r.dir.path()))
    };
    assert!(cfg.deterministic);
    let again = TempDir::new().unwrap();
    run::run(&cfg, again.path(), &RunOptions::default());
    let second = snapshot_bytes(again.path());
    let same = !first.is_empty() && first == second;

    let stop = 20;
    let part = TempDir::new().unwrap();
    run::run(&cfg, part.path(), &RunOptions { stop_at: Some(stop), resume: None });
    let resumed = TempDir::new().unwrap();
    run::run(&cfg, resumed.path(), &RunOptions { stop_at: None, resume: Some(part.path().join("checkpoint.bin")) });
    let mut merged: HashMap<String, Vec<u8>> = snapshot_bytes(part.path()).into_iter().collect();
    let after = snapshot_bytes(resumed.path());
    let n_after = after.len();
    merged.extend(after);
    let mut merged: Vec<(String, Vec<u8>)> = merged.into_iter().collect();
    merged.sort();
    let resume_same = merged == first && n_after > 0;
    verdict(
        same && resume_same,
        format!("{} snapshots; repeat run bitwise {same}; resume after step {stop} bitwise {resume_same} ({n_after} resumed snapshots)", first.len()),
    )
}

fn main() {
    let criteria: Vec<(&str, fn(&mut Ctx) -> Verdict)> = vec![
        ("positivity", positivity),
        ("velocity equilibrium", velocity_equilibrium),
        ("mass balance", mass_balance),
        ("L-infinity bound", linf_bound),
        ("comparison principle", comparison),
        ("Neumann semigroup decay", neumann_decay),
        ("inhomogeneous decay", inhomogeneous_decay),
        ("diffusion oracle", diffusion_oracle),
        ("boundary identities", boundary_identities),
        ("admissibility quadratures", admissibility_quadratures),
        ("Picard vs direct march", picard_vs_direct),
        ("weighted decay", weighted_decay),
        ("interpolation inequalities", interpolation),
        ("determinism", determinism),
    ];
    // optional criterion numbers on the command line select a subset
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Ctx::default();
    let mut failed = 0;
    let mut ran = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(k + 1)) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let v = match catch_unwind(AssertUnwindSafe(|| f(&mut ctx))) {
            Ok(v) => v,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {:2} {:<28} {}  [{:.1}s] {}",
            k + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    drop(ctx);
    if failed > 0 {
        std::process::exit(1);
    }
}
