mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use vesselkin::diagnostics::heat::{heat_energy_residual, homogeneous_decay};
use vesselkin::diagnostics::{
    boundary_identity_check, heat_decay_report, interpolation_report, linf_bound, lq_bound, lq_identity_residual, lq_norm,
    mass_balance_residual, momentum_balance_residual, momentum_rhs, velocity_gradient_sq, velocity_l2_rate, weighted_growth_rate,
    BalanceInputs, HeatRuns, InterpolationSettings,
};
use vesselkin::diffusion::{diffusion_dt_limit, neumann_step, solve_heat_homogeneous, DiffusionProblem, DiffusionScheme, NeumannData};
use vesselkin::fields::{moment, BoundaryValues, Concentration};
use vesselkin::kinetic::{
    cfl_dt, compute_boundary_constants, solve_linear_fp, velocity_step, Absorption, AbsorptionField, BcMode, Coefficient, LinearProblemSpec,
    StepControls,
};
use vesselkin::{build_annulus_grid, ModelParams, PhaseGrid};

fn inputs<'a>(beta: f64, sigma: f64, force: &'a [[f64; 2]], inflow: &'a BoundaryValues, dt: f64) -> BalanceInputs<'a> {
    BalanceInputs { beta, sigma, force, absorption: Absorption::Zero, source: None, inflow, dt }
}

#[test]
fn balances_vanish_on_zero_state() {
    let g = phase_grid(1.0, 2.0, 4, 8, 3.0, 12);
    let p = vec![0.0; g.len()];
    let force = vec![[0.3, -0.2]; g.space.ncells()];
    let inflow = BoundaryValues::zeros(&g);
    let inp = inputs(1.0, 0.5, &force, &inflow, 1e-3);
    assert_eq!(mass_balance_residual(&g, &p, &p, &inp), 0.0);
    assert_eq!(momentum_balance_residual(&g, &p, &p, &inp, 1), 0.0);
    assert_eq!(momentum_balance_residual(&g, &p, &p, &inp, 2), 0.0);
    assert_eq!(lq_identity_residual(&g, &p, &p, &inp), 0.0);
    let consts = compute_boundary_constants(&g, &ModelParams::default()).unwrap();
    let zeros = vec![0.0; g.space.nth];
    let r = boundary_identity_check(&g, &consts, &p, &inflow, &zeros, &zeros);
    assert_eq!((r.inner, r.outer, r.clamp), (0.0, 0.0, 0.0));
}

/// p supported in the middle ring only, so no boundary terms enter.
fn interior_gaussian(g: &PhaseGrid, width: f64) -> Vec<f64> {
    let nv2 = g.nv2();
    let mut p = vec![0.0; g.len()];
    for j in 0..g.space.nth {
        for kv in 0..nv2 {
            let v = velocity_center(&g.vel, kv);
            p[g.idx(1, j, kv)] = (-(v[0] * v[0] + v[1] * v[1]) / (2.0 * width * width)).exp();
        }
    }
    p
}

#[test]
fn second_moment_follows_ode() {
    let (beta, sigma, t_final) = (1.0, 1.0, 0.5);
    let mut errs = Vec::new();
    for nv in [32, 64] {
        let g = phase_grid(1.0, 2.0, 3, 4, 8.0, nv);
        let force = vec![[0.0, 0.0]; g.space.ncells()];
        let dt0 = cfl_dt(&g, beta, sigma, &force, 0.3);
        let n = (t_final / dt0).ceil() as usize;
        let dt = t_final / n as f64;
        let mut p = interior_gaussian(&g, 0.5);
        let m0 = moment(&g, &p, 0);
        let m2 = moment(&g, &p, 2);
        let mut out = vec![0.0; p.len()];
        let inflow = BoundaryValues::zeros(&g);
        let inp = inputs(beta, sigma, &force, &inflow, dt);
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            velocity_step(&g, &p, &mut out, &force, beta, sigma, dt).unwrap();
            worst = worst.max(momentum_balance_residual(&g, &p, &out, &inp, 2) / (4.0 * sigma * m0));
            std::mem::swap(&mut p, &mut out);
        }
        let eq = 2.0 * sigma * m0 / beta;
        let exact = eq + (m2 - eq) * (-2.0 * beta * t_final).exp();
        errs.push((moment(&g, &p, 2) - exact).abs() / exact);
        assert!(worst < 5e-2, "nv {nv}: {worst}");
    }
    assert!(errs[1] < 1e-2, "{errs:?}");
    assert!(errs[0] / errs[1] > 1.8, "{errs:?}");
}

#[test]
fn equilibrium_moment_identity() {
    let (beta, sigma) = (2.0, 0.5);
    let g = phase_grid(1.0, 2.0, 2, 4, 5.0, 64);
    // point samples: the midpoint rule is spectrally accurate for Gaussian moments
    let m = g.vel.tabulate(|v| (-beta * (v[0] * v[0] + v[1] * v[1]) / (2.0 * sigma)).exp());
    let p: Vec<f64> = (0..g.space.ncells()).flat_map(|_| m.iter().copied()).collect();
    let force = vec![[0.0, 0.0]; g.space.ncells()];
    let inflow = BoundaryValues::zeros(&g);
    let inp = inputs(beta, sigma, &force, &inflow, 1.0);
    let rhs = momentum_rhs(&g, &p, &inp, 2);
    let scale = 4.0 * sigma * moment(&g, &p, 0);
    assert!(rhs.abs() <= 1e-10 * scale, "{rhs} vs {scale}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn velocity_diffusion_energy_identity(seed in any::<u64>(), sigma in 0.1f64..2.0) {
        let g = phase_grid(1.0, 2.0, 2, 4, 2.0, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let force = vec![[0.0, 0.0]; g.space.ncells()];
        let rate = velocity_l2_rate(&g, &p, &force, 0.0, sigma);
        let exact = -2.0 * sigma * velocity_gradient_sq(&g, &p);
        prop_assert!((rate - exact).abs() <= 1e-8 * exact.abs());
    }

    #[test]
    fn interpolation_margins_nonnegative(seed in any::<u64>(), mu in 3.5f64..6.0, ell in 0.5f64..3.0) {
        let g = phase_grid(1.0, 2.0, 2, 4, 4.0, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..g.len()).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..5.0) } else { 0.0 }).collect();
        let m = interpolation_report(&g, &p, &InterpolationSettings { mu, ell: ell.min(mu - 0.5) });
        prop_assert!(m.mlp1 >= -1e-10);
        prop_assert!(m.vinf >= -1e-10);
        prop_assert!(m.inf >= -1e-10);
        prop_assert!(m.interp >= -1e-10);
        prop_assert!(m.mlpinf_scaling_defect < 1e-10);
    }
}

#[test]
fn single_cell_holder_equality() {
    let g = phase_grid(1.0, 2.0, 2, 4, 4.0, 12);
    let mut p = vec![0.0; g.len()];
    p[g.idx(1, 2, 40)] = 3.0;
    let m = interpolation_report(&g, &p, &InterpolationSettings::default());
    assert!(m.mlp1.abs() < 1e-12, "{}", m.mlp1);
}

#[test]
fn algebraic_tail_interpolation() {
    let mu = 3.0;
    let g = phase_grid(1.0, 2.0, 2, 4, 6.0, 48);
    let prof = g.vel.tabulate(|v| (1.0 + v[0] * v[0] + v[1] * v[1]).powf(-0.5 * mu - 1.0));
    let p: Vec<f64> = (0..g.space.ncells()).flat_map(|_| prof.iter().copied()).collect();
    let m = interpolation_report(&g, &p, &InterpolationSettings { mu, ell: 1.0 });
    assert!(m.interp >= 0.0, "{}", m.interp);
}

#[test]
fn bound_formulas() {
    assert_eq!(linf_bound(0.0, 1.0, 0.5, 0.0, 0.0, 0.0), 0.0);
    assert!((linf_bound(0.5, 1.0, 0.5, 2.0, 1.0, 0.0) - 3.0 * (1.25f64).exp()).abs() < 1e-12);
    // q = 1: no β growth
    assert!((lq_bound(1.0, 1.0, 3.0, 0.0, 2.0, 1.0) - 3.0).abs() < 1e-12);
    assert!((lq_bound(1.0, 2.0, 1.0, 0.0, 1.0, 0.0) - 1f64.exp()).abs() < 1e-12);
    assert!((weighted_growth_rate(1.0, 0.5, 2.0, 0.0, 0.0) - 10.0).abs() < 1e-12);
}

#[test]
fn linear_run_respects_sup_bound() {
    let g = phase_grid(1.0, 2.0, 8, 12, 4.0, 16);
    let beta = 1.0;
    let gauss = g.vel.tabulate(|v| (-(v[0] * v[0] + v[1] * v[1]) / 0.18).exp());
    let mut inflow = BoundaryValues::zeros(&g);
    for (k, x) in inflow.outer.iter_mut().enumerate() {
        *x = gauss[k % g.nv2()];
    }
    let p0: Vec<f64> = (0..g.len()).map(|k| 0.5 * gauss[k % g.nv2()]).collect();
    let force = vec![[0.2, 0.0]; g.space.ncells()];
    let dt = cfl_dt(&g, beta, 0.1, &force, 0.3).min(0.9 * g.transport_dt_limit());
    let spec = LinearProblemSpec {
        beta,
        sigma: 0.1,
        p0: p0.clone(),
        force: Coefficient::Steady(force),
        absorption: Coefficient::Steady(AbsorptionField::Phase(vec![-0.5; g.len()])),
        source: None,
        inflow: Coefficient::Steady(inflow.clone()),
        j0: None,
    };
    let (p0_sup, g_sup) = (sup(&p0), sup(&inflow.outer));
    let mut worst = f64::INFINITY;
    solve_linear_fp(&g, &spec, &BcMode::Fixed, &StepControls::new(dt), 0.5, 10, &mut |ev| {
        let bound = linf_bound(ev.t + ev.dt, beta, 0.5, p0_sup, g_sup, 0.0);
        worst = worst.min(bound - sup(ev.p_after));
        Ok(())
    })
    .unwrap();
    assert!(worst >= 0.0, "{worst}");
    assert_eq!(lq_norm(&g, &vec![0.0; g.len()], f64::INFINITY), 0.0);
}

#[test]
fn heat_report_on_constant_and_random_data() {
    let space = build_annulus_grid(1.0, 2.0, 16, 32).unwrap();
    let dt = 0.9 * diffusion_dt_limit(&space, 1.0, DiffusionScheme::Explicit);
    let times = [0.01, 0.1, 1.0];
    let run = |u0: &[f64]| -> Vec<Concentration> {
        vesselkin::diffusion::solve_heat_with_stops(&space, 1.0, u0, None, 1.0, dt, 1000, DiffusionScheme::Explicit, &times).unwrap()
    };
    let flat = run(&vec![0.7; 512]);
    let rep = heat_decay_report(&space, &HeatRuns { homogeneous: Some(&flat), check_times: &times, inhomogeneous: None, point_like: None, slack: 1.1 });
    assert!(rep.pass());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u0: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let traj = run(&u0);
    let h = homogeneous_decay(&space, &traj, &[0.1], 1.1);
    assert_eq!(h.gradient.len(), 1);
    assert!(h.gradient[0].margin >= 0.0, "{:?}", h.gradient);
    assert!(h.sup_margin >= 0.0 && h.l2_increase <= 0.0 && h.mean_drift <= 1e-12);
}

#[test]
fn heat_energy_identity_per_step() {
    let space = build_annulus_grid(1.0, 2.0, 10, 20).unwrap();
    let dt = 0.9 * diffusion_dt_limit(&space, 0.8, DiffusionScheme::Explicit);
    let prob = DiffusionProblem { d: 0.8, eta: 0.0, data: NeumannData::homogeneous(&space), scheme: DiffusionScheme::Explicit };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut u: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut next = vec![0.0; 200];
    for _ in 0..50 {
        neumann_step(&space, &prob, &u, &mut next, None, None, dt).unwrap();
        assert!(heat_energy_residual(&space, 0.8, &u, &next, dt) <= 1e-10);
        std::mem::swap(&mut u, &mut next);
    }
    let (traj, _) = solve_heat_homogeneous(&space, 0.8, &u, 0.05, dt, 1, DiffusionScheme::Explicit).unwrap();
    assert!(traj.len() > 2);
}
