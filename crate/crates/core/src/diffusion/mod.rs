//! Conservative polar finite volumes for ∂c/∂t = dΔc − ηcj (+ h) with
//! ∂c/∂r = c_r0 at r0 and zero flux at r1.

pub mod spectral;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Concentration;
use crate::grid::AnnulusGrid;
use crate::kinetic::linear::step_plan;

pub use spectral::{radial_oracle_solve, RadialSpectralOracle};

/// Neumann datum ∂c/∂r = c_r0(θ) at r0, per angular cell.
#[derive(Clone, Debug, PartialEq)]
pub struct NeumannData {
    pub c_r0: Vec<f64>,
}

impl NeumannData {
    pub fn homogeneous(space: &AnnulusGrid) -> Self {
        NeumannData { c_r0: vec![0.0; space.nth] }
    }

    pub fn uniform(space: &AnnulusGrid, c_r0: f64) -> Self {
        NeumannData { c_r0: vec![c_r0; space.nth] }
    }

    /// Rejects positive data (model mode requires an entering flux).
    pub fn check_model_sign(&self) -> Result<()> {
        if self.c_r0.iter().any(|&x| !(x <= 0.0)) {
            return Err(Error::Param("c_r0 must be <= 0 in model mode".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionScheme {
    Explicit,
    /// Angular direction explicit, radial direction backward Euler.
    RadialImplicit,
}

/// Diffusivity, sink rate and boundary data of one diffusion problem.
#[derive(Clone, Debug)]
pub struct DiffusionProblem {
    pub d: f64,
    pub eta: f64,
    pub data: NeumannData,
    pub scheme: DiffusionScheme,
}

fn radial_coef(space: &AnnulusGrid, d: f64, f: usize) -> f64 {
    d * space.arc_length(f) / space.dr
}

fn angular_coef(space: &AnnulusGrid, d: f64, i: usize) -> f64 {
    d * space.dr / (space.r(i) * space.dth)
}

/// Largest monotone dt of the explicit part.
pub fn diffusion_dt_limit(space: &AnnulusGrid, d: f64, scheme: DiffusionScheme) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..space.nr {
        let mut k = 2.0 * angular_coef(space, d, i);
        if scheme == DiffusionScheme::Explicit {
            if i > 0 {
                k += radial_coef(space, d, i);
            }
            if i + 1 < space.nr {
                k += radial_coef(space, d, i + 1);
            }
        }
        if k > 0.0 {
            best = best.min(space.area(i) / k);
        }
    }
    best
}

/// One step. `sink_j` is the tip flux j (sink e^{-ηj dt}), `source` an
/// optional volumetric source h.
pub fn neumann_step(
    space: &AnnulusGrid,
    prob: &DiffusionProblem,
    c: &[f64],
    out: &mut [f64],
    sink_j: Option<&[f64]>,
    source: Option<&[f64]>,
    dt: f64,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Cfl(format!("diffusion dt must be positive, got {dt}")));
    }
    let lim = diffusion_dt_limit(space, prob.d, prob.scheme);
    if dt > lim * (1.0 + 1e-12) {
        return Err(Error::Cfl(format!("diffusion dt = {dt} exceeds monotone limit {lim}")));
    }
    let (nr, nth) = (space.nr, space.nth);
    let d = prob.d;
    let explicit = prob.scheme == DiffusionScheme::Explicit;
    out.par_chunks_mut(nth).enumerate().for_each(|(i, row)| {
        let a = space.area(i);
        let ka = angular_coef(space, d, i);
        let kin = if i > 0 { radial_coef(space, d, i) } else { 0.0 };
        let kout = if i + 1 < nr { radial_coef(space, d, i + 1) } else { 0.0 };
        for j in 0..nth {
            let jp = (j + 1) % nth;
            let jm = (j + nth - 1) % nth;
            let own = c[space.idx(i, j)];
            let mut leave = 2.0 * ka;
            let mut gain = ka * (c[space.idx(i, jp)] + c[space.idx(i, jm)]);
            if explicit {
                leave += kin + kout;
                if i > 0 {
                    gain += kin * c[space.idx(i - 1, j)];
                }
                if i + 1 < nr {
                    gain += kout * c[space.idx(i + 1, j)];
                }
                if i == 0 {
                    gain += -d * prob.data.c_r0[j] * space.arc_length(0);
                }
            }
            let mut v = (1.0 - dt / a * leave).max(0.0) * own + dt / a * gain;
            if let Some(h) = source {
                v += dt * h[space.idx(i, j)];
            }
            row[j] = v;
        }
    });
    if !explicit {
        radial_implicit_sweep(space, prob, out, dt);
    }
    if let Some(jf) = sink_j {
        out.par_iter_mut().zip(jf).for_each(|(x, jv)| *x *= (-prob.eta * jv * dt).exp());
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite concentration".into()));
    }
    Ok(())
}

/// Backward Euler in r per angular column, in place.
fn radial_implicit_sweep(space: &AnnulusGrid, prob: &DiffusionProblem, u: &mut [f64], dt: f64) {
    let (nr, nth) = (space.nr, space.nth);
    let d = prob.d;
    let mut lower = vec![0.0; nr];
    let mut diag = vec![0.0; nr];
    let mut upper = vec![0.0; nr];
    let mut rhs = vec![0.0; nr];
    for j in 0..nth {
        for i in 0..nr {
            let a = space.area(i) / dt;
            let kin = if i > 0 { radial_coef(space, d, i) } else { 0.0 };
            let kout = if i + 1 < nr { radial_coef(space, d, i + 1) } else { 0.0 };
            lower[i] = -kin;
            upper[i] = -kout;
            diag[i] = a + kin + kout;
            rhs[i] = a * u[space.idx(i, j)];
            if i == 0 {
                rhs[i] += -d * prob.data.c_r0[j] * space.arc_length(0);
            }
        }
        // Thomas algorithm; the matrix is an M-matrix so no pivoting is needed
        for i in 1..nr {
            let m = lower[i] / diag[i - 1];
            diag[i] -= m * upper[i - 1];
            rhs[i] -= m * rhs[i - 1];
        }
        let mut x = rhs[nr - 1] / diag[nr - 1];
        u[space.idx(nr - 1, j)] = x;
        for i in (0..nr - 1).rev() {
            x = (rhs[i] - upper[i] * x) / diag[i];
            u[space.idx(i, j)] = x;
        }
    }
}

/// Integrates the TAF equation with one tip-flux field per step
/// (`j_steps[n]` acts on [t_n, t_{n+1}]). Returns c at every step.
pub fn solve_taf(space: &AnnulusGrid, prob: &DiffusionProblem, c0: &[f64], j_steps: &[Vec<f64>], dt: f64) -> Result<Vec<Concentration>> {
    if c0.iter().any(|&x| x < 0.0) {
        return Err(Error::Param("initial concentration must be nonnegative".into()));
    }
    let mut c = c0.to_vec();
    let mut next = vec![0.0; c.len()];
    let mut traj = vec![Concentration { time: 0.0, values: c.clone() }];
    for (n, j) in j_steps.iter().enumerate() {
        neumann_step(space, prob, &c, &mut next, Some(j), None, dt)?;
        std::mem::swap(&mut c, &mut next);
        traj.push(Concentration { time: (n + 1) as f64 * dt, values: c.clone() });
    }
    Ok(traj)
}

/// Homogeneous Neumann heat flow ∂u/∂t = dΔu, stored every `every` steps
/// (and at T). Returns the snapshots and the step size used.
pub fn solve_heat_homogeneous(
    space: &AnnulusGrid,
    d: f64,
    u0: &[f64],
    t_final: f64,
    dt: f64,
    every: usize,
    scheme: DiffusionScheme,
) -> Result<(Vec<Concentration>, f64)> {
    solve_heat(space, d, u0, None, t_final, dt, every, scheme)
}

/// Heat flow with an optional steady source h and homogeneous data.
#[allow(clippy::too_many_arguments)]
pub fn solve_heat(
    space: &AnnulusGrid,
    d: f64,
    u0: &[f64],
    source: Option<&[f64]>,
    t_final: f64,
    dt: f64,
    every: usize,
    scheme: DiffusionScheme,
) -> Result<(Vec<Concentration>, f64)> {
    let prob = DiffusionProblem { d, eta: 0.0, data: NeumannData::homogeneous(space), scheme };
    let (n, dt) = step_plan(t_final, dt)?;
    let every = every.max(1);
    let mut u = u0.to_vec();
    let mut next = vec![0.0; u.len()];
    let mut traj = vec![Concentration { time: 0.0, values: u.clone() }];
    for s in 0..n {
        neumann_step(space, &prob, &u, &mut next, None, source, dt)?;
        std::mem::swap(&mut u, &mut next);
        if (s + 1) % every == 0 || s + 1 == n {
            traj.push(Concentration { time: (s + 1) as f64 * dt, values: u.clone() });
        }
    }
    Ok((traj, dt))
}

/// Σ A u.
pub fn area_integral(space: &AnnulusGrid, u: &[f64]) -> f64 {
    (0..space.nr)
        .map(|i| space.area(i) * u[i * space.nth..(i + 1) * space.nth].iter().sum::<f64>())
        .sum()
}

/// (Σ A u²)^{1/2}.
pub fn l2_norm(space: &AnnulusGrid, u: &[f64]) -> f64 {
    (0..space.nr)
        .map(|i| space.area(i) * u[i * space.nth..(i + 1) * space.nth].iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Face-based discrete ‖∇u‖₂, the seminorm paired with the FV Laplacian:
/// ‖∇u‖₂² = −⟨u, Δ_h u⟩ for homogeneous Neumann data.
pub fn grad_l2_norm(space: &AnnulusGrid, u: &[f64]) -> f64 {
    let (nr, nth) = (space.nr, space.nth);
    let mut s = 0.0;
    for i in 0..nr {
        let ka = angular_coef(space, 1.0, i);
        for j in 0..nth {
            let jp = (j + 1) % nth;
            let du = u[space.idx(i, jp)] - u[space.idx(i, j)];
            s += ka * du * du;
            if i + 1 < nr {
                let du = u[space.idx(i + 1, j)] - u[space.idx(i, j)];
                s += radial_coef(space, 1.0, i + 1) * du * du;
            }
        }
    }
    s.sqrt()
}

/// max over cells of the Euclidean norm of the central gradient.
pub fn grad_sup_norm(space: &AnnulusGrid, u: &[f64]) -> f64 {
    let zero = vec![0.0; space.nth];
    crate::fields::concentration_gradient(space, u, &zero)
        .iter()
        .fold(0.0, |m, g| m.max(g[0].hypot(g[1])))
}

/// Applies the explicit FV operator: returns d Δ_h u per cell (homogeneous data).
pub fn apply_laplacian(space: &AnnulusGrid, d: f64, u: &[f64]) -> Vec<f64> {
    let (nr, nth) = (space.nr, space.nth);
    let mut out = vec![0.0; u.len()];
    for i in 0..nr {
        let a = space.area(i);
        let ka = angular_coef(space, d, i);
        for j in 0..nth {
            let jp = (j + 1) % nth;
            let jm = (j + nth - 1) % nth;
            let own = u[space.idx(i, j)];
            let mut f = ka * (u[space.idx(i, jp)] - own) + ka * (u[space.idx(i, jm)] - own);
            if i > 0 {
                f += radial_coef(space, d, i) * (u[space.idx(i - 1, j)] - own);
            }
            if i + 1 < nr {
                f += radial_coef(space, d, i + 1) * (u[space.idx(i + 1, j)] - own);
            }
            out[space.idx(i, j)] = f / a;
        }
    }
    out
}

/// Heat flow that lands exactly on every time in `stops` (each in (0, T]).
/// Within each segment the step is the largest uniform one ≤ `dt`.
#[allow(clippy::too_many_arguments)]
pub fn solve_heat_with_stops(
    space: &AnnulusGrid,
    d: f64,
    u0: &[f64],
    source: Option<&[f64]>,
    t_final: f64,
    dt: f64,
    every: usize,
    scheme: DiffusionScheme,
    stops: &[f64],
) -> Result<Vec<Concentration>> {
    let mut marks: Vec<f64> = stops.iter().copied().filter(|&t| t > 0.0 && t < t_final).collect();
    marks.push(t_final);
    marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    marks.dedup();
    let mut traj = vec![Concentration { time: 0.0, values: u0.to_vec() }];
    let mut t0 = 0.0;
    for &t1 in &marks {
        if t1 <= t0 {
            continue;
        }
        let start = traj.last().unwrap().values.clone();
        let (seg, _) = solve_heat(space, d, &start, source, t1 - t0, dt, every, scheme)?;
        for s in seg.into_iter().skip(1) {
            traj.push(Concentration { time: if (s.time - (t1 - t0)).abs() < 1e-12 * t1 { t1 } else { t0 + s.time }, values: s.values });
        }
        t0 = t1;
    }
    Ok(traj)
}
