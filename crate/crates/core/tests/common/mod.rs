#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use statrs::function::erf::erf;

use vesselkin::io::config::parse_config;
use vesselkin::io::snapshot::{read_snapshot, Snapshot};
use vesselkin::io::RunConfig;
use vesselkin::{build_annulus_grid, build_velocity_grid, PhaseGrid, VelocityGrid};

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> RunConfig {
    let text = fs::read_to_string(scenario_path(name)).expect("scenario file");
    parse_config(&text).expect("scenario parses")
}

pub fn phase_grid(r0: f64, r1: f64, nr: usize, nth: usize, vmax: f64, nv: usize) -> PhaseGrid {
    PhaseGrid::new(build_annulus_grid(r0, r1, nr, nth).unwrap(), build_velocity_grid(vmax, nv).unwrap()).unwrap()
}

/// State snapshots of a run directory in step order.
pub fn read_snapshots(dir: &Path) -> Vec<Snapshot> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir.join("snapshots"))
        .expect("snapshot directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    files.iter().map(|p| read_snapshot(p).unwrap()).collect()
}

/// Cell area r_i Δr Δθ from the grid geometry alone.
pub fn cell_area(grid: &PhaseGrid, i: usize) -> f64 {
    let s = &grid.space;
    let dr = (s.r1 - s.r0) / s.nr as f64;
    let r = s.r0 + (i as f64 + 0.5) * dr;
    r * dr * 2.0 * std::f64::consts::PI / s.nth as f64
}

/// Σ A ω f(p) over the phase grid, summed sequentially.
pub fn phase_sum(grid: &PhaseGrid, p: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let nv2 = grid.vel.nv * grid.vel.nv;
    let om = grid.vel.dv * grid.vel.dv;
    let mut acc = 0.0;
    for (c, slab) in p.chunks(nv2).enumerate() {
        let a = cell_area(grid, c / grid.space.nth);
        acc += a * slab.iter().map(|&x| f(x)).sum::<f64>();
    }
    acc * om
}

pub fn mass(grid: &PhaseGrid, p: &[f64]) -> f64 {
    phase_sum(grid, p, |x| x)
}

pub fn rel_l1(grid: &PhaseGrid, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    phase_sum(grid, &d, f64::abs) / phase_sum(grid, b, f64::abs)
}

/// Cell averages of e^{-x²/(2s²)} over [a, b].
fn gauss_average(a: f64, b: f64, s: f64) -> f64 {
    let k = s * (std::f64::consts::PI / 2.0).sqrt();
    k * (erf(b / (s * std::f64::consts::SQRT_2)) - erf(a / (s * std::f64::consts::SQRT_2))) / (b - a)
}

/// Cell averages of e^{-β|v|²/(2σ)} on the velocity grid.
pub fn maxwellian_averages(vel: &VelocityGrid, beta: f64, sigma: f64) -> Vec<f64> {
    let s = (sigma / beta).sqrt();
    let axis: Vec<f64> = (0..vel.nv)
        .map(|k| {
            let a = -vel.vmax + k as f64 * vel.dv;
            gauss_average(a, a + vel.dv, s)
        })
        .collect();
    let mut out = Vec::with_capacity(vel.nv * vel.nv);
    for k in 0..vel.nv {
        for l in 0..vel.nv {
            out.push(axis[k] * axis[l]);
        }
    }
    out
}

/// Velocity cell centers recomputed from Vmax and Nv.
pub fn velocity_center(vel: &VelocityGrid, kv: usize) -> [f64; 2] {
    let c = |k: usize| -vel.vmax + (k as f64 + 0.5) * vel.dv;
    [c(kv / vel.nv), c(kv % vel.nv)]
}

pub fn sup(p: &[f64]) -> f64 {
    p.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn minimum(p: &[f64]) -> f64 {
    p.iter().fold(f64::INFINITY, |m, &x| m.min(x))
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
