//! Spatial annulus grid, Cartesian velocity box and half-space quadratures.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Which circle of the annulus boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Inner,
    Outer,
}

/// Polar finite-volume grid on `r0 < |x| < r1`.
#[derive(Clone, Debug)]
pub struct AnnulusGrid {
    pub r0: f64,
    pub r1: f64,
    pub nr: usize,
    pub nth: usize,
    pub dr: f64,
    pub dth: f64,
    r: Vec<f64>,
    theta: Vec<f64>,
}

pub fn build_annulus_grid(r0: f64, r1: f64, nr: usize, nth: usize) -> Result<AnnulusGrid> {
    if !(r0 > 0.0 && r1.is_finite()) || r0 >= r1 {
        return Err(Error::Grid(format!("need 0 < r0 < r1, got r0={r0}, r1={r1}")));
    }
    if nr < 2 || nth < 4 {
        return Err(Error::Grid(format!("need Nr >= 2 and Nth >= 4, got {nr} x {nth}")));
    }
    let dr = (r1 - r0) / nr as f64;
    let dth = 2.0 * PI / nth as f64;
    let r = (0..nr).map(|i| r0 + (i as f64 + 0.5) * dr).collect();
    let theta = (0..nth).map(|j| (j as f64 + 0.5) * dth).collect();
    Ok(AnnulusGrid { r0, r1, nr, nth, dr, dth, r, theta })
}

impl AnnulusGrid {
    pub fn ncells(&self) -> usize {
        self.nr * self.nth
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nth + j
    }

    #[inline]
    pub fn r(&self, i: usize) -> f64 {
        self.r[i]
    }

    #[inline]
    pub fn theta(&self, j: usize) -> f64 {
        self.theta[j]
    }

    /// Radius of radial face `f` (0 = r0, nr = r1).
    #[inline]
    pub fn face_r(&self, f: usize) -> f64 {
        if f == self.nr {
            self.r1
        } else {
            self.r0 + f as f64 * self.dr
        }
    }

    /// Cell area r_i Δr Δθ (independent of j).
    #[inline]
    pub fn area(&self, i: usize) -> f64 {
        self.r[i] * self.dr * self.dth
    }

    pub fn total_area(&self) -> f64 {
        (0..self.nr).map(|i| self.area(i)).sum::<f64>() * self.nth as f64
    }

    /// Arc length of radial face `f` over one angular cell.
    #[inline]
    pub fn arc_length(&self, f: usize) -> f64 {
        self.face_r(f) * self.dth
    }

    /// Chord factor 2 r sin(Δθ/2): integrating `v·ê_r` over the arc gives
    /// `(v·ê_r(θ_j))` times this length exactly.
    #[inline]
    pub fn chord_length(&self, f: usize) -> f64 {
        2.0 * self.face_r(f) * (0.5 * self.dth).sin()
    }

    /// Unit radial vector at the center of angular cell `j`.
    #[inline]
    pub fn e_r(&self, j: usize) -> [f64; 2] {
        let t = self.theta[j];
        [t.cos(), t.sin()]
    }

    /// Unit angular vector at the face θ_{j+1/2}.
    #[inline]
    pub fn e_theta_face(&self, j: usize) -> [f64; 2] {
        let t = (j as f64 + 1.0) * self.dth;
        [-t.sin(), t.cos()]
    }

    /// Outward unit normal of the boundary cell at angular index `j`.
    pub fn normal(&self, side: Side, j: usize) -> [f64; 2] {
        let e = self.e_r(j);
        match side {
            Side::Inner => [-e[0], -e[1]],
            Side::Outer => e,
        }
    }

    /// Radial index of the boundary cell layer.
    pub fn boundary_layer(&self, side: Side) -> usize {
        match side {
            Side::Inner => 0,
            Side::Outer => self.nr - 1,
        }
    }

    /// Boundary cell indices `(i, j)` along one side.
    pub fn boundary_cells(&self, side: Side) -> impl Iterator<Item = (usize, usize)> + '_ {
        let i = self.boundary_layer(side);
        (0..self.nth).map(move |j| (i, j))
    }

    pub fn center_xy(&self, i: usize, j: usize) -> [f64; 2] {
        let e = self.e_r(j);
        [self.r[i] * e[0], self.r[i] * e[1]]
    }

    /// Smallest cell extent, min(Δr, r_0 Δθ) at the innermost centers.
    pub fn min_spacing(&self) -> f64 {
        self.dr.min(self.r[0] * self.dth)
    }
}

/// Uniform Cartesian velocity grid on `[-Vmax, Vmax]^2`.
#[derive(Clone, Debug)]
pub struct VelocityGrid {
    pub vmax: f64,
    pub nv: usize,
    pub dv: f64,
    centers: Vec<f64>,
}

pub fn build_velocity_grid(vmax: f64, nv: usize) -> Result<VelocityGrid> {
    if !(vmax > 0.0 && vmax.is_finite()) {
        return Err(Error::Grid(format!("Vmax must be positive, got {vmax}")));
    }
    if nv < 2 || nv % 2 != 0 {
        return Err(Error::Grid(format!("Nv must be even and >= 2, got {nv}")));
    }
    let dv = 2.0 * vmax / nv as f64;
    let centers = (0..nv).map(|k| -vmax + (k as f64 + 0.5) * dv).collect();
    Ok(VelocityGrid { vmax, nv, dv, centers })
}

impl VelocityGrid {
    /// Number of velocity cells, Nv².
    #[inline]
    pub fn len(&self) -> usize {
        self.nv * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.nv == 0
    }

    #[inline]
    pub fn idx(&self, k: usize, l: usize) -> usize {
        k * self.nv + l
    }

    #[inline]
    pub fn center(&self, k: usize) -> f64 {
        self.centers[k]
    }

    /// Position of face `f` (0 = -Vmax, nv = +Vmax) along one axis.
    #[inline]
    pub fn face(&self, f: usize) -> f64 {
        -self.vmax + f as f64 * self.dv
    }

    #[inline]
    pub fn v(&self, kv: usize) -> [f64; 2] {
        [self.centers[kv / self.nv], self.centers[kv % self.nv]]
    }

    #[inline]
    pub fn weight(&self) -> f64 {
        self.dv * self.dv
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight() * self.len() as f64
    }

    pub fn contains(&self, v: [f64; 2]) -> bool {
        v[0].abs() <= self.vmax && v[1].abs() <= self.vmax
    }

    /// Tabulates `w` at all cell centers.
    pub fn tabulate(&self, w: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|kv| w(self.v(kv))).collect()
    }
}

/// Midpoint sum Σ ω w(v) f(v) over one velocity slab.
pub fn integrate_velocity(grid: &VelocityGrid, field: &[f64], w: impl Fn([f64; 2]) -> f64) -> f64 {
    debug_assert_eq!(field.len(), grid.len());
    let s: f64 = field.iter().enumerate().map(|(kv, f)| w(grid.v(kv)) * f).sum();
    s * grid.weight()
}

/// Midpoint sum with pretabulated weights.
pub fn integrate_weighted(grid: &VelocityGrid, field: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(field.len(), grid.len());
    let s: f64 = field.iter().zip(weights).map(|(f, w)| f * w).sum();
    s * grid.weight()
}

/// Half-space split of the velocity cells relative to a boundary normal.
#[derive(Clone, Debug)]
pub struct HalfSpaceQuadrature {
    pub normal: [f64; 2],
    /// Cells with v·n > 0.
    pub outgoing: Vec<usize>,
    /// Cells with v·n < 0.
    pub incoming: Vec<usize>,
    /// v·n for every velocity cell.
    pub vn: Vec<f64>,
    /// +1 outgoing, -1 incoming, 0 grazing.
    pub class: Vec<i8>,
    pub weight: f64,
}

pub fn half_space_quadrature(grid: &VelocityGrid, n: [f64; 2]) -> Result<HalfSpaceQuadrature> {
    let norm = (n[0] * n[0] + n[1] * n[1]).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Grid(format!("normal must be a unit vector, |n| = {norm}")));
    }
    let tol = 1e-14 * grid.vmax;
    let mut outgoing = Vec::new();
    let mut incoming = Vec::new();
    let mut vn = Vec::with_capacity(grid.len());
    let mut class = Vec::with_capacity(grid.len());
    for kv in 0..grid.len() {
        let v = grid.v(kv);
        let d = v[0] * n[0] + v[1] * n[1];
        vn.push(d);
        if d > tol {
            outgoing.push(kv);
            class.push(1);
        } else if d < -tol {
            incoming.push(kv);
            class.push(-1);
        } else {
            class.push(0);
        }
    }
    Ok(HalfSpaceQuadrature { normal: n, outgoing, incoming, vn, class, weight: grid.weight() })
}

impl HalfSpaceQuadrature {
    /// Σ_{v·n<0} ω w(v) f(v).
    pub fn integrate_incoming(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.incoming.iter().map(|&kv| f(kv)).sum::<f64>() * self.weight
    }

    /// Σ_{v·n>0} ω w(v) f(v).
    pub fn integrate_outgoing(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.outgoing.iter().map(|&kv| f(kv)).sum::<f64>() * self.weight
    }
}

/// Phase-space grid: annulus × velocity box, with the per-boundary-cell
/// half-space splits and the normal velocities used by transport.
#[derive(Clone, Debug)]
pub struct PhaseGrid {
    pub space: AnnulusGrid,
    pub vel: VelocityGrid,
    pub inner: Vec<HalfSpaceQuadrature>,
    pub outer: Vec<HalfSpaceQuadrature>,
    /// v·ê_r(θ_j), layout [j * Nv² + kv].
    pub(crate) vr: Vec<f64>,
    /// v·ê_θ(θ_{j+1/2}), layout [j * Nv² + kv].
    pub(crate) vth: Vec<f64>,
    /// max over cells and velocities of the total outgoing face rate / area.
    pub(crate) max_transport_rate: f64,
}

impl PhaseGrid {
    pub fn new(space: AnnulusGrid, vel: VelocityGrid) -> Result<Self> {
        let nv2 = vel.len();
        let nth = space.nth;
        let mut inner = Vec::with_capacity(nth);
        let mut outer = Vec::with_capacity(nth);
        let mut vr = vec![0.0; nth * nv2];
        let mut vth = vec![0.0; nth * nv2];
        for j in 0..nth {
            inner.push(half_space_quadrature(&vel, space.normal(Side::Inner, j))?);
            outer.push(half_space_quadrature(&vel, space.normal(Side::Outer, j))?);
            let er = space.e_r(j);
            let et = space.e_theta_face(j);
            for kv in 0..nv2 {
                let v = vel.v(kv);
                vr[j * nv2 + kv] = v[0] * er[0] + v[1] * er[1];
                vth[j * nv2 + kv] = v[0] * et[0] + v[1] * et[1];
            }
        }
        let mut g = PhaseGrid { space, vel, inner, outer, vr, vth, max_transport_rate: 0.0 };
        g.max_transport_rate = g.compute_max_transport_rate();
        Ok(g)
    }

    fn compute_max_transport_rate(&self) -> f64 {
        let s = &self.space;
        let nv2 = self.vel.len();
        let mut best: f64 = 0.0;
        for i in 0..s.nr {
            let lo = s.chord_length(i);
            let hi = s.chord_length(i + 1);
            let a = s.area(i);
            for j in 0..s.nth {
                let jm = (j + s.nth - 1) % s.nth;
                for kv in 0..nv2 {
                    let ur = self.vr[j * nv2 + kv];
                    let up = self.vth[j * nv2 + kv];
                    let um = self.vth[jm * nv2 + kv];
                    let out = ur.max(0.0) * hi + (-ur).max(0.0) * lo + (up.max(0.0) + (-um).max(0.0)) * s.dr;
                    best = best.max(out / a);
                }
            }
        }
        best
    }

    #[inline]
    pub fn nv2(&self) -> usize {
        self.vel.len()
    }

    /// Total number of phase-space cells.
    pub fn len(&self) -> usize {
        self.space.ncells() * self.vel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of (i, j, kv).
    #[inline]
    pub fn idx(&self, i: usize, j: usize, kv: usize) -> usize {
        (i * self.space.nth + j) * self.vel.len() + kv
    }

    pub fn half_space(&self, side: Side, j: usize) -> &HalfSpaceQuadrature {
        match side {
            Side::Inner => &self.inner[j],
            Side::Outer => &self.outer[j],
        }
    }

    /// Largest dt keeping the transport sub-step monotone.
    pub fn transport_dt_limit(&self) -> f64 {
        if self.max_transport_rate > 0.0 {
            1.0 / self.max_transport_rate
        } else {
            f64::INFINITY
        }
    }

    /// Velocity slab of spatial cell `(i, j)`.
    pub fn slab<'a>(&self, p: &'a [f64], i: usize, j: usize) -> &'a [f64] {
        let nv2 = self.vel.len();
        let c = self.space.idx(i, j);
        &p[c * nv2..(c + 1) * nv2]
    }
}
