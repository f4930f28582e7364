//! Named analytic profiles for initial and boundary data.

use serde::{Deserialize, Serialize};

use crate::fields::BoundaryValues;
use crate::grid::{AnnulusGrid, PhaseGrid, Side};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    Constant {
        value: f64,
    },
    /// amplitude · exp(−(r − center)² / (2 width²)).
    RadialBump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// amplitude · exp(−|x − center|² / (2 width²)).
    GaussianInX {
        amplitude: f64,
        center: [f64; 2],
        width: f64,
    },
    /// amplitude · exp(−|v − center|² / (2 width²)).
    GaussianInV {
        amplitude: f64,
        center: [f64; 2],
        width: f64,
    },
    /// space(x) · velocity(v).
    Product {
        space: Box<Profile>,
        velocity: Box<Profile>,
    },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Zero
    }
}

impl Profile {
    /// Value at phase point (x, v).
    pub fn eval(&self, x: [f64; 2], v: [f64; 2]) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Constant { value } => *value,
            Profile::RadialBump { amplitude, center, width } => {
                let r = x[0].hypot(x[1]);
                amplitude * (-(r - center).powi(2) / (2.0 * width * width)).exp()
            }
            Profile::GaussianInX { amplitude, center, width } => {
                let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                amplitude * (-d2 / (2.0 * width * width)).exp()
            }
            Profile::GaussianInV { amplitude, center, width } => {
                let d2 = (v[0] - center[0]).powi(2) + (v[1] - center[1]).powi(2);
                amplitude * (-d2 / (2.0 * width * width)).exp()
            }
            Profile::Product { space, velocity } => space.eval(x, v) * velocity.eval(x, v),
        }
    }

    pub fn depends_on_v(&self) -> bool {
        match self {
            Profile::GaussianInV { .. } => true,
            Profile::Product { space, velocity } => space.depends_on_v() || velocity.depends_on_v(),
            _ => false,
        }
    }

    /// Rejects nonpositive widths and negative amplitudes or values.
    pub fn check(&self) -> Result<(), String> {
        match self {
            Profile::Zero => Ok(()),
            Profile::Constant { value } if *value >= 0.0 => Ok(()),
            Profile::Constant { .. } => Err("constant profile must be nonnegative".into()),
            Profile::RadialBump { amplitude, width, .. }
            | Profile::GaussianInX { amplitude, width, .. }
            | Profile::GaussianInV { amplitude, width, .. } => {
                if !(*amplitude >= 0.0) {
                    Err("profile amplitude must be nonnegative".into())
                } else if !(*width > 0.0) {
                    Err("profile width must be positive".into())
                } else {
                    Ok(())
                }
            }
            Profile::Product { space, velocity } => {
                space.check()?;
                velocity.check()
            }
        }
    }

    /// Spatial field at cell centers (v = 0).
    pub fn spatial(&self, space: &AnnulusGrid) -> Vec<f64> {
        (0..space.nr)
            .flat_map(|i| (0..space.nth).map(move |j| (i, j)))
            .map(|(i, j)| self.eval(space.center_xy(i, j), [0.0, 0.0]))
            .collect()
    }

    /// Phase-space field at cell centers.
    pub fn phase(&self, grid: &PhaseGrid) -> Vec<f64> {
        let nv2 = grid.nv2();
        let mut out = vec![0.0; grid.len()];
        for i in 0..grid.space.nr {
            for j in 0..grid.space.nth {
                let x = grid.space.center_xy(i, j);
                for kv in 0..nv2 {
                    out[grid.idx(i, j, kv)] = self.eval(x, grid.vel.v(kv));
                }
            }
        }
        out
    }
}

/// Inflow values on one side: the profile at the boundary point of each
/// θ-cell on incoming velocities, zero elsewhere.
pub fn boundary_profile(grid: &PhaseGrid, side: Side, profile: &Profile, out: &mut BoundaryValues) {
    let nv2 = grid.nv2();
    let r = match side {
        Side::Inner => grid.space.r0,
        Side::Outer => grid.space.r1,
    };
    let dst = out.side_mut(side);
    dst.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..grid.space.nth {
        let th = grid.space.theta(j);
        let x = [r * th.cos(), r * th.sin()];
        for &kv in &grid.half_space(side, j).incoming {
            dst[j * nv2 + kv] = profile.eval(x, grid.vel.v(kv));
        }
    }
}
