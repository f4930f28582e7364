use serde::{Deserialize, Serialize};

/// Physical constants of the coupled tip-density / TAF model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Friction coefficient.
    pub beta: f64,
    /// Velocity diffusivity.
    pub sigma: f64,
    /// Anastomosis rate.
    pub gamma: f64,
    /// TAF diffusivity.
    pub d: f64,
    /// TAF consumption rate.
    pub eta: f64,
    /// Maximal branching rate.
    pub alpha1: f64,
    /// Reference concentration.
    pub c_r: f64,
    pub d1: f64,
    pub gamma1: f64,
    pub q1: f64,
    /// Center multiplier of the Fermi velocity window.
    pub chi: f64,
    /// Width of the Fermi velocity window.
    pub sigma_v: f64,
    /// Sprouting velocity.
    pub v0: [f64; 2],
    /// Width of the Gaussian standing in for δ(v − v0).
    pub eps_nu: f64,
}

/// A parameter that failed validation.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamViolation {
    pub key: &'static str,
    pub message: String,
}

impl ModelParams {
    pub fn v0_norm(&self) -> f64 {
        self.v0[0].hypot(self.v0[1])
    }

    /// Strict sign checks applied to user configurations.
    pub fn validate(&self) -> Result<(), ParamViolation> {
        let positive = [
            ("beta", self.beta),
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("d", self.d),
            ("eta", self.eta),
            ("alpha1", self.alpha1),
            ("c_r", self.c_r),
            ("d1", self.d1),
            ("gamma1", self.gamma1),
            ("q1", self.q1),
            ("sigma_v", self.sigma_v),
            ("eps_nu", self.eps_nu),
        ];
        for (key, val) in positive {
            if !(val > 0.0 && val.is_finite()) {
                return Err(ParamViolation { key, message: format!("positivity violated: {key}") });
            }
        }
        if !(self.chi > 1.0 && self.chi.is_finite()) {
            return Err(ParamViolation { key: "chi", message: "chi must exceed 1".into() });
        }
        if !(self.v0_norm() > 0.0 && self.v0_norm().is_finite()) {
            return Err(ParamViolation { key: "v0", message: "v0 must be nonzero".into() });
        }
        Ok(())
    }

    /// Center of the Fermi window, χ v0.
    pub fn window_center(&self) -> [f64; 2] {
        [self.chi * self.v0[0], self.chi * self.v0[1]]
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        let v0 = [0.3, 0.0];
        ModelParams {
            beta: 1.0,
            sigma: 0.1,
            gamma: 0.05,
            d: 0.05,
            eta: 0.3,
            alpha1: 1.0,
            c_r: 1.0,
            d1: 1.0,
            gamma1: 0.5,
            q1: 1.0,
            chi: 4.0,
            sigma_v: 0.3,
            v0,
            eps_nu: 0.2,
        }
    }
}

/// Default truncation radius of the velocity box.
///
/// Largest of: the Fermi window center plus four widths, the radius beyond
/// which the equilibrium Gaussian e^{-β|v|²/(2σ)} drops below `tol`, and
/// the branching profile ν with six widths to spare.
pub fn default_vmax(p: &ModelParams, tol: f64) -> f64 {
    let base = p.chi * p.v0_norm() + 4.0 * p.sigma_v;
    let tail = (2.0 * p.sigma / p.beta * (1.0 / tol).ln()).sqrt();
    let nu = p.v0[0].abs().max(p.v0[1].abs()) + 6.0 * p.eps_nu;
    base.max(tail).max(nu)
}
