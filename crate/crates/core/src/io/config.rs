//! TOML run configuration. Every key is optional except `mode`; see
//! `scenarios/` and the README for the schema.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::PicardSettings;
use crate::diffusion::{DiffusionScheme, NeumannData};
use crate::grid::AnnulusGrid;
use crate::io::profiles::Profile;
use crate::kinetic::Splitting;
use crate::params::ModelParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("missing required key `{key}`")]
    Missing { key: String },
    #[error("positivity violated: {key}")]
    Positivity { key: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Syntax { .. } => "config.syntax",
            ConfigError::UnknownKey { .. } => "config.unknown-key",
            ConfigError::Missing { .. } => "config.missing-key",
            ConfigError::Positivity { .. } => "config.positivity",
            ConfigError::Invalid { .. } => "config.invalid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Picard,
    Direct,
    LinearFp,
    HeatLab,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtPolicy {
    Fixed,
    CflAuto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcKind {
    FixedG,
    Nonlocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdmissibilityPolicy {
    Enforce,
    Warn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub r0: f64,
    pub r1: f64,
    pub nr: usize,
    pub nth: usize,
    pub nv: usize,
    /// Half-width of the velocity box; derived from the parameters if absent.
    pub vmax: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { r0: 1.0, r1: 2.0, nr: 16, nth: 32, nv: 24, vmax: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub dt_policy: DtPolicy,
    /// Step size for the fixed policy; an upper cap for cfl-auto.
    pub dt: Option<f64>,
    pub safety: f64,
    pub splitting: Splitting,
    pub snapshot_every: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { t_final: 1.0, dt_policy: DtPolicy::CflAuto, dt: None, safety: 0.3, splitting: Splitting::Strang, snapshot_every: 10 }
    }
}

/// ∂c/∂r at r0: a constant or mean + amplitude·cos(mode·θ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NeumannSpec {
    Uniform(f64),
    Cosine { mean: f64, amplitude: f64, mode: u32 },
}

impl NeumannSpec {
    pub fn build(&self, space: &AnnulusGrid) -> NeumannData {
        match self {
            NeumannSpec::Uniform(x) => NeumannData::uniform(space, *x),
            NeumannSpec::Cosine { mean, amplitude, mode } => NeumannData {
                c_r0: (0..space.nth).map(|j| mean + amplitude * (*mode as f64 * space.theta(j)).cos()).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub mode: BcKind,
    pub admissibility: AdmissibilityPolicy,
    pub c_r0: NeumannSpec,
    /// Inflow at r0 (fixed-g) or the seed of the first step (nonlocal).
    pub g_inner: Profile,
    pub g_outer: Profile,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            mode: BcKind::FixedG,
            admissibility: AdmissibilityPolicy::Enforce,
            c_r0: NeumannSpec::Uniform(-0.5),
            g_inner: Profile::Zero,
            g_outer: Profile::GaussianInV { amplitude: 1.0, center: [0.0, 0.0], width: 0.3 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub p: Profile,
    pub c: Profile,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig { p: Profile::Zero, c: Profile::RadialBump { amplitude: 1.0, center: 1.0, width: 0.5 } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TafConfig {
    pub scheme: DiffusionScheme,
}

impl Default for TafConfig {
    fn default() -> Self {
        TafConfig { scheme: DiffusionScheme::RadialImplicit }
    }
}

/// Coefficients of linear-fp mode; the inflow comes from [bc] and the
/// initial state from [initial].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub force: [f64; 2],
    /// Constant absorption a (may be negative).
    pub absorption: f64,
    pub source: Profile,
    /// Outer datum j₀ in nonlocal mode, per θ-cell.
    pub j0: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig { force: [0.0, 0.0], absorption: -0.5, source: Profile::Zero, j0: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatConfig {
    pub d: f64,
    pub u0: Profile,
    pub source: Profile,
    pub scheme: DiffusionScheme,
    pub check_times: Vec<f64>,
    /// Fit window of the smoothing exponent (point-like data only).
    pub slope_window: Option<[f64; 2]>,
    pub slack: f64,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig {
            d: 1.0,
            u0: Profile::GaussianInX { amplitude: 1.0, center: [1.5, 0.0], width: 0.2 },
            source: Profile::Zero,
            scheme: DiffusionScheme::Explicit,
            check_times: vec![0.01, 0.1, 1.0],
            slope_window: None,
            slack: 1.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub balance: bool,
    pub bounds: bool,
    pub interpolation: bool,
    pub mu: f64,
    pub ell: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { balance: true, bounds: true, interpolation: true, mu: 3.0, ell: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Conservative-core mass residual per step, relative to the mass.
    pub mass_conservative: f64,
    /// Boundary identity residuals, relative.
    pub bc_identity: f64,
    /// Allowed negative interpolation margin.
    pub interpolation_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { mass_conservative: 1e-12, bc_identity: 1e-12, interpolation_slack: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub bc: BcConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub taf: TafConfig,
    #[serde(default)]
    pub picard: PicardSettings,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub heat: HeatConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Seed for randomized checks.
    #[serde(default)]
    pub seed: u64,
    /// Single-threaded execution.
    #[serde(default)]
    pub deterministic: bool,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn backticked(msg: &str) -> Option<String> {
    let a = msg.find('`')?;
    let b = msg[a + 1..].find('`')?;
    Some(msg[a + 1..a + 1 + b].to_string())
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    if !value.contains_key("mode") {
        return Err(ConfigError::Missing { key: "mode".into() });
    }
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        if msg.starts_with("unknown field") {
            ConfigError::UnknownKey { key: backticked(&msg).unwrap_or_default(), line }
        } else if msg.starts_with("missing field") {
            ConfigError::Missing { key: backticked(&msg).unwrap_or_default() }
        } else {
            ConfigError::Invalid { key: format!("line {line}"), message: msg }
        }
    })?;
    validate(&cfg)?;
    Ok(cfg)
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.into() }
}

/// Sign and range checks beyond what the types express.
pub fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    if cfg.mode != Mode::HeatLab {
        cfg.params.validate().map_err(|v| ConfigError::Positivity { key: v.key.into() })?;
    }
    let g = &cfg.grid;
    if !(g.r0 > 0.0) {
        return Err(ConfigError::Positivity { key: "grid.r0".into() });
    }
    if !(g.r1 > g.r0) {
        return Err(invalid("grid.r1", "must exceed grid.r0"));
    }
    if g.nr < 2 || g.nth < 4 {
        return Err(invalid("grid", "need nr >= 2 and nth >= 4"));
    }
    if g.nv < 2 || g.nv % 2 != 0 {
        return Err(invalid("grid.nv", "must be even and at least 2"));
    }
    if let Some(v) = g.vmax {
        if !(v > 0.0) {
            return Err(ConfigError::Positivity { key: "grid.vmax".into() });
        }
    }
    let t = &cfg.time;
    if !(t.t_final >= 0.0 && t.t_final.is_finite()) {
        return Err(invalid("time.t_final", "must be finite and nonnegative"));
    }
    match (t.dt_policy, t.dt) {
        (DtPolicy::Fixed, None) => return Err(ConfigError::Missing { key: "time.dt".into() }),
        (_, Some(dt)) if !(dt > 0.0) => return Err(ConfigError::Positivity { key: "time.dt".into() }),
        _ => {}
    }
    if !(t.safety > 0.0 && t.safety <= 1.0 / 3.0 + 1e-12) {
        return Err(invalid("time.safety", "must lie in (0, 1/3]"));
    }
    if t.snapshot_every == 0 {
        return Err(invalid("time.snapshot_every", "must be at least 1"));
    }
    for (key, p) in [
        ("initial.p", &cfg.initial.p),
        ("initial.c", &cfg.initial.c),
        ("bc.g_inner", &cfg.bc.g_inner),
        ("bc.g_outer", &cfg.bc.g_outer),
        ("linear.source", &cfg.linear.source),
        ("heat.u0", &cfg.heat.u0),
        ("heat.source", &cfg.heat.source),
    ] {
        p.check().map_err(|m| invalid(key, m))?;
    }
    if cfg.initial.c.depends_on_v() {
        return Err(invalid("initial.c", "a concentration profile cannot depend on v"));
    }
    if cfg.heat.u0.depends_on_v() || cfg.heat.source.depends_on_v() {
        return Err(invalid("heat", "heat profiles cannot depend on v"));
    }
    if cfg.mode != Mode::LinearFp && cfg.mode != Mode::HeatLab {
        let c_r0_ok = match &cfg.bc.c_r0 {
            NeumannSpec::Uniform(x) => *x <= 0.0,
            NeumannSpec::Cosine { mean, amplitude, .. } => mean + amplitude.abs() <= 0.0,
        };
        if !c_r0_ok {
            return Err(invalid("bc.c_r0", "the TAF flux datum must be <= 0"));
        }
    }
    if cfg.mode == Mode::HeatLab && !(cfg.heat.d > 0.0) {
        return Err(ConfigError::Positivity { key: "heat.d".into() });
    }
    if !(cfg.picard.tol > 0.0) {
        return Err(ConfigError::Positivity { key: "picard.tol".into() });
    }
    if !(cfg.diagnostics.mu > cfg.diagnostics.ell && cfg.diagnostics.ell > 0.0) {
        return Err(invalid("diagnostics", "need mu > ell > 0"));
    }
    if cfg.linear.j0 < 0.0 {
        return Err(ConfigError::Positivity { key: "linear.j0".into() });
    }
    Ok(())
}
