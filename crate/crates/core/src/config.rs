//! Experiment configuration: a single TOML file with one table per concern.
//!
//! Every random stream is derived from the top-level `seed`; the per-module
//! seed fields in the nested tables are overwritten on resolution.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degiorgi::{Exponents, SupOptions};
use crate::error::{Error, Result};
use crate::geometry::Cylinder;
use crate::grid::GridSpec;
use crate::harnack::HarnackParams;
use crate::kolmogorov::{DualSpreadingParams, Hypothesis1Params};
use crate::rough::{CoefficientKind, CoefficientRecipe};
use crate::scheme::Boundary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Campaign {
    KernelValidate,
    Hypothesis1,
    DualSpreading,
    SupBound,
    WeakHarnack,
    Convergence,
}

impl Campaign {
    pub const ALL: [Campaign; 6] = [
        Campaign::KernelValidate,
        Campaign::Hypothesis1,
        Campaign::DualSpreading,
        Campaign::SupBound,
        Campaign::WeakHarnack,
        Campaign::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Campaign::KernelValidate => "kernel-validate",
            Campaign::Hypothesis1 => "hypothesis1",
            Campaign::DualSpreading => "dual-spreading",
            Campaign::SupBound => "sup-bound",
            Campaign::WeakHarnack => "weak-harnack",
            Campaign::Convergence => "convergence",
        }
    }

    /// Name of the statistic a sweep reports for this campaign.
    pub fn headline(self) -> &'static str {
        match self {
            Campaign::KernelValidate => "normalization_error",
            Campaign::Hypothesis1 => "C0",
            Campaign::DualSpreading => "mu0",
            Campaign::SupBound => "C_S",
            Campaign::WeakHarnack => "mu",
            Campaign::Convergence => "last_difference",
        }
    }
}

/// Uniform grid on `[t_lo, t_hi] x [-x_half, x_half] x [-v_half, v_half]`.
/// When `dt` is set it fixes the number of time nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub nt: usize,
    pub nx: usize,
    pub nv: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_half: f64,
    pub v_half: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nt: 48, nx: 48, nv: 48, t_lo: -1.0, t_hi: 0.0, x_half: 4.0, v_half: 3.0, dt: None }
    }
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        let nt = match self.dt {
            Some(dt) => ((self.t_hi - self.t_lo) / dt).round() as usize + 1,
            None => self.nt,
        };
        GridSpec::boxed((self.t_lo, self.t_hi, nt), (self.x_half, self.nx), (self.v_half, self.nv))
    }
}

/// `[s, r]` pairs of the inner and outer cylinder, both based at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CylinderConfig {
    pub inner: [f64; 2],
    pub outer: [f64; 2],
}

impl Default for CylinderConfig {
    fn default() -> Self {
        Self { inner: [0.5, 1.0], outer: [1.0, 2.0] }
    }
}

impl CylinderConfig {
    pub fn inner(&self) -> Cylinder {
        Cylinder::kinetic(0.0, 0.0, 0.0, self.inner[0], self.inner[1])
    }
    pub fn outer(&self) -> Cylinder {
        Cylinder::kinetic(0.0, 0.0, 0.0, self.outer[0], self.outer[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    /// Times at which the kernel mass is integrated.
    pub taus: Vec<f64>,
    pub normalization_tol: f64,
    /// Stencil widths for the residual order; consecutive ratios of 2.
    pub residual_steps: Vec<f64>,
    pub min_order: f64,
    /// Width of the packet compared against the grid solver.
    pub packet_sigma: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { taus: vec![0.1, 0.5, 1.0], normalization_tol: 1e-6, residual_steps: vec![0.04, 0.02, 0.01], min_order: 1.8, packet_sigma: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hypothesis1Config {
    #[serde(flatten)]
    pub params: Hypothesis1Params,
    /// Spacing ratio between the two grid levels.
    pub refinement: f64,
    pub max_change: f64,
}

impl Default for Hypothesis1Config {
    fn default() -> Self {
        Self { params: Hypothesis1Params::default(), refinement: 1.5, max_change: 0.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupConfig {
    #[serde(flatten)]
    pub options: SupOptions,
    pub boundary: Boundary,
    /// Width of the Gaussian packet evolved into the test subsolution.
    pub packet_sigma: f64,
    /// Extra coefficient draws of the configured kind (random seeds derived
    /// from `seed`); `0` runs only the configured coefficients.
    pub draws: usize,
    pub refinement: f64,
    pub max_overshoot: f64,
    pub cs_stability: f64,
}

impl Default for SupConfig {
    fn default() -> Self {
        Self {
            options: SupOptions::default(),
            boundary: Boundary::Dirichlet,
            packet_sigma: 0.4,
            draws: 0,
            refinement: 4.0 / 3.0,
            max_overshoot: 10.0,
            cs_stability: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnackConfig {
    #[serde(flatten)]
    pub params: HarnackParams,
    /// Width of the Gaussian started at `t = -1`.
    pub packet_sigma: f64,
    /// `0` skips the refinement run.
    pub refinement: f64,
    pub mu_stability: f64,
    /// Relative grid tolerance in the soundness check `mu <= min u`.
    pub grid_tol: f64,
}

impl Default for HarnackConfig {
    fn default() -> Self {
        Self { params: HarnackParams::default(), packet_sigma: 0.8, refinement: 4.0 / 3.0, mu_stability: 0.25, grid_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub viscosities: Vec<f64>,
    /// Radius of the ball carrying the data; the cutoff `chi` equals one on
    /// `chi_inner` and vanishes beyond `chi_outer`.
    pub radius: f64,
    pub chi_inner: f64,
    pub chi_outer: f64,
    pub bumps: usize,
    pub max_energy_spread: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { viscosities: vec![1e-1, 1e-2, 1e-3], radius: 1.5, chi_inner: 2.0, chi_outer: 2.5, bumps: 3, max_energy_spread: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub campaign: Campaign,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub coefficients: CoefficientRecipe,
    pub exponents: Exponents,
    pub cylinders: CylinderConfig,
    pub kernel: KernelConfig,
    pub hypothesis1: Hypothesis1Config,
    pub dual: DualSpreadingParams,
    pub sup: SupConfig,
    pub harnack: HarnackConfig,
    pub convergence: ConvergenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            campaign: Campaign::KernelValidate,
            seed: 20240917,
            output_dir: PathBuf::from("hypoharnack-out"),
            grid: GridConfig::default(),
            coefficients: CoefficientRecipe::default(),
            exponents: Exponents::default(),
            cylinders: CylinderConfig::default(),
            kernel: KernelConfig::default(),
            hypothesis1: Hypothesis1Config::default(),
            dual: DualSpreadingParams::default(),
            sup: SupConfig::default(),
            harnack: HarnackConfig::default(),
            convergence: ConvergenceConfig::default(),
        }
    }
}

/// Independent stream `tag` of the master seed, kept below `2^63` so that
/// resolved configurations still serialize to TOML.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64() >> 1
}

fn field_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(field_err(path, format!("must be positive and finite (got {x})")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| field_err(&e.span().map(|r| format!("byte {}..{}", r.start, r.end)).unwrap_or_default(), e.message()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { path: p, message } => field_err(&format!("{}: {p}", path.display()), message),
            other => other,
        })?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| field_err("", e.to_string()))
    }

    /// Derives the per-module seeds from `seed` and fills the checkerboard
    /// amplitude from `Lambda - lambda` when it is left at zero.
    pub fn resolve(&mut self) {
        self.coefficients.seed = derive_seed(self.seed, 1);
        self.hypothesis1.params.seed = derive_seed(self.seed, 2);
        self.dual.seed = derive_seed(self.seed, 3);
        if self.coefficients.kind != CoefficientKind::Identity && self.coefficients.amplitude == 0.0 {
            self.coefficients.amplitude = self.coefficients.big_lambda - self.coefficients.lambda;
        }
    }

    pub fn resolved(mut self) -> Self {
        self.resolve();
        self
    }

    /// Checks every field the campaigns rely on; errors carry the dotted
    /// field path.
    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(field_err("seed", format!("must not exceed {} (TOML integers are signed 64-bit)", i64::MAX)));
        }
        let g = &self.grid;
        for (p, n) in [("grid.nt", g.nt), ("grid.nx", g.nx), ("grid.nv", g.nv)] {
            if n < 8 {
                return Err(field_err(p, format!("need at least 8 nodes (got {n})")));
            }
        }
        if !(g.t_hi > g.t_lo) {
            return Err(field_err("grid.t_hi", "must exceed grid.t_lo"));
        }
        positive("grid.x_half", g.x_half)?;
        positive("grid.v_half", g.v_half)?;
        if let Some(dt) = g.dt {
            positive("grid.dt", dt)?;
        }
        let spec = g.spec().map_err(|e| field_err("grid", e.to_string()))?;
        if spec.courant() > 1.0 {
            return Err(field_err("grid", format!("transport Courant number {:.3} exceeds 1", spec.courant())));
        }
        let c = &self.coefficients;
        positive("coefficients.lambda", c.lambda)?;
        if !(c.big_lambda >= c.lambda) {
            return Err(field_err("coefficients.Lambda", "must be at least coefficients.lambda"));
        }
        positive("coefficients.cell_size", c.cell_size)?;
        if !(c.amplitude >= 0.0) || c.lambda + c.amplitude > c.big_lambda * (1.0 + 1e-12) {
            return Err(field_err("coefficients.amplitude", "need 0 <= amplitude <= Lambda - lambda"));
        }
        self.exponents.validate().map_err(|e| field_err("exponents", e.to_string()))?;
        for (p, [s, r]) in [("cylinders.inner", self.cylinders.inner), ("cylinders.outer", self.cylinders.outer)] {
            positive(&format!("{p}[0]"), s)?;
            positive(&format!("{p}[1]"), r)?;
        }
        let (i, o) = (self.cylinders.inner, self.cylinders.outer);
        if !(i[0] < o[0] && i[1] < o[1]) {
            return Err(field_err("cylinders", "inner cylinder must be strictly smaller than outer"));
        }
        let k = &self.kernel;
        if k.taus.iter().any(|&t| !(t > 0.0)) {
            return Err(field_err("kernel.taus", "times must be positive"));
        }
        if k.residual_steps.len() < 2 || k.residual_steps.iter().any(|&h| !(h > 0.0)) {
            return Err(field_err("kernel.residual_steps", "need at least two positive steps"));
        }
        positive("kernel.packet_sigma", k.packet_sigma)?;
        let h = &self.hypothesis1;
        if !(h.params.p1 > 2.0) {
            return Err(field_err("hypothesis1.p1", "must exceed 2"));
        }
        if !(h.params.gamma0 <= h.params.gamma1 && h.params.gamma1 <= 2.0) {
            return Err(field_err("hypothesis1.gamma1", "need gamma0 <= gamma1 <= 2"));
        }
        if h.params.trials == 0 {
            return Err(field_err("hypothesis1.trials", "must be positive"));
        }
        if !(h.refinement > 1.0) {
            return Err(field_err("hypothesis1.refinement", "must exceed 1"));
        }
        if !(self.dual.eta > 0.0 && self.dual.eta <= 1.0) {
            return Err(field_err("dual.eta", "must lie in (0, 1]"));
        }
        if !(self.dual.p2 >= 2.0) {
            return Err(field_err("dual.p2", "must be at least 2"));
        }
        let s = &self.sup;
        positive("sup.packet_sigma", s.packet_sigma)?;
        if !(s.refinement == 0.0 || s.refinement > 1.0) {
            return Err(field_err("sup.refinement", "must be 0 (off) or exceed 1"));
        }
        if s.options.max_iter == 0 {
            return Err(field_err("sup.max_iter", "must be positive"));
        }
        let hc = &self.harnack;
        if !(hc.params.eta > 0.0 && hc.params.eta <= 1.0) {
            return Err(field_err("harnack.eta", "must lie in (0, 1]"));
        }
        if !(hc.params.closure > 0.0 && hc.params.closure < 1.0) {
            return Err(field_err("harnack.closure", "must lie in (0, 1)"));
        }
        positive("harnack.c_r", hc.params.c_r)?;
        positive("harnack.packet_sigma", hc.packet_sigma)?;
        if !(hc.refinement == 0.0 || hc.refinement > 1.0) {
            return Err(field_err("harnack.refinement", "must be 0 (off) or exceed 1"));
        }
        if self.campaign == Campaign::WeakHarnack && ((g.t_lo + 1.0).abs() > 1e-12 || g.t_hi.abs() > 1e-12) {
            return Err(field_err("grid.t_lo", "weak-harnack needs the time axis [-1, 0]"));
        }
        if self.campaign == Campaign::DualSpreading && (g.t_lo + 1.0).abs() > 1e-12 {
            return Err(field_err("grid.t_lo", "dual-spreading needs grid.t_lo = -1"));
        }
        let cv = &self.convergence;
        if cv.viscosities.len() < 2 || cv.viscosities.iter().any(|&e| !(e > 0.0)) {
            return Err(field_err("convergence.viscosities", "need at least two positive viscosities"));
        }
        positive("convergence.radius", cv.radius)?;
        if !(cv.chi_inner > 0.0 && cv.chi_outer > cv.chi_inner) {
            return Err(field_err("convergence.chi_outer", "need 0 < chi_inner < chi_outer"));
        }
        Ok(())
    }

    /// Copy with the numeric field at dotted `path` set to `value`.
    pub fn with_field(&self, path: &str, value: f64) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| field_err(path, e.to_string()))?;
        let parts: Vec<&str> = path.split('.').collect();
        let (last, parents) = parts.split_last().ok_or_else(|| field_err(path, "empty path"))?;
        let mut node = &mut root;
        for part in parents {
            node = node.get_mut(*part).ok_or_else(|| field_err(path, "no such field"))?;
        }
        let entry = node.get_mut(*last).ok_or_else(|| field_err(path, "no such field"))?;
        *entry = match entry {
            toml::Value::Float(_) => toml::Value::Float(value),
            toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
            _ => return Err(field_err(path, "not a numeric field")),
        };
        let mut cfg: Self = root.try_into().map_err(|e: toml::de::Error| field_err(path, e.message()))?;
        // a full-range amplitude filled in by `resolve` follows the new bounds
        let c = &self.coefficients;
        let full_range = c.kind != CoefficientKind::Identity && c.amplitude == c.big_lambda - c.lambda;
        if full_range && matches!(path, "coefficients.lambda" | "coefficients.Lambda") {
            cfg.coefficients.amplitude = 0.0;
        }
        cfg.resolve();
        Ok(cfg)
    }
}
