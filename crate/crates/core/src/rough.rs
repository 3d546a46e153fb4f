//! Rough coefficients on the planar grid, weak application of the operator,
//! manufactured solutions and sign certification against a bump dictionary.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Cylinder;
use crate::grid::{GridField, GridSpec};
use crate::scheme::{Boundary, Data, LinearOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    Identity,
    Checkerboard,
    Random,
}

/// `mean + amplitude * xi` with `xi` the cell pattern of the recipe
/// (`0` for identity, `±1` for checkerboard, uniform in `[-1, 1]` for random).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldRecipe {
    pub mean: f64,
    pub amplitude: f64,
}

impl FieldRecipe {
    pub fn constant(mean: f64) -> Self {
        Self { mean, amplitude: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowerOrderRecipe {
    pub b: FieldRecipe,
    pub c: FieldRecipe,
    pub d: FieldRecipe,
    pub f: FieldRecipe,
    pub g: FieldRecipe,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoefficientRecipe {
    pub kind: CoefficientKind,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    /// `a` ranges over `[lambda, lambda + amplitude]`.
    pub amplitude: f64,
    /// Side of the constant cells in `t`, `x` and `v`.
    pub cell_size: f64,
    pub seed: u64,
    pub lower_order: LowerOrderRecipe,
}

impl Default for CoefficientRecipe {
    fn default() -> Self {
        Self {
            kind: CoefficientKind::Identity,
            lambda: 1.0,
            big_lambda: 1.0,
            amplitude: 0.0,
            cell_size: 0.25,
            seed: 0,
            lower_order: LowerOrderRecipe::default(),
        }
    }
}

impl CoefficientRecipe {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn checkerboard(lambda: f64, amplitude: f64, cell_size: f64) -> Self {
        Self {
            kind: CoefficientKind::Checkerboard,
            lambda,
            big_lambda: lambda + amplitude,
            amplitude,
            cell_size,
            ..Self::default()
        }
    }

    pub fn random(lambda: f64, amplitude: f64, cell_size: f64, seed: u64) -> Self {
        Self { kind: CoefficientKind::Random, lambda, big_lambda: lambda + amplitude, amplitude, cell_size, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.big_lambda >= self.lambda) {
            return Err(invalid("need 0 < lambda <= Lambda"));
        }
        if !(self.cell_size > 0.0) || !(self.amplitude >= 0.0) {
            return Err(invalid("need positive cell size and nonnegative amplitude"));
        }
        Ok(())
    }
}

/// Sampler of the cell pattern, cached per cell so every grid sees the
/// same coefficients.
struct CellPattern {
    kind: CoefficientKind,
    seed: u64,
    cell: f64,
    origin: (f64, f64, f64),
    cache: BTreeMap<(u8, i64, i64, i64), f64>,
}

impl CellPattern {
    fn xi(&mut self, comp: u8, t: f64, x: f64, v: f64) -> f64 {
        let c = |z: f64, o: f64| ((z - o) / self.cell + 1e-9).floor() as i64;
        let key = (comp, c(t, self.origin.0), c(x, self.origin.1), c(v, self.origin.2));
        match self.kind {
            CoefficientKind::Identity => 0.0,
            CoefficientKind::Checkerboard => {
                if (key.1 + key.2 + key.3).rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            CoefficientKind::Random => {
                let seed = self.seed;
                *self.cache.entry(key).or_insert_with(|| {
                    let mix = seed
                        ^ (comp as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        ^ (key.1 as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
                        ^ (key.2 as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
                        ^ (key.3 as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
                    ChaCha8Rng::seed_from_u64(mix).gen_range(-1.0..=1.0)
                })
            }
        }
    }
}

/// Coefficients of `P` sampled on a grid. The velocity dimension is one, so
/// `a` is a scalar field and `n = 1` in the upper bound.
#[derive(Clone, Debug)]
pub struct RoughCoefficients {
    pub a: GridField,
    pub b: GridField,
    pub c: GridField,
    pub d: GridField,
    pub f: GridField,
    pub g: GridField,
    pub lambda: f64,
    pub big_lambda: GridField,
}

impl RoughCoefficients {
    pub fn from_recipe(spec: GridSpec, recipe: &CoefficientRecipe) -> Result<Self> {
        recipe.validate()?;
        let mut pat = CellPattern {
            kind: recipe.kind,
            seed: recipe.seed,
            cell: recipe.cell_size,
            origin: (spec.t.lo, spec.x.lo, spec.v.lo),
            cache: BTreeMap::new(),
        };
        let mut sample = |comp: u8, mean: f64, amp: f64| {
            let mut data = Vec::with_capacity(spec.len());
            for k in 0..spec.len() {
                let (t, x, v) = spec.coords(k);
                data.push(if amp == 0.0 { mean } else { mean + amp * pat.xi(comp, t, x, v) });
            }
            GridField { spec, data }
        };
        let half = 0.5 * recipe.amplitude;
        let a = if recipe.kind == CoefficientKind::Identity {
            GridField::constant(spec, recipe.lambda)
        } else {
            sample(0, recipe.lambda + half, half)
        };
        let lo = &recipe.lower_order;
        Ok(Self {
            a,
            b: sample(1, lo.b.mean, lo.b.amplitude),
            c: sample(2, lo.c.mean, lo.c.amplitude),
            d: sample(3, lo.d.mean, lo.d.amplitude),
            f: sample(4, lo.f.mean, lo.f.amplitude),
            g: sample(5, lo.g.mean, lo.g.amplitude),
            lambda: recipe.lambda,
            big_lambda: GridField::constant(spec, recipe.big_lambda),
        })
    }

    /// `a = 1`, no lower order, `lambda = Lambda = 1`.
    pub fn identity(spec: GridSpec) -> Self {
        Self::with_diffusion(GridField::constant(spec, 1.0), 1.0, 1.0)
    }

    pub fn with_diffusion(a: GridField, lambda: f64, big_lambda: f64) -> Self {
        let spec = a.spec;
        let z = GridField::zeros(spec);
        Self {
            a,
            b: z.clone(),
            c: z.clone(),
            d: z.clone(),
            f: z.clone(),
            g: z,
            lambda,
            big_lambda: GridField::constant(spec, big_lambda),
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.a.spec
    }

    fn nonzero(f: &GridField) -> Option<GridField> {
        if f.data.iter().any(|&z| z != 0.0) {
            Some(f.clone())
        } else {
            None
        }
    }

    pub fn operator(&self, boundary: Boundary) -> LinearOperator {
        let mut op = LinearOperator::with_diffusion(self.spec(), self.a.clone(), boundary);
        op.b = Self::nonzero(&self.b);
        op.c = Self::nonzero(&self.c);
        op.d = Self::nonzero(&self.d);
        op
    }

    pub fn data(&self) -> Data {
        Data { f: Self::nonzero(&self.f), g: Self::nonzero(&self.g), ..Default::default() }
    }

    pub fn has_lower_order(&self) -> bool {
        [&self.b, &self.c, &self.d, &self.f, &self.g].iter().any(|f| f.data.iter().any(|&z| z != 0.0))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticityReport {
    /// `min (a - lambda)`; must be `>= 0`.
    pub min_slack: f64,
    /// `max |a| n / Lambda`; must be `<= 1`.
    pub max_upper_ratio: f64,
    pub violating_cells: Vec<usize>,
    pub passed: bool,
}

pub fn check_ellipticity(coeffs: &RoughCoefficients) -> Result<EllipticityReport> {
    let spec = coeffs.spec();
    spec.same_as(&coeffs.big_lambda.spec)?;
    let n = 1.0;
    let mut min_slack = f64::INFINITY;
    let mut max_upper_ratio: f64 = 0.0;
    let mut violating_cells = Vec::new();
    let tol = 1e-12;
    for k in 0..spec.len() {
        let a = coeffs.a.data[k];
        let slack = a - coeffs.lambda;
        let upper = a.abs() * n / coeffs.big_lambda.data[k];
        min_slack = min_slack.min(slack);
        max_upper_ratio = max_upper_ratio.max(upper);
        if slack < -tol || upper > 1.0 + tol {
            violating_cells.push(k);
        }
    }
    Ok(EllipticityReport { min_slack, max_upper_ratio, passed: violating_cells.is_empty(), violating_cells })
}

fn require_elliptic(coeffs: &RoughCoefficients) -> Result<()> {
    let rep = check_ellipticity(coeffs)?;
    if rep.passed {
        Ok(())
    } else {
        Err(Error::Ellipticity { cells: rep.violating_cells.len(), min_slack: rep.min_slack })
    }
}

/// `<P u, phi>` in weak form; `phi` must vanish near the box edge.
pub fn apply_weak(coeffs: &RoughCoefficients, u: &GridField, phi: &GridField) -> Result<f64> {
    coeffs.operator(Boundary::Dirichlet).weak_pairing(u, 0, &coeffs.data(), phi)
}

/// `<P u - S, phi>`; the source enters with a minus sign.
pub fn apply_weak_with_source(coeffs: &RoughCoefficients, u: &GridField, source: &GridField, phi: &GridField) -> Result<f64> {
    let mut data = coeffs.data();
    data.source = Some(source.clone());
    coeffs.operator(Boundary::Dirichlet).weak_pairing(u, 0, &data, phi)
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub u: GridField,
    pub start: usize,
    pub worst_residual: f64,
}

/// Residual tolerance for manufactured solutions.
pub const EVOLVE_RESIDUAL_TOL: f64 = 1e-9;

/// Solves `P u = S` from level `start` with initial level `u0`.
pub fn evolve_with_source(
    coeffs: &RoughCoefficients,
    u0: &[f64],
    start: usize,
    source: Option<&GridField>,
    boundary: Boundary,
) -> Result<Evolution> {
    require_elliptic(coeffs)?;
    let op = coeffs.operator(boundary);
    let mut data = coeffs.data();
    data.source = source.cloned();
    let u = op.solve(u0, start, &data)?;
    if let Some((k, z)) = u.data.iter().enumerate().find(|(_, z)| !z.is_finite()) {
        let (it, _, _) = u.spec.unravel(k);
        return Err(Error::Estimate(format!("evolution blew up at level {it} ({z})")));
    }
    let res = op.residual(&u, start, &data)?;
    let scale = 1.0 + u.data.iter().fold(0.0f64, |m, z| m.max(z.abs())) / u.spec.dt();
    let worst = res.data.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    if worst > EVOLVE_RESIDUAL_TOL * scale {
        let it = (0..u.spec.t.n)
            .find(|&it| res.level(it).iter().any(|z| z.abs() > EVOLVE_RESIDUAL_TOL * scale))
            .unwrap_or(0);
        return Err(Error::Estimate(format!("residual {worst:.3e} above tolerance, first at level {it}")));
    }
    Ok(Evolution { u, start, worst_residual: worst })
}

/// Solves `P u = 0` from the first time level.
pub fn evolve(coeffs: &RoughCoefficients, u0: &[f64], boundary: Boundary) -> Result<Evolution> {
    evolve_with_source(coeffs, u0, 0, None, boundary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignCertificate {
    /// Both a sub- and a supersolution within tolerance.
    Solution,
    Subsolution,
    Supersolution,
    Neither,
}

impl SignCertificate {
    pub fn is_subsolution(self) -> bool {
        matches!(self, Self::Solution | Self::Subsolution)
    }

    pub fn is_supersolution(self) -> bool {
        matches!(self, Self::Solution | Self::Supersolution)
    }
}

/// Nonnegative tensor bump `beta(t) beta(x) beta(v)`, `beta(z) = (1 - z^2)^2_+`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: (f64, f64, f64),
    pub half_width: (f64, f64, f64),
    pub scale: usize,
}

impl Bump {
    #[inline]
    fn beta(z: f64) -> f64 {
        if z.abs() >= 1.0 {
            0.0
        } else {
            let w = 1.0 - z * z;
            w * w
        }
    }

    pub fn eval(&self, t: f64, x: f64, v: f64) -> f64 {
        Self::beta((t - self.center.0) / self.half_width.0)
            * Self::beta((x - self.center.1) / self.half_width.1)
            * Self::beta((v - self.center.2) / self.half_width.2)
    }

    pub fn sample(&self, spec: GridSpec) -> GridField {
        GridField::from_fn(spec, |t, x, v| self.eval(t, x, v))
    }

    /// Nodes where the bump is nonzero, as `(flat index, value)`.
    fn support(&self, spec: &GridSpec) -> Vec<(usize, f64)> {
        let range = |ax: &crate::grid::Axis, c: f64, h: f64| {
            let lo = (((c - h) - ax.lo) / ax.step()).floor().max(0.0) as usize;
            let hi = ((((c + h) - ax.lo) / ax.step()).ceil() as usize).min(ax.n - 1);
            lo..=hi
        };
        let mut out = Vec::new();
        for it in range(&spec.t, self.center.0, self.half_width.0) {
            for ix in range(&spec.x, self.center.1, self.half_width.1) {
                for iv in range(&spec.v, self.center.2, self.half_width.2) {
                    let w = self.eval(spec.t.coord(it), spec.x.coord(ix), spec.v.coord(iv));
                    if w > 0.0 {
                        out.push((spec.idx(it, ix, iv), w));
                    }
                }
            }
        }
        out
    }
}

/// Bumps at three dyadic scales whose supports stay two nodes inside the box
/// edges. Optionally only bumps centered in `domain` are kept. This is a
/// finite proxy for "all nonnegative test functions".
pub fn bump_dictionary(spec: &GridSpec, size: usize, domain: Option<&Cylinder>) -> Vec<Bump> {
    let margin = |ax: &crate::grid::Axis| (ax.lo + 2.0 * ax.step(), ax.hi - 2.0 * ax.step());
    let (tl, th) = (spec.t.lo + spec.dt(), spec.t.hi);
    let (xl, xh) = margin(&spec.x);
    let (vl, vh) = margin(&spec.v);
    let mut per_scale: Vec<Vec<Bump>> = Vec::new();
    for scale in 1..=3usize {
        let div = (1usize << scale) as f64;
        let hw = ((th - tl) / div, (xh - xl) / div, (vh - vl) / div);
        let mut bumps = Vec::new();
        let centers = |lo: f64, hi: f64, h: f64| {
            let n = ((hi - lo) / h).round() as usize;
            (1..n).map(move |i| lo + i as f64 * h).collect::<Vec<_>>()
        };
        for &ct in &centers(tl, th, hw.0) {
            for &cx in &centers(xl, xh, hw.1) {
                for &cv in &centers(vl, vh, hw.2) {
                    if domain.map_or(true, |c| c.contains_planar(ct, cx, cv)) {
                        bumps.push(Bump { center: (ct, cx, cv), half_width: hw, scale });
                    }
                }
            }
        }
        per_scale.push(bumps);
    }
    // an even share per scale, deterministic subsampling by stride
    let share = size.div_ceil(3).max(1);
    let mut out = Vec::new();
    for bumps in per_scale {
        if bumps.len() <= share {
            out.extend(bumps);
        } else {
            let stride = bumps.len() as f64 / share as f64;
            out.extend((0..share).map(|i| bumps[(i as f64 * stride) as usize]));
        }
    }
    out.truncate(size.max(1));
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakResidual {
    /// `<P u, phi>` per dictionary bump.
    pub values: Vec<f64>,
    /// `max <P u, phi> / |phi|_1`.
    pub worst_case: f64,
    pub worst_index: usize,
    /// `min <P u, phi> / |phi|_1`.
    pub best_case: f64,
    pub best_index: usize,
    /// `max |<P u, phi>| / (|phi|_2 + |d_v phi|_2)`, a dictionary proxy of the
    /// dual norm; approximate by construction.
    pub dual_norm: f64,
    pub tolerance: f64,
    pub certificate: SignCertificate,
    pub dictionary: Vec<Bump>,
}

/// Default certification tolerance per unit bump mass, relative to
/// `1 + max|u|`.
pub const SIGN_TOL: f64 = 1e-8;

/// Pairs the residual of `P u - S` with every bump of the dictionary.
pub fn certify_sign_with_source(
    coeffs: &RoughCoefficients,
    u: &GridField,
    source: Option<&GridField>,
    start: usize,
    dictionary: &[Bump],
    tol: f64,
) -> Result<WeakResidual> {
    let op = coeffs.operator(Boundary::Dirichlet);
    let mut data = coeffs.data();
    data.source = source.cloned();
    // weak and strong pairings agree for interior bumps (summation by parts)
    let res = op.residual(u, start, &data)?;
    let spec = u.spec;
    let vol = spec.cell_volume();
    let scale = 1.0 + u.data.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let tol_abs = tol * scale;
    let stats: Vec<(f64, f64, f64)> = dictionary
        .par_iter()
        .map(|bump| {
            let sup = bump.support(&spec);
            let pairing: f64 = sup.iter().map(|&(k, w)| res.data[k] * w).sum::<f64>() * vol;
            let mass: f64 = sup.iter().map(|&(_, w)| w).sum::<f64>() * vol;
            let l2: f64 = (sup.iter().map(|&(_, w)| w * w).sum::<f64>() * vol).sqrt();
            let hv = bump.half_width.2;
            let dl2: f64 = sup
                .iter()
                .map(|&(k, _)| {
                    let (t, x, v) = spec.coords(k);
                    let z = (v - bump.center.2) / hv;
                    let dz = if z.abs() < 1.0 { -4.0 * z * (1.0 - z * z) / hv } else { 0.0 };
                    let rest = bump.eval(t, x, bump.center.2);
                    (rest * dz).powi(2)
                })
                .sum::<f64>()
                * vol;
            (pairing, mass, l2 + dl2.sqrt())
        })
        .collect();
    let mut worst = (f64::NEG_INFINITY, 0);
    let mut best = (f64::INFINITY, 0);
    let mut dual: f64 = 0.0;
    for (i, &(p, m, hyp)) in stats.iter().enumerate() {
        if m <= 0.0 {
            continue;
        }
        let r = p / m;
        if r > worst.0 {
            worst = (r, i);
        }
        if r < best.0 {
            best = (r, i);
        }
        dual = dual.max(p.abs() / hyp);
    }
    if stats.iter().all(|s| s.1 <= 0.0) {
        return Err(invalid("bump dictionary has no support on the grid"));
    }
    let sub = worst.0 <= tol_abs;
    let sup = best.0 >= -tol_abs;
    let certificate = match (sub, sup) {
        (true, true) => SignCertificate::Solution,
        (true, false) => SignCertificate::Subsolution,
        (false, true) => SignCertificate::Supersolution,
        (false, false) => SignCertificate::Neither,
    };
    Ok(WeakResidual {
        values: stats.iter().map(|s| s.0).collect(),
        worst_case: worst.0,
        worst_index: worst.1,
        best_case: best.0,
        best_index: best.1,
        dual_norm: dual,
        tolerance: tol_abs,
        certificate,
        dictionary: dictionary.to_vec(),
    })
}

/// Sign certificate of `P u` over a dictionary of `dictionary_size` bumps.
pub fn certify_sign(coeffs: &RoughCoefficients, u: &GridField, start: usize, dictionary_size: usize) -> Result<WeakResidual> {
    let dict = bump_dictionary(&u.spec, dictionary_size, None);
    certify_sign_with_source(coeffs, u, None, start, &dict, SIGN_TOL)
}

/// Which sign class a transform is meant to map into subsolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformInput {
    /// `Phi' >= 0`, `Phi'' >= 0`, applied to subsolutions.
    Subsolution,
    /// `Phi' <= 0`, `Phi'' >= 0`, applied to supersolutions.
    Supersolution,
}

/// A scalar `Phi` with its first two derivatives.
pub trait Transform: Sync {
    fn value(&self, z: f64) -> f64;
    fn d1(&self, z: f64) -> f64;
    fn d2(&self, z: f64) -> f64;
}

/// `Phi(z) = z`.
pub struct Identity;

impl Transform for Identity {
    fn value(&self, z: f64) -> f64 {
        z
    }
    fn d1(&self, _: f64) -> f64 {
        1.0
    }
    fn d2(&self, _: f64) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct Composition {
    pub v: GridField,
    pub coeffs: RoughCoefficients,
    /// `Phi''(u) (lambda/2) |d_v u|^2`.
    pub defect: GridField,
    /// `Phi''(u) |f - b u|^2 / (2 lambda)`, subtracted in `g~`.
    pub penalty: GridField,
}

/// Mean of the squared one-sided velocity differences at each node (zero on
/// velocity edges).
pub fn face_gradient_sq(u: &GridField) -> GridField {
    let s = u.spec;
    let h = s.dv();
    let mut out = GridField::zeros(s);
    for it in 0..s.t.n {
        for ix in 0..s.x.n {
            for iv in 1..s.v.n - 1 {
                let l = (u.at(it, ix, iv) - u.at(it, ix, iv - 1)) / h;
                let r = (u.at(it, ix, iv + 1) - u.at(it, ix, iv)) / h;
                *out.at_mut(it, ix, iv) = 0.5 * (l * l + r * r);
            }
        }
    }
    out
}

/// `v = Phi(u)` with `a~ = a`, `b~ = 0`, `c~ = c`, `d~ = 0`,
/// `f~ = Phi'(u)(f - b u)` and `g~ = Phi'(u)(g - d u) - Phi''(u)|f - b u|^2/(2 lambda)`.
pub fn compose_transform(
    coeffs: &RoughCoefficients,
    u: &GridField,
    phi: &dyn Transform,
    input: TransformInput,
) -> Result<Composition> {
    let spec = coeffs.spec();
    spec.same_as(&u.spec)?;
    for (k, &z) in u.data.iter().enumerate() {
        let (p1, p2) = (phi.d1(z), phi.d2(z));
        let ok = p2 >= 0.0
            && match input {
                TransformInput::Subsolution => p1 >= 0.0,
                TransformInput::Supersolution => p1 <= 0.0,
            };
        if !ok || !phi.value(z).is_finite() {
            return Err(invalid(format!("transform violates sign conditions at node {k} (u = {z}, Phi' = {p1}, Phi'' = {p2})")));
        }
    }
    let lam = coeffs.lambda;
    let n = spec.len();
    let mut v = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut penalty = vec![0.0; n];
    for k in 0..n {
        let z = u.data[k];
        let (p1, p2) = (phi.d1(z), phi.d2(z));
        let flux = coeffs.f.data[k] - coeffs.b.data[k] * z;
        v[k] = phi.value(z);
        f[k] = p1 * flux;
        penalty[k] = p2 * flux * flux / (2.0 * lam);
        g[k] = p1 * (coeffs.g.data[k] - coeffs.d.data[k] * z) - penalty[k];
    }
    let grad = face_gradient_sq(u);
    let defect: Vec<f64> = (0..n).map(|k| phi.d2(u.data[k]) * 0.5 * lam * grad.data[k]).collect();
    let zero = GridField::zeros(spec);
    Ok(Composition {
        v: GridField { spec, data: v },
        coeffs: RoughCoefficients {
            a: coeffs.a.clone(),
            b: zero.clone(),
            c: coeffs.c.clone(),
            d: zero,
            f: GridField { spec, data: f },
            g: GridField { spec, data: g },
            lambda: lam,
            big_lambda: coeffs.big_lambda.clone(),
        },
        defect: GridField { spec, data: defect },
        penalty: GridField { spec, data: penalty },
    })
}

/// Checks `<P~ v + defect, phi> <= tol |phi|_1` over the dictionary.
pub fn verify_composition(comp: &Composition, start: usize, dictionary: &[Bump], tol: f64) -> Result<WeakResidual> {
    // moving the defect to the source side: P~ v - S with S = -defect
    let source = comp.defect.scaled(-1.0);
    certify_sign_with_source(&comp.coeffs, &comp.v, Some(&source), start, dictionary, tol)
}
