//! Log transform and the weak Harnack chain: `L^1` gain, comparison with the
//! dual problem, supremum control, and the final positivity level.

use serde::{Deserialize, Serialize};

use crate::degiorgi::{delta_s, supremum_bound, Exponents, Region, SupOptions};
use crate::error::{invalid, Error, Result};
use crate::geometry::{sigma_domains, Cylinder, PhasePoint, SigmaDomains};
use crate::grid::{GridField, GridSpec};
use crate::kolmogorov::{dual_base_set, solve_dual, DualProblem};
use crate::report::{ratio, EstimateReport};
use crate::rough::{
    bump_dictionary, certify_sign_with_source, compose_transform, face_gradient_sq, verify_composition, Composition,
    RoughCoefficients, Transform, TransformInput, SIGN_TOL,
};
use crate::scheme::Boundary;

/// `G(z) = (-log z + z - 1) 1_{z <= 1}`.
#[inline]
pub fn g_log(z: f64) -> f64 {
    if z >= 1.0 {
        0.0
    } else {
        -z.ln() + z - 1.0
    }
}

#[inline]
pub fn g_log_d1(z: f64) -> f64 {
    if z >= 1.0 {
        0.0
    } else {
        1.0 - 1.0 / z
    }
}

/// Left limit at `z = 1`, where `G` is only `C^1`.
#[inline]
pub fn g_log_d2(z: f64) -> f64 {
    if z > 1.0 {
        0.0
    } else {
        1.0 / (z * z)
    }
}

/// `G_delta(z) = G((z + delta)/(1 + delta))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogTransform {
    pub delta: f64,
}

impl LogTransform {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("log transform needs delta in (0,1) (got {delta})")));
        }
        Ok(Self { delta })
    }

    #[inline]
    fn shift(&self, z: f64) -> f64 {
        (z + self.delta) / (1.0 + self.delta)
    }

    /// `(G_delta, G_delta', G_delta'')` at `z >= 0`.
    pub fn eval(&self, z: f64) -> Result<(f64, f64, f64)> {
        if !(z >= 0.0) {
            return Err(invalid(format!("log transform needs z >= 0 (got {z})")));
        }
        Ok(self.eval_unchecked(z))
    }

    #[inline]
    fn eval_unchecked(&self, z: f64) -> (f64, f64, f64) {
        let y = self.shift(z);
        let s = 1.0 + self.delta;
        (g_log(y), g_log_d1(y) / s, g_log_d2(y) / (s * s))
    }

    /// `G_delta(0) = -log(delta/(1+delta)) + delta/(1+delta) - 1`.
    pub fn at_zero(&self) -> f64 {
        g_log(self.shift(0.0))
    }

    /// The `z in (0, 1)` with `G_delta(z) = target`, by 60 bisection steps;
    /// `G_delta` is strictly decreasing there. Targets outside
    /// `(0, G_delta(0))` map to the interval ends.
    pub fn level_for(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return 1.0;
        }
        if target >= self.at_zero() {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.eval_unchecked(mid).0 > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

impl Transform for LogTransform {
    // defined for z > -delta, so round-off below zero is harmless
    fn value(&self, z: f64) -> f64 {
        self.eval_unchecked(z).0
    }
    fn d1(&self, z: f64) -> f64 {
        self.eval_unchecked(z).1
    }
    fn d2(&self, z: f64) -> f64 {
        self.eval_unchecked(z).2
    }
}

/// Node columns of a level, skipping the duplicated periodic column.
fn slice_nodes(spec: &GridSpec, it: usize, boundary: Boundary) -> impl Iterator<Item = usize> + '_ {
    let nx = if boundary == Boundary::PeriodicNoFlux { spec.x.n - 1 } else { spec.x.n };
    (0..nx).flat_map(move |ix| (0..spec.v.n).map(move |iv| spec.idx(it, ix, iv)))
}

/// Whether `Sigma_R` sticks out of the grid box.
pub fn sigma_clipped(sigma: &SigmaDomains, spec: &GridSpec) -> bool {
    let c = &sigma.outer_domain;
    let mut clipped = false;
    for it in 0..spec.t.n {
        for &ix in &[0, spec.x.n - 1] {
            for iv in 0..spec.v.n {
                clipped |= c.contains_planar(spec.t.coord(it), spec.x.coord(ix), spec.v.coord(iv));
            }
        }
        for ix in 0..spec.x.n {
            for &iv in &[0, spec.v.n - 1] {
                clipped |= c.contains_planar(spec.t.coord(it), spec.x.coord(ix), spec.v.coord(iv));
            }
        }
    }
    clipped
}

/// Relative tolerance for the discrete differential inequality of `E(t)`.
pub const L1_GAIN_TOL: f64 = 1e-6;

/// `L^1` gain: with `E(t) = int v eta_R^2` the discrete inequality
///
/// ```text
/// dE/dt <= -(lambda/4) int |X v|^2 eta^2 + (2/lambda) int Lambda^2 |X eta|^2
///          + int |f~| |X eta^2| + (2/lambda) int |c~|^2 eta^2 + int |g~|
/// ```
///
/// is checked per time step and integrated to bound `|X v|^2` on
/// `Sigma~_R`. The measured `C1~` compares that norm with
/// `C(R) G_delta(0) + |Lambda|_2^2 + |f~|_1 + |c~|_2^2 + |g~|_1` on `Sigma_R`,
/// where `C(R)` is the largest slice measure of `Sigma_R` on the grid.
pub fn l1_gain(comp: &Composition, g_delta0: f64, sigma: &SigmaDomains, boundary: Boundary) -> Result<EstimateReport> {
    let v = &comp.v;
    let c = &comp.coeffs;
    let spec = v.spec;
    let lam = c.lambda;
    let eta = sigma.outer_cutoff.sample(spec).values;
    let eta2 = eta.map(|e| e * e);
    let deta2 = eta2.dv_field();
    let deta = eta.dv_field();
    let grad2 = face_gradient_sq(v);
    let area = spec.cell_area();
    let nt = spec.t.n;
    let mut e = vec![0.0; nt];
    let mut grad_term = vec![0.0; nt];
    let mut rest = vec![0.0; nt];
    for it in 0..nt {
        for k in slice_nodes(&spec, it, boundary) {
            let (h, h2) = (eta.data[k], eta2.data[k]);
            e[it] += v.data[k] * h2 * area;
            grad_term[it] += grad2.data[k] * h2 * area;
            rest[it] += (2.0 / lam * c.big_lambda.data[k].powi(2) * deta.data[k].powi(2)
                + c.f.data[k].abs() * deta2.data[k].abs()
                + 2.0 / lam * c.c.data[k].powi(2) * h * h
                + c.g.data[k].abs())
                * area;
        }
    }
    let dt = spec.dt();
    let mut worst_slice = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut integrated_rest = 0.0;
    let mut integrated_grad = 0.0;
    for it in 1..nt {
        let lhs = (e[it] - e[it - 1]) / dt;
        let rhs = -0.25 * lam * grad_term[it] + rest[it];
        let excess = (lhs - rhs) / (1.0 + lhs.abs() + 0.25 * lam * grad_term[it] + rest[it]);
        if excess > worst_excess {
            worst_excess = excess;
            worst_slice = it;
        }
        integrated_rest += rest[it] * dt;
        integrated_grad += grad_term[it] * dt;
    }
    let inner = Region::of(&sigma.inner_domain, &spec);
    let outer = Region::of(&sigma.outer_domain, &spec);
    let lhs = inner.field_norm(&grad2, 1.0);
    let bound = 4.0 / lam * (e[0] - e[nt - 1] + integrated_rest);
    let c_r = (0..nt)
        .map(|it| slice_nodes(&spec, it, boundary).map(|k| if sigma.outer_domain.contains_planar(spec.coords(k).0, spec.coords(k).1, spec.coords(k).2) { area } else { 0.0 }).sum::<f64>())
        .fold(0.0f64, f64::max);
    let bracket = c_r * g_delta0
        + outer.field_norm(&c.big_lambda, 2.0).powi(2)
        + outer.field_norm(&c.f, 1.0)
        + outer.field_norm(&c.c, 2.0).powi(2)
        + outer.field_norm(&c.g, 1.0);
    let mut rep = EstimateReport::new("l1_gain", lhs, bracket);
    rep.passed = worst_excess <= L1_GAIN_TOL && lhs <= bound * (1.0 + L1_GAIN_TOL) + L1_GAIN_TOL;
    rep.set("C1_tilde", rep.ratio);
    rep.set("integrated_bound", bound);
    rep.set("integrated_gradient", integrated_grad);
    rep.set("E_start", e[0]);
    rep.set("E_end", e[nt - 1]);
    rep.set("C_R_measure", c_r);
    rep.set("worst_relative_excess", worst_excess);
    rep.set("worst_slice", worst_slice as f64);
    rep.set("sigma_clipped", if sigma_clipped(sigma, &spec) { 1.0 } else { 0.0 });
    Ok(rep)
}

/// `E = {u >= 1} ∩ C_{1,1}(0, x0) ∩ {t <= -2/3}` as a node set.
pub fn positivity_set(u: &GridField, x0: (f64, f64)) -> Vec<bool> {
    let base = dual_base_set(&u.spec, x0);
    base.iter().zip(&u.data).map(|(&b, &z)| b && z >= 1.0).collect()
}

/// Fraction `|E| / |C_{1,1} ∩ {t <= -2/3}|` by node counts.
pub fn positivity_fraction(u: &GridField, x0: (f64, f64)) -> f64 {
    let base = dual_base_set(&u.spec, x0);
    let nb = base.iter().filter(|&&b| b).count();
    let ne = positivity_set(u, x0).iter().filter(|&&b| b).count();
    if nb == 0 {
        0.0
    } else {
        ne as f64 / nb as f64
    }
}

/// Comparison with the dual problem: `K(t) = int v w eta~_R` and the
/// conversion `|v|_{L1(C_{1/2,2})} <= mu0^{-1} int v w` with `mu0` the
/// minimum of `w` on `C_{1/2,2}`.
pub fn dual_gain(comp: &Composition, dual: &DualProblem, g_delta0: f64, sigma: &SigmaDomains, ex: &Exponents) -> Result<EstimateReport> {
    let v = &comp.v;
    let c = &comp.coeffs;
    let spec = v.spec;
    spec.same_as(&dual.w.spec)?;
    let w = &dual.w;
    // v vanishes on E because u >= 1 there
    let on_e: f64 = dual.set.iter().zip(&v.data).filter(|(&e, _)| e).map(|(_, z)| z.abs()).sum();
    if on_e != 0.0 {
        return Err(Error::Estimate(format!("v does not vanish on E (sum {on_e:.3e}); E was not built from {{u >= 1}}")));
    }
    let eta = sigma.inner_cutoff.sample(spec).values;
    let area = spec.cell_area();
    let mut k_t = vec![0.0; spec.t.n];
    for (it, kt) in k_t.iter_mut().enumerate() {
        for ix in 0..spec.x.n {
            for iv in 0..spec.v.n {
                let k = spec.idx(it, ix, iv);
                *kt += v.data[k] * w.data[k] * eta.data[k] * area;
            }
        }
    }
    let late: Vec<f64> = (0..spec.t.n).filter(|&it| spec.t.coord(it) >= -0.5 - 1e-12).map(|it| k_t[it]).collect();
    let sup_k = late.iter().cloned().fold(0.0f64, f64::max);
    let half = Cylinder::kinetic(0.0, dual.x0.0, dual.x0.1, 0.5, 2.0);
    let rh = Region::of(&half, &spec);
    let mu0 = rh.idx.iter().map(|&k| w.data[k]).fold(f64::INFINITY, f64::min);
    let v_l1 = rh.field_norm(v, 1.0);
    let vw = rh.norm(|k| v.data[k] * w.data[k], 1.0);
    let conversion = if mu0 > 0.0 { vw / mu0 } else { f64::INFINITY };
    let st = Region::of(&sigma.inner_domain, &spec);
    let so = Region::of(&sigma.outer_domain, &spec);
    let all = Region { idx: (0..spec.len()).collect(), w: vec![spec.cell_volume(); spec.len()] };
    let dw = w.dv_field();
    let grad2 = face_gradient_sq(v);
    let grad_v = st.norm(|k| grad2.data[k].sqrt(), 2.0);
    let lam = |k: usize| c.big_lambda.data[k];
    let k_bound = grad_v
        * (st.norm(|k| (1.0 + lam(k)) * dw.data[k], 2.0) + st.norm(|k| (1.0 + lam(k)) * w.data[k], 2.0) + st.norm(|k| c.c.data[k] * w.data[k], 2.0))
        + g_delta0 * all.field_norm(w, 1.0) / sigma.scale
        + so.field_norm(&c.f, 2.0) * (so.field_norm(w, ex.p2) + so.field_norm(&dw, ex.p2))
        + so.field_norm(&c.g, 2.0) * so.field_norm(w, ex.p2);
    let rhs = (g_delta0 / sigma.scale).powi(2)
        + (1.0 + st.field_norm(&c.big_lambda, ex.q_bar2) + st.field_norm(&c.c, ex.q_bar2)).powi(2) * grad_v * grad_v
        + st.field_norm(&c.f, 2.0).powi(2)
        + st.field_norm(&c.g, 2.0).powi(2);
    let lhs = v_l1 * v_l1;
    let mut rep = EstimateReport::new("dual_gain", lhs, rhs);
    rep.passed = v_l1 <= conversion * (1.0 + 1e-12) + 1e-14;
    rep.set("C2_tilde", rep.ratio);
    rep.set("v_l1_half", v_l1);
    rep.set("mu0", if mu0.is_finite() { mu0 } else { 0.0 });
    rep.set("sup_K", sup_k);
    rep.set("K_bound", k_bound);
    rep.set("K_ratio", ratio(sup_k, k_bound));
    rep.set("conversion_bound", if conversion.is_finite() { conversion } else { f64::MAX });
    rep.set("w_l1", all.field_norm(w, 1.0));
    rep.set("E_measure", dual.set_measure());
    Ok(rep)
}

/// Nonnegative solution started at `t = -1` from `A exp(-(x^2+v^2)/(2 sigma^2))`,
/// with `A` the smallest amplitude for which `{u >= 1}` fills a fraction
/// `eta` of `C_{1,1} ∩ {t <= -2/3}`. The equation is linear, so `A` is the
/// reciprocal of an order statistic of the unit-amplitude solution.
pub fn positivity_family(coeffs: &RoughCoefficients, eta: f64, sigma: f64, boundary: Boundary) -> Result<(GridField, f64)> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid(format!("eta must lie in (0, 1] (got {eta})")));
    }
    if !(sigma > 0.0) {
        return Err(invalid("packet width must be positive"));
    }
    let spec = coeffs.spec();
    let u0: Vec<f64> = (0..spec.slab())
        .map(|k| {
            let (_, x, v) = spec.coords(k);
            (-(x * x + v * v) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let unit = crate::rough::evolve(coeffs, &u0, boundary)?.u;
    let base = dual_base_set(&spec, (0.0, 0.0));
    let mut vals: Vec<f64> = base.iter().zip(&unit.data).filter(|(&b, _)| b).map(|(_, &z)| z).collect();
    if vals.is_empty() {
        return Err(invalid("base set has no grid nodes"));
    }
    vals.sort_by(|a, b| b.total_cmp(a));
    let m = ((eta * vals.len() as f64).ceil() as usize).clamp(1, vals.len());
    let level = vals[m - 1];
    if !(level > 0.0) {
        return Err(Error::Estimate(format!("no amplitude reaches fraction {eta}")));
    }
    // a hair above 1/level so round-off cannot drop the m-th node below 1
    let amp = (1.0 + 1e-12) / level;
    Ok((unit.scaled(amp), amp))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnackParams {
    /// Required relative measure of `E`.
    pub eta: f64,
    /// Upper bound assumed for `|Lambda|_{q_Lambda} + |c|_{q_c}` on `C_{1/2,2}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_s: Option<f64>,
    /// Upper bound assumed for `|Lambda|_{q_bar2} + |c~|_{q_bar2}` on `Sigma_R`.
    #[serde(rename = "Delta")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_delta: Option<f64>,
    /// `R = C_R (1 + delta_S)^beta`.
    pub c_r: f64,
    /// Supremum-bound constants from calibration on the smooth case.
    pub c_s: f64,
    pub beta: f64,
    /// `v <= closure * G_delta(0)` on `C_{1/3,1}` closes the argument.
    pub closure: f64,
    /// `delta` runs over `2^-j`, `j = 1..=j_max`.
    pub j_max: u32,
    /// Bisection steps between the last open and first closing `delta`.
    pub bisect_steps: u32,
    pub dictionary_size: usize,
    /// Boundary treatment the supersolution was computed with.
    pub boundary: Boundary,
}

impl Default for HarnackParams {
    fn default() -> Self {
        Self {
            eta: 0.25,
            delta_s: None,
            big_delta: None,
            c_r: 2.0,
            c_s: 0.15,
            beta: 1.0,
            closure: 0.75,
            j_max: 20,
            bisect_steps: 12,
            dictionary_size: 60,
            boundary: Boundary::PeriodicNoFlux,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarnackCertificate {
    pub mu: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub r_scale: f64,
    pub eta: f64,
    pub passed: bool,
    pub closure: f64,
    pub g_delta0: f64,
    /// Supremum estimate of `v` on `C_{1/3,1}` at the chosen `delta`.
    pub sup_v: f64,
    /// Measured `|f - u b|_{q_b} + |g - u d|_{q_d}` on `Sigma_R`.
    pub epsilon_data: f64,
    /// `delta sqrt(G_delta(0))`, the level below which the data terms of the
    /// supremum control are dominated by `G_delta(0)`.
    pub epsilon_threshold: f64,
    pub smallness_met: bool,
    pub measured_delta_s: f64,
    pub measured_big_delta: f64,
    /// Grid minimum of `u` on `C_{1/3,1}`.
    pub true_min: f64,
    /// `(delta, sup_v / G_delta(0))` for every tried `delta`.
    pub sweep: Vec<(f64, f64)>,
    pub chain: Vec<EstimateReport>,
}

struct ChainRun {
    sup_v: f64,
    reports: Vec<EstimateReport>,
    ok: bool,
}

/// Weak Harnack pipeline for a nonnegative supersolution `u` around
/// `(0, x0) = (0, 0, 0)`; the grid time axis must be `[-1, 0]`.
pub fn weak_harnack(u: &GridField, coeffs: &RoughCoefficients, ex: &Exponents, params: &HarnackParams) -> Result<HarnackCertificate> {
    ex.validate()?;
    let spec = u.spec;
    spec.same_as(&coeffs.spec())?;
    if (spec.t.lo + 1.0).abs() > 1e-12 || spec.t.hi.abs() > 1e-12 {
        return Err(invalid("weak Harnack needs the time axis [-1, 0]"));
    }
    if !(params.closure > 0.0 && params.closure < 1.0) {
        return Err(invalid("closure fraction must lie in (0, 1)"));
    }
    let x0 = (0.0, 0.0);
    let scale_u = 1.0 + u.data.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    if u.min() < -SIGN_TOL * scale_u {
        return Err(invalid(format!("u must be nonnegative (min {:.3e})", u.min())));
    }
    let dict = bump_dictionary(&spec, params.dictionary_size, None);
    let cert = certify_sign_with_source(coeffs, u, None, 0, &dict, SIGN_TOL)?;
    if !cert.certificate.is_supersolution() {
        return Err(Error::Estimate(format!("u is not a certified supersolution (best pairing {:.3e})", cert.best_case)));
    }
    let fraction = positivity_fraction(u, x0);
    if fraction < params.eta {
        return Err(Error::Estimate(format!("|E| fraction {fraction:.4} below eta = {}", params.eta)));
    }
    let half = Cylinder::kinetic(0.0, 0.0, 0.0, 0.5, 2.0);
    let third = Cylinder::kinetic(0.0, 0.0, 0.0, 1.0 / 3.0, 1.0);
    let rh = Region::of(&half, &spec);
    let measured_delta_s = rh.field_norm(&coeffs.big_lambda, ex.q_lambda) + rh.field_norm(&coeffs.c, ex.q_c);
    if let Some(bound) = params.delta_s.filter(|&b| measured_delta_s > b) {
        return Err(Error::Estimate(format!("delta_S bound violated: {measured_delta_s:.4} > {bound}")));
    }
    let ds_full = delta_s(coeffs, &rh, ex);
    let r_scale = params.c_r * (1.0 + measured_delta_s).powf(params.beta);
    let sigma = sigma_domains(r_scale, PhasePoint::planar(0.0, x0.0, x0.1))?;
    let so = Region::of(&sigma.outer_domain, &spec);
    let measured_big_delta = so.field_norm(&coeffs.big_lambda, ex.q_bar2) + so.field_norm(&coeffs.c, ex.q_bar2);
    if let Some(bound) = params.big_delta.filter(|&b| measured_big_delta > b) {
        return Err(Error::Estimate(format!("Delta bound violated: {measured_big_delta:.4} > {bound}")));
    }
    let epsilon_data = so.norm(|k| coeffs.f.data[k] - u.data[k] * coeffs.b.data[k], ex.q_b)
        + so.norm(|k| coeffs.g.data[k] - u.data[k] * coeffs.d.data[k], ex.q_d);
    let set = positivity_set(u, x0);
    let dual = solve_dual(spec, &set, x0)?;
    let rt = Region::of(&third, &spec);
    let true_min = rt.idx.iter().map(|&k| u.data[k]).fold(f64::INFINITY, f64::min);
    let sup_opts = SupOptions { require_certificate: false, beta: params.beta, ..SupOptions::default() };

    let run = |delta: f64| -> Result<ChainRun> {
        let lt = LogTransform::new(delta)?;
        let g0 = lt.at_zero();
        let comp = compose_transform(coeffs, u, &lt, TransformInput::Supersolution)?;
        let mut reports = Vec::new();
        let ver = verify_composition(&comp, 0, &dict, 1e-6)?;
        let mut comp_rep = EstimateReport::new("composition", ver.worst_case, ver.tolerance);
        comp_rep.passed = ver.certificate.is_subsolution();
        comp_rep.set("delta", delta);
        reports.push(comp_rep);
        reports.push(l1_gain(&comp, g0, &sigma, params.boundary)?);
        reports.push(dual_gain(&comp, &dual, g0, &sigma, ex)?);
        let sb = supremum_bound(&comp.v, &comp.coeffs, &third, &half, ex, &sup_opts)?;
        let theorem = params.c_s * (1.0 + ds_full).powf(params.beta) * sb.normalization;
        let sup_v = sb.sup_estimate.max(theorem);
        let mut sup_rep = sb.report.clone();
        sup_rep.set("theorem_bound", theorem);
        sup_rep.set("sup_v", sup_v);
        sup_rep.set("G_delta0", g0);
        let ok = reports.iter().all(|r| r.passed) && sup_rep.passed;
        reports.push(sup_rep);
        Ok(ChainRun { sup_v, reports, ok })
    };

    let closes = |delta: f64, r: &ChainRun| r.sup_v <= params.closure * LogTransform { delta }.at_zero();
    let mut sweep = Vec::new();
    let mut found: Option<(f64, f64, ChainRun)> = None;
    let mut open = 1.0;
    for j in 1..=params.j_max {
        let delta = 0.5f64.powi(j as i32);
        let r = run(delta)?;
        sweep.push((delta, r.sup_v / LogTransform { delta }.at_zero()));
        if closes(delta, &r) {
            found = Some((open, delta, r));
            break;
        }
        open = delta;
    }
    let Some((mut open, mut closed, mut best)) = found else {
        return Err(Error::Estimate(format!("no delta down to 2^-{} closes the sup control; sweep {:?}", params.j_max, sweep)));
    };
    for _ in 0..params.bisect_steps {
        let mid = 0.5 * (open + closed);
        if mid >= 1.0 {
            break;
        }
        let r = run(mid)?;
        sweep.push((mid, r.sup_v / LogTransform { delta: mid }.at_zero()));
        if closes(mid, &r) {
            closed = mid;
            best = r;
        } else {
            open = mid;
        }
    }
    let lt = LogTransform::new(closed)?;
    let g0 = lt.at_zero();
    // v vanishing on C_{1/3,1} means u >= 1 there
    let mu = if best.sup_v == 0.0 { 1.0 } else { lt.level_for(params.closure * g0) };
    let epsilon_threshold = closed * g0.sqrt();
    Ok(HarnackCertificate {
        mu,
        delta: closed,
        r_scale,
        eta: params.eta,
        passed: best.ok,
        closure: params.closure,
        g_delta0: g0,
        sup_v: best.sup_v,
        epsilon_data,
        epsilon_threshold,
        smallness_met: epsilon_data <= epsilon_threshold,
        measured_delta_s,
        measured_big_delta,
        true_min,
        sweep,
        chain: best.reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_transform_regimes() {
        let lt = LogTransform::new(0.1).unwrap();
        let at_one = lt.eval(1.0).unwrap();
        assert_eq!((at_one.0, at_one.1), (0.0, 0.0));
        assert!((at_one.2 - 1.0 / 1.21).abs() < 1e-15);
        assert_eq!(lt.eval(3.0).unwrap(), (0.0, 0.0, 0.0));
        let expected = (11.0f64).ln() + 1.0 / 11.0 - 1.0;
        assert!((lt.at_zero() - expected).abs() < 1e-14);
        assert!((lt.at_zero() - 1.4888).abs() < 1e-4);
        assert!(lt.eval(-0.1).is_err());
        assert!(LogTransform::new(0.0).is_err() && LogTransform::new(1.0).is_err());
    }

    #[test]
    fn level_inverts_transform() {
        let lt = LogTransform::new(0.05).unwrap();
        for &z in &[0.01, 0.2, 0.7] {
            let g = lt.eval(z).unwrap().0;
            assert!((lt.level_for(g) - z).abs() < 1e-12);
        }
        assert_eq!(lt.level_for(0.0), 1.0);
    }

    #[test]
    fn g_delta_zero_diverges() {
        let mut prev = 0.0;
        for j in 1..20 {
            let g = LogTransform { delta: 0.5f64.powi(j) }.at_zero();
            assert!(g > prev);
            prev = g;
        }
        assert!(prev > 12.0);
    }
}
