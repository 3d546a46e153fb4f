//! Drift flows, drift-aligned parabolic cylinders and transported cutoffs.
//!
//! A cylinder `Q_{s,r}(t0, x0)` collects the space-time points `(t, y)` with
//! `t in (t0 - s, t0]` whose characteristic, followed forward to `t0`, lands
//! in the open Euclidean ball `B_r(x0)` of the full `(pos, vel)` space.
//! Spatial cutoffs are radial profiles of that transported distance, so they
//! are constant along characteristics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{GridField, GridSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub t: f64,
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
}

impl PhasePoint {
    pub fn new(t: f64, pos: Vec<f64>, vel: Vec<f64>) -> Result<Self> {
        if pos.len() != vel.len() {
            return Err(invalid("position and velocity dimensions differ"));
        }
        if !t.is_finite() || pos.iter().chain(&vel).any(|z| !z.is_finite()) {
            return Err(invalid("phase point has non-finite coordinates"));
        }
        Ok(Self { t, pos, vel })
    }

    /// Point in the one-dimensional phase space `(x, v)`.
    pub fn planar(t: f64, x: f64, v: f64) -> Self {
        Self { t, pos: vec![x], vel: vec![v] }
    }

    pub fn origin(dim: usize) -> Self {
        Self { t: 0.0, pos: vec![0.0; dim], vel: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.pos.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSpec {
    /// `v . grad_pos`
    Kinetic,
    Zero,
}

impl DriftSpec {
    pub fn is_divergence_free(&self) -> bool {
        true
    }
}

/// Characteristic flow of the drift from `t_from` to `t_to`.
pub fn flow(drift: DriftSpec, t_from: f64, t_to: f64, pos: &[f64], vel: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match drift {
        DriftSpec::Kinetic => {
            let dt = t_to - t_from;
            (pos.iter().zip(vel).map(|(x, v)| x + dt * v).collect(), vel.to_vec())
        }
        DriftSpec::Zero => (pos.to_vec(), vel.to_vec()),
    }
}

#[inline]
fn flow_planar(drift: DriftSpec, t_from: f64, t_to: f64, x: f64, v: f64) -> (f64, f64) {
    match drift {
        DriftSpec::Kinetic => (x + (t_to - t_from) * v, v),
        DriftSpec::Zero => (x, v),
    }
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    // V_0 = 1, V_1 = 2, V_n = 2 pi / n * V_{n-2}
    let mut v = if n % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if n % 2 == 0 { 2 } else { 3 };
    while k <= n {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub base: PhasePoint,
    pub s: f64,
    pub r: f64,
    pub drift: DriftSpec,
}

impl Cylinder {
    pub fn new(base: PhasePoint, s: f64, r: f64, drift: DriftSpec) -> Result<Self> {
        if !(s >= 0.0) || !(r > 0.0) || !s.is_finite() || !r.is_finite() {
            return Err(invalid(format!("cylinder needs s >= 0, r > 0 (got s={s}, r={r})")));
        }
        Ok(Self { base, s, r, drift })
    }

    /// Kinetic cylinder `Q_{s,r}` about a planar base point.
    pub fn kinetic(t0: f64, x0: f64, v0: f64, s: f64, r: f64) -> Self {
        Self { base: PhasePoint::planar(t0, x0, v0), s, r, drift: DriftSpec::Kinetic }
    }

    pub fn dim(&self) -> usize {
        2 * self.base.dim()
    }

    #[inline]
    fn in_window(&self, t: f64) -> bool {
        t > self.base.t - self.s && t <= self.base.t
    }

    /// Distance from `x0` of the point transported to the top time.
    pub fn transported_distance(&self, q: &PhasePoint) -> f64 {
        let (p, v) = flow(self.drift, q.t, self.base.t, &q.pos, &q.vel);
        let d2: f64 = p
            .iter()
            .zip(&self.base.pos)
            .chain(v.iter().zip(&self.base.vel))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        d2.sqrt()
    }

    pub fn contains(&self, q: &PhasePoint) -> bool {
        self.in_window(q.t) && self.transported_distance(q) < self.r
    }

    #[inline]
    pub fn transported_distance_planar(&self, t: f64, x: f64, v: f64) -> f64 {
        let (p, w) = flow_planar(self.drift, t, self.base.t, x, v);
        let dx = p - self.base.pos[0];
        let dv = w - self.base.vel[0];
        (dx * dx + dv * dv).sqrt()
    }

    #[inline]
    pub fn contains_planar(&self, t: f64, x: f64, v: f64) -> bool {
        self.in_window(t) && self.transported_distance_planar(t, x, v) < self.r
    }

    /// Lebesgue measure. The kinetic and zero drifts are divergence free,
    /// so every time slice has the measure of `B_r`.
    pub fn measure(&self) -> f64 {
        debug_assert!(self.drift.is_divergence_free());
        self.s * unit_ball_volume(self.dim()) * self.r.powi(self.dim() as i32)
    }

    /// Same base and drift with new extents.
    pub fn resized(&self, s: f64, r: f64) -> Self {
        Self { base: self.base.clone(), s, r, drift: self.drift }
    }

    /// Quadrature weights on a planar grid: each node cell volume times the
    /// fraction of 16 stratified sub-samples (2 in t, 2 in x, 4 in v) that lie
    /// in the cylinder.
    pub fn weights(&self, spec: &GridSpec) -> Vec<f64> {
        let (dt, dx, dv) = (spec.dt(), spec.dx(), spec.dv());
        let vol = spec.cell_volume() / 16.0;
        let reach = self.r + self.s * spec.v.lo.abs().max(spec.v.hi.abs()) + dx + dv;
        (0..spec.len())
            .map(|k| {
                let (t, x, v) = spec.coords(k);
                if t + dt < self.base.t - self.s || t - dt > self.base.t {
                    return 0.0;
                }
                if (x - self.base.pos[0]).abs() > reach + dx {
                    return 0.0;
                }
                let mut hits = 0u32;
                for a in 0..2 {
                    let ts = t + ((a as f64 + 0.5) / 2.0 - 0.5) * dt;
                    for b in 0..2 {
                        let xs = x + ((b as f64 + 0.5) / 2.0 - 0.5) * dx;
                        for c in 0..4 {
                            let vs = v + ((c as f64 + 0.5) / 4.0 - 0.5) * dv;
                            if self.contains_planar(ts, xs, vs) {
                                hits += 1;
                            }
                        }
                    }
                }
                hits as f64 * vol
            })
            .collect()
    }

    /// Node indicator (no fractional weights).
    pub fn node_mask(&self, spec: &GridSpec) -> Vec<bool> {
        (0..spec.len())
            .map(|k| {
                let (t, x, v) = spec.coords(k);
                self.contains_planar(t, x, v)
            })
            .collect()
    }

    pub fn descriptor(&self) -> CylinderDescriptor {
        CylinderDescriptor {
            base: self.base.clone(),
            s: self.s,
            r: self.r,
            drift: self.drift,
            kind: "cylinder".into(),
            scales: vec![self.s, self.r],
        }
    }
}

/// JSON descriptor used in experiment manifests for cylinders and cutoffs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderDescriptor {
    pub base: PhasePoint,
    pub s: f64,
    pub r: f64,
    pub drift: DriftSpec,
    pub kind: String,
    pub scales: Vec<f64>,
}

/// C2 monotone bridge from 0 at `y <= 0` to 1 at `y >= 1`: the integral of
/// the polynomial bump `30 y^2 (1-y)^2`.
#[inline]
pub fn smoothstep(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= 1.0 {
        1.0
    } else {
        // rounding overshoots 1 near y = 1
        (y * y * y * (10.0 + y * (-15.0 + 6.0 * y))).min(1.0)
    }
}

#[inline]
pub fn smoothstep_d1(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        0.0
    } else {
        30.0 * y * y * (1.0 - y) * (1.0 - y)
    }
}

#[inline]
pub fn smoothstep_d2(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        0.0
    } else {
        60.0 * y * (1.0 - y) * (1.0 - 2.0 * y)
    }
}

/// `max |smoothstep'|`
pub const SMOOTHSTEP_D1_MAX: f64 = 1.875;
/// `max |smoothstep''|`, attained at `y = (3 - sqrt 3)/6`.
pub const SMOOTHSTEP_D2_MAX: f64 = 5.773_502_691_896_258;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    Spatial,
    Temporal,
}

/// Transported radial cutoff: 1 on `Q_{S,r1}`, 0 outside `Q_{S,r2}`, constant
/// along characteristics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialCutoff {
    pub base: PhasePoint,
    pub r1: f64,
    pub r2: f64,
    pub window: f64,
    pub drift: DriftSpec,
}

impl SpatialCutoff {
    pub fn new(base: PhasePoint, r1: f64, r2: f64, window: f64, drift: DriftSpec) -> Result<Self> {
        if !(r1 < r2) || !(r1 >= 0.0) {
            return Err(invalid(format!("spatial cutoff needs 0 <= r1 < r2 (got {r1}, {r2})")));
        }
        Ok(Self { base, r1, r2, window, drift })
    }

    fn outer(&self) -> Cylinder {
        Cylinder { base: self.base.clone(), s: self.window, r: self.r2, drift: self.drift }
    }

    pub fn eval(&self, q: &PhasePoint) -> f64 {
        let d = self.outer().transported_distance(q);
        1.0 - smoothstep((d - self.r1) / (self.r2 - self.r1))
    }

    #[inline]
    pub fn eval_planar(&self, t: f64, x: f64, v: f64) -> f64 {
        let d = self.outer().transported_distance_planar(t, x, v);
        1.0 - smoothstep((d - self.r1) / (self.r2 - self.r1))
    }

    pub fn sample(&self, spec: GridSpec) -> CutoffField {
        let cyl = self.outer();
        let w = self.r2 - self.r1;
        let values = GridField::from_fn(spec, |t, x, v| {
            1.0 - smoothstep((cyl.transported_distance_planar(t, x, v) - self.r1) / w)
        });
        CutoffField { values, kind: CutoffKind::Spatial, inner: self.r1, outer: self.r2 }
    }

    pub fn descriptor(&self) -> CylinderDescriptor {
        CylinderDescriptor {
            base: self.base.clone(),
            s: self.window,
            r: self.r2,
            drift: self.drift,
            kind: "spatial_cutoff".into(),
            scales: vec![self.r1, self.r2],
        }
    }
}

/// Rescaled standard cutoff in time: 0 for `t <= s1`, 1 for `t >= s2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalCutoff {
    pub s1: f64,
    pub s2: f64,
}

impl TemporalCutoff {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        if !(s1 < s2) {
            return Err(invalid(format!("temporal cutoff needs s1 < s2 (got {s1}, {s2})")));
        }
        Ok(Self { s1, s2 })
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        smoothstep((t - self.s1) / (self.s2 - self.s1))
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        smoothstep_d1((t - self.s1) / (self.s2 - self.s1)) / (self.s2 - self.s1)
    }

    pub fn sample(&self, spec: GridSpec) -> CutoffField {
        CutoffField {
            values: GridField::from_fn(spec, |t, _, _| self.eval(t)),
            kind: CutoffKind::Temporal,
            inner: self.s1,
            outer: self.s2,
        }
    }
}

pub fn make_spatial_cutoff(
    spec: GridSpec,
    r1: f64,
    r2: f64,
    window: f64,
    base: PhasePoint,
) -> Result<CutoffField> {
    Ok(SpatialCutoff::new(base, r1, r2, window, DriftSpec::Kinetic)?.sample(spec))
}

pub fn make_temporal_cutoff(spec: GridSpec, s1: f64, s2: f64) -> Result<CutoffField> {
    Ok(TemporalCutoff::new(s1, s2)?.sample(spec))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffField {
    pub values: GridField,
    pub kind: CutoffKind,
    pub inner: f64,
    pub outer: f64,
}

impl CutoffField {
    /// `max |d_v eta|` by centered differences on interior nodes.
    pub fn max_velocity_gradient(&self) -> f64 {
        max_dv(&self.values)
    }

    /// `max |d_vv eta|` by second differences on interior nodes.
    pub fn max_velocity_hessian(&self) -> f64 {
        max_dvv(&self.values)
    }

    /// `max |d_t eta|` by centered differences.
    pub fn max_time_gradient(&self) -> f64 {
        let f = &self.values;
        let s = f.spec;
        let mut m: f64 = 0.0;
        for it in 1..s.t.n - 1 {
            for ix in 0..s.x.n {
                for iv in 0..s.v.n {
                    let d = (f.at(it + 1, ix, iv) - f.at(it - 1, ix, iv)) / (2.0 * s.dt());
                    m = m.max(d.abs());
                }
            }
        }
        m
    }

    /// `max |(d_t + v d_x) eta|` by centered differences on interior nodes.
    pub fn transport_defect(&self) -> f64 {
        transport_defect(&self.values)
    }
}

fn max_dv(f: &GridField) -> f64 {
    let s = f.spec;
    let h = s.dv();
    let mut m: f64 = 0.0;
    for it in 0..s.t.n {
        for ix in 0..s.x.n {
            for iv in 1..s.v.n - 1 {
                m = m.max(((f.at(it, ix, iv + 1) - f.at(it, ix, iv - 1)) / (2.0 * h)).abs());
            }
        }
    }
    m
}

fn max_dvv(f: &GridField) -> f64 {
    let s = f.spec;
    let h2 = s.dv() * s.dv();
    let mut m: f64 = 0.0;
    for it in 0..s.t.n {
        for ix in 0..s.x.n {
            for iv in 1..s.v.n - 1 {
                let d = (f.at(it, ix, iv + 1) - 2.0 * f.at(it, ix, iv) + f.at(it, ix, iv - 1)) / h2;
                m = m.max(d.abs());
            }
        }
    }
    m
}

pub(crate) fn transport_defect(f: &GridField) -> f64 {
    let s = f.spec;
    let mut m: f64 = 0.0;
    for it in 1..s.t.n - 1 {
        for ix in 1..s.x.n - 1 {
            for iv in 0..s.v.n {
                let v = s.v.coord(iv);
                let dt = (f.at(it + 1, ix, iv) - f.at(it - 1, ix, iv)) / (2.0 * s.dt());
                let dx = (f.at(it, ix + 1, iv) - f.at(it, ix - 1, iv)) / (2.0 * s.dx());
                m = m.max((dt + v * dx).abs());
            }
        }
    }
    m
}

/// Enlarged domains and cutoffs around `(0, x0)` for a scale `R > 1`.
#[derive(Clone, Debug)]
pub struct SigmaDomains {
    pub scale: f64,
    /// `Sigma~_R = Q_{1, 2w}`
    pub inner_domain: Cylinder,
    /// `Sigma_R = Q_{1, 3w}`
    pub outer_domain: Cylinder,
    /// `eta~_R`: 1 on radius `w`, 0 beyond `2w`.
    pub inner_cutoff: SpatialCutoff,
    /// `eta_R`: 1 on `Sigma~_R`, 0 beyond `3w`.
    pub outer_cutoff: SpatialCutoff,
}

impl SigmaDomains {
    /// Bridge width `w(R) = 4 sqrt(R)`.
    ///
    /// On `t in [-1, 0]` the velocity derivative of the transported radius is
    /// at most `sqrt 2` and its second derivative at most `2 / radius`, so with
    /// the bridge starting at radius `w` the profile obeys
    /// `|X X eta~| <= 2*5.774/w^2 + 2*1.875/w^2 < 1/R` and `|X eta~| <= 0.67`.
    pub fn bridge_width(scale: f64) -> f64 {
        4.0 * scale.sqrt()
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_domain.r
    }
}

pub fn sigma_domains(scale: f64, base: PhasePoint) -> Result<SigmaDomains> {
    if !(scale > 1.0) {
        return Err(invalid(format!("sigma domains need R > 1 (got {scale})")));
    }
    let w = SigmaDomains::bridge_width(scale);
    let drift = DriftSpec::Kinetic;
    Ok(SigmaDomains {
        scale,
        inner_domain: Cylinder::new(base.clone(), 1.0, 2.0 * w, drift)?,
        outer_domain: Cylinder::new(base.clone(), 1.0, 3.0 * w, drift)?,
        inner_cutoff: SpatialCutoff::new(base.clone(), w, 2.0 * w, 1.0, drift)?,
        outer_cutoff: SpatialCutoff::new(base, 2.0 * w, 3.0 * w, 1.0, drift)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kinetic_flow_translates() {
        let (p, v) = flow(DriftSpec::Kinetic, 0.0, 1.0, &[0.0], &[1.0]);
        assert_eq!((p[0], v[0]), (1.0, 1.0));
        let (p, v) = flow(DriftSpec::Zero, -3.0, 7.0, &[0.3, 0.1], &[2.0, -1.0]);
        assert_eq!(p, vec![0.3, 0.1]);
        assert_eq!(v, vec![2.0, -1.0]);
    }

    #[test]
    fn flow_group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (t1, t2, t3) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (a, b) = flow(DriftSpec::Kinetic, t1, t2, &x, &v);
            let (c, d) = flow(DriftSpec::Kinetic, t2, t3, &a, &b);
            let (e, f) = flow(DriftSpec::Kinetic, t1, t3, &x, &v);
            for i in 0..2 {
                assert!((c[i] - e[i]).abs() <= 1e-12 && d[i] == f[i]);
            }
            let (g, h) = flow(DriftSpec::Kinetic, t2, t1, &a, &b);
            for i in 0..2 {
                assert!((g[i] - x[i]).abs() <= 1e-12 && h[i] == v[i]);
            }
        }
    }

    #[test]
    fn membership_edges() {
        let c = Cylinder::kinetic(0.0, 0.0, 0.0, 1.0, 1.0);
        assert!(c.contains(&PhasePoint::planar(0.0, 0.0, 0.0)));
        assert!(!c.contains(&PhasePoint::planar(-1.0, 0.0, 0.0)));
        assert!(c.contains(&PhasePoint::planar(-0.999, 0.0, 0.0)));
        assert!(!c.contains(&PhasePoint::planar(0.1, 0.0, 0.0)));
        // transported point (0.45 + 0.5*0.9, 0.9) = (0.9, 0.9) has norm 1.27
        assert!(!c.contains(&PhasePoint::planar(-0.5, 0.45, 0.9)));
        // (-0.45 + 0.45, 0.9) = (0, 0.9): inside
        assert!(c.contains(&PhasePoint::planar(-0.5, -0.45, 0.9)));
    }

    #[test]
    fn measure_values() {
        let c = Cylinder::kinetic(0.0, 0.0, 0.0, 1.0, 1.0);
        assert!((c.measure() - std::f64::consts::PI).abs() < 1e-14);
        assert_eq!(c.resized(0.0, 1.0).measure(), 0.0);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((unit_ball_volume(4) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SpatialCutoff::new(PhasePoint::origin(1), 1.0, 1.0, 1.0, DriftSpec::Kinetic).is_err());
        assert!(TemporalCutoff::new(0.5, 0.5).is_err());
        assert!(sigma_domains(1.0, PhasePoint::origin(1)).is_err());
        assert!(Cylinder::new(PhasePoint::origin(1), 1.0, 0.0, DriftSpec::Kinetic).is_err());
    }

    #[test]
    fn temporal_cutoff_shape() {
        let c = TemporalCutoff::new(-1.0, 0.0).unwrap();
        assert_eq!(c.eval(-1.0), 0.0);
        assert_eq!(c.eval(0.0), 1.0);
        let mid = c.eval(-0.5);
        assert!(mid > 0.0 && mid < 1.0);
        let mut prev = 0.0;
        for i in 0..=100 {
            let z = c.eval(-1.0 + i as f64 / 100.0);
            assert!(z >= prev);
            prev = z;
        }
    }

    #[test]
    fn smoothstep_derivative_constants() {
        let mut m1: f64 = 0.0;
        let mut m2: f64 = 0.0;
        for i in 0..=100_000 {
            let y = i as f64 / 100_000.0;
            m1 = m1.max(smoothstep_d1(y).abs());
            m2 = m2.max(smoothstep_d2(y).abs());
        }
        assert!((m1 - SMOOTHSTEP_D1_MAX).abs() < 1e-9);
        assert!((m2 - SMOOTHSTEP_D2_MAX).abs() < 1e-6);
        // finite-difference consistency
        for &y in &[0.1, 0.37, 0.5, 0.81] {
            let h = 1e-5;
            let d1 = (smoothstep(y + h) - smoothstep(y - h)) / (2.0 * h);
            let d2 = (smoothstep_d1(y + h) - smoothstep_d1(y - h)) / (2.0 * h);
            assert!((d1 - smoothstep_d1(y)).abs() < 1e-8);
            assert!((d2 - smoothstep_d2(y)).abs() < 1e-6);
        }
    }
}
