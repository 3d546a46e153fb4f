use hypoharnack::degiorgi::SmoothedTruncation;
use hypoharnack::grid::{GridField, GridSpec};
use hypoharnack::harnack::LogTransform;
use hypoharnack::rough::{
    bump_dictionary, certify_sign, compose_transform, evolve, verify_composition, CoefficientRecipe, FieldRecipe,
    RoughCoefficients, Transform, TransformInput,
};
use hypoharnack::scheme::Boundary;

const DRAWS: u64 = 10;
const TOL: f64 = 1e-6;
const DICTIONARY: usize = 600;

fn spec() -> GridSpec {
    GridSpec::boxed((0.0, 0.5, 21), (3.0, 33), (3.0, 33)).unwrap()
}

/// `((z + sqrt(z^2 + eps^2)) / 2)^2`, a smooth stand-in for `z^2 1_{z>0}`.
struct SmoothPositiveSquare {
    eps: f64,
}

impl SmoothPositiveSquare {
    fn parts(&self, z: f64) -> (f64, f64) {
        let r = (z * z + self.eps * self.eps).sqrt();
        ((z + r) / 2.0, r)
    }
}

impl Transform for SmoothPositiveSquare {
    fn value(&self, z: f64) -> f64 {
        self.parts(z).0.powi(2)
    }
    fn d1(&self, z: f64) -> f64 {
        let (s, r) = self.parts(z);
        2.0 * s * s / r
    }
    fn d2(&self, z: f64) -> f64 {
        let (s, r) = self.parts(z);
        2.0 * s * s * (2.0 * r - z) / (r * r * r)
    }
}

fn recipe(seed: u64, with_sources: bool) -> CoefficientRecipe {
    let mut r = CoefficientRecipe::random(1.0, 3.0, 0.5, seed);
    let lo = &mut r.lower_order;
    lo.b = FieldRecipe { mean: 0.1, amplitude: 0.3 };
    lo.c = FieldRecipe { mean: -0.1, amplitude: 0.3 };
    lo.d = FieldRecipe { mean: 0.0, amplitude: 0.2 };
    if with_sources {
        lo.f = FieldRecipe { mean: 0.05, amplitude: 0.2 };
        lo.g = FieldRecipe { mean: 0.0, amplitude: 0.3 };
    }
    r
}

fn solution(seed: u64, with_sources: bool) -> (RoughCoefficients, GridField) {
    let s = spec();
    let c = RoughCoefficients::from_recipe(s, &recipe(seed, with_sources)).unwrap();
    let u0: Vec<f64> = (0..s.slab())
        .map(|k| {
            let (_, x, v) = s.coords(k);
            0.05 + 0.9 * (-(x * x + v * v) / 2.0).exp()
        })
        .collect();
    let ev = evolve(&c, &u0, Boundary::Dirichlet).unwrap();
    (c, ev.u)
}

fn check(c: &RoughCoefficients, u: &GridField, phi: &dyn Transform, input: TransformInput, label: &str) {
    let comp = compose_transform(c, u, phi, input).unwrap();
    let dict = bump_dictionary(&u.spec, DICTIONARY, None);
    let r = verify_composition(&comp, 0, &dict, TOL).unwrap();
    assert!(
        r.certificate.is_subsolution(),
        "{label}: worst {} above {} ({:?})",
        r.worst_case,
        r.tolerance,
        r.certificate
    );
}

#[test]
fn inputs_are_certified_solutions() {
    for seed in 0..3 {
        for sources in [false, true] {
            let (c, u) = solution(seed, sources);
            let r = certify_sign(&c, &u, 0, DICTIONARY).unwrap();
            assert!(r.certificate.is_subsolution() && r.certificate.is_supersolution(), "seed {seed}: {:?}", r.certificate);
        }
    }
}

#[test]
fn smoothed_truncation_yields_subsolutions() {
    for seed in 0..DRAWS {
        let (c, u) = solution(seed, true);
        let h = 0.5 * (u.max() + u.min());
        // the mollification must be resolved by the velocity grid
        let eps = 2.0 * spec().dv();
        check(&c, &u, &SmoothedTruncation::new(eps, h).unwrap(), TransformInput::Subsolution, &format!("K seed {seed}"));
    }
}

#[test]
fn smooth_positive_square_yields_subsolutions() {
    for seed in 0..DRAWS {
        let (c, u) = solution(seed, true);
        check(&c, &u, &SmoothPositiveSquare { eps: 2.0 * spec().dv() }, TransformInput::Subsolution, &format!("square seed {seed}"));
    }
}

#[test]
fn log_transform_of_supersolution_yields_subsolutions() {
    for seed in 0..DRAWS {
        let (c, u) = solution(seed, false);
        assert!(u.min() >= 0.0, "seed {seed}: input went negative ({})", u.min());
        let g = LogTransform::new(0.1).unwrap();
        check(&c, &u, &g, TransformInput::Supersolution, &format!("G seed {seed}"));
    }
}

#[test]
fn smooth_positive_square_has_the_claimed_shape() {
    let phi = SmoothPositiveSquare { eps: 1e-3 };
    for i in 0..=200 {
        let z = -1.0 + 0.01 * i as f64;
        let target = if z > 0.0 { z * z } else { 0.0 };
        assert!((phi.value(z) - target).abs() < 2e-3, "z={z}");
        assert!(phi.d1(z) >= 0.0 && phi.d2(z) >= 0.0);
        let h = 1e-5;
        let fd = (phi.value(z + h) - phi.value(z - h)) / (2.0 * h);
        assert!((fd - phi.d1(z)).abs() < 1e-5 * (1.0 + fd.abs()), "z={z}");
    }
}
