use hypoharnack::config::ExperimentConfig;
use hypoharnack::degiorgi::SmoothedTruncation;
use hypoharnack::geometry::{flow, DriftSpec};
use hypoharnack::grid::GridSpec;
use hypoharnack::harnack::LogTransform;
use hypoharnack::rough::{evolve, CoefficientRecipe, RoughCoefficients};
use hypoharnack::scheme::Boundary;
use proptest::prelude::*;

fn small_spec() -> GridSpec {
    GridSpec::boxed((0.0, 0.3, 9), (3.0, 17), (3.0, 17)).unwrap()
}

fn bump_level(spec: &GridSpec, cx: f64, cv: f64, w: f64) -> Vec<f64> {
    (0..spec.slab())
        .map(|k| {
            let (_, x, v) = spec.coords(k);
            (-((x - cx).powi(2) + (v - cv).powi(2)) / (2.0 * w * w)).exp()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_composes(t0 in -2.0..2.0f64, t1 in -2.0..2.0f64, t2 in -2.0..2.0f64, x in -5.0..5.0f64, v in -5.0..5.0f64) {
        let (p1, v1) = flow(DriftSpec::Kinetic, t0, t1, &[x], &[v]);
        let (p2, v2) = flow(DriftSpec::Kinetic, t1, t2, &p1, &v1);
        let (p3, v3) = flow(DriftSpec::Kinetic, t0, t2, &[x], &[v]);
        prop_assert!((p2[0] - p3[0]).abs() <= 1e-12 * (1.0 + p3[0].abs()));
        prop_assert_eq!(v2[0], v3[0]);
    }

    #[test]
    fn truncation_brackets_positive_part(eps in 1e-4..2.0f64, h in -3.0..3.0f64, z in -6.0..6.0f64) {
        let k = SmoothedTruncation::new(eps, h).unwrap();
        let (val, d1, d2) = k.eval(z);
        let plus = (z - h).max(0.0);
        // a symmetric mollification of a convex function lies above it
        prop_assert!(val >= plus - 1e-15);
        prop_assert!(val - plus <= 5.0 / 32.0 * eps + 1e-15);
        prop_assert!((0.0..=1.0).contains(&d1) && d2 >= 0.0);
    }

    #[test]
    fn log_level_inverts(delta in 1e-4..0.99f64, frac in 0.01..0.99f64) {
        let lt = LogTransform::new(delta).unwrap();
        let target = frac * lt.at_zero();
        let z = lt.level_for(target);
        prop_assert!(z > 0.0 && z < 1.0);
        prop_assert!((lt.eval(z).unwrap().0 - target).abs() <= 1e-9 * (1.0 + target));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn evolution_is_linear(seed in 0u64..1000, a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let s = small_spec();
        let c = RoughCoefficients::from_recipe(s, &CoefficientRecipe::random(1.0, 3.0, 0.5, seed)).unwrap();
        let u0 = bump_level(&s, 0.5, -0.3, 0.6);
        let w0 = bump_level(&s, -0.7, 0.4, 0.4);
        let mix: Vec<f64> = u0.iter().zip(&w0).map(|(u, w)| a * u + b * w).collect();
        let eu = evolve(&c, &u0, Boundary::Dirichlet).unwrap().u;
        let ew = evolve(&c, &w0, Boundary::Dirichlet).unwrap().u;
        let em = evolve(&c, &mix, Boundary::Dirichlet).unwrap().u;
        for k in 0..s.len() {
            let lin = a * eu.data[k] + b * ew.data[k];
            prop_assert!((em.data[k] - lin).abs() <= 1e-10 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn evolution_preserves_order(seed in 0u64..1000, shift in 0.0..0.5f64) {
        let s = small_spec();
        let c = RoughCoefficients::from_recipe(s, &CoefficientRecipe::random(1.0, 3.0, 0.5, seed)).unwrap();
        let lo = bump_level(&s, 0.0, 0.0, 0.5);
        let hi: Vec<f64> = lo.iter().zip(bump_level(&s, shift, -shift, 0.7)).map(|(a, b)| a + b).collect();
        let el = evolve(&c, &lo, Boundary::Dirichlet).unwrap().u;
        let eh = evolve(&c, &hi, Boundary::Dirichlet).unwrap().u;
        for k in 0..s.len() {
            prop_assert!(el.data[k] <= eh.data[k] + 1e-12);
        }
        prop_assert!(el.min() >= -1e-12);
    }

    #[test]
    fn periodic_no_flux_conserves_mass(seed in 0u64..1000, cx in -1.0..1.0f64) {
        let s = small_spec();
        let c = RoughCoefficients::from_recipe(s, &CoefficientRecipe::random(1.0, 3.0, 0.5, seed)).unwrap();
        let u0 = bump_level(&s, cx, 0.0, 0.5);
        let u = evolve(&c, &u0, Boundary::PeriodicNoFlux).unwrap().u;
        // skip the duplicated periodic column
        let mass = |it: usize| -> f64 {
            (0..s.x.n - 1).flat_map(|ix| (0..s.v.n).map(move |iv| (ix, iv))).map(|(ix, iv)| u.at(it, ix, iv)).sum()
        };
        let m0 = mass(0);
        for it in 1..s.t.n {
            prop_assert!((mass(it) - m0).abs() <= 1e-10 * m0, "level {}: {} vs {}", it, mass(it), m0);
        }
    }

    #[test]
    fn config_round_trips(seed in 0..=i64::MAX as u64, n in 8usize..80, eta in 0.05..0.95f64) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.grid.nx = n;
        cfg.harnack.params.eta = eta;
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(back.to_toml_string().unwrap(), text);
        let resolved = cfg.resolved();
        prop_assert!(resolved.validate().is_ok());
        let again = ExperimentConfig::from_toml_str(&resolved.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(again, resolved);
    }
}
