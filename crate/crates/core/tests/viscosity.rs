use hypoharnack::grid::{GridField, GridSpec};
use hypoharnack::kolmogorov::{ball_cutoff, l2_distance, viscous_comparison, BumpData, SmoothProblem, ViscousSolution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sweep(seed: u64, viscosities: &[f64]) -> Vec<ViscousSolution> {
    let spec = GridSpec::boxed((-1.0, 0.0, 40), (4.0, 40), (3.0, 40)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps = BumpData::random(&mut rng, 3, 1.5, (spec.t.lo, spec.t.hi));
    let pb = SmoothProblem::new((0.0, 0.0), 1.5, spec.t.lo, bumps.sample(spec), GridField::zeros(spec)).unwrap();
    let chi = ball_cutoff(spec, 2.0, 2.5);
    viscosities.iter().map(|&e| viscous_comparison(e, &pb, &chi).unwrap()).collect()
}

fn spread(sols: &[ViscousSolution], f: impl Fn(&ViscousSolution) -> f64) -> f64 {
    let v: Vec<f64> = sols.iter().map(f).collect();
    v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[test]
fn vanishing_viscosity_is_cauchy_with_bounded_energy() {
    for seed in 0..3 {
        let sols = sweep(seed, &[1e-1, 1e-2, 1e-3]);
        let d: Vec<f64> = sols.windows(2).map(|w| l2_distance(&w[0].w, &w[1].w).unwrap()).collect();
        assert!(d[1] < d[0], "seed {seed}: differences {d:?}");
        for (name, s) in [
            ("l2", spread(&sols, |s| s.l2)),
            ("velocity gradient", spread(&sols, |s| s.velocity_gradient_l2)),
            ("outer gradient", spread(&sols, |s| s.outer_gradient_l2)),
        ] {
            assert!(s <= 2.0, "seed {seed}: {name} spread {s}");
        }
    }
}

#[test]
fn differences_shrink_toward_the_inviscid_limit() {
    let sols = sweep(7, &[1e-1, 1e-2, 1e-3, 0.0]);
    let limit = &sols[3].w;
    let d: Vec<f64> = sols[..3].iter().map(|s| l2_distance(&s.w, limit).unwrap()).collect();
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    // first order in the viscosity: a decade in eps buys close to a decade in distance
    assert!(d[0] / d[1] > 5.0, "{d:?}");
}

#[test]
fn negative_viscosity_is_rejected() {
    let spec = GridSpec::boxed((-1.0, 0.0, 12), (4.0, 12), (3.0, 12)).unwrap();
    let pb = SmoothProblem::new((0.0, 0.0), 1.5, spec.t.lo, GridField::zeros(spec), GridField::zeros(spec)).unwrap();
    assert!(viscous_comparison(-1e-3, &pb, &ball_cutoff(spec, 2.0, 2.5)).is_err());
}
