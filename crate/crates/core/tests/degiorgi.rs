use hypoharnack::degiorgi::{energy_estimate, mollifier, supremum_bound, Exponents, SmoothedTruncation, SupOptions};
use hypoharnack::geometry::Cylinder;
use hypoharnack::grid::GridSpec;
use hypoharnack::kolmogorov::GaussianPacket;
use hypoharnack::rough::{evolve, CoefficientRecipe, FieldRecipe, RoughCoefficients};
use hypoharnack::scheme::Boundary;

/// `(rho_eps * (. - h)_+)(z)` by composite Simpson on the mollifier support.
fn truncation_by_quadrature(eps: f64, h: f64, z: f64) -> f64 {
    let m = 2000;
    let step = 2.0 * eps / m as f64;
    let mut s = 0.0;
    for j in 0..=m {
        let y = -eps + j as f64 * step;
        let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        s += w * mollifier(y / eps) / eps * (z - y - h).max(0.0);
    }
    s * step / 3.0
}

#[test]
fn truncation_is_within_eps_of_the_positive_part() {
    for &(eps, h) in &[(1e-3, 0.0), (0.05, 0.3), (0.25, -1.0), (1.0, 2.0)] {
        let k = SmoothedTruncation::new(eps, h).unwrap();
        let n = 10_000;
        for i in 0..n {
            let z = h - 3.0 * eps - 1.0 + (6.0 * eps + 2.0) * i as f64 / (n - 1) as f64;
            let gap = (k.value(z) - (z - h).max(0.0)).abs();
            assert!(gap <= eps, "eps={eps} h={h} z={z}: gap {gap}");
        }
    }
}

#[test]
fn truncation_matches_the_convolution() {
    let (eps, h) = (0.2, 0.5);
    let k = SmoothedTruncation::new(eps, h).unwrap();
    for i in 0..=60 {
        let z = 0.1 + i as f64 * 0.01;
        let q = truncation_by_quadrature(eps, h, z);
        assert!((k.value(z) - q).abs() < 1e-10, "z={z}: {} vs {q}", k.value(z));
    }
}

#[test]
fn truncation_derivatives_are_consistent() {
    let k = SmoothedTruncation::new(0.1, 0.0).unwrap();
    let d = 1e-6;
    for i in 0..=400 {
        let z = -0.2 + i as f64 * 0.001;
        let (_, k1, k2) = k.eval(z);
        assert!((0.0..=1.0).contains(&k1) && k2 >= 0.0);
        let fd1 = (k.value(z + d) - k.value(z - d)) / (2.0 * d);
        let fd2 = (k.eval(z + d).1 - k.eval(z - d).1) / (2.0 * d);
        assert!((fd1 - k1).abs() < 1e-6, "z={z}");
        assert!((fd2 - k2).abs() < 1e-4 * (1.0 + k2), "z={z}");
    }
}

fn packet_solution(spec: GridSpec, recipe: &CoefficientRecipe) -> (RoughCoefficients, hypoharnack::grid::GridField) {
    let c = RoughCoefficients::from_recipe(spec, recipe).unwrap();
    let p = GaussianPacket::isotropic(1.0, 0.0, 0.0, 0.4);
    let u0: Vec<f64> = (0..spec.slab())
        .map(|k| {
            let (_, x, v) = spec.coords(k);
            p.eval(x, v)
        })
        .collect();
    let u = evolve(&c, &u0, Boundary::Dirichlet).unwrap().u;
    (c, u)
}

fn spec(n: usize) -> GridSpec {
    GridSpec::boxed((-1.0, 0.0, n), (4.0, n), (3.0, n)).unwrap()
}

#[test]
fn iteration_invariants_hold_at_every_step() {
    let ex = Exponents::default();
    let inner = Cylinder::kinetic(0.0, 0.0, 0.0, 0.5, 1.0);
    let outer = Cylinder::kinetic(0.0, 0.0, 0.0, 1.0, 2.0);
    let mut with_lower = CoefficientRecipe::random(1.0, 3.0, 0.5, 5);
    with_lower.lower_order.b = FieldRecipe { mean: 0.0, amplitude: 0.2 };
    with_lower.lower_order.c = FieldRecipe { mean: 0.0, amplitude: 0.2 };
    let recipes = [
        CoefficientRecipe::identity(),
        CoefficientRecipe::checkerboard(1.0, 3.0, 0.5),
        CoefficientRecipe::random(1.0, 3.0, 0.5, 2),
        with_lower,
    ];
    for r in &recipes {
        let (c, u) = packet_solution(spec(40), r);
        let sb = supremum_bound(&u, &c, &inner, &outer, &ex, &SupOptions::default()).unwrap();
        assert!(sb.certified);
        assert!(sb.sup_estimate >= sb.true_max, "{r:?}: {} < {}", sb.sup_estimate, sb.true_max);
        assert_eq!(sb.report.value("inclusion_violations"), Some(0.0), "{r:?}");
        let cheb = sb.report.value("chebyshev_ratio").unwrap();
        assert!(cheb <= 1.0 + 1e-9, "{r:?}: chebyshev ratio {cheb}");
        for w in sb.trace.windows(2) {
            assert!(w[1].h_k > w[0].h_k && w[1].eps_k < w[0].eps_k);
            assert!(w[1].m_k <= w[0].m_k * (1.0 + 1e-12) || w[0].m_k == 0.0);
        }
    }
}

#[test]
fn energy_rhs_scales_like_inverse_square_gap() {
    let s = spec(48);
    let (c, u) = packet_solution(s, &CoefficientRecipe::checkerboard(1.0, 3.0, 0.5));
    let inner = Cylinder::kinetic(0.0, 0.0, 0.0, 0.5, 1.0);
    // the gap^-2 law is asymptotic; at gap 0.1 the constant term still flattens it
    let gaps = [0.005, 0.01, 0.02];
    let reps: Vec<_> = gaps
        .iter()
        .map(|&g| energy_estimate(&u, &c, &inner, &inner.resized(0.5 + g, 1.0 + g)).unwrap())
        .collect();
    let pts: Vec<(f64, f64)> = gaps.iter().zip(&reps).map(|(g, r)| (g.ln(), r.rhs.ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 2.0).abs() <= 0.2, "slope {slope}");
    for r in &reps {
        assert!(r.lhs > 0.0 && r.ratio.is_finite() && r.ratio < 1.0, "{r:?}");
    }
}

#[test]
fn energy_rejects_non_nested_cylinders() {
    let s = spec(24);
    let (c, u) = packet_solution(s, &CoefficientRecipe::identity());
    let a = Cylinder::kinetic(0.0, 0.0, 0.0, 0.5, 1.0);
    assert!(energy_estimate(&u, &c, &a, &a.resized(0.4, 2.0)).is_err());
}
