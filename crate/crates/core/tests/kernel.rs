use hypoharnack::grid::{GridField, GridSpec};
use hypoharnack::kolmogorov::{
    fundamental_solution, kernel_fd_residual, kernel_normalization, kernel_planar, solve_smooth_ivp, GaussianPacket,
    KernelSpec, SmoothProblem,
};
use hypoharnack::rough::{evolve, RoughCoefficients};
use hypoharnack::scheme::Boundary;

/// Bivariate normal density with covariance `[[sxx, sxv], [sxv, svv]]`,
/// inverted directly.
fn gaussian(sxx: f64, sxv: f64, svv: f64, a: f64, b: f64) -> f64 {
    let det = sxx * svv - sxv * sxv;
    let q = (svv * a * a - 2.0 * sxv * a * b + sxx * b * b) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

#[test]
fn kernel_is_the_transported_gaussian() {
    for &tau in &[0.05, 0.3, 1.0, 2.5] {
        let (sxx, sxv, svv) = (2.0 * tau * tau * tau / 3.0, tau * tau, 2.0 * tau);
        for &(x, v, y, w) in &[(0.0, 0.0, 0.0, 0.0), (0.4, -0.3, 0.1, 0.2), (-1.0, 1.5, 0.5, -0.5)] {
            let expected = gaussian(sxx, sxv, svv, x - y - tau * w, v - w);
            let got = kernel_planar(tau, x, v, y, w);
            assert!((got - expected).abs() <= 1e-12 * expected.max(1e-300), "tau={tau}: {got} vs {expected}");
        }
    }
}

#[test]
fn kernel_mass_is_one() {
    for &tau in &[0.05, 0.1, 0.5, 1.0, 2.0] {
        let m = kernel_normalization(tau, 64).unwrap();
        assert!((m - 1.0).abs() <= 1e-6, "tau={tau}: mass {m}");
    }
}

#[test]
fn chapman_kolmogorov_by_quadrature() {
    let (t1, t2) = (0.4, 0.6);
    let n = 241;
    let (lx, lv) = (5.0, 6.0);
    let (hx, hv) = (2.0 * lx / (n - 1) as f64, 2.0 * lv / (n - 1) as f64);
    for &(x, v) in &[(0.0, 0.0), (0.5, -0.7), (-0.8, 1.1)] {
        let mut s = 0.0;
        for i in 0..n {
            let y = -lx + i as f64 * hx;
            for j in 0..n {
                let w = -lv + j as f64 * hv;
                s += kernel_planar(t2, x, v, y, w) * kernel_planar(t1, y, w, 0.0, 0.0);
            }
        }
        s *= hx * hv;
        let direct = kernel_planar(t1 + t2, x, v, 0.0, 0.0);
        assert!((s - direct).abs() < 1e-6 * direct.max(1e-3), "({x},{v}): {s} vs {direct}");
    }
}

#[test]
fn pde_residual_is_second_order() {
    let hs = [0.04, 0.02, 0.01];
    let r: Vec<f64> = hs.iter().map(|&h| kernel_fd_residual(h).unwrap()).collect();
    for i in 1..r.len() {
        let order = (r[i - 1] / r[i]).log2();
        assert!(order >= 1.8, "order {order} between h={} and h={}", hs[i - 1], hs[i]);
    }
}

#[test]
fn multi_dimensional_kernel_is_a_product() {
    let k2 = fundamental_solution(KernelSpec { dim: 2 }, 1.0, (&[0.3, -0.2], &[0.1, 0.4]), 0.2, (&[0.0, 0.1], &[-0.2, 0.0])).unwrap();
    let expected = kernel_planar(0.8, 0.3, 0.1, 0.0, -0.2) * kernel_planar(0.8, -0.2, 0.4, 0.1, 0.0);
    assert!((k2 - expected).abs() < 1e-14 * expected);
}

fn duhamel_spec(n: usize) -> GridSpec {
    GridSpec::boxed((-0.3, 0.0, n), (4.0, n), (4.0, n)).unwrap()
}

/// Error at the final level between the grid solution with a constant-in-time
/// Gaussian source and the Duhamel integral of exact packets (Simpson in time).
fn duhamel_error(n: usize) -> f64 {
    let spec = duhamel_spec(n);
    let src = GaussianPacket::isotropic(1.0, 0.2, -0.1, 0.3);
    let source = GridField::from_fn(spec, |_, x, v| src.eval(x, v));
    let pb = SmoothProblem::new((0.0, 0.0), 3.0, spec.t.lo, source, GridField::zeros(spec)).unwrap();
    let u = solve_smooth_ivp(&pb).unwrap();
    let span = spec.t.hi - spec.t.lo;
    let m = 400;
    let last = spec.t.n - 1;
    let mut err: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for ix in 0..spec.x.n {
        for iv in 0..spec.v.n {
            let (x, v) = (spec.x.coord(ix), spec.v.coord(iv));
            let mut s = 0.0;
            for j in 0..=m {
                let w = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                s += w * src.evolve(span * j as f64 / m as f64).eval(x, v);
            }
            let exact = s * span / (3.0 * m as f64);
            err = err.max((u.at(last, ix, iv) - exact).abs());
            peak = peak.max(exact);
        }
    }
    err / peak
}

#[test]
fn smooth_solver_converges_to_duhamel_oracle() {
    let coarse = duhamel_error(25);
    let fine = duhamel_error(49);
    assert!(fine < 0.05, "fine error {fine}");
    assert!(coarse / fine > 1.6, "error ratio {} ({coarse} -> {fine})", coarse / fine);
}

fn packet_error(n: usize) -> (f64, f64) {
    let spec = GridSpec::boxed((-0.5, 0.0, n), (5.0, n), (5.0, n)).unwrap();
    let p = GaussianPacket::isotropic(1.0, 0.0, 0.0, 0.5);
    let u0: Vec<f64> = (0..spec.slab()).map(|k| {
        let (_, x, v) = spec.coords(k);
        p.eval(x, v)
    }).collect();
    let ev = evolve(&RoughCoefficients::identity(spec), &u0, Boundary::Dirichlet).unwrap();
    let exact = p.evolve(0.5);
    let last = spec.t.n - 1;
    let mut err: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for ix in 0..spec.x.n {
        for iv in 0..spec.v.n {
            let e = exact.eval(spec.x.coord(ix), spec.v.coord(iv));
            err = err.max((ev.u.at(last, ix, iv) - e).abs());
            peak = peak.max(e);
        }
    }
    (err / peak, ev.u.min())
}

#[test]
fn rough_solver_with_identity_matches_packet_at_first_order() {
    let (coarse, min_c) = packet_error(33);
    let (fine, min_f) = packet_error(65);
    assert!(min_c >= 0.0 && min_f >= 0.0, "positivity lost: {min_c} {min_f}");
    assert!(coarse / fine > 1.6, "error ratio {} ({coarse} -> {fine})", coarse / fine);
}
