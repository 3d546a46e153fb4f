//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hypoharnack::campaign::{run, sweep, Outcome, SweepSummary};
use hypoharnack::config::{Campaign, ExperimentConfig};
use hypoharnack::degiorgi::SmoothedTruncation;
use hypoharnack::grid::{GridField, GridSpec};
use hypoharnack::harnack::{g_log_d1, g_log_d2, LogTransform};
use hypoharnack::rough::{
    bump_dictionary, certify_sign_with_source, compose_transform, evolve, evolve_with_source, verify_composition, Bump,
    CoefficientKind, CoefficientRecipe, FieldRecipe, RoughCoefficients, Transform, TransformInput, SIGN_TOL,
};
use hypoharnack::scheme::Boundary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn config(campaign: Campaign) -> ExperimentConfig {
    ExperimentConfig { campaign, ..Default::default() }
}

fn run_campaign(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    run(&cfg.clone().resolved(), out).unwrap_or_else(|e| panic!("{} campaign failed: {e}", cfg.campaign.name()))
}

fn failed_predicates(o: &Outcome) -> String {
    let bad: Vec<&str> = o.predicates.iter().filter(|(_, ok)| !**ok).map(|(k, _)| k.as_str()).collect();
    if bad.is_empty() {
        String::new()
    } else {
        format!(", failed: {}", bad.join(" "))
    }
}

fn kernel_validity(out: &Path) -> Verdict {
    let mut cfg = config(Campaign::KernelValidate);
    (cfg.grid.nt, cfg.grid.nx, cfg.grid.nv) = (64, 64, 64);
    let clock = Instant::now();
    let o = run_campaign(&cfg, out);
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        o.passed && secs <= 60.0,
        format!(
            "mass error {:.1e}, residual order {:.2}, {secs:.1} s{}",
            o.values["normalization_error"],
            o.values["residual_order"],
            failed_predicates(&o)
        ),
    )
}

fn hypothesis1_probe(out: &Path) -> Verdict {
    let cfg = config(Campaign::Hypothesis1);
    let h = &cfg.hypothesis1.params;
    let setup = h.trials >= 50 && h.p1 == 2.5 && h.gamma0 == 2.0 && h.gamma1 == 2.0 && cfg.hypothesis1.max_change <= 0.2;
    let clock = Instant::now();
    let o = run_campaign(&cfg, out);
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        setup && o.passed && secs <= 600.0,
        format!(
            "{} trials, C0 {:.4}, change {:.1}%, {secs:.1} s{}",
            h.trials,
            o.values["C0"],
            100.0 * o.values["relative_change"],
            failed_predicates(&o)
        ),
    )
}

fn small_spec() -> GridSpec {
    GridSpec::boxed((0.0, 0.5, 21), (3.0, 33), (3.0, 33)).unwrap()
}

fn random_bump(rng: &mut ChaCha8Rng, t: (f64, f64), half_t: f64, half_xv: (f64, f64)) -> Bump {
    Bump {
        center: (rng.gen_range(t.0..t.1), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)),
        half_width: (half_t, rng.gen_range(half_xv.0..half_xv.1), rng.gen_range(half_xv.0..half_xv.1)),
        scale: 0,
    }
}

fn weak_maximum_principle() -> Verdict {
    let s = small_spec();
    let dict = bump_dictionary(&s, 600, None);
    let draws = 10;
    let (mut certified, mut bounded, mut detected) = (0u64, 0u64, 0u64);
    let mut worst_max = f64::NEG_INFINITY;
    for seed in 0..draws {
        let recipe = if seed == 0 { CoefficientRecipe::identity() } else { CoefficientRecipe::random(1.0, 3.0, 0.5, seed) };
        let c = RoughCoefficients::from_recipe(s, &recipe).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut src = GridField::zeros(s);
        for _ in 0..4 {
            let b = random_bump(&mut rng, (0.1, 0.4), 0.15, (0.4, 1.0));
            let amp = rng.gen_range(0.5..3.0);
            src = src.zip_with(&b.sample(s), |a, z| a - amp * z).unwrap();
        }
        let u = evolve_with_source(&c, &vec![0.0; s.slab()], 0, Some(&src), Boundary::Dirichlet).unwrap().u;
        if certify_sign_with_source(&c, &u, None, 0, &dict, SIGN_TOL).unwrap().certificate.is_subsolution() {
            certified += 1;
            worst_max = worst_max.max(u.max());
            bounded += (u.max() <= 1e-8) as u64;
        }
        let control = Bump {
            center: (rng.gen_range(0.2..0.35), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            half_width: (0.12, 0.6, 0.6),
            scale: 0,
        };
        // large enough that the perturbed field is positive at the bump centre
        let amp = 0.1 - u.min();
        let w = u.zip_with(&control.sample(s), |a, z| a + amp * z).unwrap();
        if w.max() > 0.0 && !certify_sign_with_source(&c, &w, None, 0, &dict, SIGN_TOL).unwrap().certificate.is_subsolution() {
            detected += 1;
        }
    }
    verdict(
        certified == draws && bounded == certified && detected == draws,
        format!("{bounded}/{certified} certified subsolutions with max <= 1e-8 (worst {worst_max:.1e}), control detected {detected}/{draws}"),
    )
}

/// `((z + sqrt(z^2 + eps^2)) / 2)^2`.
struct SmoothPositiveSquare(f64);

impl Transform for SmoothPositiveSquare {
    fn value(&self, z: f64) -> f64 {
        (0.5 * (z + (z * z + self.0 * self.0).sqrt())).powi(2)
    }
    fn d1(&self, z: f64) -> f64 {
        let r = (z * z + self.0 * self.0).sqrt();
        2.0 * (0.5 * (z + r)).powi(2) / r
    }
    fn d2(&self, z: f64) -> f64 {
        let r = (z * z + self.0 * self.0).sqrt();
        2.0 * (0.5 * (z + r)).powi(2) * (2.0 * r - z) / (r * r * r)
    }
}

fn composition_lemma() -> Verdict {
    let s = small_spec();
    let dict = bump_dictionary(&s, 600, None);
    let eps = 2.0 * s.dv();
    let u0: Vec<f64> = (0..s.slab())
        .map(|k| {
            let (_, x, v) = s.coords(k);
            0.05 + 0.9 * (-(x * x + v * v) / 2.0).exp()
        })
        .collect();
    let (mut ok, mut total) = (0, 0);
    let mut worst: f64 = f64::NEG_INFINITY;
    for seed in 0..10 {
        for sources in [true, false] {
            let mut r = CoefficientRecipe::random(1.0, 3.0, 0.5, seed);
            r.lower_order.b = FieldRecipe { mean: 0.1, amplitude: 0.3 };
            r.lower_order.c = FieldRecipe { mean: -0.1, amplitude: 0.3 };
            r.lower_order.d = FieldRecipe { mean: 0.0, amplitude: 0.2 };
            if sources {
                r.lower_order.f = FieldRecipe { mean: 0.05, amplitude: 0.2 };
                r.lower_order.g = FieldRecipe { mean: 0.0, amplitude: 0.3 };
            }
            let c = RoughCoefficients::from_recipe(s, &r).unwrap();
            let u = evolve(&c, &u0, Boundary::Dirichlet).unwrap().u;
            let h = 0.5 * (u.max() + u.min());
            let truncation = SmoothedTruncation::new(eps, h).unwrap();
            let square = SmoothPositiveSquare(eps);
            let log = LogTransform::new(0.1).unwrap();
            let cases: Vec<(&dyn Transform, TransformInput)> = if sources {
                vec![(&truncation, TransformInput::Subsolution), (&square, TransformInput::Subsolution)]
            } else {
                vec![(&log, TransformInput::Supersolution)]
            };
            for (phi, input) in cases {
                total += 1;
                let comp = compose_transform(&c, &u, phi, input).unwrap();
                let rep = verify_composition(&comp, 0, &dict, 1e-6).unwrap();
                worst = worst.max(rep.worst_case / rep.tolerance);
                ok += rep.certificate.is_subsolution() as usize;
            }
        }
    }
    verdict(ok == total, format!("{ok}/{total} transformed fields certified, worst pairing {worst:.2} x tolerance"))
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sup_config() -> ExperimentConfig {
    let mut cfg = config(Campaign::SupBound);
    (cfg.grid.nt, cfg.grid.nx, cfg.grid.nv) = (64, 64, 64);
    cfg.coefficients.kind = CoefficientKind::Identity;
    cfg.coefficients.lambda = 1.0;
    cfg.coefficients.big_lambda = 4.0;
    cfg.coefficients.cell_size = 0.5;
    cfg.sup.draws = 5;
    cfg
}

fn de_giorgi_invariants(sup_out: &Path) -> Verdict {
    let reports = read_json(&sup_out.join("sup_bound_report.json"));
    let mut runs = 0;
    let mut bad = 0;
    let mut worst_cheb: f64 = 0.0;
    let mut visit = |r: &serde_json::Value| {
        runs += 1;
        let incl = r["values"]["inclusion_violations"].as_f64().unwrap();
        let cheb = r["values"]["chebyshev_ratio"].as_f64().unwrap();
        worst_cheb = worst_cheb.max(cheb);
        if incl != 0.0 || cheb > 1.0 + 1e-9 {
            bad += 1;
        }
    };
    for r in reports.as_array().unwrap() {
        visit(r);
        for f in r["refinements"].as_array().unwrap() {
            visit(f);
        }
    }
    let mut worst_gap: f64 = 0.0;
    let mut scan_ok = true;
    for &(eps, h) in &[(1e-3, 0.0), (0.05, 0.3), (0.25, -1.0), (1.0, 2.0)] {
        let k = SmoothedTruncation::new(eps, h).unwrap();
        let n = 10_000;
        for i in 0..n {
            let z = h - 3.0 * eps - 1.0 + (6.0 * eps + 2.0) * i as f64 / (n - 1) as f64;
            let gap = (k.value(z) - (z - h).max(0.0)).abs();
            worst_gap = worst_gap.max(gap / eps);
            scan_ok &= gap <= eps;
        }
    }
    verdict(
        bad == 0 && runs > 0 && scan_ok,
        format!("{}/{runs} sup-bound runs keep inclusion and Chebyshev at every step (worst ratio {worst_cheb:.3}), truncation gap <= {worst_gap:.3} eps", runs - bad),
    )
}

fn supremum_soundness(o: &Outcome, secs: f64, cases: usize) -> Verdict {
    let per_case = secs / cases as f64;
    verdict(
        o.passed && per_case <= 1200.0,
        format!(
            "{cases} cases at 64^3, overshoot {:.4}x, C_S change {:.1}%, {per_case:.1} s per case{}",
            o.values["overshoot"],
            100.0 * o.values["C_S_change"],
            failed_predicates(&o)
        ),
    )
}

fn log_identity() -> Verdict {
    let n = 10_000;
    let mut worst: f64 = 0.0;
    let mut nonneg = true;
    for i in 1..=n {
        let z = i as f64 / n as f64;
        let lhs = g_log_d2(z) - g_log_d1(z).powi(2);
        nonneg &= lhs >= 0.0;
        worst = worst.max((lhs - (2.0 / z - 1.0)).abs() * z * z / f64::EPSILON);
    }
    verdict(nonneg && worst <= 8.0, format!("{n} points on (0, 1], worst error {worst:.1} ulp of 1/z^2"))
}

fn sweep_line(s: &SweepSummary) -> String {
    let mus: Vec<String> = s.rows.iter().map(|r| r.statistic.map_or("error".into(), |m| format!("{m:.3e}"))).collect();
    format!("[{}]", mus.join(", "))
}

fn weak_harnack(out: &Path) -> Verdict {
    let base = config(Campaign::WeakHarnack);
    let clock = Instant::now();
    let smooth = run_campaign(&base, &out.join("smooth"));
    let mut slowest = clock.elapsed().as_secs_f64();

    let mut rough = base.clone();
    rough.coefficients.kind = CoefficientKind::Checkerboard;
    rough.coefficients.big_lambda = 2.0;
    rough.coefficients.cell_size = 0.5;
    rough.harnack.refinement = 0.0;
    let clock = Instant::now();
    let lam = sweep(&rough.resolved(), "coefficients.Lambda", &[2.0, 4.0, 8.0], &out.join("lambda")).unwrap();
    slowest = slowest.max(clock.elapsed().as_secs_f64() / 3.0);

    let mut eta_cfg = base.clone();
    eta_cfg.harnack.refinement = 0.0;
    let clock = Instant::now();
    let eta = sweep(&eta_cfg.resolved(), "harnack.eta", &[0.1, 0.25, 0.5], &out.join("eta")).unwrap();
    slowest = slowest.max(clock.elapsed().as_secs_f64() / 3.0);

    // every row's `passed` includes the soundness predicate mu <= true min
    let passed = smooth.passed && lam.passed && lam.monotone == Some(true) && eta.passed && eta.monotone == Some(true) && slowest <= 1800.0;
    verdict(
        passed,
        format!(
            "mu {:.4} -> {:.4} refined ({:.1}%), Lambda sweep {}, eta sweep {}, slowest {slowest:.1} s{}",
            smooth.values["mu"],
            smooth.values["mu_refined"],
            100.0 * smooth.values["mu_change"],
            sweep_line(&lam),
            sweep_line(&eta),
            failed_predicates(&smooth)
        ),
    )
}

fn vanishing_viscosity(out: &Path) -> Verdict {
    let o = run_campaign(&config(Campaign::Convergence), out);
    verdict(
        o.passed,
        format!("last difference {:.3e}, energy spread {:.3}{}", o.values["last_difference"], o.values["energy_spread"], failed_predicates(&o)),
    )
}

fn scratch() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hypoharnack-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn main() {
    // accept and ignore libtest flags such as --nocapture
    let root = scratch();
    let sup_out = root.join("sup");
    let clock = Instant::now();
    let sup = run_campaign(&sup_config(), &sup_out);
    let sup_secs = clock.elapsed().as_secs_f64();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("kernel validity", Box::new(|| kernel_validity(&root.join("kernel")))),
        ("hypothesis 1 probe", Box::new(|| hypothesis1_probe(&root.join("h1")))),
        ("weak maximum principle", Box::new(weak_maximum_principle)),
        ("composition lemma", Box::new(composition_lemma)),
        ("De Giorgi invariants", Box::new(|| de_giorgi_invariants(&sup_out))),
        ("supremum bound soundness", Box::new(|| supremum_soundness(&sup, sup_secs, 1 + sup_config().sup.draws))),
        ("log identity", Box::new(log_identity)),
        ("weak Harnack end to end", Box::new(|| weak_harnack(&root.join("harnack")))),
        ("vanishing viscosity", Box::new(|| vanishing_viscosity(&root.join("viscosity")))),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failures += !v.passed as usize;
        println!("criterion {} {name}: {} ({})", i + 1, if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    let _ = std::fs::remove_dir_all(&root);
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
