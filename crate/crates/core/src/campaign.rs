//! Campaign orchestration: runs one verification campaign from a resolved
//! configuration, writes its artifacts and evaluates its pass predicates.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{derive_seed, Campaign, ExperimentConfig};
use crate::degiorgi::{fmt_f64, supremum_bound, SupBound};
use crate::error::Result;
use crate::grid::{GridField, GridSpec};
use crate::harnack::{positivity_family, weak_harnack, HarnackCertificate};
use crate::kolmogorov::{
    ball_cutoff, kernel_fd_residual, kernel_normalization, l2_distance, probe_dual_spreading, probe_hypothesis1,
    viscous_comparison, BumpData, GaussianPacket, SmoothProblem,
};
use crate::report::EstimateReport;
use crate::rough::{evolve, CoefficientKind, RoughCoefficients};

/// Result of one campaign run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Outcome {
    pub campaign: String,
    pub passed: bool,
    pub headline: f64,
    pub predicates: BTreeMap<String, bool>,
    pub values: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

impl Outcome {
    fn new(c: Campaign) -> Self {
        Self { campaign: c.name().into(), ..Default::default() }
    }

    fn check(&mut self, name: &str, ok: bool) {
        self.predicates.insert(name.into(), ok);
    }

    fn value(&mut self, name: &str, x: f64) {
        self.values.insert(name.into(), x);
    }

    fn finish(mut self, headline: f64) -> Self {
        self.headline = headline;
        self.passed = self.predicates.values().all(|&b| b);
        self
    }
}

/// Artifact writer rooted at one directory; records what it wrote.
struct Sink {
    dir: PathBuf,
    written: Vec<String>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.written.push(name.into());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(self.file(name)?);
        wr.write_record(header)?;
        for r in rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    campaign: &'a str,
    config: &'a ExperimentConfig,
    versions: BTreeMap<&'static str, &'static str>,
    outcome: &'a Outcome,
}

fn versions() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([("hypoharnack", env!("CARGO_PKG_VERSION")), ("format", "1")])
}

/// Runs the configured campaign, writing artifacts and `manifest.json` to
/// `out`. Campaign failures (as opposed to failed predicates) are errors.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let mut sink = Sink::new(out)?;
    let mut outcome = match cfg.campaign {
        Campaign::KernelValidate => kernel_validate(cfg, &mut sink)?,
        Campaign::Hypothesis1 => hypothesis1(cfg, &mut sink)?,
        Campaign::DualSpreading => dual_spreading(cfg, &mut sink)?,
        Campaign::SupBound => sup_bound(cfg, &mut sink)?,
        Campaign::WeakHarnack => harnack(cfg, &mut sink)?,
        Campaign::Convergence => convergence(cfg, &mut sink)?,
    };
    outcome.artifacts = sink.written.clone();
    outcome.artifacts.push("manifest.json".into());
    let manifest = Manifest { campaign: cfg.campaign.name(), config: cfg, versions: versions(), outcome: &outcome };
    sink.json("manifest.json", &manifest)?;
    Ok(outcome)
}

fn packet_field(spec: &GridSpec, sigma: f64) -> Vec<f64> {
    let p = GaussianPacket::isotropic(1.0, 0.0, 0.0, sigma);
    (0..spec.slab())
        .map(|k| {
            let (_, x, v) = spec.coords(k);
            p.eval(x, v)
        })
        .collect()
}

fn kernel_validate(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let kc = &cfg.kernel;
    let mut o = Outcome::new(Campaign::KernelValidate);
    let spec = cfg.grid.spec()?;
    let n = spec.x.n.max(spec.v.n);
    let mut worst_norm: f64 = 0.0;
    let mut rows = Vec::new();
    for &tau in &kc.taus {
        let err = (kernel_normalization(tau, n)? - 1.0).abs();
        worst_norm = worst_norm.max(err);
        rows.push(vec!["normalization".into(), fmt_f64(tau), fmt_f64(err)]);
    }
    let res: Vec<f64> = kc.residual_steps.iter().map(|&h| kernel_fd_residual(h)).collect::<Result<_>>()?;
    let mut min_order = f64::INFINITY;
    for (i, (&h, &r)) in kc.residual_steps.iter().zip(&res).enumerate() {
        rows.push(vec!["residual".into(), fmt_f64(h), fmt_f64(r)]);
        if i > 0 {
            let order = (res[i - 1] / r).ln() / (kc.residual_steps[i - 1] / h).ln();
            min_order = min_order.min(order);
        }
    }
    // grid solver against the exact packet evolution
    let coeffs = RoughCoefficients::identity(spec);
    let ev = evolve(&coeffs, &packet_field(&spec, kc.packet_sigma), crate::scheme::Boundary::Dirichlet)?;
    let exact = GaussianPacket::isotropic(1.0, 0.0, 0.0, kc.packet_sigma).evolve(spec.t.hi - spec.t.lo);
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
    let mut rep = EstimateReport::new("kernel", worst_norm, kc.normalization_tol);
    rep.set("normalization_error", worst_norm);
    rep.set("residual_order", min_order);
    rep.set("packet_relative_error", err / peak);
    rep.set("solver_worst_residual", ev.worst_residual);
    o.check("normalization", worst_norm <= kc.normalization_tol);
    o.check("residual_order", min_order >= kc.min_order);
    o.value("normalization_error", worst_norm);
    o.value("residual_order", min_order);
    o.value("packet_relative_error", err / peak);
    rep.passed = worst_norm <= kc.normalization_tol && min_order >= kc.min_order;
    sink.json("kernel_report.json", &rep)?;
    sink.csv("kernel_trace.csv", &["quantity", "parameter", "value"], &rows)?;
    Ok(o.finish(worst_norm))
}

fn hypothesis1(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let hc = &cfg.hypothesis1;
    let mut o = Outcome::new(Campaign::Hypothesis1);
    let spec = cfg.grid.spec()?;
    let rep = probe_hypothesis1(&hc.params, &[spec, spec.refined(hc.refinement)])?;
    let change = rep.value("relative_change").unwrap_or(f64::NAN);
    o.check("refinement_change", change <= hc.max_change);
    o.value("relative_change", change);
    o.value("C0", rep.ratio);
    let mut rows = Vec::new();
    for lvl in &rep.refinements {
        for t in &lvl.trials {
            rows.push(vec![lvl.grid_level.to_string(), t.index.to_string(), fmt_f64(t.lhs), fmt_f64(t.rhs), fmt_f64(t.ratio)]);
        }
    }
    sink.json("hypothesis1_report.json", &rep)?;
    sink.csv("hypothesis1_trials.csv", &["level", "trial", "lhs", "rhs", "ratio"], &rows)?;
    Ok(o.finish(rep.ratio))
}

fn dual_spreading(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let mut o = Outcome::new(Campaign::DualSpreading);
    let spec = cfg.grid.spec()?;
    let rep = probe_dual_spreading(&cfg.dual, spec)?;
    let mu0 = rep.value("mu0").unwrap_or(0.0);
    o.check("mu0_positive", rep.passed);
    o.value("mu0", mu0);
    o.value("C_d", rep.value("C_d").unwrap_or(f64::NAN));
    let rows: Vec<Vec<String>> =
        rep.trials.iter().map(|t| vec![t.index.to_string(), fmt_f64(t.lhs), fmt_f64(t.rhs), fmt_f64(t.ratio)]).collect();
    sink.json("dual_spreading_report.json", &rep)?;
    sink.csv("dual_trials.csv", &["trial", "min_w_half", "E_measure", "w_l1"], &rows)?;
    Ok(o.finish(mu0))
}

fn sup_case(cfg: &ExperimentConfig, spec: GridSpec, recipe: &crate::rough::CoefficientRecipe) -> Result<SupBound> {
    let coeffs = RoughCoefficients::from_recipe(spec, recipe)?;
    let ev = evolve(&coeffs, &packet_field(&spec, cfg.sup.packet_sigma), cfg.sup.boundary)?;
    supremum_bound(&ev.u, &coeffs, &cfg.cylinders.inner(), &cfg.cylinders.outer(), &cfg.exponents, &cfg.sup.options)
}

fn sup_bound(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let sc = &cfg.sup;
    let mut o = Outcome::new(Campaign::SupBound);
    let spec = cfg.grid.spec()?;
    let mut recipes = vec![cfg.coefficients];
    for i in 0..sc.draws {
        let mut r = cfg.coefficients;
        if r.kind == CoefficientKind::Identity {
            r.kind = CoefficientKind::Random;
            if r.amplitude == 0.0 {
                r.amplitude = r.big_lambda - r.lambda;
            }
        }
        r.seed = derive_seed(cfg.seed, 100 + i as u64);
        recipes.push(r);
    }
    let mut reports = Vec::new();
    let mut worst_cs_change: f64 = 0.0;
    let mut worst_overshoot: f64 = 0.0;
    let mut dominates = true;
    let mut invariants = true;
    let mut certified = true;
    let mut headline = 0.0;
    for (i, recipe) in recipes.iter().enumerate() {
        let sb = sup_case(cfg, spec, recipe)?;
        let mut rep = sb.report.clone();
        rep.name = format!("sup_bound_case{i}");
        certified &= sb.certified;
        dominates &= sb.sup_estimate >= sb.true_max;
        if sb.true_max > 0.0 {
            worst_overshoot = worst_overshoot.max(sb.sup_estimate / sb.true_max);
        }
        invariants &= rep.value("inclusion_violations") == Some(0.0) && rep.value("chebyshev_ratio").is_some_and(|c| c <= 1.0 + 1e-9);
        if sc.refinement > 0.0 {
            let fine = sup_case(cfg, spec.refined(sc.refinement), recipe)?;
            let change = (fine.c_s - sb.c_s).abs() / sb.c_s.abs().max(f64::MIN_POSITIVE);
            worst_cs_change = worst_cs_change.max(change);
            rep.set("C_S_refined", fine.c_s);
            rep.set("C_S_change", change);
            rep.refinements.push(fine.report.clone());
        }
        if i == 0 {
            headline = sb.c_s;
        }
        sb.write_trace_csv(sink.file(&format!("sup_trace_case{i}.csv"))?)?;
        reports.push(rep);
    }
    o.check("certified", certified);
    o.check("dominates_true_max", dominates);
    o.check("overshoot", worst_overshoot <= sc.max_overshoot);
    o.check("iteration_invariants", invariants);
    if sc.refinement > 0.0 {
        o.check("C_S_stability", worst_cs_change <= sc.cs_stability);
        o.value("C_S_change", worst_cs_change);
    }
    o.value("overshoot", worst_overshoot);
    o.value("C_S", headline);
    sink.json("sup_bound_report.json", &reports)?;
    Ok(o.finish(headline))
}

fn harnack_case(cfg: &ExperimentConfig, spec: GridSpec) -> Result<(GridField, HarnackCertificate)> {
    let hc = &cfg.harnack;
    let coeffs = RoughCoefficients::from_recipe(spec, &cfg.coefficients)?;
    let (u, _) = positivity_family(&coeffs, hc.params.eta, hc.packet_sigma, hc.params.boundary)?;
    let cert = weak_harnack(&u, &coeffs, &cfg.exponents, &hc.params)?;
    Ok((u, cert))
}

fn harnack(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let hc = &cfg.harnack;
    let mut o = Outcome::new(Campaign::WeakHarnack);
    let spec = cfg.grid.spec()?;
    let (_, cert) = harnack_case(cfg, spec)?;
    o.check("chain_passed", cert.passed);
    o.check("mu_positive", cert.mu > 0.0);
    o.check("sound", cert.mu <= cert.true_min * (1.0 + hc.grid_tol));
    o.value("mu", cert.mu);
    o.value("delta", cert.delta);
    o.value("true_min", cert.true_min);
    o.value("epsilon_data", cert.epsilon_data);
    let mut certs = vec![cert.clone()];
    if hc.refinement > 0.0 {
        let (_, fine) = harnack_case(cfg, spec.refined(hc.refinement))?;
        let change = (fine.mu - cert.mu).abs() / cert.mu.max(f64::MIN_POSITIVE);
        o.check("mu_stability", change <= hc.mu_stability);
        o.check("sound_refined", fine.mu <= fine.true_min * (1.0 + hc.grid_tol));
        o.value("mu_refined", fine.mu);
        o.value("mu_change", change);
        certs.push(fine);
    }
    let rows: Vec<Vec<String>> = certs
        .iter()
        .enumerate()
        .flat_map(|(lvl, c)| c.sweep.iter().map(move |(d, r)| vec![lvl.to_string(), fmt_f64(*d), fmt_f64(*r)]))
        .collect();
    sink.json("harnack_certificate.json", &certs)?;
    sink.csv("harnack_delta_sweep.csv", &["level", "delta", "sup_v_over_G_delta0"], &rows)?;
    Ok(o.finish(cert.mu))
}

fn convergence(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let cc = &cfg.convergence;
    let mut o = Outcome::new(Campaign::Convergence);
    let spec = cfg.grid.spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4));
    let bumps = BumpData::random(&mut rng, cc.bumps, cc.radius, (spec.t.lo, spec.t.hi));
    let pb = SmoothProblem::new((0.0, 0.0), cc.radius, spec.t.lo, bumps.sample(spec), GridField::zeros(spec))?;
    let chi = ball_cutoff(spec, cc.chi_inner, cc.chi_outer);
    let sols = cc.viscosities.iter().map(|&e| viscous_comparison(e, &pb, &chi)).collect::<Result<Vec<_>>>()?;
    let diffs = sols.windows(2).map(|w| l2_distance(&w[0].w, &w[1].w)).collect::<Result<Vec<_>>>()?;
    let decreasing = diffs.windows(2).all(|d| d[1] < d[0]);
    let energies: Vec<f64> = sols.iter().map(|s| s.energy()).collect();
    let spread = |f: &dyn Fn(&crate::kolmogorov::ViscousSolution) -> f64| {
        let v: Vec<f64> = sols.iter().map(f).collect();
        v.iter().cloned().fold(0.0f64, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let worst_spread = spread(&|s| s.l2).max(spread(&|s| s.velocity_gradient_l2)).max(spread(&|s| s.outer_gradient_l2));
    o.check("cauchy_decreasing", decreasing);
    o.check("energy_spread", worst_spread <= cc.max_energy_spread);
    o.value("energy_spread", worst_spread);
    let last = diffs.last().copied().unwrap_or(f64::NAN);
    o.value("last_difference", last);
    let mut rep = EstimateReport::new("convergence", last, diffs.first().copied().unwrap_or(f64::NAN));
    rep.passed = decreasing && worst_spread <= cc.max_energy_spread;
    rep.set("energy_spread", worst_spread);
    let mut rows = Vec::new();
    for (i, s) in sols.iter().enumerate() {
        rep.set(&format!("energy_{i}"), energies[i]);
        rows.push(vec![
            fmt_f64(s.viscosity),
            fmt_f64(s.l2),
            fmt_f64(s.velocity_gradient_l2),
            fmt_f64(s.outer_gradient_l2),
            diffs.get(i).map(|d| fmt_f64(*d)).unwrap_or_default(),
        ]);
    }
    sink.json("convergence_report.json", &rep)?;
    sink.csv("convergence.csv", &["viscosity", "l2", "velocity_gradient_l2", "outer_gradient_l2", "difference_to_next"], &rows)?;
    Ok(o.finish(last))
}

/// Direction a sweep statistic is expected to move in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Nondecreasing,
    Nonincreasing,
}

/// Claimed monotonicity of the headline statistic along `axis`.
pub fn claimed_monotonicity(campaign: Campaign, axis: &str) -> Option<Monotonicity> {
    match (campaign, axis) {
        (Campaign::WeakHarnack, "coefficients.Lambda") => Some(Monotonicity::Nonincreasing),
        (Campaign::WeakHarnack, "harnack.eta") => Some(Monotonicity::Nondecreasing),
        (Campaign::DualSpreading, "dual.eta") => Some(Monotonicity::Nondecreasing),
        _ => None,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub statistic: Option<f64>,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub campaign: String,
    pub axis: String,
    pub statistic: String,
    pub claimed: Option<Monotonicity>,
    /// `None` when nothing is claimed or fewer than two values succeeded.
    pub monotone: Option<bool>,
    pub passed: bool,
    pub rows: Vec<SweepRow>,
}

/// Runs the campaign once per value of `axis`; each run writes into its own
/// subdirectory. Per-value failures are recorded, not propagated.
pub fn sweep(cfg: &ExperimentConfig, axis: &str, values: &[f64], out: &Path) -> Result<SweepSummary> {
    cfg.validate()?;
    if !values.is_empty() {
        cfg.with_field(axis, values[0])?;
    }
    let mut sink = Sink::new(out)?;
    let mut rows = Vec::new();
    for (i, &x) in values.iter().enumerate() {
        let row = match cfg.with_field(axis, x).and_then(|c| run(&c, &out.join(format!("{i:03}")))) {
            Ok(o) => SweepRow { value: x, statistic: Some(o.headline), passed: o.passed, error: None },
            Err(e) => SweepRow { value: x, statistic: None, passed: false, error: Some(e.to_string()) },
        };
        rows.push(row);
    }
    let claimed = claimed_monotonicity(cfg.campaign, axis);
    let stats: Vec<f64> = rows.iter().filter_map(|r| r.statistic).collect();
    let monotone = match claimed {
        Some(_) if stats.len() < 2 => None,
        Some(Monotonicity::Nondecreasing) => Some(stats.windows(2).all(|w| w[1] >= w[0])),
        Some(Monotonicity::Nonincreasing) => Some(stats.windows(2).all(|w| w[1] <= w[0])),
        None => None,
    };
    let passed = rows.iter().all(|r| r.passed) && monotone != Some(false);
    let statistic = cfg.campaign.headline().to_string();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.value),
                r.statistic.map(fmt_f64).unwrap_or_default(),
                r.passed.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    sink.csv("sweep.csv", &[axis, statistic.as_str(), "passed", "error"], &csv_rows)?;
    let summary = SweepSummary { campaign: cfg.campaign.name().into(), axis: axis.into(), statistic, claimed, monotone, passed, rows };
    sink.json("sweep_summary.json", &summary)?;
    Ok(summary)
}

/// Maps campaign outcomes to a process exit code: `0` iff every predicate held.
pub fn exit_code(passed: bool) -> i32 {
    if passed {
        0
    } else {
        1
    }
}
