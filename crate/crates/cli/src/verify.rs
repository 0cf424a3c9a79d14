//! The property matrix behind `ogpsa verify`.
//!
//! Each check belongs to one acceptance criterion and reports a margin:
//! how far the measured quantity is from its limit, positive when it passes.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};
use std::fmt;

use ogpsa::linalg::{dot, gram_schmidt, project_complement, OrthonormalBasis, ParamVector, Threshold};
use ogpsa::metrics::alignment_tax;
use ogpsa::oracle::{self, FdConfig, MODEL_LOSS_PAIRS};
use ogpsa::rng;
use ogpsa::tasks::make_quadratic_pair;
use ogpsa::{make_family, presets, Execution, Family, FamilyConfig, FamilyKind, Method, RefreshPeriod};

use crate::commands::{expand_legs, run_experiment, Axis};
use crate::config::Experiment;

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Offsets the seeds of randomly drawn vectors, bases and models.
    pub seed: u64,
    /// Replace projection by the identity inside the orthogonality and
    /// steepest-descent checks, which must then fail.
    pub inject_skip_projection: bool,
    pub execution: Execution,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: margin {:.3e}; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.margin,
            self.detail
        )
    }
}

fn check(criterion: u8, name: &str, margin: f64, detail: String) -> Check {
    Check {
        criterion,
        name: name.into(),
        passed: margin >= 0.0,
        margin,
        detail,
    }
}

fn failed(criterion: u8, name: &str, err: impl fmt::Display) -> Check {
    Check {
        criterion,
        name: name.into(),
        passed: false,
        margin: f64::NEG_INFINITY,
        detail: format!("error: {err}"),
    }
}

type Projector = fn(&ParamVector, &OrthonormalBasis) -> ogpsa::Result<ParamVector>;

fn identity(g: &ParamVector, _: &OrthonormalBasis) -> ogpsa::Result<ParamVector> {
    Ok(g.clone())
}

fn projector(opts: &VerifyOptions) -> Projector {
    if opts.inject_skip_projection {
        identity
    } else {
        project_complement
    }
}

/// Runs every check in criterion order.
pub fn run_all(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    out.extend(orthogonality(opts));
    out.push(rank_filtering(opts));
    out.push(gradients(opts));
    out.push(steepest(opts));
    out.extend(taylor(opts));
    out.extend(reductions(opts));
    out.extend(tax_mitigation(opts));
    out.extend(ablations(opts));
    out.extend(determinism(opts));
    out
}

/// Criterion 1: basis orthonormality and projection identities.
pub fn orthogonality(opts: &VerifyOptions) -> Vec<Check> {
    let project = projector(opts);
    let cells: Vec<(usize, usize, u64)> = [10usize, 100, 1000]
        .iter()
        .flat_map(|&d| (1..=8).flat_map(move |m| (0..100u64).map(move |s| (d, m, s))))
        .collect();
    // (gram, orth/‖g‖, contraction excess, idempotence, pythagoras)
    let worst = opts.execution.map_slice(&cells, |&(d, m, s)| -> ogpsa::Result<[f64; 5]> {
        let mut r = rng::stream(opts.seed.wrapping_add(s), (d * 16 + m) as u64);
        let cands: Vec<_> = (0..m).map(|_| rng::normal_param(&mut r, d)).collect();
        let basis = gram_schmidt(&cands, Threshold::default().resolve(&cands), 0.0)?;
        let cols = basis.columns();
        let mut gram: f64 = 0.0;
        for (i, a) in cols.iter().enumerate() {
            for (j, b) in cols.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                gram = gram.max((dot(a, b)? - target).abs());
            }
        }
        let g = rng::normal_param(&mut r, d);
        let gn = g.norm();
        let gt = project(&g, &basis)?;
        let mut orth: f64 = 0.0;
        let mut along = 0.0;
        for u in cols {
            orth = orth.max(dot(&gt, u)?.abs() / gn);
            along += dot(&g, u)?.powi(2);
        }
        let twice = project(&gt, &basis)?;
        let idem = twice.max_abs_diff(&gt)?;
        let pyth = (gn * gn - gt.norm().powi(2) - along).abs() / (gn * gn);
        Ok([gram, orth, gt.norm() - gn, idem, pyth])
    });
    let mut w = [f64::NEG_INFINITY; 5];
    for r in worst {
        match r {
            Ok(v) => (0..5).for_each(|i| w[i] = w[i].max(v[i])),
            Err(e) => return vec![failed(1, "orthogonality suite", e)],
        }
    }
    let n = cells.len();
    vec![
        check(1, "Gram matrix UᵀU = I (1e-10)", 1e-10 - w[0], format!("worst {:.2e} over {n} bases", w[0])),
        check(
            1,
            "projection orthogonality (1e-8·‖g‖)",
            1e-8 - w[1],
            format!("worst |⟨g̃,u⟩|/‖g‖ = {:.2e}", w[1]),
        ),
        check(1, "norm contraction ‖g̃‖ ≤ ‖g‖", 0.0 - w[2], format!("worst ‖g̃‖−‖g‖ = {:.2e}", w[2])),
        check(1, "idempotence (1e-12)", 1e-12 - w[3], format!("worst {:.2e}", w[3])),
        check(1, "Pythagoras (1e-9 rel)", 1e-9 - w[4], format!("worst {:.2e}", w[4])),
    ]
}

/// Criterion 2: exact rank recovery from dependent candidate sets.
pub fn rank_filtering(opts: &VerifyOptions) -> Check {
    let cells: Vec<(usize, u64)> = (1..=5).flat_map(|r| (0..50u64).map(move |s| (r, s))).collect();
    let res = opts.execution.map_slice(&cells, |&(rank, s)| -> ogpsa::Result<bool> {
        let d = 20;
        let mut r = rng::stream(opts.seed.wrapping_add(s), 700 + rank as u64);
        let gens: Vec<ParamVector> = (0..rank)
            .map(|_| {
                let v = rng::normal_param(&mut r, d);
                v.scaled(1.0 / v.norm())
            })
            .collect();
        let cands: Vec<ParamVector> = (0..8)
            .map(|_| {
                let mut acc = ParamVector::zeros(d);
                for gv in &gens {
                    acc = acc.add_scaled(rng::normal(&mut r), gv)?;
                }
                Ok(acc)
            })
            .collect::<ogpsa::Result<_>>()?;
        Ok(gram_schmidt(&cands, 1e-6, 0.0)?.rank() == rank)
    });
    let mut failures = 0;
    for r in res {
        match r {
            Ok(true) => {}
            Ok(false) => failures += 1,
            Err(e) => return failed(2, "rank filtering", e),
        }
    }
    check(
        2,
        "rank filtering M′ = r (r ≤ 5, M = 8)",
        0.0 - failures as f64,
        format!("{failures} of {} sets misranked", cells.len()),
    )
}

/// Criterion 3: analytic gradients against central differences.
pub fn gradients(opts: &VerifyOptions) -> Check {
    let cells: Vec<(usize, u64)> = (0..MODEL_LOSS_PAIRS.len())
        .flat_map(|p| (0..20u64).map(move |s| (p, s)))
        .collect();
    let fd = FdConfig {
        execution: Execution::Sequential,
        ..FdConfig::default()
    };
    let res = opts.execution.map_slice(&cells, |&(p, s)| {
        let c = oracle::gradient_case(p, opts.seed.wrapping_add(s));
        oracle::check_gradient(&c.spec, &c.kind, &c.theta, &c.batch, &fd).map(|r| (c.label, r.max_relative_error))
    });
    let mut worst = (String::new(), 0.0f64);
    for r in res {
        match r {
            Ok((label, e)) if e >= worst.1 => worst = (label, e),
            Ok(_) => {}
            Err(e) => return failed(3, "finite-difference gradients", e),
        }
    }
    check(
        3,
        "finite-difference gradients (1e-4 rel)",
        fd.tolerance - worst.1,
        format!("{} cases, worst {:.2e} ({})", cells.len(), worst.1, worst.0),
    )
}

/// Criterion 4: no feasible direction beats `−g̃/‖g̃‖`.
pub fn steepest(opts: &VerifyOptions) -> Check {
    let project = projector(opts);
    let cells: Vec<(usize, usize)> = [2usize, 10, 50]
        .iter()
        .flat_map(|&d| [0usize, 1, 3, 5].into_iter().filter(move |&m| m < d).map(move |m| (d, m)))
        .collect();
    let mut worst_margin = f64::INFINITY;
    let mut violations = 0;
    let mut worst_gap: f64 = 0.0;
    let mut worst_infeasible: f64 = 0.0;
    for &(d, m) in &cells {
        let mut r = rng::stream(opts.seed, 800 + (d * 8 + m) as u64);
        let cands: Vec<_> = (0..m).map(|_| rng::normal_param(&mut r, d)).collect();
        let basis = match gram_schmidt(&cands, 1e-8, 0.0) {
            Ok(b) => b,
            Err(e) => return failed(4, "steepest feasible descent", e),
        };
        let g = rng::normal_param(&mut r, d);
        let rep = match oracle::steepest_check_with(&g, &basis, 10_000, &mut r, opts.execution, &project) {
            Ok(rep) => rep,
            Err(e) => return failed(4, "steepest feasible descent", e),
        };
        worst_margin = worst_margin.min(rep.margin());
        violations += rep.violations;
        worst_gap = worst_gap.max(rep.attainment_gap());
        worst_infeasible = worst_infeasible.max(rep.max_infeasibility);
    }
    let margin = worst_margin
        .min(oracle::ATTAINMENT_TOL - worst_gap)
        .min(oracle::FEASIBILITY_TOL - worst_infeasible)
        .min(if violations == 0 { f64::INFINITY } else { 0.0 - violations as f64 });
    check(
        4,
        "steepest feasible descent (10 000 samples per cell)",
        margin,
        format!(
            "{} cells, {violations} violations, min slack {worst_margin:.2e}, attainment gap {worst_gap:.2e}, infeasibility {worst_infeasible:.2e}",
            cells.len()
        ),
    )
}

/// Criterion 5: Taylor scaling of the reference-loss change.
pub fn taylor(opts: &VerifyOptions) -> Vec<Check> {
    let etas = [1e-2, 1e-3, 1e-4];
    let fam = match make_quadratic_pair(10, FRAC_PI_4, opts.seed) {
        Ok(f) => f,
        Err(e) => return vec![failed(5, "taylor scaling", e)],
    };
    let o = oracle::taylor_scaling(&fam, &etas, Method::Ogpsa);
    let n = oracle::taylor_scaling(&fam, &etas, Method::Naive);
    let halved = oracle::taylor_scaling(&fam, &[2e-3, 1e-3, 5e-4], Method::Ogpsa);
    match (o, n, halved) {
        (Ok(o), Ok(n), Ok(h)) => {
            let ratio_err = h
                .rows
                .windows(2)
                .map(|w| (w[0].signed_delta / w[1].signed_delta / 4.0 - 1.0).abs())
                .fold(0.0, f64::max);
            vec![
                check(5, "ogpsa slope 2.0 ± 0.2", 0.2 - (o.slope - 2.0).abs(), format!("slope {:.6}", o.slope)),
                check(5, "naive slope 1.0 ± 0.2", 0.2 - (n.slope - 1.0).abs(), format!("slope {:.6}", n.slope)),
                check(
                    5,
                    "closed-form remainder ½‖A₁Δθ‖² (1e-6 rel)",
                    1e-6 - o.remainder_error(),
                    format!("worst {:.2e}", o.remainder_error()),
                ),
                check(5, "halving η quarters the change (1e-6 rel)", 1e-6 - ratio_err, format!("worst {ratio_err:.2e}")),
            ]
        }
        (o, n, h) => {
            let e = o.err().or(n.err()).or(h.err()).expect("one failed");
            vec![failed(5, "taylor scaling", e)]
        }
    }
}

/// Criterion 6: reduction identities, bitwise.
pub fn reductions(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    for kind in [FamilyKind::QuadraticPair, FamilyKind::RegressionMlp] {
        let mut fc = FamilyConfig::default_for(kind, opts.seed);
        if kind == FamilyKind::QuadraticPair {
            fc.alpha = FRAC_PI_3;
        }
        let family = match make_family(&fc) {
            Ok(f) => f,
            Err(e) => {
                out.push(failed(6, "reduction identities", e));
                continue;
            }
        };
        let mut base = presets::train_config(kind, Method::Naive, opts.seed);
        base.stages.truncate(1);
        base.stages[0].steps = 100;
        base.execution = opts.execution;
        let mut no_refs = base.with_method(Method::Ogpsa);
        no_refs.reference_tasks.clear();
        let mut no_lambda = base.with_method(Method::Replay);
        no_lambda.replay_lambda = 0.0;
        let runs = (ogpsa::train(&base, &family), ogpsa::train(&no_refs, &family), ogpsa::train(&no_lambda, &family));
        let (naive, ogpsa_m0, replay_l0) = match runs {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (a, b, c) => {
                let e = a.err().or(b.err()).or(c.err()).expect("one failed");
                out.push(failed(6, "reduction identities", e));
                continue;
            }
        };
        let same_path = |r: &ogpsa::TrainResult| {
            r.theta_final == naive.theta_final
                && r.records.iter().zip(&naive.records).all(|(a, b)| {
                    a.safety_loss.to_bits() == b.safety_loss.to_bits()
                        && a.ref_losses == b.ref_losses
                        && a.g_norm.to_bits() == b.g_norm.to_bits()
                        && a.g_tilde_norm.to_bits() == b.g_tilde_norm.to_bits()
                })
        };
        for (name, r) in [("ogpsa M=0 ≡ naive", &ogpsa_m0), ("replay λ=0 ≡ naive", &replay_l0)] {
            let ok = same_path(r);
            let diff = r.theta_final.max_abs_diff(&naive.theta_final).unwrap_or(f64::INFINITY);
            out.push(check(
                6,
                &format!("{name} ({kind}, 100 steps)"),
                if ok { 0.0 } else { -diff.max(f64::MIN_POSITIVE) },
                format!("max |Δθ_T| = {diff:e}"),
            ));
        }
    }
    out
}

/// Recorded first-run values for the alignment-tax comparison.
pub const GOLDENS: &str = include_str!("../goldens/alignment_tax.csv");
/// Relative tolerance against the goldens.
pub const GOLDEN_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Golden {
    pub family: String,
    pub seed: u64,
    pub method: String,
    pub quantity: String,
    pub value: f64,
}

pub fn parse_goldens(text: &str) -> Vec<Golden> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let c: Vec<&str> = l.split(',').map(str::trim).collect();
            Some(Golden {
                family: c.first()?.to_string(),
                seed: c.get(1)?.parse().ok()?,
                method: c.get(2)?.to_string(),
                quantity: c.get(3)?.to_string(),
                value: c.get(4)?.parse().ok()?,
            })
        })
        .collect()
}

/// Measured Δ_tax per probe and safety gain for every method on one family seed.
pub fn measure_tax(kind: FamilyKind, seed: u64, execution: Execution) -> ogpsa::Result<Vec<Golden>> {
    let family = make_family(&FamilyConfig::default_for(kind, seed))?;
    let mut out = Vec::new();
    for m in Method::ALL {
        let mut cfg = presets::train_config(kind, m, seed);
        cfg.execution = execution;
        let r = ogpsa::train(&cfg, &family)?;
        let rep = alignment_tax(&r, &family)?;
        let row = |quantity: String, value: f64| Golden {
            family: kind.to_string(),
            seed,
            method: m.to_string(),
            quantity,
            value,
        };
        for t in &rep.tasks {
            out.push(row(format!("delta_tax_{}", t.name), t.delta_tax));
        }
        out.push(row("safety_gain".into(), rep.safety_gain));
    }
    Ok(out)
}

/// The goldens file body for the current code, seeds 0-2 of both ML families.
pub fn goldens_csv(execution: Execution) -> ogpsa::Result<String> {
    let mut s = String::from("family,seed,method,quantity,value\n");
    for kind in [FamilyKind::RegressionMlp, FamilyKind::PolicySftDpo] {
        for seed in 0..3 {
            for g in measure_tax(kind, seed, execution)? {
                s.push_str(&format!("{},{},{},{},{:?}\n", g.family, g.seed, g.method, g.quantity, g.value));
            }
        }
    }
    Ok(s)
}

/// Criterion 7: ogpsa beats naive on every probe, keeps most of the safety gain, and matches the goldens.
pub fn tax_mitigation(opts: &VerifyOptions) -> Vec<Check> {
    let cells: Vec<(FamilyKind, u64)> = [FamilyKind::RegressionMlp, FamilyKind::PolicySftDpo]
        .iter()
        .flat_map(|&k| (0..3u64).map(move |s| (k, s)))
        .collect();
    let measured = opts.execution.map_slice(&cells, |&(k, s)| measure_tax(k, s, opts.execution));
    let mut all = Vec::new();
    for m in measured {
        match m {
            Ok(v) => all.extend(v),
            Err(e) => return vec![failed(7, "alignment-tax mitigation", e)],
        }
    }
    let get = |fam: &str, seed: u64, method: &str, q: &str| {
        all.iter()
            .find(|g| g.family == fam && g.seed == seed && g.method == method && g.quantity == q)
            .map(|g| g.value)
    };
    let mut out = Vec::new();
    for kind in [FamilyKind::RegressionMlp, FamilyKind::PolicySftDpo] {
        let fam = kind.to_string();
        let mut tax_margin = f64::INFINITY;
        let mut gain_margin = f64::INFINITY;
        let mut detail = Vec::new();
        for seed in 0..3u64 {
            for g in all.iter().filter(|g| g.family == fam && g.seed == seed && g.method == "ogpsa") {
                if let Some(probe) = g.quantity.strip_prefix("delta_tax_") {
                    let naive = get(&fam, seed, "naive", &g.quantity).unwrap_or(f64::NAN);
                    tax_margin = tax_margin.min(naive - g.value);
                    detail.push(format!("s{seed} {probe} {:.4}<{:.4}", g.value, naive));
                }
            }
            let og = get(&fam, seed, "ogpsa", "safety_gain").unwrap_or(f64::NAN);
            let nv = get(&fam, seed, "naive", "safety_gain").unwrap_or(f64::NAN);
            gain_margin = gain_margin.min(og / nv - 0.7);
        }
        out.push(check(
            7,
            &format!("Δ_tax(ogpsa) < Δ_tax(naive), {fam}, seeds 0-2"),
            if tax_margin > 0.0 { tax_margin } else { tax_margin.min(-f64::MIN_POSITIVE) },
            detail.join(", "),
        ));
        out.push(check(
            7,
            &format!("safety_gain(ogpsa) ≥ 70% of naive, {fam}"),
            gain_margin,
            format!("worst ratio {:.3}", gain_margin + 0.7),
        ));
    }
    let goldens = parse_goldens(GOLDENS);
    let mut worst = 0.0f64;
    let mut missing = 0;
    for g in &goldens {
        match get(&g.family, g.seed, &g.method, &g.quantity) {
            Some(v) => worst = worst.max((v - g.value).abs() / g.value.abs().max(1e-12)),
            None => missing += 1,
        }
    }
    let expected = all.len();
    out.push(check(
        7,
        "recorded goldens within 5%",
        if goldens.len() < expected || missing > 0 { -1.0 } else { GOLDEN_TOL - worst },
        format!("{} goldens, {missing} unmatched, worst relative deviation {worst:.2e}", goldens.len()),
    ));
    out
}

/// Total tax per leg of a sweep on the preset experiment of `kind`, seed 0.
pub fn sweep_taxes(kind: FamilyKind, axis: Axis, values: &[&str], execution: Execution) -> Result<Vec<(String, f64)>, String> {
    let exp = Experiment::preset(kind, 0);
    let values: Vec<String> = values.iter().map(|s| s.to_string()).collect();
    let shared = if axis == Axis::Refsize {
        None
    } else {
        Some(make_family(&exp.family).map_err(|e| e.to_string())?)
    };
    let caps = shared.as_ref().map(|f: &Family| f.capability.clone()).unwrap_or_default();
    let legs = expand_legs(&exp, axis, &values, &caps).map_err(|e| e.to_string())?;
    let res = execution.map_slice(&legs, |leg| -> Result<(String, f64), String> {
        let owned;
        let fam = match &shared {
            Some(f) => f,
            None => {
                owned = make_family(&leg.experiment.family).map_err(|e| e.to_string())?;
                &owned
            }
        };
        let out = run_experiment(&leg.experiment, fam, execution).map_err(|e| e.to_string())?;
        Ok((leg.label.clone(), out.report.total_tax()))
    });
    res.into_iter().collect()
}

fn fmt_legs(v: &[(String, f64)]) -> String {
    v.iter().map(|(l, t)| format!("{l}={t:.4}")).collect::<Vec<_>>().join(", ")
}

/// Criterion 8: K, M and reference-size ablation trends.
pub fn ablations(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    for kind in [FamilyKind::PolicySftDpo, FamilyKind::RegressionMlp] {
        match sweep_taxes(kind, Axis::K, &["2", "5", "10", "inf"], opts.execution) {
            Ok(v) => {
                let best = v.iter().filter(|(l, _)| l != "inf").map(|x| x.1).fold(f64::INFINITY, f64::min);
                let inf = v.iter().find(|(l, _)| l == "inf").map_or(f64::NAN, |x| x.1);
                out.push(check(
                    8,
                    &format!("K=inf retains worst ({kind})"),
                    strict(inf - best),
                    fmt_legs(&v),
                ));
            }
            Err(e) => out.push(failed(8, &format!("K sweep ({kind})"), e)),
        }
        match sweep_taxes(kind, Axis::M, &["0", "1", "2"], opts.execution) {
            Ok(v) => {
                let two = v.iter().find(|(l, _)| l.starts_with("2:")).map_or(f64::NAN, |x| x.1);
                let ones = v.iter().filter(|(l, _)| l.starts_with("1:")).map(|x| x.1).fold(f64::INFINITY, f64::min);
                out.push(check(
                    8,
                    &format!("M=2 weakly dominates each M=1 ({kind})"),
                    ones - two,
                    fmt_legs(&v),
                ));
            }
            Err(e) => out.push(failed(8, &format!("M sweep ({kind})"), e)),
        }
        match sweep_taxes(kind, Axis::Refsize, &["50", "100", "200"], opts.execution) {
            Ok(v) => {
                let hi = v.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
                let lo = v.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
                out.push(check(
                    8,
                    &format!("refsize Δ_tax varies < 2× ({kind})"),
                    strict(2.0 - hi / lo),
                    format!("{} (ratio {:.3})", fmt_legs(&v), hi / lo),
                ));
            }
            Err(e) => out.push(failed(8, &format!("refsize sweep ({kind})"), e)),
        }
    }
    out
}

/// Maps a strict inequality margin so that zero fails.
fn strict(m: f64) -> f64 {
    if m > 0.0 {
        m
    } else {
        m.min(-f64::MIN_POSITIVE)
    }
}

/// Criterion 9: identical outputs on repeated runs and across execution modes.
pub fn determinism(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    for kind in [FamilyKind::QuadraticPair, FamilyKind::PolicySftDpo] {
        let mut exp = Experiment::preset(kind, opts.seed);
        exp.train.refresh = RefreshPeriod::Every(5);
        let render = |execution: Execution| -> Result<Vec<(String, String)>, String> {
            let fam = make_family(&exp.family).map_err(|e| e.to_string())?;
            Ok(run_experiment(&exp, &fam, execution).map_err(|e| e.to_string())?.files)
        };
        match (render(opts.execution), render(opts.execution), render(Execution::Sequential)) {
            (Ok(a), Ok(b), Ok(c)) => {
                let differ = a.iter().zip(&b).filter(|(x, y)| x != y).count()
                    + a.iter().zip(&c).filter(|(x, y)| x != y).count();
                out.push(check(
                    9,
                    &format!("repeat runs bitwise identical ({kind})"),
                    0.0 - differ as f64,
                    format!("{} files compared across 3 runs, {differ} differ", a.len()),
                ));
            }
            (a, b, c) => {
                let e = a.err().or(b.err()).or(c.err()).expect("one failed");
                out.push(failed(9, "determinism", e));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goldens_parse() {
        let g = parse_goldens("family,seed,method,quantity,value\nregression_mlp,0,ogpsa,safety_gain,0.5\n");
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].value, 0.5);
    }

    #[test]
    fn injected_fault_fails_projection_checks() {
        let opts = VerifyOptions {
            inject_skip_projection: true,
            ..VerifyOptions::default()
        };
        assert!(!steepest(&opts).passed);
        let ok = VerifyOptions::default();
        assert!(steepest(&ok).passed);
        assert!(rank_filtering(&ok).passed);
    }
}
