//! Independent checks: finite-difference gradients, Monte-Carlo steepest
//! feasible descent, and Taylor-remainder scaling.
//!
//! Nothing here calls [`crate::models::gradient`]; finite differences only
//! evaluate losses, and the steepest-descent check works on raw vectors.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{dot, project_complement, OrthonormalBasis, ParamVector};
use crate::models::{self, Batch, LossKind, ModelSpec};
use crate::optimizer::{naive_step, ogpsa_step, Method};
use crate::rng::{self, Rng};
use crate::subspace::{estimate_subspace, EstimatorSettings};
use crate::tasks::{Family, FamilyKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub h: f64,
    /// Relative tolerance per coordinate.
    pub tolerance: f64,
    /// Denominator floor of the relative error, so near-zero coordinates are
    /// compared in absolute terms (`tolerance · floor`).
    pub floor: f64,
    pub execution: Execution,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            h: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
            execution: Execution::default(),
        }
    }
}

/// Central differences `(L(θ + h·eᵢ) − L(θ − h·eᵢ)) / 2h` for every coordinate.
pub fn fd_gradient(
    spec: &ModelSpec,
    kind: &LossKind,
    theta: &ParamVector,
    batch: &Batch,
    fd: &FdConfig,
) -> Result<ParamVector> {
    if !(fd.h.is_finite() && fd.h > 0.0) {
        return Err(Error::config("finite-difference step h must be positive"));
    }
    let coords = fd.execution.map_indexed(theta.len(), |i| {
        let mut probe = theta.clone().into_vec();
        let x = probe[i];
        probe[i] = x + fd.h;
        let plus = models::loss(spec, kind, &ParamVector::new(probe.clone())?, batch)?;
        probe[i] = x - fd.h;
        let minus = models::loss(spec, kind, &ParamVector::new(probe)?, batch)?;
        let d = (plus - minus) / (2.0 * fd.h);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::non_finite(format!("finite-difference probe of coordinate {i}")))
        }
    });
    ParamVector::new(coords.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Largest per-coordinate `|a − n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &ParamVector, numeric: &ParamVector, floor: f64) -> Result<f64> {
    if analytic.len() != numeric.len() {
        return Err(Error::Dimension {
            expected: analytic.len(),
            found: numeric.len(),
        });
    }
    Ok(analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

/// Compares the analytic gradient against central differences.
pub fn check_gradient(
    spec: &ModelSpec,
    kind: &LossKind,
    theta: &ParamVector,
    batch: &Batch,
    fd: &FdConfig,
) -> Result<GradientCheck> {
    let analytic = models::gradient(spec, kind, theta, batch)?;
    let numeric = fd_gradient(spec, kind, theta, batch, fd)?;
    Ok(GradientCheck {
        max_relative_error: max_relative_error(&analytic, &numeric, fd.floor)?,
        tolerance: fd.tolerance,
    })
}

/// Slack allowed below the analytic bound `−‖g̃‖`.
pub const STEEPEST_SLACK: f64 = 1e-9;
/// Tolerance for the attainment of the bound.
pub const ATTAINMENT_TOL: f64 = 1e-12;
/// Largest `|⟨v, u_j⟩|` accepted for a feasible unit direction. Normalising a
/// short projected sample amplifies rounding, so this is looser than
/// [`ATTAINMENT_TOL`].
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SteepestReport {
    pub samples: usize,
    /// Smallest directional derivative `⟨g, v⟩` over sampled feasible unit directions.
    pub min_sampled: f64,
    /// `−‖g̃‖`.
    pub bound: f64,
    pub violations: usize,
    /// `⟨g, v*⟩` for `v* = −g̃/‖g̃‖`.
    pub attained: f64,
    /// Largest `|⟨v, u_j⟩|` over the candidate direction and every sample.
    pub max_infeasibility: f64,
}

impl SteepestReport {
    pub fn attainment_gap(&self) -> f64 {
        (self.attained - self.bound).abs()
    }

    /// Margin by which the sampled minimum stays above `bound − slack`.
    pub fn margin(&self) -> f64 {
        self.min_sampled - (self.bound - STEEPEST_SLACK)
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
            && self.attainment_gap() <= ATTAINMENT_TOL
            && self.max_infeasibility <= FEASIBILITY_TOL
    }
}

/// `g` counts as lying in the span when `‖g̃‖ ≤ SPAN_TOL·‖g‖`.
pub const SPAN_TOL: f64 = 1e-12;

pub type Projector<'a> = &'a (dyn Fn(&ParamVector, &OrthonormalBasis) -> Result<ParamVector> + Sync);

const CHUNK: usize = 256;

/// Monte-Carlo check that no feasible unit direction descends faster than `−g̃/‖g̃‖`.
pub fn steepest_check(
    g: &ParamVector,
    basis: &OrthonormalBasis,
    n_samples: usize,
    rng: &mut Rng,
    execution: Execution,
) -> Result<SteepestReport> {
    steepest_check_with(g, basis, n_samples, rng, execution, &project_complement)
}

/// [`steepest_check`] with a caller-supplied projection, for fault injection.
pub fn steepest_check_with(
    g: &ParamVector,
    basis: &OrthonormalBasis,
    n_samples: usize,
    rng: &mut Rng,
    execution: Execution,
    project: Projector<'_>,
) -> Result<SteepestReport> {
    if n_samples == 0 {
        return Err(Error::Precondition("n_samples must be >= 1".into()));
    }
    let infeasibility = |v: &ParamVector| -> Result<f64> {
        Ok(basis
            .columns()
            .iter()
            .map(|u| dot(v, u).map(f64::abs))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max))
    };
    let g_tilde = project(g, basis)?;
    let gt_norm = g_tilde.norm();
    if gt_norm <= SPAN_TOL * g.norm() {
        return Err(Error::Precondition(
            "gradient lies entirely in the subspace; no feasible descent direction".into(),
        ));
    }
    let bound = -gt_norm;
    let v_star = g_tilde.scaled(-1.0 / gt_norm);
    let attained = dot(g, &v_star)?;
    let star_infeasibility = infeasibility(&v_star)?;

    let base_seed: u64 = rng.gen();
    let chunks = n_samples.div_ceil(CHUNK);
    let d = g.len();
    let per_chunk = execution.map_indexed(chunks, |c| -> Result<(f64, usize, f64)> {
        let mut r = rng::stream(base_seed, c as u64);
        let count = CHUNK.min(n_samples - c * CHUNK);
        let mut min = f64::INFINITY;
        let mut violations = 0;
        let mut worst = 0.0f64;
        for _ in 0..count {
            let z = rng::normal_param(&mut r, d);
            let v = project(&z, basis)?;
            let n = v.norm();
            if n == 0.0 {
                continue;
            }
            let v = v.scaled(1.0 / n);
            let val = dot(g, &v)?;
            if val < bound - STEEPEST_SLACK {
                violations += 1;
            }
            min = min.min(val);
            worst = worst.max(infeasibility(&v)?);
        }
        Ok((min, violations, worst))
    });
    let mut min_sampled = f64::INFINITY;
    let mut violations = 0;
    let mut max_infeasibility = star_infeasibility;
    for r in per_chunk {
        let (m, v, w) = r?;
        min_sampled = min_sampled.min(m);
        violations += v;
        max_infeasibility = max_infeasibility.max(w);
    }
    Ok(SteepestReport {
        samples: n_samples,
        min_sampled,
        bound,
        violations,
        attained,
        max_infeasibility,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub eta: f64,
    /// `|L_ref(θ₁) − L_ref(θ₀)|`.
    pub delta_loss: f64,
    /// Signed change.
    pub signed_delta: f64,
    /// `½‖A_ref Δθ‖²`, computed from the rows of the reference operator.
    pub remainder: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeReport {
    pub method: Method,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log|ΔL|` against `log η` over nonzero rows.
    pub slope: f64,
    pub used_rows: usize,
}

impl SlopeReport {
    /// Largest relative gap between the measured change and the closed-form remainder.
    pub fn remainder_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.signed_delta - r.remainder).abs() / r.remainder.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// One step from `θ₀` per learning rate; reports how the reference-loss change scales with `η`.
///
/// OGPSA steps use a subspace estimated at `θ₀` (fresh, `t = τ`). If every
/// change is exactly zero the slope is reported as 2: the change has no
/// first-order part.
pub fn taylor_scaling(family: &Family, etas: &[f64], method: Method) -> Result<SlopeReport> {
    if family.config.kind != FamilyKind::QuadraticPair {
        return Err(Error::Precondition("taylor_scaling needs a quadratic_pair family".into()));
    }
    if etas.len() < 3 {
        return Err(Error::Precondition("need at least three learning rates".into()));
    }
    if etas.iter().any(|e| !e.is_finite() || *e <= 0.0) || etas.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Precondition("learning rates must be positive and strictly decreasing".into()));
    }
    if method == Method::Replay {
        return Err(Error::Precondition("taylor_scaling compares ogpsa and naive steps".into()));
    }
    let cap = family.task(&family.capability[0])?;
    let safety = family.task("safety")?;
    let theta0 = &family.theta0;
    let subspace = estimate_subspace(
        theta0,
        &[cap],
        &mut rng::stream(family.config.seed, 0),
        &EstimatorSettings::default(),
        0,
    )?;
    let base = cap.loss(theta0, &cap.data)?;
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let next = match method {
            Method::Ogpsa => ogpsa_step(theta0, safety, &safety.data, &subspace, eta)?.0,
            _ => naive_step(theta0, safety, &safety.data, eta)?.0,
        };
        let step = next.sub(theta0)?;
        let signed = cap.loss(&next, &cap.data)? - base;
        let a = &cap.data.inputs;
        let remainder = 0.5
            * (0..a.rows())
                .map(|i| {
                    let s: f64 = a.row(i).iter().zip(step.iter()).map(|(x, y)| x * y).sum();
                    s * s
                })
                .sum::<f64>();
        rows.push(ScalingRow {
            eta,
            delta_loss: signed.abs(),
            signed_delta: signed,
            remainder,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.delta_loss > 0.0)
        .map(|r| (r.eta.ln(), r.delta_loss.ln()))
        .collect();
    let slope = if pts.len() < 2 { 2.0 } else { ols_slope(&pts) };
    Ok(SlopeReport {
        method,
        used_rows: pts.len(),
        rows,
        slope,
    })
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Every supported (model, loss) pair, used to build gradient-check cases.
pub const MODEL_LOSS_PAIRS: [&str; 8] = [
    "quadratic/squared_error",
    "linear_regression/squared_error",
    "logistic_regression/cross_entropy",
    "mlp2-tanh/squared_error",
    "mlp2-relu/squared_error",
    "mlp2-tanh/cross_entropy",
    "softmax_policy/nll_sft",
    "softmax_policy/dpo_pairwise",
];

/// A seeded model, loss, parameter vector and batch.
#[derive(Debug, Clone)]
pub struct GradientCase {
    pub label: String,
    pub spec: ModelSpec,
    pub kind: LossKind,
    pub theta: ParamVector,
    pub batch: Batch,
}

/// Random case for `MODEL_LOSS_PAIRS[pair]`, with small random sizes.
pub fn gradient_case(pair: usize, seed: u64) -> GradientCase {
    use crate::linalg::Matrix;
    use crate::models::{Activation, PreferencePair};
    use rand::Rng as _;

    let mut r = rng::stream(seed, 500 + pair as u64);
    let n = r.gen_range(3..=10);
    let feat = r.gen_range(2..=6);
    let normal_matrix = |r: &mut Rng, rows: usize, cols: usize| {
        Matrix::new(rows, cols, rng::normal_vec(r, rows * cols)).expect("shape")
    };
    let theta_for = |r: &mut Rng, spec: &ModelSpec| {
        ParamVector::new(rng::normal_vec(r, spec.param_dim()).into_iter().map(|x| 0.7 * x).collect())
            .expect("finite")
    };
    let (spec, kind, batch) = match pair {
        0 => {
            let spec = ModelSpec::quadratic(feat);
            let b = Batch::values(normal_matrix(&mut r, n, feat), normal_matrix(&mut r, n, 1));
            (spec, LossKind::SquaredError, b)
        }
        1 => {
            let spec = ModelSpec::linear_regression(feat);
            let b = Batch::values(normal_matrix(&mut r, n, feat), normal_matrix(&mut r, n, 1));
            (spec, LossKind::SquaredError, b)
        }
        2 => {
            let spec = ModelSpec::logistic_regression(feat);
            let labels = (0..n).map(|_| r.gen_range(0..2)).collect();
            let b = Batch::labels(normal_matrix(&mut r, n, feat), labels);
            (spec, LossKind::CrossEntropy, b)
        }
        3 | 4 => {
            let act = if pair == 3 { Activation::Tanh } else { Activation::Relu };
            let (h, o) = (r.gen_range(2..=8), r.gen_range(1..=3));
            let spec = ModelSpec::mlp2(feat, h, o, act);
            let b = Batch::values(normal_matrix(&mut r, n, feat), normal_matrix(&mut r, n, o));
            (spec, LossKind::SquaredError, b)
        }
        5 => {
            let (h, o) = (r.gen_range(2..=8), r.gen_range(2..=4));
            let spec = ModelSpec::mlp2(feat, h, o, Activation::Tanh);
            let labels = (0..n).map(|_| r.gen_range(0..o)).collect();
            let b = Batch::labels(normal_matrix(&mut r, n, feat), labels);
            (spec, LossKind::CrossEntropy, b)
        }
        6 => {
            let v = r.gen_range(4..=8);
            let spec = ModelSpec::softmax_policy(feat, v);
            let labels = (0..n).map(|_| r.gen_range(0..v)).collect();
            let b = Batch::labels(normal_matrix(&mut r, n, feat), labels);
            (spec, LossKind::NllSft, b)
        }
        _ => {
            let v = r.gen_range(4..=8);
            let spec = ModelSpec::softmax_policy(feat, v);
            let pairs = (0..n)
                .map(|i| {
                    let preferred = r.gen_range(0..v);
                    let rejected = (preferred + r.gen_range(1..v)) % v;
                    PreferencePair {
                        context: i,
                        preferred,
                        rejected,
                    }
                })
                .collect();
            let reference = theta_for(&mut r, &spec);
            let b = Batch::pairs(normal_matrix(&mut r, n, feat), pairs, reference);
            (spec, LossKind::dpo(), b)
        }
    };
    let theta = theta_for(&mut r, &spec);
    GradientCase {
        label: format!("{} seed {seed}", MODEL_LOSS_PAIRS[pair.min(7)]),
        spec,
        kind,
        theta,
        batch,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gram_schmidt, Matrix};
    use crate::tasks::make_quadratic_pair;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fd_on_half_norm() {
        let spec = ModelSpec::quadratic(2);
        let b = Batch::values(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Matrix::zeros(2, 1),
        );
        let g = fd_gradient(&spec, &LossKind::SquaredError, &pv(&[1.0, 2.0]), &b, &FdConfig::default()).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-10 && (g[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn planar_steepest_case() {
        let basis = OrthonormalBasis::from_columns(vec![pv(&[1.0, 0.0])]).unwrap();
        let rep = steepest_check(&pv(&[1.0, 1.0]), &basis, 100, &mut rng::stream(0, 0), Execution::Sequential).unwrap();
        assert_eq!(rep.bound, -1.0);
        assert_eq!(rep.attained, -1.0);
        assert!(rep.passed());
    }

    #[test]
    fn empty_basis_is_unconstrained() {
        let g = pv(&[3.0, -4.0, 0.0]);
        let rep = steepest_check(&g, &OrthonormalBasis::empty(), 500, &mut rng::stream(1, 0), Execution::Parallel).unwrap();
        assert_eq!(rep.bound, -5.0);
        assert!(rep.passed());
    }

    #[test]
    fn gradient_in_span_is_a_precondition_error() {
        let basis = gram_schmidt(&[pv(&[1.0, 1.0])], 1e-9, 0.0).unwrap();
        let err = steepest_check(&pv(&[2.0, 2.0]), &basis, 10, &mut rng::stream(0, 0), Execution::Sequential);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn skipping_projection_is_caught() {
        let basis = OrthonormalBasis::from_columns(vec![pv(&[1.0, 0.0, 0.0])]).unwrap();
        let identity = |g: &ParamVector, _: &OrthonormalBasis| Ok(g.clone());
        let rep = steepest_check_with(
            &pv(&[1.0, 1.0, 0.5]),
            &basis,
            200,
            &mut rng::stream(0, 0),
            Execution::Sequential,
            &identity,
        )
        .unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn taylor_scaling_slopes() {
        let fam = make_quadratic_pair(10, FRAC_PI_4, 0).unwrap();
        let etas = [1e-2, 1e-3, 1e-4];
        let o = taylor_scaling(&fam, &etas, Method::Ogpsa).unwrap();
        assert!((o.slope - 2.0).abs() <= 0.2, "{o:?}");
        assert!(o.remainder_error() <= 1e-6, "{o:?}");
        let n = taylor_scaling(&fam, &etas, Method::Naive).unwrap();
        assert!((n.slope - 1.0).abs() <= 0.2, "{n:?}");
        let orth = make_quadratic_pair(10, FRAC_PI_2, 0).unwrap();
        let n = taylor_scaling(&orth, &etas, Method::Naive).unwrap();
        assert!((n.slope - 2.0).abs() <= 0.2, "{n:?}");
    }

    #[test]
    fn taylor_scaling_preconditions() {
        let fam = make_quadratic_pair(4, FRAC_PI_4, 0).unwrap();
        assert!(taylor_scaling(&fam, &[1e-2, 1e-3], Method::Ogpsa).is_err());
        assert!(taylor_scaling(&fam, &[1e-3, 1e-2, 1e-4], Method::Ogpsa).is_err());
    }
}
