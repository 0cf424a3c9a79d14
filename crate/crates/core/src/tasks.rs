//! Synthetic task families with controllable interference between a safety
//! objective and one or more capability (reference) objectives.
//!
//! Three families are provided:
//!
//! * `quadratic_pair`: analytic least-squares losses whose gradients at `θ₀`
//!   meet at an exact, chosen angle. The capability loss carries one extra
//!   zero-residual curvature row so that a step orthogonal to its gradient
//!   still changes it at second order.
//! * `regression_mlp`: two capability teachers that read disjoint feature
//!   blocks plus a shared block; the safety teacher rotates the shared-block
//!   map by `alpha`. `θ₀` is a tanh MLP pre-trained on the capability data.
//! * `policy_sft_dpo`: a linear softmax policy pre-trained on two
//!   capability labelings, then aligned by an SFT stage and a DPO stage on a
//!   disjoint context region that shares features with the capability data.
//!
//! Every dataset is drawn from its own seeded stream, and reference pools are
//! generated row by row, so a smaller pool is a prefix of a larger one.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::{dot_slices, Matrix, ParamVector};
use crate::models::{
    self, Activation, Batch, LossKind, ModelSpec, PreferencePair, Targets, DEFAULT_BETA,
};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    QuadraticPair,
    RegressionMlp,
    PolicySftDpo,
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyKind::QuadraticPair => "quadratic_pair",
            FamilyKind::RegressionMlp => "regression_mlp",
            FamilyKind::PolicySftDpo => "policy_sft_dpo",
        })
    }
}

impl FromStr for FamilyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic_pair" => Ok(FamilyKind::QuadraticPair),
            "regression_mlp" => Ok(FamilyKind::RegressionMlp),
            "policy_sft_dpo" => Ok(FamilyKind::PolicySftDpo),
            other => Err(Error::config(format!("unknown family kind `{other}`"))),
        }
    }
}

/// Generator parameters. `dim` is the parameter dimension for
/// `quadratic_pair` and the width of one feature block otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyConfig {
    pub kind: FamilyKind,
    pub dim: usize,
    /// Conflict angle in radians, `[0, π/2]`.
    pub alpha: f64,
    pub noise_sigma: f64,
    /// Reference pool size per capability facet.
    pub n_capability: usize,
    pub n_safety: usize,
    /// Held-out probe size per task.
    pub n_probe: usize,
    /// Pre-training set size per capability facet.
    pub n_pretrain: usize,
    pub hidden: usize,
    pub vocab: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub beta: f64,
    pub seed: u64,
}

impl FamilyConfig {
    pub fn quadratic_pair(dim: usize, alpha: f64, seed: u64) -> Self {
        FamilyConfig {
            kind: FamilyKind::QuadraticPair,
            dim,
            alpha,
            noise_sigma: 0.0,
            n_capability: 1,
            n_safety: 1,
            n_probe: 1,
            n_pretrain: 0,
            hidden: 0,
            vocab: 0,
            pretrain_steps: 0,
            pretrain_lr: 0.0,
            beta: DEFAULT_BETA,
            seed,
        }
    }

    pub fn regression_mlp(seed: u64) -> Self {
        FamilyConfig {
            kind: FamilyKind::RegressionMlp,
            dim: 3,
            alpha: FRAC_PI_3,
            noise_sigma: 0.05,
            n_capability: 200,
            n_safety: 200,
            n_probe: 200,
            n_pretrain: 200,
            hidden: 16,
            vocab: 0,
            pretrain_steps: 3000,
            pretrain_lr: 0.1,
            beta: DEFAULT_BETA,
            seed,
        }
    }

    pub fn policy_sft_dpo(seed: u64) -> Self {
        FamilyConfig {
            kind: FamilyKind::PolicySftDpo,
            dim: 4,
            alpha: FRAC_PI_2,
            noise_sigma: 0.0,
            n_capability: 200,
            n_safety: 200,
            n_probe: 200,
            n_pretrain: 400,
            hidden: 0,
            vocab: 8,
            pretrain_steps: 500,
            pretrain_lr: 0.5,
            beta: DEFAULT_BETA,
            seed,
        }
    }

    pub fn default_for(kind: FamilyKind, seed: u64) -> Self {
        match kind {
            FamilyKind::QuadraticPair => Self::quadratic_pair(10, std::f64::consts::FRAC_PI_4, seed),
            FamilyKind::RegressionMlp => Self::regression_mlp(seed),
            FamilyKind::PolicySftDpo => Self::policy_sft_dpo(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(0.0..=FRAC_PI_2).contains(&self.alpha) {
            return bad("alpha must lie in [0, pi/2]");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        match self.kind {
            FamilyKind::QuadraticPair => {
                if self.dim < 2 {
                    return bad("quadratic_pair needs dim >= 2");
                }
            }
            FamilyKind::RegressionMlp | FamilyKind::PolicySftDpo => {
                if self.dim == 0 {
                    return bad("dim must be positive");
                }
                if self.n_capability == 0 || self.n_safety == 0 || self.n_probe == 0 || self.n_pretrain == 0 {
                    return bad("sample counts must be positive");
                }
                if !(self.pretrain_lr.is_finite() && self.pretrain_lr >= 0.0) {
                    return bad("pretrain_lr must be non-negative");
                }
                if self.kind == FamilyKind::RegressionMlp && self.hidden == 0 {
                    return bad("regression_mlp needs hidden >= 1");
                }
                if self.kind == FamilyKind::PolicySftDpo {
                    if self.vocab < 4 {
                        return bad("policy_sft_dpo needs vocab >= 4");
                    }
                    if !(self.beta.is_finite() && self.beta > 0.0) {
                        return bad("beta must be positive");
                    }
                }
            }
        }
        Ok(())
    }
}

/// A dataset plus the loss evaluated on it.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiableTask {
    pub name: String,
    pub spec: ModelSpec,
    pub kind: LossKind,
    pub data: Batch,
}

impl DifferentiableTask {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Draws a mini-batch. The full dataset (in order, no draws) when `size`
    /// equals its length, without replacement when smaller, with replacement
    /// when larger.
    pub fn sample(&self, rng: &mut Rng, size: usize) -> Result<Batch> {
        let n = self.data.len();
        if size == 0 {
            return Err(Error::config(format!("task {}: batch size must be positive", self.name)));
        }
        if n == 0 {
            return Err(Error::config(format!("task {} has no data", self.name)));
        }
        if size == n {
            return Ok(self.data.clone());
        }
        let idx: Vec<usize> = if size < n {
            index::sample(rng, n, size).into_vec()
        } else {
            (0..size).map(|_| rng.gen_range(0..n)).collect()
        };
        Ok(self.data.select(&idx))
    }

    pub fn loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        models::loss(&self.spec, &self.kind, theta, batch)
    }

    pub fn gradient(&self, theta: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        models::gradient(&self.spec, &self.kind, theta, batch)
    }

    pub fn loss_and_gradient(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        models::loss_and_gradient(&self.spec, &self.kind, theta, batch)
    }

    /// Copy whose data carries `reference` as the frozen DPO reference policy.
    pub fn with_reference(&self, reference: ParamVector) -> Self {
        DifferentiableTask {
            data: self.data.clone().with_ref_params(reference),
            ..self.clone()
        }
    }
}

/// Fixed held-out evaluation data; never used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub kind: LossKind,
    pub batch: Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainLog {
    pub steps: usize,
    pub lr: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub config: FamilyConfig,
    pub spec: ModelSpec,
    pub theta0: ParamVector,
    pub tasks: Vec<DifferentiableTask>,
    /// Names of the capability (reference) tasks, in facet order.
    pub capability: Vec<String>,
    /// One probe per capability task, same order.
    pub probes: Vec<Probe>,
    pub safety_probe: Probe,
    pub pretrain: PretrainLog,
}

impl Family {
    pub fn task(&self, name: &str) -> Result<&DifferentiableTask> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::config(format!("family has no task named `{name}`")))
    }

    pub fn task_names(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn probe(&self, name: &str) -> Result<&Probe> {
        self.probes
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::config(format!("family has no probe for `{name}`")))
    }

    pub fn probe_loss(&self, probe: &Probe, theta: &ParamVector) -> Result<f64> {
        models::loss(&self.spec, &probe.kind, theta, &probe.batch)
    }
}

pub fn make_family(config: &FamilyConfig) -> Result<Family> {
    config.validate()?;
    match config.kind {
        FamilyKind::QuadraticPair => make_quadratic_pair(config.dim, config.alpha, config.seed),
        FamilyKind::RegressionMlp => build_regression(config),
        FamilyKind::PolicySftDpo => build_policy(config),
    }
}

/// `(cos α, sin α)` with the endpoints `0` and `π/2` snapped to exact values.
pub fn exact_cos_sin(alpha: f64) -> (f64, f64) {
    if alpha == 0.0 {
        (1.0, 0.0)
    } else if alpha == FRAC_PI_2 {
        (0.0, 1.0)
    } else {
        (alpha.cos(), alpha.sin())
    }
}

/// Residual of the capability gradient row at `θ₀`.
pub const QUADRATIC_CAPABILITY_RESIDUAL: f64 = 0.5;
/// Residual of the safety row at `θ₀`.
pub const QUADRATIC_SAFETY_RESIDUAL: f64 = 2.0;
/// Weight of the capability curvature row.
pub const QUADRATIC_CURVATURE: f64 = 0.5;

/// Builds `L_cap = ½‖A₁θ − b₁‖²` and `L_safe = ½‖A₂θ − b₂‖²` with
/// `∠(∇L_cap(θ₀), ∇L_safe(θ₀)) = alpha`.
///
/// `A₂` is a single row `a₂`. `A₁` has the gradient row `a₁` plus a
/// curvature row `κ·p` whose residual is zero at `θ₀`, where `p ⊥ a₁` spans
/// the plane of the two gradients. All rows are signed coordinate
/// combinations, so the orthogonal and collinear cases hold bit for bit.
pub fn make_quadratic_pair(dim: usize, alpha: f64, seed: u64) -> Result<Family> {
    let config = FamilyConfig::quadratic_pair(dim, alpha, seed);
    config.validate()?;
    let mut rng = rng::stream(seed, 0);
    let mut perm: Vec<usize> = (0..dim).collect();
    perm.shuffle(&mut rng);
    let sign = |rng: &mut Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let (s0, s1) = (sign(&mut rng), sign(&mut rng));
    let theta0 = rng::normal_vec(&mut rng, dim);

    let axis = |i: usize, s: f64| {
        let mut v = vec![0.0; dim];
        v[perm[i]] = s;
        v
    };
    let a1 = axis(0, s0);
    let p = axis(1, s1);
    let curvature: Vec<f64> = p.iter().map(|x| QUADRATIC_CURVATURE * x).collect();
    let (c, s) = exact_cos_sin(alpha);
    let a2: Vec<f64> = a1.iter().zip(&p).map(|(x, y)| c * x + s * y).collect();

    let cap_targets = vec![
        vec![dot_slices(&a1, &theta0) - QUADRATIC_CAPABILITY_RESIDUAL],
        vec![dot_slices(&curvature, &theta0)],
    ];
    let safe_targets = vec![vec![dot_slices(&a2, &theta0) - QUADRATIC_SAFETY_RESIDUAL]];

    let spec = ModelSpec::quadratic(dim);
    let cap_batch = Batch::values(
        Matrix::from_rows(&[a1, curvature])?,
        Matrix::from_rows(&cap_targets)?,
    );
    let safe_batch = Batch::values(Matrix::from_rows(&[a2])?, Matrix::from_rows(&safe_targets)?);
    let capability = DifferentiableTask {
        name: "capability".into(),
        spec: spec.clone(),
        kind: LossKind::SquaredError,
        data: cap_batch.clone(),
    };
    let safety = DifferentiableTask {
        name: "safety".into(),
        spec: spec.clone(),
        kind: LossKind::SquaredError,
        data: safe_batch.clone(),
    };
    Ok(Family {
        config,
        spec,
        theta0: ParamVector::new(theta0)?,
        tasks: vec![capability, safety],
        capability: vec!["capability".into()],
        probes: vec![Probe {
            name: "capability".into(),
            kind: LossKind::SquaredError,
            batch: cap_batch,
        }],
        safety_probe: Probe {
            name: "safety".into(),
            kind: LossKind::SquaredError,
            batch: safe_batch,
        },
        pretrain: PretrainLog {
            steps: 0,
            lr: 0.0,
            final_loss: 0.0,
        },
    })
}

/// Two-facet tanh-MLP regression family.
pub fn make_regression_family(
    dim: usize,
    hidden: usize,
    alpha: f64,
    noise_sigma: f64,
    counts: (usize, usize),
    seed: u64,
) -> Result<Family> {
    let mut config = FamilyConfig::regression_mlp(seed);
    config.dim = dim;
    config.hidden = hidden;
    config.alpha = alpha;
    config.noise_sigma = noise_sigma;
    config.n_capability = counts.0;
    config.n_safety = counts.1;
    make_family(&config)
}

/// Linear softmax policy family: SFT stage, DPO stage, two capability facets.
pub fn make_policy_family(dim: usize, vocab: usize, counts: (usize, usize), seed: u64) -> Result<Family> {
    let mut config = FamilyConfig::policy_sft_dpo(seed);
    config.dim = dim;
    config.vocab = vocab;
    config.n_capability = counts.0;
    config.n_safety = counts.1;
    make_family(&config)
}

// Stream ids for the generators below.
const S_TEACHER: u64 = 0;
const S_INIT: u64 = 1;
const S_PRETRAIN: u64 = 10;
const S_REFERENCE: u64 = 20;
const S_PROBE: u64 = 30;
const S_SAFETY: u64 = 40;
const S_SAFETY_PROBE: u64 = 41;

pub const CAPABILITY_NAMES: [&str; 2] = ["helpful", "truthful"];

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot_slices(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

struct RegressionTeacher {
    facet: [Vec<f64>; 2],
    shared: Vec<f64>,
    safety: Vec<f64>,
}

fn build_regression(config: &FamilyConfig) -> Result<Family> {
    let f = config.dim;
    let input = 3 * f + 2;
    let spec = ModelSpec::mlp2(input, config.hidden, 1, Activation::Tanh);

    let mut trng = rng::stream(config.seed, S_TEACHER);
    let fa = unit(rng::normal_vec(&mut trng, f));
    let fb = unit(rng::normal_vec(&mut trng, f));
    let shared = unit(rng::normal_vec(&mut trng, f));
    // Unit vector orthogonal to the shared map; for f = 1 there is none and the conflict is a sign flip.
    let perp = if f > 1 {
        let mut q = rng::normal_vec(&mut trng, f);
        let c = dot_slices(&q, &shared);
        q.iter_mut().zip(&shared).for_each(|(x, s)| *x -= c * s);
        unit(q)
    } else {
        vec![-shared[0]]
    };
    let (c, s) = exact_cos_sin(config.alpha);
    let safety = shared.iter().zip(&perp).map(|(a, b)| c * a + s * b).collect();
    let teacher = RegressionTeacher {
        facet: [fa, fb],
        shared,
        safety,
    };

    let capability_set = |facet: usize, n: usize, stream: u64| -> Result<Batch> {
        let mut r = rng::stream(config.seed, stream + facet as u64);
        let mut x = Matrix::zeros(n, input);
        let mut y = Matrix::zeros(n, 1);
        for i in 0..n {
            let row = x.row_mut(i);
            for j in 0..f {
                row[facet * f + j] = rng::normal(&mut r);
            }
            for j in 0..f {
                row[2 * f + j] = rng::normal(&mut r);
            }
            let own = dot_slices(&row[facet * f..(facet + 1) * f], &teacher.facet[facet]);
            let sh = dot_slices(&row[2 * f..3 * f], &teacher.shared);
            y.row_mut(i)[0] = own.tanh() + 2.0 * sh.tanh() + config.noise_sigma * rng::normal(&mut r);
        }
        finite_batch(Batch::values(x, y))
    };
    let safety_set = |n: usize, stream: u64| -> Result<Batch> {
        let mut r = rng::stream(config.seed, stream);
        let mut x = Matrix::zeros(n, input);
        let mut y = Matrix::zeros(n, 1);
        for i in 0..n {
            let row = x.row_mut(i);
            for j in 0..f {
                row[2 * f + j] = rng::normal(&mut r);
            }
            row[3 * f] = 1.0;
            row[3 * f + 1] = 1.0;
            let sh = dot_slices(&row[2 * f..3 * f], &teacher.safety);
            y.row_mut(i)[0] = 2.0 * sh.tanh() + config.noise_sigma * rng::normal(&mut r);
        }
        finite_batch(Batch::values(x, y))
    };

    let pretrain_sets = [
        capability_set(0, config.n_pretrain, S_PRETRAIN)?,
        capability_set(1, config.n_pretrain, S_PRETRAIN)?,
    ];
    let (h, i) = (config.hidden, input);
    let mut irng = rng::stream(config.seed, S_INIT);
    let mut init = Vec::with_capacity(spec.param_dim());
    init.extend((0..h * i).map(|_| rng::normal(&mut irng) / (i as f64).sqrt()));
    init.extend(std::iter::repeat_n(0.0, h));
    init.extend((0..h).map(|_| rng::normal(&mut irng) / (h as f64).sqrt()));
    init.push(0.0);
    let (theta0, pretrain) = pretrain(
        &spec,
        &LossKind::SquaredError,
        ParamVector::new(init)?,
        &pretrain_sets,
        config,
    )?;

    let mut tasks = Vec::new();
    let mut probes = Vec::new();
    for (k, name) in CAPABILITY_NAMES.iter().enumerate() {
        tasks.push(DifferentiableTask {
            name: (*name).into(),
            spec: spec.clone(),
            kind: LossKind::SquaredError,
            data: capability_set(k, config.n_capability, S_REFERENCE)?,
        });
        probes.push(Probe {
            name: (*name).into(),
            kind: LossKind::SquaredError,
            batch: capability_set(k, config.n_probe, S_PROBE)?,
        });
    }
    tasks.push(DifferentiableTask {
        name: "safety".into(),
        spec: spec.clone(),
        kind: LossKind::SquaredError,
        data: safety_set(config.n_safety, S_SAFETY)?,
    });
    Ok(Family {
        config: config.clone(),
        spec,
        theta0,
        tasks,
        capability: CAPABILITY_NAMES.iter().map(|s| s.to_string()).collect(),
        probes,
        safety_probe: Probe {
            name: "safety".into(),
            kind: LossKind::SquaredError,
            batch: safety_set(config.n_probe, S_SAFETY_PROBE)?,
        },
        pretrain,
    })
}

/// Label teachers for the policy family: weights over one feature block.
struct PolicyTeacher {
    facet: [Vec<f64>; 2],
    shared: Vec<f64>,
    safety_shared: Vec<f64>,
    safety_own: Vec<f64>,
}

/// Scale of the capability teacher logits.
const POLICY_CAPABILITY_SCALE: f64 = 2.0;
/// Scale of the safety teacher on shared features (the conflicting part).
const POLICY_SAFETY_SHARED_SCALE: f64 = 1.0;
/// Scale of the safety teacher on safety-only features.
const POLICY_SAFETY_OWN_SCALE: f64 = 3.0;

fn teacher_scores(w: &[f64], x: &[f64], vocab: usize, out: &mut [f64]) {
    let f = x.len();
    for (o, s) in out.iter_mut().enumerate().take(vocab) {
        *s += dot_slices(&w[o * f..(o + 1) * f], x);
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &x)| if x < bv { (i, x) } else { (bi, bv) })
        .0
}

fn build_policy(config: &FamilyConfig) -> Result<Family> {
    let f = config.dim;
    let v = config.vocab;
    // [region flag | facet A | facet B | shared | safety-only]
    let context = 1 + 4 * f;
    let spec = ModelSpec::softmax_policy(context, v);

    let mut trng = rng::stream(config.seed, S_TEACHER);
    let mut scaled = |scale: f64| -> Vec<f64> {
        rng::normal_vec(&mut trng, v * f).into_iter().map(|x| scale * x).collect()
    };
    let teacher = PolicyTeacher {
        facet: [scaled(POLICY_CAPABILITY_SCALE), scaled(POLICY_CAPABILITY_SCALE)],
        shared: scaled(POLICY_CAPABILITY_SCALE),
        safety_shared: scaled(POLICY_SAFETY_SHARED_SCALE),
        safety_own: scaled(POLICY_SAFETY_OWN_SCALE),
    };
    let shared_block = 1 + 2 * f..1 + 3 * f;
    let own_block = 1 + 3 * f..1 + 4 * f;

    let capability_set = |facet: usize, n: usize, stream: u64| -> Result<Batch> {
        let mut r = rng::stream(config.seed, stream + facet as u64);
        let mut x = Matrix::zeros(n, context);
        let mut labels = Vec::with_capacity(n);
        let block = 1 + facet * f..1 + (facet + 1) * f;
        let mut scores = vec![0.0; v];
        for i in 0..n {
            let row = x.row_mut(i);
            row[0] = 1.0;
            for j in block.clone() {
                row[j] = rng::normal(&mut r);
            }
            for j in shared_block.clone() {
                row[j] = rng::normal(&mut r);
            }
            scores.iter_mut().for_each(|s| *s = 0.0);
            teacher_scores(&teacher.facet[facet], &row[block.clone()], v, &mut scores);
            teacher_scores(&teacher.shared, &row[shared_block.clone()], v, &mut scores);
            labels.push(argmax(&scores));
        }
        finite_batch(Batch::labels(x, labels))
    };
    // Safety contexts: preferred = safest answer, rejected = least safe answer.
    let safety_set = |n: usize, stream: u64| -> Result<(Matrix, Vec<PreferencePair>)> {
        let mut r = rng::stream(config.seed, stream);
        let mut x = Matrix::zeros(n, context);
        let mut pairs = Vec::with_capacity(n);
        let mut scores = vec![0.0; v];
        for i in 0..n {
            let row = x.row_mut(i);
            row[0] = -1.0;
            for j in shared_block.clone() {
                row[j] = rng::normal(&mut r);
            }
            for j in own_block.clone() {
                row[j] = rng::normal(&mut r);
            }
            scores.iter_mut().for_each(|s| *s = 0.0);
            teacher_scores(&teacher.safety_shared, &row[shared_block.clone()], v, &mut scores);
            teacher_scores(&teacher.safety_own, &row[own_block.clone()], v, &mut scores);
            pairs.push(PreferencePair {
                context: i,
                preferred: argmax(&scores),
                rejected: argmin(&scores),
            });
        }
        crate::linalg::check_finite(x.as_slice(), "generated contexts")?;
        Ok((x, pairs))
    };

    let pretrain_sets = [
        capability_set(0, config.n_pretrain, S_PRETRAIN)?,
        capability_set(1, config.n_pretrain, S_PRETRAIN)?,
    ];
    let (theta0, pretrain) = pretrain(
        &spec,
        &LossKind::NllSft,
        ParamVector::zeros(spec.param_dim()),
        &pretrain_sets,
        config,
    )?;

    let mut tasks = Vec::new();
    let mut probes = Vec::new();
    for (k, name) in CAPABILITY_NAMES.iter().enumerate() {
        tasks.push(DifferentiableTask {
            name: (*name).into(),
            spec: spec.clone(),
            kind: LossKind::NllSft,
            data: capability_set(k, config.n_capability, S_REFERENCE)?,
        });
        probes.push(Probe {
            name: (*name).into(),
            kind: LossKind::NllSft,
            batch: capability_set(k, config.n_probe, S_PROBE)?,
        });
    }
    let (sx, spairs) = safety_set(config.n_safety, S_SAFETY)?;
    let sft_labels = spairs.iter().map(|p| p.preferred).collect();
    tasks.push(DifferentiableTask {
        name: "safety_sft".into(),
        spec: spec.clone(),
        kind: LossKind::NllSft,
        data: Batch::labels(sx.clone(), sft_labels),
    });
    // The reference policy is attached when the DPO stage starts.
    tasks.push(DifferentiableTask {
        name: "safety_dpo".into(),
        spec: spec.clone(),
        kind: LossKind::DpoPairwise { beta: config.beta },
        data: Batch {
            inputs: sx,
            targets: Targets::Pairs(spairs),
            ref_params: None,
        },
    });
    let (px, ppairs) = safety_set(config.n_probe, S_SAFETY_PROBE)?;
    Ok(Family {
        config: config.clone(),
        spec,
        theta0,
        tasks,
        capability: CAPABILITY_NAMES.iter().map(|s| s.to_string()).collect(),
        probes,
        safety_probe: Probe {
            name: "safety".into(),
            kind: LossKind::NllSft,
            batch: Batch::labels(px, ppairs.iter().map(|p| p.preferred).collect()),
        },
        pretrain,
    })
}

/// Fixed-budget full-batch descent on the mean of the given losses.
fn pretrain(
    spec: &ModelSpec,
    kind: &LossKind,
    mut theta: ParamVector,
    sets: &[Batch],
    config: &FamilyConfig,
) -> Result<(ParamVector, PretrainLog)> {
    let scale = 1.0 / sets.len() as f64;
    let mut last = 0.0;
    for _ in 0..config.pretrain_steps {
        let mut step = ParamVector::zeros(theta.len());
        last = 0.0;
        for b in sets {
            let (l, g) = models::loss_and_gradient(spec, kind, &theta, b)?;
            last += scale * l;
            step.axpy_in_place(scale, &g);
        }
        theta.axpy_in_place(-config.pretrain_lr, &step);
    }
    if config.pretrain_steps == 0 {
        for b in sets {
            last += scale * models::loss(spec, kind, &theta, b)?;
        }
    }
    if !theta.is_finite() {
        return Err(Error::non_finite("pre-trained parameters"));
    }
    Ok((
        theta,
        PretrainLog {
            steps: config.pretrain_steps,
            lr: config.pretrain_lr,
            final_loss: last,
        },
    ))
}

fn finite_batch(b: Batch) -> Result<Batch> {
    crate::linalg::check_finite(b.inputs.as_slice(), "generated inputs")?;
    if let Targets::Values(t) = &b.targets {
        crate::linalg::check_finite(t.as_slice(), "generated targets")?;
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use std::f64::consts::FRAC_PI_4;

    fn grads_at_theta0(fam: &Family) -> (ParamVector, ParamVector) {
        let cap = fam.task("capability").unwrap();
        let safe = fam.task("safety").unwrap();
        (
            cap.gradient(&fam.theta0, &cap.data).unwrap(),
            safe.gradient(&fam.theta0, &safe.data).unwrap(),
        )
    }

    #[test]
    fn quadratic_angle_is_exact() {
        for alpha in [0.0, FRAC_PI_2 / 3.0, FRAC_PI_4, FRAC_PI_3, FRAC_PI_2] {
            let fam = make_quadratic_pair(10, alpha, 3).unwrap();
            let (gc, gs) = grads_at_theta0(&fam);
            assert!(gc.norm() > 0.0 && gs.norm() > 0.0);
            let cos = dot(&gc, &gs).unwrap() / (gc.norm() * gs.norm());
            assert!((cos - alpha.cos()).abs() <= 1e-9, "alpha {alpha}: cos {cos}");
        }
    }

    #[test]
    fn quadratic_orthogonal_case_is_exactly_zero() {
        let fam = make_quadratic_pair(6, FRAC_PI_2, 9).unwrap();
        let (gc, gs) = grads_at_theta0(&fam);
        assert_eq!(dot(&gc, &gs).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_rejects_small_dim() {
        assert!(matches!(make_quadratic_pair(1, 0.3, 0), Err(Error::Config(_))));
        assert!(make_quadratic_pair(4, 2.0, 0).is_err());
    }

    #[test]
    fn policy_regions_are_disjoint() {
        let fam = make_policy_family(2, 5, (30, 30), 1).unwrap();
        let flag = |b: &Batch| (0..b.inputs.rows()).map(|i| b.inputs.row(i)[0]).collect::<Vec<_>>();
        for name in CAPABILITY_NAMES {
            assert!(flag(&fam.task(name).unwrap().data).iter().all(|&x| x == 1.0));
        }
        assert!(flag(&fam.task("safety_sft").unwrap().data).iter().all(|&x| x == -1.0));
        assert!(flag(&fam.safety_probe.batch).iter().all(|&x| x == -1.0));
    }

    #[test]
    fn policy_rejects_tiny_vocab() {
        assert!(make_policy_family(2, 3, (10, 10), 0).is_err());
    }

    #[test]
    fn reference_pools_are_nested() {
        let mut small = FamilyConfig::policy_sft_dpo(2);
        small.pretrain_steps = 1;
        let mut large = small.clone();
        small.n_capability = 20;
        large.n_capability = 50;
        let a = make_family(&small).unwrap();
        let b = make_family(&large).unwrap();
        assert_eq!(a.theta0, b.theta0);
        let idx: Vec<usize> = (0..20).collect();
        assert_eq!(a.task("helpful").unwrap().data, b.task("helpful").unwrap().data.select(&idx));
    }

    #[test]
    fn sampling_modes() {
        let fam = make_quadratic_pair(4, 0.5, 0).unwrap();
        let t = fam.task("capability").unwrap();
        let mut r = rng::stream(0, 0);
        assert_eq!(t.sample(&mut r, 2).unwrap(), t.data);
        assert_eq!(t.sample(&mut r, 1).unwrap().len(), 1);
        assert_eq!(t.sample(&mut r, 5).unwrap().len(), 5);
        assert!(t.sample(&mut r, 0).is_err());
    }
}
