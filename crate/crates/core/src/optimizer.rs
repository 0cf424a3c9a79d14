//! Training loops: projected descent (OGPSA), naive descent and a replay baseline.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{project_complement, OrthonormalBasis, ParamVector, Threshold};
use crate::metrics::RunRecord;
use crate::rng;
use crate::subspace::{estimate_subspace, needs_refresh, CapabilitySubspace, EstimatorSettings, RefreshPeriod};
use crate::tasks::{DifferentiableTask, Family};
use crate::models::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Naive,
    Ogpsa,
    Replay,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Naive, Method::Replay, Method::Ogpsa];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Ogpsa => "ogpsa",
            Method::Replay => "replay",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "ogpsa" => Ok(Method::Ogpsa),
            "replay" => Ok(Method::Replay),
            other => Err(Error::config(format!("unknown method `{other}`"))),
        }
    }
}

/// One training stage: which task to descend on, for how many steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub task: String,
    /// Expected loss tag of the task; checked against the family.
    pub loss: String,
    pub steps: usize,
    /// Overrides [`TrainConfig::refresh`] for this stage.
    pub refresh: Option<RefreshPeriod>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub eta: f64,
    pub refresh: RefreshPeriod,
    /// Capability tasks used as references; `M` is the length.
    pub reference_tasks: Vec<String>,
    pub delta: Threshold,
    pub epsilon: f64,
    /// `None` uses the full safety set every step.
    pub safety_batch: Option<usize>,
    /// `None` uses the full reference sets.
    pub ref_batch: Option<usize>,
    pub replay_lambda: f64,
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub execution: Execution,
    /// Keep per-step gradients and bases for offline verification.
    pub retain_artifacts: bool,
}

impl TrainConfig {
    pub fn new(method: Method, eta: f64, stages: Vec<Stage>) -> Self {
        TrainConfig {
            method,
            eta,
            refresh: RefreshPeriod::Every(30),
            reference_tasks: Vec::new(),
            delta: Threshold::default(),
            epsilon: 0.0,
            safety_batch: None,
            ref_batch: None,
            replay_lambda: 1.0,
            seed: 0,
            stages,
            execution: Execution::default(),
            retain_artifacts: false,
        }
    }

    /// Total step count `T`.
    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    pub fn with_method(&self, method: Method) -> Self {
        TrainConfig {
            method,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::config(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if self.stages.is_empty() {
            return Err(Error::config("at least one stage is required"));
        }
        if self.total_steps() == 0 {
            return Err(Error::config("total steps T must be >= 1"));
        }
        self.refresh.validate()?;
        for s in &self.stages {
            if let Some(r) = s.refresh {
                r.validate()?;
            }
        }
        self.delta.validate()?;
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::config("epsilon must be >= 0"));
        }
        if !(self.replay_lambda.is_finite() && self.replay_lambda >= 0.0) {
            return Err(Error::config("replay_lambda must be >= 0"));
        }
        if self.safety_batch == Some(0) || self.ref_batch == Some(0) {
            return Err(Error::config("batch sizes must be positive"));
        }
        Ok(())
    }

    fn estimator(&self) -> EstimatorSettings {
        EstimatorSettings {
            batch_size: self.ref_batch,
            delta: self.delta,
            epsilon: self.epsilon,
            execution: self.execution,
        }
    }
}

/// Per-step vectors retained when [`TrainConfig::retain_artifacts`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct StepArtifact {
    pub step: usize,
    pub g_safe: ParamVector,
    pub g_tilde: ParamVector,
    pub basis: Arc<OrthonormalBasis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubspaceEvent {
    pub step: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub theta_final: ParamVector,
    pub records: Vec<RunRecord>,
    pub config: TrainConfig,
    pub subspace_history: Vec<SubspaceEvent>,
    /// Parameters at the start of each stage (the DPO reference for preference stages).
    pub stage_starts: Vec<ParamVector>,
    pub artifacts: Vec<StepArtifact>,
}

/// `θ − η·g`.
fn descend(theta: &ParamVector, eta: f64, direction: &ParamVector) -> Result<ParamVector> {
    let next = theta.add_scaled(-eta, direction)?;
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::non_finite("updated parameters"))
    }
}

/// Plain gradient step on the safety loss. Returns `(θ', g_safe)`.
pub fn naive_step(
    theta: &ParamVector,
    safety: &DifferentiableTask,
    batch: &Batch,
    eta: f64,
) -> Result<(ParamVector, ParamVector)> {
    let g = safety.gradient(theta, batch)?;
    Ok((descend(theta, eta, &g)?, g))
}

/// Projected step: `θ' = θ − η·(g − U(Uᵀg))`. Returns `(θ', g_safe, g̃)`.
pub fn ogpsa_step(
    theta: &ParamVector,
    safety: &DifferentiableTask,
    batch: &Batch,
    subspace: &CapabilitySubspace,
    eta: f64,
) -> Result<(ParamVector, ParamVector, ParamVector)> {
    let g = safety.gradient(theta, batch)?;
    let g_tilde = project_complement(&g, &subspace.basis)?;
    Ok((descend(theta, eta, &g_tilde)?, g, g_tilde))
}

/// Replay step: `θ' = θ − η·(g_safe + λ·mean_i g⁽ⁱ⁾)`. Returns `(θ', g_safe)`.
pub fn replay_step(
    theta: &ParamVector,
    safety: &DifferentiableTask,
    batch: &Batch,
    ref_tasks: &[&DifferentiableTask],
    ref_batches: &[Batch],
    eta: f64,
    lambda: f64,
) -> Result<(ParamVector, ParamVector)> {
    if ref_tasks.len() != ref_batches.len() {
        return Err(Error::Dimension {
            expected: ref_tasks.len(),
            found: ref_batches.len(),
        });
    }
    let g = safety.gradient(theta, batch)?;
    let mut mean = ParamVector::zeros(theta.len());
    if !ref_tasks.is_empty() {
        let w = 1.0 / ref_tasks.len() as f64;
        for (t, b) in ref_tasks.iter().zip(ref_batches) {
            mean.axpy_in_place(w, &t.gradient(theta, b)?);
        }
    }
    let direction = g.add_scaled(lambda, &mean)?;
    Ok((descend(theta, eta, &direction)?, g))
}

// Stream ids for the training loop.
const S_SAFETY_BATCH: u64 = 100;
const S_REFERENCE_BATCH: u64 = 101;
const S_REPLAY_BATCH: u64 = 102;

/// Runs every stage of `config` on `family`.
///
/// For finite refresh periods the subspace is rebuilt whenever the
/// stage-local step is a multiple of the stage's period, so every stage
/// starts from a fresh basis. `RefreshPeriod::Never` builds once at step 0.
pub fn train(config: &TrainConfig, family: &Family) -> Result<TrainResult> {
    config.validate()?;
    for stage in &config.stages {
        let task = family.task(&stage.task)?;
        if task.kind.tag() != stage.loss {
            return Err(Error::config(format!(
                "stage task `{}` has loss {}, config says {}",
                stage.task,
                task.kind.tag(),
                stage.loss
            )));
        }
    }
    let refs: Vec<&DifferentiableTask> = config
        .reference_tasks
        .iter()
        .map(|n| family.task(n))
        .collect::<Result<_>>()?;
    let settings = config.estimator();

    let mut safety_rng = rng::stream(config.seed, S_SAFETY_BATCH);
    let mut ref_rng = rng::stream(config.seed, S_REFERENCE_BATCH);
    let mut replay_rng = rng::stream(config.seed, S_REPLAY_BATCH);

    let total = config.total_steps();
    let mut theta = family.theta0.clone();
    let mut records = Vec::with_capacity(total);
    let mut history = Vec::new();
    let mut stage_starts = Vec::with_capacity(config.stages.len());
    let mut artifacts = Vec::new();
    let mut subspace = CapabilitySubspace::empty(0);
    let mut basis = Arc::new(OrthonormalBasis::empty());

    let mut t = 0;
    for stage in &config.stages {
        stage_starts.push(theta.clone());
        let base = family.task(&stage.task)?;
        let task = if base.kind.is_dpo() {
            base.with_reference(theta.clone())
        } else {
            base.clone()
        };
        let period = stage.refresh.unwrap_or(config.refresh);
        for local in 0..stage.steps {
            let mut step = || -> Result<RunRecord> {
                if config.method == Method::Ogpsa {
                    let refresh = match period {
                        RefreshPeriod::Never => t == 0,
                        p => needs_refresh(local, p)?,
                    };
                    if refresh {
                        subspace = estimate_subspace(&theta, &refs, &mut ref_rng, &settings, t)?;
                        basis = Arc::new(subspace.basis.clone());
                        history.push(SubspaceEvent {
                            step: t,
                            rank: subspace.rank(),
                        });
                    }
                }
                let batch = task.sample(&mut safety_rng, config.safety_batch.unwrap_or(task.len()))?;
                let safety_loss = task.loss(&theta, &batch)?;
                let (next, g, g_tilde) = match config.method {
                    Method::Naive => {
                        let (next, g) = naive_step(&theta, &task, &batch, config.eta)?;
                        (next, g.clone(), g)
                    }
                    Method::Ogpsa => ogpsa_step(&theta, &task, &batch, &subspace, config.eta)?,
                    Method::Replay => {
                        let ref_batches = refs
                            .iter()
                            .map(|r| r.sample(&mut replay_rng, config.ref_batch.unwrap_or(r.len())))
                            .collect::<Result<Vec<_>>>()?;
                        let (next, g) = replay_step(
                            &theta,
                            &task,
                            &batch,
                            &refs,
                            &ref_batches,
                            config.eta,
                            config.replay_lambda,
                        )?;
                        (next, g.clone(), g)
                    }
                };
                let ref_losses = family
                    .probes
                    .iter()
                    .map(|p| family.probe_loss(p, &theta))
                    .collect::<Result<Vec<_>>>()?;
                let (rank, age) = if config.method == Method::Ogpsa {
                    (subspace.rank(), subspace.age(t))
                } else {
                    (0, 0)
                };
                let record = RunRecord::new(t, &stage.task, safety_loss, ref_losses, g.norm(), g_tilde.norm(), rank, age);
                if config.retain_artifacts {
                    artifacts.push(StepArtifact {
                        step: t,
                        g_safe: g,
                        g_tilde,
                        basis: Arc::clone(&basis),
                    });
                }
                theta = next;
                Ok(record)
            };
            records.push(step().map_err(|e| e.at_step(t))?);
            t += 1;
        }
    }

    Ok(TrainResult {
        theta_final: theta,
        records,
        config: config.clone(),
        subspace_history: history,
        stage_starts,
        artifacts,
    })
}
