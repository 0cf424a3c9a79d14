//! Periodic estimation of the capability subspace from reference gradients.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{gram_schmidt, OrthonormalBasis, ParamVector, Threshold};
use crate::rng::Rng;
use crate::tasks::DifferentiableTask;

/// How often the subspace is rebuilt. `Never` builds once at step 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshPeriod {
    Every(usize),
    Never,
}

impl RefreshPeriod {
    pub fn validate(&self) -> Result<()> {
        match self {
            RefreshPeriod::Every(0) => Err(Error::config("refresh period must be >= 1 or inf")),
            _ => Ok(()),
        }
    }

    /// Period as a number, `None` for `Never`.
    pub fn steps(&self) -> Option<usize> {
        match self {
            RefreshPeriod::Every(k) => Some(*k),
            RefreshPeriod::Never => None,
        }
    }
}

impl fmt::Display for RefreshPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefreshPeriod::Every(k) => write!(f, "{k}"),
            RefreshPeriod::Never => f.write_str("inf"),
        }
    }
}

impl FromStr for RefreshPeriod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s == "∞" || s.eq_ignore_ascii_case("never") {
            return Ok(RefreshPeriod::Never);
        }
        let k: usize = s
            .parse()
            .map_err(|_| Error::config(format!("refresh period `{s}` is not an integer or inf")))?;
        let p = RefreshPeriod::Every(k);
        p.validate()?;
        Ok(p)
    }
}

pub fn needs_refresh(step: usize, period: RefreshPeriod) -> Result<bool> {
    period.validate()?;
    Ok(match period {
        RefreshPeriod::Every(k) => step.is_multiple_of(k),
        RefreshPeriod::Never => step == 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapabilitySubspace {
    pub basis: OrthonormalBasis,
    /// Step at which the basis was estimated (τ).
    pub built_at: usize,
    /// Number of reference gradients offered to Gram–Schmidt (M).
    pub candidate_count: usize,
    pub delta: f64,
    pub epsilon: f64,
}

impl CapabilitySubspace {
    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn age(&self, step: usize) -> usize {
        step - self.built_at
    }

    /// Subspace with no directions; projection is the identity.
    pub fn empty(step: usize) -> Self {
        CapabilitySubspace {
            basis: OrthonormalBasis::empty(),
            built_at: step,
            candidate_count: 0,
            delta: 0.0,
            epsilon: 0.0,
        }
    }
}

/// Settings shared by every refresh of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    /// Reference batch size; `None` uses each full reference set.
    pub batch_size: Option<usize>,
    pub delta: Threshold,
    pub epsilon: f64,
    pub execution: Execution,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            batch_size: None,
            delta: Threshold::default(),
            epsilon: 0.0,
            execution: Execution::default(),
        }
    }
}

/// Computes one gradient per reference task at `model_state` and orthonormalizes them in task order.
///
/// Batches are drawn from `rng` sequentially in task order before any
/// gradient is evaluated, so the result does not depend on `execution`.
/// With no reference tasks the subspace is empty.
pub fn estimate_subspace(
    model_state: &ParamVector,
    ref_tasks: &[&DifferentiableTask],
    rng: &mut Rng,
    settings: &EstimatorSettings,
    step: usize,
) -> Result<CapabilitySubspace> {
    settings.delta.validate()?;
    let mut batches = Vec::with_capacity(ref_tasks.len());
    for (i, task) in ref_tasks.iter().enumerate() {
        if task.is_empty() {
            return Err(Error::config(format!(
                "reference task {i} (`{}`) has no data",
                task.name
            )));
        }
        let size = settings.batch_size.unwrap_or(task.len());
        batches.push(task.sample(rng, size)?);
    }
    let grads = settings.execution.map_indexed(ref_tasks.len(), |i| {
        ref_tasks[i]
            .gradient(model_state, &batches[i])
            .map_err(|e| match e {
                e if e.is_numeric() => Error::non_finite(format!(
                    "reference gradient of task {i} (`{}`)",
                    ref_tasks[i].name
                )),
                e => e,
            })
    });
    let grads = grads.into_iter().collect::<Result<Vec<_>>>()?;
    let delta = settings.delta.resolve(&grads);
    let basis = gram_schmidt(&grads, delta, settings.epsilon)?;
    Ok(CapabilitySubspace {
        basis,
        built_at: step,
        candidate_count: ref_tasks.len(),
        delta,
        epsilon: settings.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::models::{Batch, LossKind, ModelSpec};
    use crate::rng;

    /// `½‖θ − c‖²` as a quadratic with `A = I`.
    fn centered(name: &str, c: &[f64]) -> DifferentiableTask {
        let d = c.len();
        let rows: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let targets: Vec<Vec<f64>> = c.iter().map(|&x| vec![x]).collect();
        DifferentiableTask {
            name: name.into(),
            spec: ModelSpec::quadratic(d),
            kind: LossKind::SquaredError,
            data: Batch::values(Matrix::from_rows(&rows).unwrap(), Matrix::from_rows(&targets).unwrap()),
        }
    }

    #[test]
    fn refresh_schedule() {
        assert!(needs_refresh(0, RefreshPeriod::Every(5)).unwrap());
        assert!(!needs_refresh(7, RefreshPeriod::Every(5)).unwrap());
        assert!(needs_refresh(30, RefreshPeriod::Every(30)).unwrap());
        assert!(needs_refresh(0, RefreshPeriod::Never).unwrap());
        assert!(!needs_refresh(30, RefreshPeriod::Never).unwrap());
        assert!(needs_refresh(3, RefreshPeriod::Every(0)).is_err());
        assert_eq!("inf".parse::<RefreshPeriod>().unwrap(), RefreshPeriod::Never);
        assert!("0".parse::<RefreshPeriod>().is_err());
    }

    #[test]
    fn single_quadratic_task() {
        let task = centered("q", &[0.5, -1.0]);
        let theta = ParamVector::new(vec![1.5, -1.0]).unwrap();
        let mut r = rng::stream(0, 0);
        let s = estimate_subspace(&theta, &[&task], &mut r, &EstimatorSettings::default(), 4).unwrap();
        assert_eq!(s.rank(), 1);
        assert_eq!(s.basis.columns()[0].as_slice(), &[1.0, 0.0]);
        assert_eq!(s.built_at, 4);
        assert_eq!(s.candidate_count, 1);
    }

    #[test]
    fn duplicate_tasks_collapse() {
        let task = centered("q", &[0.3, 0.1, -2.0]);
        let theta = ParamVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let mut r = rng::stream(0, 0);
        let s = estimate_subspace(&theta, &[&task, &task], &mut r, &EstimatorSettings::default(), 0).unwrap();
        assert_eq!(s.rank(), 1);
    }

    #[test]
    fn execution_mode_does_not_change_result() {
        let tasks: Vec<_> = (0..4)
            .map(|i| centered("q", &[i as f64, 1.0 - i as f64, 0.5 * i as f64, 2.0]))
            .collect();
        let refs: Vec<_> = tasks.iter().collect();
        let theta = ParamVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let run = |execution| {
            let settings = EstimatorSettings {
                batch_size: Some(3),
                execution,
                ..Default::default()
            };
            estimate_subspace(&theta, &refs, &mut rng::stream(9, 2), &settings, 0).unwrap()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn empty_reference_data_is_a_config_error() {
        let mut task = centered("q", &[1.0]);
        task.data = task.data.select(&[]);
        let theta = ParamVector::zeros(1);
        let err = estimate_subspace(&theta, &[&task], &mut rng::stream(0, 0), &EstimatorSettings::default(), 0)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn non_finite_gradient_names_the_task() {
        let task = centered("q", &[-1.5e308, 0.0]);
        let theta = ParamVector::new(vec![1.5e308, 0.0]).unwrap();
        let ok = centered("fine", &[1.5e308, 0.0]);
        let err = estimate_subspace(&theta, &[&ok, &task], &mut rng::stream(0, 0), &EstimatorSettings::default(), 0)
            .unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("task 1"), "{err}");
    }
}
