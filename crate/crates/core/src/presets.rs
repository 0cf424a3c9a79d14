//! Default training configurations per task family.
//!
//! Learning rates and refresh periods are tuned to the toy scale: the
//! regression family drifts fast relative to its curvature, so its subspace
//! is refreshed every step; the policy family uses the two-stage SFT→DPO
//! schedule with `K = 30` for SFT and `K = 5` for DPO.

use crate::optimizer::{Method, Stage, TrainConfig};
use crate::subspace::RefreshPeriod;
use crate::tasks::{FamilyKind, CAPABILITY_NAMES};

pub fn train_config(kind: FamilyKind, method: Method, seed: u64) -> TrainConfig {
    let stage = |task: &str, loss: &str, steps, refresh| Stage {
        task: task.into(),
        loss: loss.into(),
        steps,
        refresh,
    };
    let (eta, refresh, refs, stages) = match kind {
        FamilyKind::QuadraticPair => (
            0.1,
            RefreshPeriod::Every(1),
            vec!["capability".to_string()],
            vec![stage("safety", "squared_error", 100, None)],
        ),
        FamilyKind::RegressionMlp => (
            0.05,
            RefreshPeriod::Every(1),
            CAPABILITY_NAMES.iter().map(|s| s.to_string()).collect(),
            vec![stage("safety", "squared_error", 300, None)],
        ),
        FamilyKind::PolicySftDpo => (
            0.1,
            RefreshPeriod::Every(30),
            CAPABILITY_NAMES.iter().map(|s| s.to_string()).collect(),
            vec![
                stage("safety_sft", "nll_sft", 300, Some(RefreshPeriod::Every(30))),
                stage("safety_dpo", "dpo_pairwise", 200, Some(RefreshPeriod::Every(5))),
            ],
        ),
    };
    let mut c = TrainConfig::new(method, eta, stages);
    c.refresh = refresh;
    c.reference_tasks = refs;
    c.seed = seed;
    c
}
