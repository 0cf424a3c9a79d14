//! Alignment-tax accounting and comparison tables.
//!
//! Capability is scored as `Φ := −loss` on fixed held-out probes, so the
//! alignment tax `Δ_tax = Φ(θ₀) − Φ(θ_T)` is the increase in probe loss.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::optimizer::{Method, TrainResult};
use crate::tasks::Family;

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: usize,
    pub stage: String,
    pub safety_loss: f64,
    /// Probe loss of every capability task of the family, in facet order.
    pub ref_losses: Vec<f64>,
    pub g_norm: f64,
    pub g_tilde_norm: f64,
    pub removed_fraction: f64,
    pub subspace_rank: usize,
    pub subspace_age: usize,
}

impl RunRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        step: usize,
        stage: &str,
        safety_loss: f64,
        ref_losses: Vec<f64>,
        g_norm: f64,
        g_tilde_norm: f64,
        subspace_rank: usize,
        subspace_age: usize,
    ) -> Self {
        RunRecord {
            step,
            stage: stage.to_string(),
            safety_loss,
            ref_losses,
            g_norm,
            g_tilde_norm,
            removed_fraction: removed_fraction(g_norm, g_tilde_norm),
            subspace_rank,
            subspace_age,
        }
    }
}

/// `1 − (‖g̃‖/‖g‖)²`, zero when `g = 0`.
pub fn removed_fraction(g_norm: f64, g_tilde_norm: f64) -> f64 {
    if g_norm > 0.0 {
        let r = g_tilde_norm / g_norm;
        (1.0 - r * r).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskTax {
    pub name: String,
    pub loss_pre: f64,
    pub loss_post: f64,
    pub phi_pre: f64,
    pub phi_post: f64,
    pub delta_tax: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxReport {
    pub method: Method,
    pub tasks: Vec<TaskTax>,
    pub safety_pre: f64,
    pub safety_post: f64,
    pub safety_gain: f64,
}

impl TaxReport {
    pub fn total_tax(&self) -> f64 {
        self.tasks.iter().map(|t| t.delta_tax).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,name,loss_pre,loss_post,phi_pre,phi_post,delta_tax,safety_gain\n");
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "reference,{},{},{},{},{},{},",
                t.name, t.loss_pre, t.loss_post, t.phi_pre, t.phi_post, t.delta_tax
            );
        }
        let _ = writeln!(
            s,
            "safety,safety,{},{},,,,{}",
            self.safety_pre, self.safety_post, self.safety_gain
        );
        s
    }
}

/// Alignment tax of `result` on the family's probes, and the safety gain on its safety probe.
pub fn alignment_tax(result: &TrainResult, family: &Family) -> Result<TaxReport> {
    if family.probes.is_empty() {
        return Err(Error::config("family has no capability probes"));
    }
    let mut tasks = Vec::with_capacity(family.probes.len());
    for probe in &family.probes {
        if probe.batch.is_empty() {
            return Err(Error::config(format!("probe `{}` has no data", probe.name)));
        }
        let loss_pre = family.probe_loss(probe, &family.theta0)?;
        let loss_post = family.probe_loss(probe, &result.theta_final)?;
        let (phi_pre, phi_post) = (-loss_pre, -loss_post);
        tasks.push(TaskTax {
            name: probe.name.clone(),
            loss_pre,
            loss_post,
            phi_pre,
            phi_post,
            delta_tax: phi_pre - phi_post,
        });
    }
    let safety_pre = family.probe_loss(&family.safety_probe, &family.theta0)?;
    let safety_post = family.probe_loss(&family.safety_probe, &result.theta_final)?;
    Ok(TaxReport {
        method: result.config.method,
        tasks,
        safety_pre,
        safety_post,
        safety_gain: safety_pre - safety_post,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub method: Method,
    pub safety_gain: f64,
    pub taxes: Vec<f64>,
    pub total_tax: f64,
    pub mean_removed_fraction: f64,
    pub mean_rank: f64,
}

impl SummaryRow {
    pub fn new(label: impl Into<String>, result: &TrainResult, report: &TaxReport) -> Self {
        let n = result.records.len().max(1) as f64;
        SummaryRow {
            label: label.into(),
            method: report.method,
            safety_gain: report.safety_gain,
            taxes: report.tasks.iter().map(|t| t.delta_tax).collect(),
            total_tax: report.total_tax(),
            mean_removed_fraction: result.records.iter().map(|r| r.removed_fraction).sum::<f64>() / n,
            mean_rank: result.records.iter().map(|r| r.subspace_rank as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    /// Name of the first column (`method` for comparisons, the swept axis for sweeps).
    pub key: String,
    pub task_names: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec![self.key.clone()];
        if !self.keyed_by_method() {
            h.push("method".into());
        }
        h.push("safety_gain".into());
        h.extend(self.task_names.iter().map(|n| format!("delta_tax_{n}")));
        h.extend(
            ["total_delta_tax", "mean_removed_fraction", "mean_rank"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for r in &self.rows {
            if self.keyed_by_method() {
                let _ = write!(s, "{},{}", r.label, r.safety_gain);
            } else {
                let _ = write!(s, "{},{},{}", r.label, r.method, r.safety_gain);
            }
            for t in &r.taxes {
                let _ = write!(s, ",{t}");
            }
            let _ = writeln!(s, ",{},{},{}", r.total_tax, r.mean_removed_fraction, r.mean_rank);
        }
        s
    }

    fn keyed_by_method(&self) -> bool {
        self.key == "method"
    }

    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// One row per result, keyed and sorted by method name.
///
/// Every result must come from `family`: its first record was evaluated at
/// `θ₀`, so its probe losses must equal the family's bit for bit.
pub fn summarize(results: &[TrainResult], family: &Family) -> Result<SummaryTable> {
    let mut rows = Vec::with_capacity(results.len());
    let baseline = family
        .probes
        .iter()
        .map(|p| family.probe_loss(p, &family.theta0))
        .collect::<Result<Vec<_>>>()?;
    for r in results {
        check_same_family(r, family, &baseline)?;
        let report = alignment_tax(r, family)?;
        rows.push(SummaryRow::new(r.config.method.name(), r, &report));
    }
    rows.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(SummaryTable {
        key: "method".into(),
        task_names: family.probes.iter().map(|p| p.name.clone()).collect(),
        rows,
    })
}

fn check_same_family(r: &TrainResult, family: &Family, baseline: &[f64]) -> Result<()> {
    if r.theta_final.len() != family.theta0.len() {
        return Err(Error::config("result and family have different parameter dimensions"));
    }
    match r.records.first() {
        Some(first) if first.ref_losses.as_slice() == baseline => Ok(()),
        _ => Err(Error::config("result was not produced from this family's θ₀ and probes")),
    }
}

/// Records as CSV with a fixed header.
pub fn records_csv(result: &TrainResult, ref_names: &[String]) -> String {
    let mut s = String::from("step,stage,safety_loss");
    let width = result
        .records
        .first()
        .map_or(ref_names.len(), |r| r.ref_losses.len());
    for i in 0..width {
        let _ = write!(s, ",ref_loss_{i}");
    }
    s.push_str(",g_norm,g_tilde_norm,removed_fraction,rank,age\n");
    for r in &result.records {
        let _ = write!(s, "{},{},{}", r.step, r.stage, r.safety_loss);
        for l in &r.ref_losses {
            let _ = write!(s, ",{l}");
        }
        let _ = writeln!(
            s,
            ",{},{},{},{},{}",
            r.g_norm, r.g_tilde_norm, r.removed_fraction, r.subspace_rank, r.subspace_age
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{train, Stage, TrainConfig};
    use crate::subspace::RefreshPeriod;
    use crate::tasks::make_quadratic_pair;

    fn cfg(method: Method, eta: f64, steps: usize) -> TrainConfig {
        let mut c = TrainConfig::new(
            method,
            eta,
            vec![Stage {
                task: "safety".into(),
                loss: "squared_error".into(),
                steps,
                refresh: None,
            }],
        );
        c.reference_tasks = vec!["capability".into()];
        c.refresh = RefreshPeriod::Every(1);
        c
    }

    #[test]
    fn removed_fraction_edges() {
        assert_eq!(removed_fraction(0.0, 0.0), 0.0);
        assert_eq!(removed_fraction(2.0, 0.0), 1.0);
        assert_eq!(removed_fraction(2.0, 2.0), 0.0);
    }

    #[test]
    fn zero_learning_rate_has_no_tax() {
        let fam = make_quadratic_pair(5, 0.7, 0).unwrap();
        let r = train(&cfg(Method::Naive, 0.0, 4), &fam).unwrap();
        let rep = alignment_tax(&r, &fam).unwrap();
        assert!(rep.tasks.iter().all(|t| t.delta_tax == 0.0));
        assert_eq!(rep.safety_gain, 0.0);
    }

    #[test]
    fn sign_identity() {
        let fam = make_quadratic_pair(5, 0.7, 0).unwrap();
        let r = train(&cfg(Method::Naive, 0.2, 10), &fam).unwrap();
        let rep = alignment_tax(&r, &fam).unwrap();
        for t in &rep.tasks {
            assert_eq!(t.delta_tax, t.loss_post - t.loss_pre);
        }
    }

    #[test]
    fn summarize_sorts_by_method_and_checks_family() {
        let fam = make_quadratic_pair(5, 0.7, 0).unwrap();
        let a = train(&cfg(Method::Ogpsa, 0.1, 5), &fam).unwrap();
        let b = train(&cfg(Method::Naive, 0.1, 5), &fam).unwrap();
        let t1 = summarize(&[a.clone(), b.clone()], &fam).unwrap();
        let t2 = summarize(&[b, a.clone()], &fam).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.rows[0].label, "naive");
        let single = summarize(std::slice::from_ref(&a), &fam).unwrap();
        let rep = alignment_tax(&a, &fam).unwrap();
        assert_eq!(single.rows[0].safety_gain, rep.safety_gain);
        let other = make_quadratic_pair(5, 0.7, 1).unwrap();
        assert!(matches!(summarize(&[a], &other), Err(Error::Config(_))));
    }

    #[test]
    fn records_header_is_stable() {
        let fam = make_quadratic_pair(5, 0.7, 0).unwrap();
        let r = train(&cfg(Method::Ogpsa, 0.1, 2), &fam).unwrap();
        let csv = records_csv(&r, &fam.capability);
        assert_eq!(
            csv.lines().next().unwrap(),
            "step,stage,safety_loss,ref_loss_0,g_norm,g_tilde_norm,removed_fraction,rank,age"
        );
        assert_eq!(csv.lines().count(), 3);
    }
}
