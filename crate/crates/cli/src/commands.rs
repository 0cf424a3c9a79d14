//! The `run`, `sweep` and `compare` subcommands.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ogpsa::metrics::{alignment_tax, records_csv, summarize, SummaryRow, SummaryTable, TaxReport};
use ogpsa::{dataset, make_family, Execution, Family, FamilyKind, Method, RefreshPeriod, TrainResult};

use crate::config::Experiment;
use crate::error::CliError;
use crate::svg::{self, Series};

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(path)
}

pub fn load_family(exp: &Experiment) -> Result<Family, CliError> {
    match &exp.dataset {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let family = dataset::from_text(&text)?;
            if family.config.kind != exp.family.kind {
                return Err(CliError::Config(format!(
                    "dataset holds a {} family, config says {}",
                    family.config.kind, exp.family.kind
                )));
            }
            Ok(family)
        }
        None => Ok(make_family(&exp.family)?),
    }
}

/// Everything one training run produces, rendered to text.
pub struct RunOutput {
    pub result: TrainResult,
    pub report: TaxReport,
    pub files: Vec<(String, String)>,
}

pub fn run_experiment(exp: &Experiment, family: &Family, execution: Execution) -> Result<RunOutput, CliError> {
    let mut train = exp.train.clone();
    train.execution = execution;
    let result = ogpsa::train(&train, family)?;
    let report = alignment_tax(&result, family)?;
    let files = vec![
        ("records.csv".to_string(), records_csv(&result, &family.capability)),
        ("tax.csv".to_string(), report.to_csv()),
        ("subspace.csv".to_string(), subspace_csv(&result)),
        ("config.resolved.txt".to_string(), exp.to_text()),
        ("chart.svg".to_string(), loss_chart(&result, family)),
    ];
    Ok(RunOutput { result, report, files })
}

fn subspace_csv(r: &TrainResult) -> String {
    let mut s = String::from("step,rank\n");
    for e in &r.subspace_history {
        let _ = writeln!(s, "{},{}", e.step, e.rank);
    }
    s
}

fn loss_chart(r: &TrainResult, family: &Family) -> String {
    let mut series = vec![Series {
        name: "safety".into(),
        points: r.records.iter().map(|x| (x.step as f64, x.safety_loss)).collect(),
    }];
    for (i, name) in family.capability.iter().enumerate() {
        series.push(Series {
            name: format!("probe {name}"),
            points: r.records.iter().map(|x| (x.step as f64, x.ref_losses[i])).collect(),
        });
    }
    svg::line_chart(
        &format!("{} on {}", r.config.method, family.config.kind),
        "step",
        "loss",
        &series,
    )
}

pub fn cmd_run(exp: &Experiment, execution: Execution) -> Result<RunOutput, CliError> {
    let family = load_family(exp)?;
    let out = run_experiment(exp, &family, execution)?;
    for (name, body) in &out.files {
        write_atomic(&exp.out, name, body)?;
    }
    if exp.dataset.is_none() {
        write_atomic(&exp.out, "family.txt", &dataset::to_text(&family))?;
    }
    Ok(out)
}

pub fn cmd_compare(exp: &Experiment, execution: Execution) -> Result<SummaryTable, CliError> {
    let family = load_family(exp)?;
    let legs = execution.map_slice(&Method::ALL, |&m| {
        let mut leg = exp.clone();
        leg.train.method = m;
        run_experiment(&leg, &family, execution)
    });
    let mut results = Vec::new();
    for (m, leg) in Method::ALL.iter().zip(legs) {
        let leg = leg?;
        write_atomic(&exp.out, &format!("records_{m}.csv"), &leg.files[0].1)?;
        write_atomic(&exp.out, &format!("tax_{m}.csv"), &leg.report.to_csv())?;
        results.push(leg.result);
    }
    let table = summarize(&results, &family)?;
    let points: Vec<_> = table
        .rows
        .iter()
        .map(|r| (r.label.clone(), r.total_tax, r.safety_gain))
        .collect();
    write_atomic(&exp.out, "summary.csv", &table.to_csv())?;
    write_atomic(
        &exp.out,
        "scatter.svg",
        &svg::scatter(
            &format!("safety gain vs alignment tax ({})", family.config.kind),
            "total delta_tax",
            "safety_gain",
            &points,
        ),
    )?;
    write_atomic(&exp.out, "config.resolved.txt", &exp.to_text())?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    K,
    M,
    Refsize,
}

impl FromStr for Axis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "K" | "k" => Ok(Axis::K),
            "M" | "m" => Ok(Axis::M),
            "refsize" => Ok(Axis::Refsize),
            other => Err(CliError::Config(format!("unknown axis `{other}`; use K, M or refsize"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::K => "K",
            Axis::M => "M",
            Axis::Refsize => "refsize",
        })
    }
}

/// One leg of a sweep: its label and experiment.
pub struct Leg {
    pub label: String,
    pub experiment: Experiment,
}

/// Expands sweep values into legs.
///
/// `K` values are refresh periods (`inf` allowed) applied to every stage.
/// An `M` value `m` expands to one leg per size-`m` subset of the family's
/// capability facets, labelled like `1:helpful`. `refsize` sets the
/// reference pool size per facet.
pub fn expand_legs(exp: &Experiment, axis: Axis, values: &[String], capability: &[String]) -> Result<Vec<Leg>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("--values must not be empty".into()));
    }
    let mut legs = Vec::new();
    for v in values {
        let v = v.trim();
        match axis {
            Axis::K => {
                let k: RefreshPeriod = v.parse()?;
                let mut e = exp.clone();
                e.train.refresh = k;
                e.train.stages.iter_mut().for_each(|s| s.refresh = None);
                legs.push(Leg {
                    label: k.to_string(),
                    experiment: e,
                });
            }
            Axis::M => {
                let m: usize = v
                    .parse()
                    .map_err(|_| CliError::Config(format!("M value `{v}` is not an integer")))?;
                if m > capability.len() {
                    return Err(CliError::Config(format!(
                        "M = {m} exceeds the {} capability facets",
                        capability.len()
                    )));
                }
                for subset in subsets(capability, m) {
                    let mut e = exp.clone();
                    let label = if m == 0 {
                        "0".to_string()
                    } else {
                        format!("{m}:{}", subset.join("+"))
                    };
                    e.train.reference_tasks = subset;
                    legs.push(Leg { label, experiment: e });
                }
            }
            Axis::Refsize => {
                if exp.family.kind == FamilyKind::QuadraticPair || exp.dataset.is_some() {
                    return Err(CliError::Config(
                        "refsize sweeps need a generated regression_mlp or policy_sft_dpo family".into(),
                    ));
                }
                let n: usize = v
                    .parse()
                    .map_err(|_| CliError::Config(format!("refsize value `{v}` is not an integer")))?;
                if n == 0 {
                    return Err(CliError::Config("refsize must be positive".into()));
                }
                let mut e = exp.clone();
                e.family.n_capability = n;
                legs.push(Leg {
                    label: n.to_string(),
                    experiment: e,
                });
            }
        }
    }
    Ok(legs)
}

/// Size-`m` subsets in lexicographic index order.
fn subsets(items: &[String], m: usize) -> Vec<Vec<String>> {
    fn go(items: &[String], m: usize, start: usize, cur: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i].clone());
            go(items, m, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, m, 0, &mut Vec::new(), &mut out);
    out
}

pub struct SweepOutcome {
    pub table: SummaryTable,
    pub failures: Vec<(String, CliError)>,
}

pub fn cmd_sweep(exp: &Experiment, axis: Axis, values: &[String], execution: Execution) -> Result<SweepOutcome, CliError> {
    let shared = match axis {
        Axis::Refsize => None,
        _ => Some(load_family(exp)?),
    };
    let capability = match &shared {
        Some(f) => f.capability.clone(),
        None => Vec::new(),
    };
    let legs = expand_legs(exp, axis, values, &capability)?;
    let outcomes = execution.map_slice(&legs, |leg| -> Result<(RunOutput, Vec<String>), CliError> {
        let owned;
        let family = match &shared {
            Some(f) => f,
            None => {
                owned = load_family(&leg.experiment)?;
                &owned
            }
        };
        let out = run_experiment(&leg.experiment, family, execution)?;
        Ok((out, family.capability.clone()))
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut task_names = capability;
    for (leg, outcome) in legs.iter().zip(outcomes) {
        let dir = exp.out.join("legs").join(sanitize(&leg.label));
        match outcome {
            Ok((out, names)) => {
                for (name, body) in &out.files {
                    write_atomic(&dir, name, body)?;
                }
                task_names = names;
                rows.push(SummaryRow::new(leg.label.clone(), &out.result, &out.report));
            }
            Err(e) => failures.push((leg.label.clone(), e)),
        }
    }
    let table = SummaryTable {
        key: axis.to_string(),
        task_names,
        rows,
    };
    write_atomic(&exp.out, "summary.csv", &table.to_csv())?;
    let cats: Vec<String> = table.rows.iter().map(|r| r.label.clone()).collect();
    let series = vec![
        Series {
            name: "total delta_tax".into(),
            points: table.rows.iter().enumerate().map(|(i, r)| (i as f64, r.total_tax)).collect(),
        },
        Series {
            name: "safety_gain".into(),
            points: table.rows.iter().enumerate().map(|(i, r)| (i as f64, r.safety_gain)).collect(),
        },
    ];
    write_atomic(
        &exp.out,
        "sweep.svg",
        &svg::category_chart(&format!("{axis} sweep ({})", exp.train.method), &axis.to_string(), &cats, &series),
    )?;
    write_atomic(&exp.out, "config.resolved.txt", &exp.to_text())?;
    let manifest = exp.out.join("failures.txt");
    if failures.is_empty() {
        if manifest.exists() {
            fs::remove_file(&manifest)?;
        }
    } else {
        let mut s = String::from("label,exit_code,error\n");
        for (label, e) in &failures {
            let _ = writeln!(s, "{label},{},{}", e.code(), e.to_string().replace(['\n', ','], " "));
        }
        write_atomic(&exp.out, "failures.txt", &s)?;
    }
    Ok(SweepOutcome { table, failures })
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["helpful".into(), "truthful".into()]
    }

    #[test]
    fn m_values_expand_to_subsets() {
        let exp = Experiment::preset(FamilyKind::PolicySftDpo, 0);
        let vals: Vec<String> = ["0", "1", "2"].iter().map(|s| s.to_string()).collect();
        let legs = expand_legs(&exp, Axis::M, &vals, &names()).unwrap();
        let labels: Vec<_> = legs.iter().map(|l| l.label.as_str()).collect();
        assert_eq!(labels, ["0", "1:helpful", "1:truthful", "2:helpful+truthful"]);
        assert!(legs[0].experiment.train.reference_tasks.is_empty());
        assert!(expand_legs(&exp, Axis::M, &["3".into()], &names()).is_err());
    }

    #[test]
    fn k_values_clear_stage_overrides() {
        let exp = Experiment::preset(FamilyKind::PolicySftDpo, 0);
        let legs = expand_legs(&exp, Axis::K, &["5".into(), "inf".into()], &names()).unwrap();
        assert_eq!(legs[1].label, "inf");
        assert!(legs[1].experiment.train.stages.iter().all(|s| s.refresh.is_none()));
        assert_eq!(legs[1].experiment.train.refresh, RefreshPeriod::Never);
        assert!(expand_legs(&exp, Axis::K, &["0".into()], &names()).is_err());
        assert!(expand_legs(&exp, Axis::K, &[], &names()).is_err());
    }

    #[test]
    fn refsize_needs_a_generated_ml_family() {
        let q = Experiment::preset(FamilyKind::QuadraticPair, 0);
        assert!(expand_legs(&q, Axis::Refsize, &["50".into()], &[]).is_err());
        let p = Experiment::preset(FamilyKind::RegressionMlp, 0);
        let legs = expand_legs(&p, Axis::Refsize, &["50".into()], &[]).unwrap();
        assert_eq!(legs[0].experiment.family.n_capability, 50);
    }

    #[test]
    fn atomic_write_replaces_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.csv", "one").unwrap();
        write_atomic(dir.path(), "a.csv", "two").unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
