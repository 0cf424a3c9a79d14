//! Self-describing text serialization of a [`Family`].
//!
//! A file is a block of `key = value` header lines, then a CSV section that
//! starts with the line `set,index,field,row,values`. Each CSV row holds one
//! row of one array:
//!
//! | set            | field   | contents                                   |
//! |----------------|---------|--------------------------------------------|
//! | `theta0`       | `theta` | the pre-trained parameters (one row)       |
//! | `task`, `probe`| `x`     | one input row                              |
//! |                | `y`     | one real-valued target row                 |
//! |                | `label` | one class label                            |
//! |                | `pair`  | `context,preferred,rejected`               |
//! |                | `ref`   | frozen reference parameters (one row)      |
//!
//! `index` numbers tasks and probes in header order; the safety probe uses
//! set `probe` with index `safety`. Floats are written in shortest
//! round-trip form, so loading a saved family gives back an equal value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, ParamVector};
use crate::models::{Activation, Batch, LossKind, ModelKind, ModelSpec, PreferencePair, Targets};
use crate::tasks::{DifferentiableTask, Family, FamilyConfig, FamilyKind, PretrainLog, Probe};

pub const FORMAT: &str = "ogpsa-dataset";
pub const VERSION: u32 = 1;
const CSV_HEADER: &str = "set,index,field,row,values";

pub fn to_text(family: &Family) -> String {
    let mut s = String::new();
    let c = &family.config;
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("format", FORMAT.into());
    kv("version", VERSION.to_string());
    kv("family.kind", c.kind.to_string());
    kv("family.dim", c.dim.to_string());
    kv("family.alpha", format!("{:?}", c.alpha));
    kv("family.noise_sigma", format!("{:?}", c.noise_sigma));
    kv("family.n_capability", c.n_capability.to_string());
    kv("family.n_safety", c.n_safety.to_string());
    kv("family.n_probe", c.n_probe.to_string());
    kv("family.n_pretrain", c.n_pretrain.to_string());
    kv("family.hidden", c.hidden.to_string());
    kv("family.vocab", c.vocab.to_string());
    kv("family.pretrain_steps", c.pretrain_steps.to_string());
    kv("family.pretrain_lr", format!("{:?}", c.pretrain_lr));
    kv("family.beta", format!("{:?}", c.beta));
    kv("family.seed", c.seed.to_string());
    kv("model.kind", family.spec.kind().to_string());
    kv("model.dims", join(family.spec.dims()));
    kv("model.activation", family.spec.activation().to_string());
    kv("pretrain.steps", family.pretrain.steps.to_string());
    kv("pretrain.lr", format!("{:?}", family.pretrain.lr));
    kv("pretrain.final_loss", format!("{:?}", family.pretrain.final_loss));
    kv("capability", family.capability.join(" "));
    kv("tasks", family.tasks.len().to_string());
    for (i, t) in family.tasks.iter().enumerate() {
        kv(&format!("task.{i}.name"), t.name.clone());
        kv(&format!("task.{i}.loss"), loss_text(&t.kind));
        kv(&format!("task.{i}.shape"), shape_text(&t.data));
    }
    kv("probes", family.probes.len().to_string());
    for (i, p) in family.probes.iter().enumerate() {
        kv(&format!("probe.{i}.name"), p.name.clone());
        kv(&format!("probe.{i}.loss"), loss_text(&p.kind));
        kv(&format!("probe.{i}.shape"), shape_text(&p.batch));
    }
    kv("probe.safety.name", family.safety_probe.name.clone());
    kv("probe.safety.loss", loss_text(&family.safety_probe.kind));
    kv("probe.safety.shape", shape_text(&family.safety_probe.batch));

    s.push_str(CSV_HEADER);
    s.push('\n');
    let _ = writeln!(s, "theta0,0,theta,0,{}", floats(family.theta0.as_slice()));
    for (i, t) in family.tasks.iter().enumerate() {
        write_batch(&mut s, "task", &i.to_string(), &t.data);
    }
    for (i, p) in family.probes.iter().enumerate() {
        write_batch(&mut s, "probe", &i.to_string(), &p.batch);
    }
    write_batch(&mut s, "probe", "safety", &family.safety_probe.batch);
    s
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn floats(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn loss_text(k: &LossKind) -> String {
    match k {
        LossKind::DpoPairwise { beta } => format!("dpo_pairwise {beta:?}"),
        other => other.tag().to_string(),
    }
}

/// `<rows> <input cols> <target kind> <target cols>`.
fn shape_text(b: &Batch) -> String {
    let (kind, cols) = match &b.targets {
        Targets::Values(m) => ("values", m.cols()),
        Targets::Labels(_) => ("labels", 1),
        Targets::Pairs(p) => ("pairs", p.len()),
    };
    let reference = if b.ref_params.is_some() { "ref" } else { "noref" };
    format!("{} {} {kind} {cols} {reference}", b.inputs.rows(), b.inputs.cols())
}

fn write_batch(s: &mut String, set: &str, index: &str, b: &Batch) {
    for r in 0..b.inputs.rows() {
        let _ = writeln!(s, "{set},{index},x,{r},{}", floats(b.inputs.row(r)));
    }
    match &b.targets {
        Targets::Values(m) => {
            for r in 0..m.rows() {
                let _ = writeln!(s, "{set},{index},y,{r},{}", floats(m.row(r)));
            }
        }
        Targets::Labels(l) => {
            for (r, v) in l.iter().enumerate() {
                let _ = writeln!(s, "{set},{index},label,{r},{v}");
            }
        }
        Targets::Pairs(p) => {
            for (r, q) in p.iter().enumerate() {
                let _ = writeln!(s, "{set},{index},pair,{r},{},{},{}", q.context, q.preferred, q.rejected);
            }
        }
    }
    if let Some(rp) = &b.ref_params {
        let _ = writeln!(s, "{set},{index},ref,0,{}", floats(rp.as_slice()));
    }
}

struct Header {
    map: BTreeMap<String, (usize, String)>,
}

impl Header {
    fn get(&self, key: &str) -> Result<(usize, &str)> {
        self.map
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::Dataset {
                line: 0,
                message: format!("missing header key `{key}`"),
            })
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.get(key)?;
        v.parse().map_err(|_| Error::Dataset {
            line,
            message: format!("cannot parse `{v}` for `{key}`"),
        })
    }
}

#[derive(Default)]
struct Rows {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    labels: Vec<usize>,
    pairs: Vec<PreferencePair>,
    reference: Option<Vec<f64>>,
}

pub fn from_text(text: &str) -> Result<Family> {
    let mut map = BTreeMap::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut saw_csv = false;
    for (n, line) in lines.by_ref() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t == CSV_HEADER {
            saw_csv = true;
            break;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| Error::Dataset {
            line: n,
            message: "expected `key = value`".into(),
        })?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), (n, v.trim().to_string())).is_some() {
            return Err(Error::Dataset {
                line: n,
                message: format!("duplicate key `{k}`"),
            });
        }
    }
    if !saw_csv {
        return Err(Error::Dataset {
            line: text.lines().count(),
            message: format!("missing CSV header `{CSV_HEADER}`"),
        });
    }
    let h = Header { map };
    let (line, format) = h.get("format")?;
    if format != FORMAT {
        return Err(Error::Dataset {
            line,
            message: format!("format `{format}` is not `{FORMAT}`"),
        });
    }
    let version: u32 = h.parse("version")?;
    if version != VERSION {
        return Err(Error::Dataset {
            line: h.get("version")?.0,
            message: format!("unsupported version {version}"),
        });
    }

    let mut theta0: Option<Vec<f64>> = None;
    let mut sets: BTreeMap<(String, String), Rows> = BTreeMap::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Dataset { line: n, message };
        let mut cells = line.split(',');
        let mut next = |what: &str| cells.next().map(str::trim).ok_or_else(|| bad(format!("missing {what}")));
        let set = next("set")?.to_string();
        let index = next("index")?.to_string();
        let field = next("field")?.to_string();
        let _row = next("row")?;
        let rest: Vec<&str> = cells.map(str::trim).collect();
        let nums = || -> Result<Vec<f64>> {
            rest.iter()
                .map(|c| c.parse::<f64>().map_err(|_| bad(format!("`{c}` is not a number"))))
                .collect()
        };
        let ints = || -> Result<Vec<usize>> {
            rest.iter()
                .map(|c| c.parse::<usize>().map_err(|_| bad(format!("`{c}` is not an index"))))
                .collect()
        };
        if set == "theta0" {
            theta0 = Some(nums()?);
            continue;
        }
        if set != "task" && set != "probe" {
            return Err(bad(format!("unknown set `{set}`")));
        }
        let rows = sets.entry((set, index)).or_default();
        match field.as_str() {
            "x" => rows.x.push(nums()?),
            "y" => rows.y.push(nums()?),
            "label" => match ints()?.as_slice() {
                [v] => rows.labels.push(*v),
                _ => return Err(bad("label rows hold one value".into())),
            },
            "pair" => match ints()?.as_slice() {
                [c, p, r] => rows.pairs.push(PreferencePair {
                    context: *c,
                    preferred: *p,
                    rejected: *r,
                }),
                _ => return Err(bad("pair rows hold three values".into())),
            },
            "ref" => rows.reference = Some(nums()?),
            other => return Err(bad(format!("unknown field `{other}`"))),
        }
    }

    let config = FamilyConfig {
        kind: h.parse::<FamilyKindText>("family.kind")?.0,
        dim: h.parse("family.dim")?,
        alpha: h.parse("family.alpha")?,
        noise_sigma: h.parse("family.noise_sigma")?,
        n_capability: h.parse("family.n_capability")?,
        n_safety: h.parse("family.n_safety")?,
        n_probe: h.parse("family.n_probe")?,
        n_pretrain: h.parse("family.n_pretrain")?,
        hidden: h.parse("family.hidden")?,
        vocab: h.parse("family.vocab")?,
        pretrain_steps: h.parse("family.pretrain_steps")?,
        pretrain_lr: h.parse("family.pretrain_lr")?,
        beta: h.parse("family.beta")?,
        seed: h.parse("family.seed")?,
    };
    let spec = parse_spec(&h)?;
    let theta0 = ParamVector::new(theta0.ok_or_else(|| Error::Dataset {
        line: 0,
        message: "missing theta0 row".into(),
    })?)?;
    if theta0.len() != spec.param_dim() {
        return Err(Error::Dimension {
            expected: spec.param_dim(),
            found: theta0.len(),
        });
    }

    let mut take = |set: &str, index: &str| -> Result<(String, LossKind, Batch)> {
        let key = format!("{set}.{index}");
        let name = h.get(&format!("{key}.name"))?.1.to_string();
        let kind = parse_loss(&h, &format!("{key}.loss"))?;
        let rows = sets.remove(&(set.to_string(), index.to_string())).unwrap_or_default();
        let batch = build_batch(&h, &format!("{key}.shape"), rows)?;
        Ok((name, kind, batch))
    };
    let n_tasks: usize = h.parse("tasks")?;
    let mut tasks = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let (name, kind, data) = take("task", &i.to_string())?;
        tasks.push(DifferentiableTask {
            name,
            spec: spec.clone(),
            kind,
            data,
        });
    }
    let n_probes: usize = h.parse("probes")?;
    let mut probes = Vec::with_capacity(n_probes);
    for i in 0..n_probes {
        let (name, kind, batch) = take("probe", &i.to_string())?;
        probes.push(Probe { name, kind, batch });
    }
    let (name, kind, batch) = take("probe", "safety")?;
    let safety_probe = Probe { name, kind, batch };
    if let Some(((set, index), _)) = sets.into_iter().next() {
        return Err(Error::Dataset {
            line: 0,
            message: format!("rows for `{set}.{index}` have no header entry"),
        });
    }
    let capability: Vec<String> = h.get("capability")?.1.split_whitespace().map(String::from).collect();
    let family = Family {
        config,
        spec,
        theta0,
        tasks,
        capability,
        probes,
        safety_probe,
        pretrain: PretrainLog {
            steps: h.parse("pretrain.steps")?,
            lr: h.parse("pretrain.lr")?,
            final_loss: h.parse("pretrain.final_loss")?,
        },
    };
    for name in &family.capability {
        family.task(name)?;
    }
    Ok(family)
}

struct FamilyKindText(FamilyKind);

impl FromStr for FamilyKindText {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.parse().map(FamilyKindText)
    }
}

fn parse_spec(h: &Header) -> Result<ModelSpec> {
    let kind: ModelKind = h.get("model.kind")?.1.parse()?;
    let (line, dims_text) = h.get("model.dims")?;
    let dims = dims_text
        .split_whitespace()
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Dataset {
            line,
            message: format!("bad model dims `{dims_text}`"),
        })?;
    let activation: Activation = h.get("model.activation")?.1.parse()?;
    let need = match kind {
        ModelKind::Mlp2 => 3,
        ModelKind::SoftmaxPolicy => 2,
        _ => 1,
    };
    if dims.len() != need {
        return Err(Error::Dataset {
            line,
            message: format!("{kind} needs {need} dims"),
        });
    }
    let spec = match kind {
        ModelKind::Quadratic => ModelSpec::quadratic(dims[0]),
        ModelKind::LinearRegression => ModelSpec::linear_regression(dims[0]),
        ModelKind::LogisticRegression => ModelSpec::logistic_regression(dims[0]),
        ModelKind::Mlp2 => ModelSpec::mlp2(dims[0], dims[1], dims[2], activation),
        ModelKind::SoftmaxPolicy => ModelSpec::softmax_policy(dims[0], dims[1]),
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_loss(h: &Header, key: &str) -> Result<LossKind> {
    let (line, v) = h.get(key)?;
    let mut parts = v.split_whitespace();
    let tag = parts.next().unwrap_or("");
    let beta = match parts.next() {
        Some(b) => b.parse().map_err(|_| Error::Dataset {
            line,
            message: format!("bad beta `{b}`"),
        })?,
        None => crate::models::DEFAULT_BETA,
    };
    LossKind::from_tag(tag, beta)
}

fn build_batch(h: &Header, key: &str, rows: Rows) -> Result<Batch> {
    let (line, v) = h.get(key)?;
    let bad = |message: String| Error::Dataset { line, message };
    let parts: Vec<&str> = v.split_whitespace().collect();
    let [n, cols, kind, tcols, reference] = parts.as_slice() else {
        return Err(bad(format!("bad shape `{v}`")));
    };
    let n: usize = n.parse().map_err(|_| bad("bad row count".into()))?;
    let cols: usize = cols.parse().map_err(|_| bad("bad column count".into()))?;
    let tcols: usize = tcols.parse().map_err(|_| bad("bad target width".into()))?;
    if rows.x.len() != n {
        return Err(bad(format!("{key}: expected {n} input rows, found {}", rows.x.len())));
    }
    let inputs = matrix(rows.x, n, cols).map_err(|e| bad(format!("{key} inputs: {e}")))?;
    let targets = match *kind {
        "values" => Targets::Values(
            matrix(rows.y, n, tcols).map_err(|e| bad(format!("{key} targets: {e}")))?,
        ),
        "labels" if rows.labels.len() == n => Targets::Labels(rows.labels),
        "pairs" if rows.pairs.len() == tcols => Targets::Pairs(rows.pairs),
        _ => return Err(bad(format!("{key}: targets do not match shape `{v}`"))),
    };
    let ref_params = match (*reference, rows.reference) {
        ("ref", Some(r)) => Some(ParamVector::new(r)?),
        ("noref", None) => None,
        _ => return Err(bad(format!("{key}: reference parameters do not match shape"))),
    };
    Ok(Batch {
        inputs,
        targets,
        ref_params,
    })
}

fn matrix(rows: Vec<Vec<f64>>, n: usize, cols: usize) -> Result<Matrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::config(format!("expected {n}x{cols} values")));
    }
    Matrix::new(n, cols, rows.concat())
}
