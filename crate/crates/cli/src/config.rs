//! Experiment files: sectioned `key = value` text.
//!
//! ```text
//! version = 1
//!
//! [family]
//! kind = quadratic_pair
//! dim = 10
//! alpha = 1.0471975511965976
//!
//! [train]
//! method = ogpsa
//! eta = 0.1
//! refresh = 1
//! reference_tasks = capability
//!
//! [stage]
//! task = safety
//! loss = squared_error
//! steps = 100
//!
//! [output]
//! dir = out/quadratic
//! ```
//!
//! `[stage]` may repeat; stages run in file order and replace the preset
//! stages of the family. Every key is optional except `version` and
//! `[family] kind`; omitted keys take the family preset. `#` starts a comment.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use ogpsa::linalg::Threshold;
use ogpsa::{presets, FamilyConfig, FamilyKind, Method, RefreshPeriod, Stage, TrainConfig};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub family: FamilyConfig,
    /// Load the family from a dataset file instead of generating it.
    pub dataset: Option<PathBuf>,
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl Experiment {
    /// The family preset with its default training configuration.
    pub fn preset(kind: FamilyKind, seed: u64) -> Self {
        Experiment {
            family: FamilyConfig::default_for(kind, seed),
            dataset: None,
            train: presets::train_config(kind, Method::Ogpsa, seed),
            out: PathBuf::from("out"),
        }
    }

    /// Sets both the family seed and the training seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.family.seed = seed;
        self.train.seed = seed;
    }

    /// Resolved configuration in the same format; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let f = &self.family;
        let t = &self.train;
        let _ = writeln!(s, "version = {VERSION}\n\n[family]");
        let _ = writeln!(s, "kind = {}", f.kind);
        if let Some(p) = &self.dataset {
            let _ = writeln!(s, "dataset = {}", p.display());
        }
        let _ = writeln!(s, "seed = {}", f.seed);
        let _ = writeln!(s, "dim = {}", f.dim);
        let _ = writeln!(s, "alpha = {:?}", f.alpha);
        let _ = writeln!(s, "noise_sigma = {:?}", f.noise_sigma);
        let _ = writeln!(s, "n_capability = {}", f.n_capability);
        let _ = writeln!(s, "n_safety = {}", f.n_safety);
        let _ = writeln!(s, "n_probe = {}", f.n_probe);
        let _ = writeln!(s, "n_pretrain = {}", f.n_pretrain);
        let _ = writeln!(s, "hidden = {}", f.hidden);
        let _ = writeln!(s, "vocab = {}", f.vocab);
        let _ = writeln!(s, "pretrain_steps = {}", f.pretrain_steps);
        let _ = writeln!(s, "pretrain_lr = {:?}", f.pretrain_lr);
        let _ = writeln!(s, "beta = {:?}", f.beta);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "method = {}", t.method);
        let _ = writeln!(s, "eta = {:?}", t.eta);
        let _ = writeln!(s, "refresh = {}", t.refresh);
        let _ = writeln!(s, "reference_tasks = {}", t.reference_tasks.join(", "));
        let _ = writeln!(s, "delta = {}", t.delta);
        let _ = writeln!(s, "epsilon = {:?}", t.epsilon);
        let _ = writeln!(s, "safety_batch = {}", batch_text(t.safety_batch));
        let _ = writeln!(s, "ref_batch = {}", batch_text(t.ref_batch));
        let _ = writeln!(s, "replay_lambda = {:?}", t.replay_lambda);
        let _ = writeln!(s, "seed = {}", t.seed);
        for st in &t.stages {
            let _ = writeln!(s, "\n[stage]");
            let _ = writeln!(s, "task = {}", st.task);
            let _ = writeln!(s, "loss = {}", st.loss);
            let _ = writeln!(s, "steps = {}", st.steps);
            if let Some(r) = st.refresh {
                let _ = writeln!(s, "refresh = {r}");
            }
        }
        let _ = writeln!(s, "\n[output]\ndir = {}", self.out.display());
        s
    }
}

fn batch_text(b: Option<usize>) -> String {
    b.map_or_else(|| "full".to_string(), |n| n.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Top,
    Family,
    Train,
    Stage,
    Output,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Top => "top level",
            Section::Family => "[family]",
            Section::Train => "[train]",
            Section::Stage => "[stage]",
            Section::Output => "[output]",
        })
    }
}

const FAMILY_KEYS: &[&str] = &[
    "kind",
    "dataset",
    "seed",
    "dim",
    "alpha",
    "noise_sigma",
    "n_capability",
    "n_safety",
    "n_probe",
    "n_pretrain",
    "hidden",
    "vocab",
    "pretrain_steps",
    "pretrain_lr",
    "beta",
];
const TRAIN_KEYS: &[&str] = &[
    "method",
    "eta",
    "refresh",
    "reference_tasks",
    "delta",
    "epsilon",
    "safety_batch",
    "ref_batch",
    "replay_lambda",
    "seed",
];
const STAGE_KEYS: &[&str] = &["task", "loss", "steps", "refresh"];
const OUTPUT_KEYS: &[&str] = &["dir"];

/// A value with the position of its first character.
#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

impl Entry {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn parse<T: FromStr>(&self, what: &str) -> Result<T, ParseError> {
        self.value
            .parse()
            .map_err(|_| self.err(format!("`{}` is not a valid {what}", self.value)))
    }
}

#[derive(Default)]
struct Block {
    entries: Vec<(String, Entry)>,
    header_line: usize,
}

impl Block {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, e)| e)
    }
}

/// Parses an experiment file. Errors carry 1-based line and column.
pub fn parse(text: &str) -> Result<Experiment, ParseError> {
    let mut top = Block::default();
    let mut family: Option<Block> = None;
    let mut train: Option<Block> = None;
    let mut output: Option<Block> = None;
    let mut stages: Vec<Block> = Vec::new();
    let mut section = Section::Top;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let indent = content.len() - content.trim_start().len();
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let at = |column: usize, message: String| ParseError { line, column, message };
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| at(indent + trimmed.len(), "section header is missing `]`".into()))?
                .trim();
            let fresh = || Block {
                header_line: line,
                ..Block::default()
            };
            let once = |slot: &mut Option<Block>, s: Section| -> Result<Section, ParseError> {
                if slot.is_some() {
                    return Err(at(indent + 1, format!("duplicate section {s}")));
                }
                *slot = Some(fresh());
                Ok(s)
            };
            section = match name {
                "family" => once(&mut family, Section::Family)?,
                "train" => once(&mut train, Section::Train)?,
                "output" => once(&mut output, Section::Output)?,
                "stage" => {
                    stages.push(fresh());
                    Section::Stage
                }
                other => return Err(at(indent + 2, format!("unknown section `[{other}]`"))),
            };
            continue;
        }
        let eq = content
            .find('=')
            .ok_or_else(|| at(indent + 1, "expected `key = value`".into()))?;
        let key = content[..eq].trim().to_string();
        if key.is_empty() {
            return Err(at(indent + 1, "missing key before `=`".into()));
        }
        let after = &content[eq + 1..];
        let value = after.trim();
        let vcol = eq + 2 + (after.len() - after.trim_start().len());
        if value.is_empty() {
            return Err(at(vcol, format!("missing value for `{key}`")));
        }
        let (block, allowed): (&mut Block, &[&str]) = match section {
            Section::Top => (&mut top, &["version"]),
            Section::Family => (family.as_mut().expect("section opened"), FAMILY_KEYS),
            Section::Train => (train.as_mut().expect("section opened"), TRAIN_KEYS),
            Section::Stage => (stages.last_mut().expect("section opened"), STAGE_KEYS),
            Section::Output => (output.as_mut().expect("section opened"), OUTPUT_KEYS),
        };
        if !allowed.contains(&key.as_str()) {
            return Err(at(indent + 1, format!("unknown key `{key}` in {section}")));
        }
        if block.get(&key).is_some() {
            return Err(at(indent + 1, format!("duplicate key `{key}` in {section}")));
        }
        block.entries.push((
            key,
            Entry {
                value: value.to_string(),
                line,
                column: vcol,
            },
        ));
    }

    let eof = ParseError {
        line: text.lines().count().max(1),
        column: 1,
        message: String::new(),
    };
    let version = top.get("version").ok_or_else(|| ParseError {
        message: "missing `version`".into(),
        ..eof.clone()
    })?;
    let v: u32 = version.parse("version")?;
    if v != VERSION {
        return Err(version.err(format!("unsupported version {v}, expected {VERSION}")));
    }
    let family = family.ok_or_else(|| ParseError {
        message: "missing [family] section".into(),
        ..eof.clone()
    })?;
    let kind_entry = family.get("kind").ok_or_else(|| ParseError {
        line: family.header_line,
        column: 1,
        message: "[family] needs `kind`".into(),
    })?;
    let kind: FamilyKind = kind_entry.parse("family kind")?;

    let train_block = train.unwrap_or_default();
    let train_seed = match train_block.get("seed") {
        Some(e) => Some(e.parse::<u64>("seed")?),
        None => None,
    };
    let family_seed = match family.get("seed") {
        Some(e) => Some(e.parse::<u64>("seed")?),
        None => None,
    };
    let seed = train_seed.or(family_seed).unwrap_or(0);
    let mut exp = Experiment::preset(kind, seed);
    exp.family.seed = family_seed.unwrap_or(seed);
    exp.train.seed = seed;

    let fc = &mut exp.family;
    for (key, e) in &family.entries {
        match key.as_str() {
            "kind" | "seed" => {}
            "dataset" => exp.dataset = Some(PathBuf::from(&e.value)),
            "dim" => fc.dim = e.parse("integer")?,
            "alpha" => fc.alpha = e.parse("number")?,
            "noise_sigma" => fc.noise_sigma = e.parse("number")?,
            "n_capability" => fc.n_capability = e.parse("integer")?,
            "n_safety" => fc.n_safety = e.parse("integer")?,
            "n_probe" => fc.n_probe = e.parse("integer")?,
            "n_pretrain" => fc.n_pretrain = e.parse("integer")?,
            "hidden" => fc.hidden = e.parse("integer")?,
            "vocab" => fc.vocab = e.parse("integer")?,
            "pretrain_steps" => fc.pretrain_steps = e.parse("integer")?,
            "pretrain_lr" => fc.pretrain_lr = e.parse("number")?,
            "beta" => fc.beta = e.parse("number")?,
            _ => unreachable!("keys are checked while reading"),
        }
    }
    fc.validate().map_err(|err| ParseError {
        line: family.header_line,
        column: 1,
        message: err.to_string(),
    })?;

    let tc = &mut exp.train;
    for (key, e) in &train_block.entries {
        match key.as_str() {
            "seed" => {}
            "method" => tc.method = e.parse::<Method>("method")?,
            "eta" => tc.eta = e.parse("number")?,
            "refresh" => tc.refresh = e.parse::<RefreshPeriod>("refresh period (integer >= 1 or inf)")?,
            "reference_tasks" => {
                tc.reference_tasks = e
                    .value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                    .map(String::from)
                    .collect()
            }
            "delta" => tc.delta = e.parse::<Threshold>("threshold (number or rel:number)")?,
            "epsilon" => tc.epsilon = e.parse("number")?,
            "safety_batch" => tc.safety_batch = parse_batch(e)?,
            "ref_batch" => tc.ref_batch = parse_batch(e)?,
            "replay_lambda" => tc.replay_lambda = e.parse("number")?,
            _ => unreachable!("keys are checked while reading"),
        }
    }
    if !stages.is_empty() {
        tc.stages = stages
            .iter()
            .map(|b| {
                let need = |k: &str| {
                    b.get(k).ok_or_else(|| ParseError {
                        line: b.header_line,
                        column: 1,
                        message: format!("[stage] needs `{k}`"),
                    })
                };
                Ok(Stage {
                    task: need("task")?.value.clone(),
                    loss: need("loss")?.value.clone(),
                    steps: need("steps")?.parse("integer")?,
                    refresh: match b.get("refresh") {
                        Some(e) => Some(e.parse::<RefreshPeriod>("refresh period")?),
                        None => None,
                    },
                })
            })
            .collect::<Result<_, ParseError>>()?;
    }
    let train_line = train_block.header_line.max(1);
    tc.validate().map_err(|err| ParseError {
        line: train_line,
        column: 1,
        message: err.to_string(),
    })?;
    if let Some(dir) = output.as_ref().and_then(|o| o.get("dir")) {
        exp.out = PathBuf::from(&dir.value);
    }
    Ok(exp)
}

fn parse_batch(e: &Entry) -> Result<Option<usize>, ParseError> {
    if e.value == "full" {
        return Ok(None);
    }
    let n: usize = e.parse("batch size (positive integer or full)")?;
    if n == 0 {
        return Err(e.err("batch size must be positive"));
    }
    Ok(Some(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "version = 1\n[family]\nkind = quadratic_pair\n";

    #[test]
    fn minimal_file_takes_the_preset() {
        let e = parse(MINIMAL).unwrap();
        assert_eq!(e, Experiment::preset(FamilyKind::QuadraticPair, 0));
    }

    #[test]
    fn echo_round_trips() {
        for kind in [FamilyKind::QuadraticPair, FamilyKind::RegressionMlp, FamilyKind::PolicySftDpo] {
            let mut e = Experiment::preset(kind, 7);
            e.train.delta = Threshold::Absolute(1e-9);
            e.train.ref_batch = Some(50);
            e.train.refresh = RefreshPeriod::Never;
            e.dataset = Some("data/family.txt".into());
            assert_eq!(parse(&e.to_text()).unwrap(), e);
        }
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse("version = 1\n[family]\nkind = quadratic_pair\nbogus = 3\n").unwrap_err();
        assert_eq!((err.line, err.column), (4, 1));
        let err = parse("version = 1\n[family]\nkind = quadratic_pair\n[train]\neta =  abc\n").unwrap_err();
        assert_eq!((err.line, err.column), (5, 8));
        let err = parse("version = 2\n[family]\nkind = quadratic_pair\n").unwrap_err();
        assert_eq!((err.line, err.column), (1, 11));
        let err = parse("version = 1\n[famly]\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse("[family]\nkind = quadratic_pair\n").unwrap_err();
        assert!(err.message.contains("version"));
        let err = parse("version = 1\n[family]\nkind = quadratic_pair\n[train]\neta = -1\n").unwrap_err();
        assert_eq!(err.line, 4);
    }

    #[test]
    fn stages_replace_the_preset() {
        let text = format!("{MINIMAL}[stage]\ntask = safety\nloss = squared_error\nsteps = 7\nrefresh = inf\n");
        let e = parse(&text).unwrap();
        assert_eq!(e.train.stages.len(), 1);
        assert_eq!(e.train.stages[0].steps, 7);
        assert_eq!(e.train.stages[0].refresh, Some(RefreshPeriod::Never));
    }

    #[test]
    fn seeds_follow_train_seed() {
        let e = parse(&format!("{MINIMAL}[train]\nseed = 5\n")).unwrap();
        assert_eq!((e.family.seed, e.train.seed), (5, 5));
        let e = parse("version = 1\n[family]\nkind = quadratic_pair\nseed = 3\n").unwrap();
        assert_eq!((e.family.seed, e.train.seed), (3, 3));
    }
}
