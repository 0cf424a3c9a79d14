//! Small differentiable models with hand-derived gradients.
//!
//! Parameter layouts (all row-major, concatenated in this order):
//!
//! | kind                  | layout                              |
//! |-----------------------|-------------------------------------|
//! | `quadratic`           | `θ` (d)                             |
//! | `linear_regression`   | `w` (features), `c` (1)             |
//! | `logistic_regression` | `w` (features), `c` (1)             |
//! | `mlp2`                | `W1` (h×in), `b1` (h), `W2` (out×h), `b2` (out) |
//! | `softmax_policy`      | `W` (vocab×context), `b` (vocab)    |
//!
//! The quadratic loss is `½‖Aθ − b‖²` summed over the rows of `A`; every
//! other loss is a mean over the examples of the batch.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{check_finite, dot_slices, Matrix, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Quadratic,
    LinearRegression,
    LogisticRegression,
    Mlp2,
    SoftmaxPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value `a = act(z)`.
    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    kind: ModelKind,
    dims: Vec<usize>,
    activation: Activation,
}

impl ModelSpec {
    pub fn quadratic(dim: usize) -> Self {
        Self::raw(ModelKind::Quadratic, vec![dim])
    }

    pub fn linear_regression(features: usize) -> Self {
        Self::raw(ModelKind::LinearRegression, vec![features])
    }

    pub fn logistic_regression(features: usize) -> Self {
        Self::raw(ModelKind::LogisticRegression, vec![features])
    }

    pub fn mlp2(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp2,
            dims: vec![input, hidden, output],
            activation,
        }
    }

    pub fn softmax_policy(context: usize, vocab: usize) -> Self {
        Self::raw(ModelKind::SoftmaxPolicy, vec![context, vocab])
    }

    fn raw(kind: ModelKind, dims: Vec<usize>) -> Self {
        ModelSpec {
            kind,
            dims,
            activation: Activation::Tanh,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of input columns a batch must have.
    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Parameter count `d`.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            ModelKind::Quadratic => self.dims[0],
            ModelKind::LinearRegression | ModelKind::LogisticRegression => self.dims[0] + 1,
            ModelKind::Mlp2 => {
                let (i, h, o) = (self.dims[0], self.dims[1], self.dims[2]);
                h * i + h + o * h + o
            }
            ModelKind::SoftmaxPolicy => {
                let (c, v) = (self.dims[0], self.dims[1]);
                v * c + v
            }
        }
    }

    fn output_dim(&self) -> usize {
        match self.kind {
            ModelKind::Mlp2 => self.dims[2],
            ModelKind::SoftmaxPolicy => self.dims[1],
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            ModelKind::Mlp2 => 3,
            ModelKind::SoftmaxPolicy => 2,
            _ => 1,
        };
        if self.dims.len() != want || self.dims.contains(&0) {
            return Err(Error::config(format!(
                "{} needs {want} positive dims, got {:?}",
                self.kind, self.dims
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Quadratic => "quadratic",
            ModelKind::LinearRegression => "linear_regression",
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::Mlp2 => "mlp2",
            ModelKind::SoftmaxPolicy => "softmax_policy",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "quadratic" => ModelKind::Quadratic,
            "linear_regression" => ModelKind::LinearRegression,
            "logistic_regression" => ModelKind::LogisticRegression,
            "mlp2" => ModelKind::Mlp2,
            "softmax_policy" => ModelKind::SoftmaxPolicy,
            other => return Err(Error::config(format!("unknown model kind `{other}`"))),
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// DPO preference temperature used when none is given.
pub const DEFAULT_BETA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
    NllSft,
    DpoPairwise { beta: f64 },
}

impl LossKind {
    pub fn dpo() -> Self {
        LossKind::DpoPairwise { beta: DEFAULT_BETA }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared_error",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::NllSft => "nll_sft",
            LossKind::DpoPairwise { .. } => "dpo_pairwise",
        }
    }

    pub fn is_dpo(&self) -> bool {
        matches!(self, LossKind::DpoPairwise { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let LossKind::DpoPairwise { beta } = *self {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(Error::config(format!("dpo beta must be positive, got {beta}")));
            }
        }
        Ok(())
    }

    /// Parses a tag; `dpo_pairwise` takes `beta`.
    pub fn from_tag(tag: &str, beta: f64) -> Result<Self> {
        let k = match tag {
            "squared_error" => LossKind::SquaredError,
            "cross_entropy" => LossKind::CrossEntropy,
            "nll_sft" => LossKind::NllSft,
            "dpo_pairwise" => LossKind::DpoPairwise { beta },
            other => return Err(Error::config(format!("unknown loss kind `{other}`"))),
        };
        k.validate()?;
        Ok(k)
    }
}

/// One (context, preferred, rejected) triple; `context` indexes a batch input row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferencePair {
    pub context: usize,
    pub preferred: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Real-valued targets, one row per input row.
    Values(Matrix),
    /// Class labels, one per input row.
    Labels(Vec<usize>),
    Pairs(Vec<PreferencePair>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
    /// Frozen reference policy for pairwise preference losses.
    pub ref_params: Option<ParamVector>,
}

impl Batch {
    pub fn values(inputs: Matrix, targets: Matrix) -> Self {
        Batch {
            inputs,
            targets: Targets::Values(targets),
            ref_params: None,
        }
    }

    pub fn labels(inputs: Matrix, labels: Vec<usize>) -> Self {
        Batch {
            inputs,
            targets: Targets::Labels(labels),
            ref_params: None,
        }
    }

    pub fn pairs(inputs: Matrix, pairs: Vec<PreferencePair>, ref_params: ParamVector) -> Self {
        Batch {
            inputs,
            targets: Targets::Pairs(pairs),
            ref_params: Some(ref_params),
        }
    }

    /// Number of examples (rows, or pairs for preference data).
    pub fn len(&self) -> usize {
        match &self.targets {
            Targets::Pairs(p) => p.len(),
            _ => self.inputs.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sub-batch made of the given examples, in the given order (repeats allowed).
    pub fn select(&self, idx: &[usize]) -> Batch {
        match &self.targets {
            Targets::Values(t) => Batch {
                inputs: self.inputs.select_rows(idx),
                targets: Targets::Values(t.select_rows(idx)),
                ref_params: self.ref_params.clone(),
            },
            Targets::Labels(l) => Batch {
                inputs: self.inputs.select_rows(idx),
                targets: Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
                ref_params: self.ref_params.clone(),
            },
            Targets::Pairs(p) => {
                let rows: Vec<usize> = idx.iter().map(|&i| p[i].context).collect();
                let pairs = idx
                    .iter()
                    .enumerate()
                    .map(|(new, &i)| PreferencePair {
                        context: new,
                        ..p[i]
                    })
                    .collect();
                Batch {
                    inputs: self.inputs.select_rows(&rows),
                    targets: Targets::Pairs(pairs),
                    ref_params: self.ref_params.clone(),
                }
            }
        }
    }

    pub fn with_ref_params(mut self, ref_params: ParamVector) -> Batch {
        self.ref_params = Some(ref_params);
        self
    }
}

fn check_compat(spec: &ModelSpec, kind: &LossKind, theta: &ParamVector, batch: &Batch) -> Result<()> {
    spec.validate()?;
    kind.validate()?;
    let d = spec.param_dim();
    if theta.len() != d {
        return Err(Error::Dimension {
            expected: d,
            found: theta.len(),
        });
    }
    if batch.is_empty() {
        return Err(Error::config("batch must hold at least one example"));
    }
    if batch.inputs.cols() != spec.input_dim() {
        return Err(Error::Dimension {
            expected: spec.input_dim(),
            found: batch.inputs.cols(),
        });
    }
    let ok = matches!(
        (spec.kind, kind),
        (ModelKind::Quadratic, LossKind::SquaredError)
            | (ModelKind::LinearRegression, LossKind::SquaredError)
            | (ModelKind::LogisticRegression, LossKind::CrossEntropy)
            | (ModelKind::Mlp2, LossKind::SquaredError)
            | (ModelKind::Mlp2, LossKind::CrossEntropy)
            | (ModelKind::SoftmaxPolicy, LossKind::NllSft)
            | (ModelKind::SoftmaxPolicy, LossKind::DpoPairwise { .. })
    );
    if !ok {
        return Err(Error::config(format!(
            "loss {} is not defined for model {}",
            kind.tag(),
            spec.kind
        )));
    }
    let rows = batch.inputs.rows();
    let classes = match spec.kind {
        ModelKind::LogisticRegression => 2,
        _ => spec.output_dim(),
    };
    match (&batch.targets, kind) {
        (Targets::Values(t), LossKind::SquaredError) => {
            if t.rows() != rows {
                return Err(Error::Dimension {
                    expected: rows,
                    found: t.rows(),
                });
            }
            if t.cols() != spec.output_dim() {
                return Err(Error::Dimension {
                    expected: spec.output_dim(),
                    found: t.cols(),
                });
            }
        }
        (Targets::Labels(l), LossKind::CrossEntropy | LossKind::NllSft) => {
            if l.len() != rows {
                return Err(Error::Dimension {
                    expected: rows,
                    found: l.len(),
                });
            }
            if let Some(&bad) = l.iter().find(|&&y| y >= classes) {
                return Err(Error::config(format!("label {bad} out of range 0..{classes}")));
            }
        }
        (Targets::Pairs(p), LossKind::DpoPairwise { .. }) => {
            for pair in p {
                if pair.context >= rows || pair.preferred >= classes || pair.rejected >= classes {
                    return Err(Error::config(format!("preference pair {pair:?} out of range")));
                }
            }
            match &batch.ref_params {
                Some(r) if r.len() == d => {}
                Some(r) => {
                    return Err(Error::Dimension {
                        expected: d,
                        found: r.len(),
                    })
                }
                None => return Err(Error::config("dpo_pairwise batch needs ref_params")),
            }
        }
        _ => {
            return Err(Error::config(format!(
                "batch targets do not match loss {}",
                kind.tag()
            )))
        }
    }
    if !kind.is_dpo() && batch.ref_params.is_some() {
        return Err(Error::config("ref_params is only meaningful for dpo_pairwise"));
    }
    Ok(())
}

/// Mean loss over the batch (summed for `quadratic`).
pub fn loss(spec: &ModelSpec, kind: &LossKind, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    check_compat(spec, kind, theta, batch)?;
    let value = evaluate(spec, kind, theta.as_slice(), batch, None);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::non_finite(format!("{} loss", kind.tag())))
    }
}

/// Exact gradient of [`loss`] with respect to `theta`.
pub fn gradient(
    spec: &ModelSpec,
    kind: &LossKind,
    theta: &ParamVector,
    batch: &Batch,
) -> Result<ParamVector> {
    Ok(loss_and_gradient(spec, kind, theta, batch)?.1)
}

pub fn loss_and_gradient(
    spec: &ModelSpec,
    kind: &LossKind,
    theta: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_compat(spec, kind, theta, batch)?;
    let mut grad = vec![0.0; theta.len()];
    let value = evaluate(spec, kind, theta.as_slice(), batch, Some(&mut grad));
    if !value.is_finite() {
        return Err(Error::non_finite(format!("{} loss", kind.tag())));
    }
    check_finite(&grad, &format!("{} gradient", kind.tag()))?;
    Ok((value, ParamVector::from_raw(grad)))
}

/// Log-probabilities of a softmax policy at one context.
pub fn policy_log_probs(spec: &ModelSpec, theta: &ParamVector, context: &[f64]) -> Result<Vec<f64>> {
    if spec.kind != ModelKind::SoftmaxPolicy {
        return Err(Error::config("policy_log_probs needs a softmax_policy"));
    }
    if theta.len() != spec.param_dim() {
        return Err(Error::Dimension {
            expected: spec.param_dim(),
            found: theta.len(),
        });
    }
    if context.len() != spec.input_dim() {
        return Err(Error::Dimension {
            expected: spec.input_dim(),
            found: context.len(),
        });
    }
    let mut out = vec![0.0; spec.dims[1]];
    policy_logits(spec, theta.as_slice(), context, &mut out);
    log_softmax_in_place(&mut out);
    Ok(out)
}

fn evaluate(
    spec: &ModelSpec,
    kind: &LossKind,
    theta: &[f64],
    batch: &Batch,
    grad: Option<&mut Vec<f64>>,
) -> f64 {
    match spec.kind {
        ModelKind::Quadratic => quadratic(theta, batch, grad),
        ModelKind::LinearRegression => linear(theta, batch, grad),
        ModelKind::LogisticRegression => logistic(theta, batch, grad),
        ModelKind::Mlp2 => mlp2(spec, kind, theta, batch, grad),
        ModelKind::SoftmaxPolicy => match kind {
            LossKind::DpoPairwise { beta } => dpo(spec, *beta, theta, batch, grad),
            _ => policy_nll(spec, theta, batch, grad),
        },
    }
}

fn value_targets(batch: &Batch) -> &Matrix {
    match &batch.targets {
        Targets::Values(t) => t,
        _ => unreachable!("checked by check_compat"),
    }
}

fn label_targets(batch: &Batch) -> &[usize] {
    match &batch.targets {
        Targets::Labels(l) => l,
        _ => unreachable!("checked by check_compat"),
    }
}

fn quadratic(theta: &[f64], batch: &Batch, mut grad: Option<&mut Vec<f64>>) -> f64 {
    let b = value_targets(batch);
    let mut total = 0.0;
    for i in 0..batch.inputs.rows() {
        let a = batch.inputs.row(i);
        let r = dot_slices(a, theta) - b.row(i)[0];
        total += 0.5 * r * r;
        if let Some(g) = grad.as_deref_mut() {
            for (gj, aj) in g.iter_mut().zip(a) {
                *gj += r * aj;
            }
        }
    }
    total
}

fn linear(theta: &[f64], batch: &Batch, mut grad: Option<&mut Vec<f64>>) -> f64 {
    let y = value_targets(batch);
    let n = batch.inputs.rows();
    let f = theta.len() - 1;
    let mut total = 0.0;
    for i in 0..n {
        let x = batch.inputs.row(i);
        let r = dot_slices(x, &theta[..f]) + theta[f] - y.row(i)[0];
        total += 0.5 * r * r;
        if let Some(g) = grad.as_deref_mut() {
            for (gj, xj) in g[..f].iter_mut().zip(x) {
                *gj += r * xj;
            }
            g[f] += r;
        }
    }
    finish_mean(total, n, grad)
}

fn logistic(theta: &[f64], batch: &Batch, mut grad: Option<&mut Vec<f64>>) -> f64 {
    let y = label_targets(batch);
    let n = batch.inputs.rows();
    let f = theta.len() - 1;
    let mut total = 0.0;
    for i in 0..n {
        let x = batch.inputs.row(i);
        let z = dot_slices(x, &theta[..f]) + theta[f];
        let yi = y[i] as f64;
        total += softplus(z) - yi * z;
        if let Some(g) = grad.as_deref_mut() {
            let r = sigmoid(z) - yi;
            for (gj, xj) in g[..f].iter_mut().zip(x) {
                *gj += r * xj;
            }
            g[f] += r;
        }
    }
    finish_mean(total, n, grad)
}

fn mlp2(
    spec: &ModelSpec,
    kind: &LossKind,
    theta: &[f64],
    batch: &Batch,
    mut grad: Option<&mut Vec<f64>>,
) -> f64 {
    let (ni, nh, no) = (spec.dims[0], spec.dims[1], spec.dims[2]);
    let (w1, rest) = theta.split_at(nh * ni);
    let (b1, rest) = rest.split_at(nh);
    let (w2, b2) = rest.split_at(no * nh);
    let act = spec.activation;
    let n = batch.inputs.rows();

    let mut hidden = vec![0.0; nh];
    let mut out = vec![0.0; no];
    let mut d_out = vec![0.0; no];
    let mut d_hidden = vec![0.0; nh];
    let mut total = 0.0;
    for i in 0..n {
        let x = batch.inputs.row(i);
        for (k, h) in hidden.iter_mut().enumerate() {
            *h = act.apply(dot_slices(&w1[k * ni..(k + 1) * ni], x) + b1[k]);
        }
        for (o, v) in out.iter_mut().enumerate() {
            *v = dot_slices(&w2[o * nh..(o + 1) * nh], &hidden) + b2[o];
        }
        match kind {
            LossKind::SquaredError => {
                let y = value_targets(batch).row(i);
                for o in 0..no {
                    let r = out[o] - y[o];
                    total += 0.5 * r * r;
                    d_out[o] = r;
                }
            }
            _ => {
                let y = label_targets(batch)[i];
                log_softmax_in_place(&mut out);
                total -= out[y];
                for o in 0..no {
                    d_out[o] = out[o].exp() - if o == y { 1.0 } else { 0.0 };
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let (gw1, rest) = g.split_at_mut(nh * ni);
            let (gb1, rest) = rest.split_at_mut(nh);
            let (gw2, gb2) = rest.split_at_mut(no * nh);
            d_hidden.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..no {
                gb2[o] += d_out[o];
                for k in 0..nh {
                    gw2[o * nh + k] += d_out[o] * hidden[k];
                    d_hidden[k] += d_out[o] * w2[o * nh + k];
                }
            }
            for k in 0..nh {
                let dz = d_hidden[k] * act.derivative(hidden[k]);
                gb1[k] += dz;
                for (gw, xj) in gw1[k * ni..(k + 1) * ni].iter_mut().zip(x) {
                    *gw += dz * xj;
                }
            }
        }
    }
    finish_mean(total, n, grad)
}

fn policy_logits(spec: &ModelSpec, theta: &[f64], x: &[f64], out: &mut [f64]) {
    let (c, v) = (spec.dims[0], spec.dims[1]);
    let (w, b) = theta.split_at(v * c);
    for (o, z) in out.iter_mut().enumerate() {
        *z = dot_slices(&w[o * c..(o + 1) * c], x) + b[o];
    }
}

/// Accumulates `scale * ∇_θ log π(y|x)` into `g`, given log-probabilities `lp` at `x`.
fn add_log_prob_grad(spec: &ModelSpec, lp: &[f64], x: &[f64], y: usize, scale: f64, g: &mut [f64]) {
    let (c, v) = (spec.dims[0], spec.dims[1]);
    let (gw, gb) = g.split_at_mut(v * c);
    for o in 0..v {
        let dz = scale * ((if o == y { 1.0 } else { 0.0 }) - lp[o].exp());
        gb[o] += dz;
        for (gwj, xj) in gw[o * c..(o + 1) * c].iter_mut().zip(x) {
            *gwj += dz * xj;
        }
    }
}

fn policy_nll(spec: &ModelSpec, theta: &[f64], batch: &Batch, mut grad: Option<&mut Vec<f64>>) -> f64 {
    let y = label_targets(batch);
    let n = batch.inputs.rows();
    let mut lp = vec![0.0; spec.dims[1]];
    let mut total = 0.0;
    for i in 0..n {
        let x = batch.inputs.row(i);
        policy_logits(spec, theta, x, &mut lp);
        log_softmax_in_place(&mut lp);
        total -= lp[y[i]];
        if let Some(g) = grad.as_deref_mut() {
            add_log_prob_grad(spec, &lp, x, y[i], -1.0, g);
        }
    }
    finish_mean(total, n, grad)
}

fn dpo(spec: &ModelSpec, beta: f64, theta: &[f64], batch: &Batch, mut grad: Option<&mut Vec<f64>>) -> f64 {
    let pairs = match &batch.targets {
        Targets::Pairs(p) => p,
        _ => unreachable!("checked by check_compat"),
    };
    let reference = batch
        .ref_params
        .as_ref()
        .expect("checked by check_compat")
        .as_slice();
    let v = spec.dims[1];
    let mut lp = vec![0.0; v];
    let mut lp_ref = vec![0.0; v];
    let mut total = 0.0;
    for p in pairs {
        let x = batch.inputs.row(p.context);
        policy_logits(spec, theta, x, &mut lp);
        log_softmax_in_place(&mut lp);
        policy_logits(spec, reference, x, &mut lp_ref);
        log_softmax_in_place(&mut lp_ref);
        let margin = beta
            * ((lp[p.preferred] - lp[p.rejected]) - (lp_ref[p.preferred] - lp_ref[p.rejected]));
        // −log σ(h) = softplus(−h)
        total += softplus(-margin);
        if let Some(g) = grad.as_deref_mut() {
            let w = -sigmoid(-margin) * beta;
            add_log_prob_grad(spec, &lp, x, p.preferred, w, g);
            add_log_prob_grad(spec, &lp, x, p.rejected, -w, g);
        }
    }
    finish_mean(total, pairs.len(), grad)
}

fn finish_mean(total: f64, n: usize, grad: Option<&mut Vec<f64>>) -> f64 {
    let inv = 1.0 / n as f64;
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v *= inv);
    }
    total * inv
}

pub(crate) fn log_softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter() {
        s += (v - max).exp();
    }
    let lse = max + s.ln();
    z.iter_mut().for_each(|v| *v -= lse);
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
