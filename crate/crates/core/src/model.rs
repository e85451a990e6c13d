//! Network backbones with a logits layer and an optional pignistic prior head.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use edl_autodiff::{Padding, Parameter, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::dirichlet::{argmax, DirichletParams, SimplexPoint};
use crate::error::{EdlError, Result};
use crate::loss::{ActivationKind, EvidenceActivation};
use crate::metrics::EvalReport;
use crate::risk::{PignisticHead, RiskMatrix};

/// Rows per forward pass during batched inference.
const INFERENCE_BATCH: usize = 256;
const CONV_KERNEL: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum BackboneSpec {
    /// Fully connected ReLU layers of the given widths.
    Mlp { hidden: Vec<usize> },
    /// conv(20, 5×5) → pool → conv(50, 5×5) → pool → dense(500), every width
    /// multiplied by `width`.
    Cnn { width: f64 },
}

impl BackboneSpec {
    pub fn mlp(hidden: &[usize]) -> Self {
        Self::Mlp { hidden: hidden.to_vec() }
    }

    fn cnn_widths(width: f64) -> [usize; 3] {
        [20.0, 50.0, 500.0].map(|w: f64| ((w * width).round() as usize).max(1))
    }
}

impl fmt::Display for BackboneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mlp { hidden } => {
                let widths: Vec<String> = hidden.iter().map(usize::to_string).collect();
                write!(f, "mlp:{}", widths.join(","))
            }
            Self::Cnn { width } => write!(f, "cnn:w={width:?}"),
        }
    }
}

/// `mlp:128`, `mlp:256,64`, `cnn:w=1.0` or `cnn`.
impl FromStr for BackboneSpec {
    type Err = EdlError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || EdlError::InvalidArgument(format!("invalid backbone `{s}`"));
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "mlp" => {
                let hidden = rest
                    .split(',')
                    .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?;
                Ok(Self::Mlp { hidden })
            }
            "cnn" => {
                let width = match rest {
                    "" => 1.0,
                    r => r
                        .strip_prefix("w=")
                        .and_then(|w| w.parse::<f64>().ok())
                        .filter(|w| w.is_finite() && *w > 0.0)
                        .ok_or_else(bad)?,
                };
                Ok(Self::Cnn { width })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Softmax,
    Edl,
    RiskEdl,
    EdlP,
    EdlPg,
}

impl TrainMode {
    pub fn is_evidential(self) -> bool {
        self != Self::Softmax
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::Edl => "edl",
            Self::RiskEdl => "risk-edl",
            Self::EdlP => "edl-p",
            Self::EdlPg => "edl-pg",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = EdlError;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Softmax, Self::Edl, Self::RiskEdl, Self::EdlP, Self::EdlPg]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| EdlError::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Backbone,
    Logits,
    Pignistic,
}

impl ParamGroup {
    pub fn of(name: &str) -> Self {
        match name.split('.').next() {
            Some("logits") => Self::Logits,
            Some("pignistic") => Self::Pignistic,
            _ => Self::Backbone,
        }
    }
}

/// How the pignistic head starts out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadInit {
    Zeros,
    /// Weights drawn from `N(0, σ²)`, zero bias.
    Gaussian { sigma: f64, seed: u64 },
}

/// Expected parameter names and shapes for a configuration.
pub fn parameter_layout(
    backbone: &BackboneSpec,
    input_shape: &[usize],
    classes: usize,
    with_head: bool,
) -> Result<Vec<(String, Vec<usize>)>> {
    let mut layout = Vec::new();
    let features = match backbone {
        BackboneSpec::Mlp { hidden } => {
            if hidden.is_empty() {
                return Err(EdlError::InvalidArgument("an MLP needs at least one hidden layer".into()));
            }
            let mut fan_in: usize = input_shape.iter().product();
            for (i, &h) in hidden.iter().enumerate() {
                layout.push((format!("backbone.{i}.weight"), vec![fan_in, h]));
                layout.push((format!("backbone.{i}.bias"), vec![h]));
                fan_in = h;
            }
            fan_in
        }
        BackboneSpec::Cnn { width } => {
            let &[h, w, c] = input_shape else {
                return Err(EdlError::InvalidArgument(format!(
                    "a CNN needs H × W × C inputs, got {input_shape:?}"
                )));
            };
            let [c1, c2, dense] = BackboneSpec::cnn_widths(*width);
            let shrink = |n: usize| n.checked_sub(CONV_KERNEL - 1).map(|n| n / 2).filter(|&n| n > 0);
            let (h2, w2) = shrink(h)
                .and_then(shrink)
                .zip(shrink(w).and_then(shrink))
                .ok_or_else(|| EdlError::InvalidArgument(format!("{h}×{w} images are too small for the CNN")))?;
            layout.push(("backbone.conv1.weight".into(), vec![c1, c, CONV_KERNEL, CONV_KERNEL]));
            layout.push(("backbone.conv1.bias".into(), vec![c1, 1, 1]));
            layout.push(("backbone.conv2.weight".into(), vec![c2, c1, CONV_KERNEL, CONV_KERNEL]));
            layout.push(("backbone.conv2.bias".into(), vec![c2, 1, 1]));
            layout.push(("backbone.dense.weight".into(), vec![c2 * h2 * w2, dense]));
            layout.push(("backbone.dense.bias".into(), vec![dense]));
            dense
        }
    };
    layout.push(("logits.weight".into(), vec![features, classes]));
    layout.push(("logits.bias".into(), vec![classes]));
    if with_head {
        layout.push(("pignistic.weight".into(), vec![classes, features]));
        layout.push(("pignistic.bias".into(), vec![classes]));
    }
    Ok(layout)
}

/// Network outputs for a batch: penultimate features `g` and logits `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub features: Tensor,
    pub logits: Tensor,
}

/// Per-sample predictive distributions and decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub probs: Vec<SimplexPoint>,
    pub entropy: Vec<f64>,
    pub decisions: Vec<usize>,
    /// Dirichlet concentrations; absent for softmax models.
    pub alpha: Option<Vec<Vec<f64>>>,
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: u32,
    pub seed: u64,
    /// Every training phase applied so far, oldest first.
    pub phases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceModel {
    backbone: BackboneSpec,
    input_shape: Vec<usize>,
    class_labels: Vec<u32>,
    pub activation: EvidenceActivation,
    pub mode: TrainMode,
    params: Vec<Parameter>,
    frozen: BTreeSet<ParamGroup>,
    pub meta: TrainingMeta,
}

impl EvidenceModel {
    /// Glorot-uniform weights and zero biases from `seed`.
    pub fn new(
        backbone: BackboneSpec,
        input_shape: &[usize],
        class_labels: Vec<u32>,
        activation: EvidenceActivation,
        seed: u64,
    ) -> Result<Self> {
        if class_labels.len() < 2 {
            return Err(EdlError::InvalidArgument("a classifier needs at least 2 classes".into()));
        }
        let layout = parameter_layout(&backbone, input_shape, class_labels.len(), false)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    let (fan_in, fan_out) = match shape.as_slice() {
                        [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
                        [i, o] => (*i, *o),
                        _ => unreachable!("weights are 2-D or 4-D"),
                    };
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                    Tensor::new(shape, data).expect("layout shape")
                };
                Parameter::new(name, value)
            })
            .collect();
        Ok(Self {
            backbone,
            input_shape: input_shape.to_vec(),
            class_labels,
            activation,
            mode: TrainMode::Softmax,
            params,
            frozen: BTreeSet::new(),
            meta: TrainingMeta { seed, ..TrainingMeta::default() },
        })
    }

    /// Rebuilds a model from named tensors, validating names and shapes.
    pub fn from_parts(
        backbone: BackboneSpec,
        input_shape: Vec<usize>,
        class_labels: Vec<u32>,
        activation: EvidenceActivation,
        mode: TrainMode,
        params: Vec<Parameter>,
        meta: TrainingMeta,
    ) -> Result<Self> {
        let with_head = params.iter().any(|p| ParamGroup::of(&p.name) == ParamGroup::Pignistic);
        let layout = parameter_layout(&backbone, &input_shape, class_labels.len(), with_head)?;
        if layout.len() != params.len() {
            return Err(EdlError::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(crate::error::CheckpointError::Shape {
                    name: p.name.clone(),
                    expected: shape.clone(),
                    found: p.value.shape().to_vec(),
                }
                .into());
            }
        }
        Ok(Self {
            backbone,
            input_shape,
            class_labels,
            activation,
            mode,
            params,
            frozen: BTreeSet::new(),
            meta,
        })
    }

    pub fn backbone(&self) -> &BackboneSpec {
        &self.backbone
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_labels(&self) -> &[u32] {
        &self.class_labels
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn feature_dim(&self) -> usize {
        self.param("logits.weight").expect("logits layer").shape()[0]
    }

    pub fn freeze(&mut self, group: ParamGroup) {
        self.frozen.insert(group);
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self.is_frozen(ParamGroup::of(name))
    }

    pub fn has_head(&self) -> bool {
        self.param("pignistic.bias").is_some()
    }

    pub fn head(&self) -> Option<PignisticHead> {
        Some(PignisticHead {
            weight: self.param("pignistic.weight")?.clone(),
            bias: self.param("pignistic.bias")?.clone(),
        })
    }

    /// Attaches a pignistic head, replacing any existing one.
    pub fn attach_head(&mut self, init: HeadInit) {
        let (k, d) = (self.classes(), self.feature_dim());
        let weight = match init {
            HeadInit::Zeros => Tensor::zeros(&[k, d]),
            HeadInit::Gaussian { sigma, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, sigma).expect("valid sigma");
                let data = (0..k * d).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(vec![k, d], data).expect("head shape")
            }
        };
        self.set_head(PignisticHead { weight, bias: Tensor::zeros(&[k]) });
    }

    pub fn set_head(&mut self, head: PignisticHead) {
        self.params.retain(|p| ParamGroup::of(&p.name) != ParamGroup::Pignistic);
        self.params.push(Parameter::new("pignistic.weight", head.weight));
        self.params.push(Parameter::new("pignistic.bias", head.bias));
    }

    /// SHA-256 over the names, shapes and bytes of every parameter outside
    /// the pignistic head.
    pub fn frozen_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.params.iter().filter(|p| ParamGroup::of(&p.name) != ParamGroup::Pignistic) {
            hasher.update((p.name.len() as u64).to_le_bytes());
            hasher.update(p.name.as_bytes());
            for &d in p.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Puts model inputs on the tape; images become `[N, C, H, W]` for the CNN.
    pub(crate) fn input(&self, tape: &mut Tape, x: &Tensor) -> Result<Var> {
        let n = x.shape()[0];
        if x.shape()[1..] != self.input_shape[..] {
            return Err(EdlError::InvalidArgument(format!(
                "model expects samples of shape {:?}, got {:?}",
                self.input_shape,
                &x.shape()[1..]
            )));
        }
        let t = match self.backbone {
            BackboneSpec::Mlp { .. } => x.clone().reshape(&[n, x.numel() / n.max(1)])?,
            BackboneSpec::Cnn { .. } => {
                let (h, w, c) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
                let src = x.data();
                let mut out = vec![0.0; src.len()];
                for s in 0..n {
                    for r in 0..h {
                        for q in 0..w {
                            for ch in 0..c {
                                out[((s * c + ch) * h + r) * w + q] = src[((s * h + r) * w + q) * c + ch];
                            }
                        }
                    }
                }
                Tensor::new(vec![n, c, h, w], out)?
            }
        };
        Ok(tape.constant(t))
    }

    /// Places every parameter on the tape, tracked when `tracked(name)`.
    pub(crate) fn bind(&self, tape: &mut Tape, tracked: impl Fn(&str) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if tracked(&p.name) {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        let i = self.params.iter().position(|p| p.name == name).expect("known parameter");
        vars[i]
    }

    /// `(g, f)` for a batch already placed on the tape.
    pub(crate) fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let g = match &self.backbone {
            BackboneSpec::Mlp { hidden } => {
                let mut h = x;
                for i in 0..hidden.len() {
                    let w = self.var(vars, &format!("backbone.{i}.weight"));
                    let b = self.var(vars, &format!("backbone.{i}.bias"));
                    let z = tape.matmul(h, w)?;
                    let z = tape.add(z, b)?;
                    h = tape.relu(z);
                }
                h
            }
            BackboneSpec::Cnn { .. } => {
                let mut h = x;
                for layer in ["conv1", "conv2"] {
                    let w = self.var(vars, &format!("backbone.{layer}.weight"));
                    let b = self.var(vars, &format!("backbone.{layer}.bias"));
                    let z = tape.conv2d(h, w, Padding::Valid)?;
                    let z = tape.add(z, b)?;
                    let z = tape.relu(z);
                    h = tape.max_pool2(z)?;
                }
                let n = tape.shape(h)[0];
                let flat = tape.value(h).numel() / n.max(1);
                let h = tape.reshape(h, &[n, flat])?;
                let w = self.var(vars, "backbone.dense.weight");
                let b = self.var(vars, "backbone.dense.bias");
                let z = tape.matmul(h, w)?;
                let z = tape.add(z, b)?;
                tape.relu(z)
            }
        };
        let w = self.var(vars, "logits.weight");
        let b = self.var(vars, "logits.bias");
        let f = tape.matmul(g, w)?;
        let f = tape.add(f, b)?;
        Ok((g, f))
    }

    /// Features and logits for every sample of `x`, in inference batches.
    pub fn outputs(&self, x: &Tensor) -> Result<Outputs> {
        let n = x.shape()[0];
        let (d, k) = (self.feature_dim(), self.classes());
        let mut features = Vec::with_capacity(n * d);
        let mut logits = Vec::with_capacity(n * k);
        for start in (0..n).step_by(INFERENCE_BATCH) {
            let batch = x.slice_rows(start, (start + INFERENCE_BATCH).min(n));
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, |_| false);
            let input = self.input(&mut tape, &batch)?;
            let (g, f) = self.forward(&mut tape, &vars, input)?;
            features.extend_from_slice(tape.value(g).data());
            logits.extend_from_slice(tape.value(f).data());
        }
        Ok(Outputs {
            features: Tensor::new(vec![n, d], features)?,
            logits: Tensor::new(vec![n, k], logits)?,
        })
    }

    /// Non-negative evidence `ζ(f)` for logits.
    pub fn evidence(&self, logits: &Tensor) -> Tensor {
        logits.map(|x| self.activation.eval(x))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Predictions> {
        let out = self.outputs(x)?;
        self.predict_from(&out)
    }

    pub fn predict_from(&self, out: &Outputs) -> Result<Predictions> {
        let n = out.logits.shape()[0];
        let mut probs = Vec::with_capacity(n);
        let mut entropy = Vec::with_capacity(n);
        let mut decisions = Vec::with_capacity(n);
        if !self.mode.is_evidential() {
            for i in 0..n {
                let p = softmax(out.logits.row(i));
                entropy.push(p.entropy());
                decisions.push(argmax(p.probs()));
                probs.push(p);
            }
            return Ok(Predictions { probs, entropy, decisions, alpha: None });
        }
        let evidence = self.evidence(&out.logits);
        let head = self.head();
        let mut alphas = Vec::with_capacity(n);
        for i in 0..n {
            let c = evidence.row(i);
            let alpha: Vec<f64> = match &head {
                Some(h) => {
                    let g = h.prior(out.features.row(i))?;
                    c.iter().zip(g).map(|(c, g)| c + g).collect()
                }
                None => c.iter().map(|c| c + 1.0).collect(),
            };
            let dir = DirichletParams::new(alpha)?;
            entropy.push(dir.predictive_entropy());
            decisions.push(argmax(dir.alpha()));
            probs.push(dir.mean());
            alphas.push(dir.alpha().to_vec());
        }
        Ok(Predictions { probs, entropy, decisions, alpha: Some(alphas) })
    }

    /// Full report on `data`, with costs when `risk` is given and OoD entropy
    /// AUC when `ood` is given.
    pub fn evaluate(&self, data: &Dataset, risk: Option<&RiskMatrix>, ood: Option<&Dataset>) -> Result<EvalReport> {
        let pred = self.predict(data.features())?;
        let ood_entropy = ood.map(|o| self.predict(o.features()).map(|p| p.entropy)).transpose()?;
        EvalReport::build(
            data.labels(),
            &pred.decisions,
            &pred.entropy,
            self.classes(),
            risk,
            ood_entropy.as_deref(),
        )
    }

    /// Same model, parameters and mode, with a different evidence activation.
    pub fn with_activation(mut self, kind: ActivationKind) -> Self {
        self.activation = EvidenceActivation::new(kind);
        self
    }
}

/// Max-shifted softmax of one logit row.
pub fn softmax(logits: &[f64]) -> SimplexPoint {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = e.iter().sum();
    SimplexPoint::new(e.into_iter().map(|v| v / total).collect()).expect("softmax is a distribution")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp() -> EvidenceModel {
        EvidenceModel::new(
            BackboneSpec::mlp(&[8]),
            &[2],
            vec![0, 1, 2],
            EvidenceActivation::new(ActivationKind::Softplus),
            3,
        )
        .unwrap()
    }

    #[test]
    fn backbone_spec_round_trip() {
        for s in ["mlp:128", "mlp:256,64", "cnn:w=0.5"] {
            assert_eq!(s.parse::<BackboneSpec>().unwrap().to_string(), s);
        }
        assert_eq!("cnn".parse::<BackboneSpec>().unwrap(), BackboneSpec::Cnn { width: 1.0 });
        for bad in ["mlp:", "mlp:0", "cnn:w=-1", "rnn"] {
            assert!(bad.parse::<BackboneSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn lenet_layout_for_mnist() {
        let layout = parameter_layout(&BackboneSpec::Cnn { width: 1.0 }, &[28, 28, 1], 10, true).unwrap();
        let shapes: Vec<&[usize]> = layout.iter().map(|(_, s)| s.as_slice()).collect();
        assert_eq!(shapes[0], &[20, 1, 5, 5]);
        assert_eq!(shapes[2], &[50, 20, 5, 5]);
        assert_eq!(shapes[4], &[800, 500]);
        assert_eq!(shapes[6], &[500, 10]);
        assert_eq!(shapes[8], &[10, 500]);
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(mlp(), mlp());
        let other = EvidenceModel::new(
            BackboneSpec::mlp(&[8]),
            &[2],
            vec![0, 1, 2],
            EvidenceActivation::new(ActivationKind::Softplus),
            4,
        )
        .unwrap();
        assert_ne!(mlp().params(), other.params());
    }

    #[test]
    fn outputs_expose_features_and_logits() {
        let m = mlp();
        let x = Tensor::matrix(5, 2, (0..10).map(|v| v as f64 / 10.0).collect()).unwrap();
        let out = m.outputs(&x).unwrap();
        assert_eq!(out.features.shape(), &[5, 8]);
        assert_eq!(out.logits.shape(), &[5, 3]);
        assert!(out.features.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cnn_forward_runs() {
        let m = EvidenceModel::new(
            BackboneSpec::Cnn { width: 0.1 },
            &[16, 16, 1],
            vec![0, 1],
            EvidenceActivation::new(ActivationKind::Relu),
            0,
        )
        .unwrap();
        let x = Tensor::full(&[3, 16, 16, 1], 0.5);
        let out = m.outputs(&x).unwrap();
        assert_eq!(out.logits.shape(), &[3, 2]);
        assert_eq!(out.features.shape(), &[3, 50]);
    }

    #[test]
    fn zero_head_gives_uniform_prior() {
        let mut m = mlp();
        m.mode = TrainMode::Edl;
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let plain = m.predict(&x).unwrap();
        m.attach_head(HeadInit::Zeros);
        assert_eq!(m.predict(&x).unwrap(), plain);
    }

    #[test]
    fn digest_ignores_head_only() {
        let mut m = mlp();
        let before = m.frozen_digest();
        m.attach_head(HeadInit::Gaussian { sigma: 0.01, seed: 1 });
        assert_eq!(m.frozen_digest(), before);
        m.params_mut()[0].value.data_mut()[0] += 1e-12;
        assert_ne!(m.frozen_digest(), before);
    }

    #[test]
    fn evidence_is_non_negative() {
        for kind in [
            ActivationKind::Relu,
            ActivationKind::Softplus,
            ActivationKind::Exp,
            ActivationKind::ClampedExp,
        ] {
            let m = mlp().with_activation(kind);
            let logits = Tensor::vector(vec![-50.0, -1.0, 0.0, 3.0, 40.0]);
            assert!(m.evidence(&logits).data().iter().all(|&c| c >= 0.0));
        }
    }
}
