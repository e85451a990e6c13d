//! Training regimes: softmax pretraining, evidential training from scratch,
//! evidential fine-tuning, and the three risk-aware variants.

use edl_autodiff::{Adam, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{EdlError, Result};
use crate::loss::{edl_total_loss, ActivationKind, AnnealSchedule, EvidenceActivation};
use crate::metrics;
use crate::model::{BackboneSpec, EvidenceModel, HeadInit, ParamGroup, TrainMode};
use crate::risk::{
    expected_risk_loss, pg_pass, pignistic_prior, risk_edl_penalty_loss, RiskFeedback, RiskMatrix,
    DEFAULT_KAPPA,
};

pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_ANNEAL_HORIZON: u32 = 10;
pub const FINETUNE_EPOCHS: u32 = 10;
pub const FINETUNE_LR: f64 = 1e-5;
pub const HEAD_LR: f64 = 1e-3;
pub const PG_EPOCHS: u32 = 50;

/// RNG stream for per-epoch shuffling, kept apart from weight initialization.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub anneal_horizon: u32,
    pub kappa: f64,
    /// Evidence activation; each regime has its own default.
    pub activation: Option<ActivationKind>,
    /// Used to log training cost, and required by the risk regimes.
    pub risk: Option<RiskMatrix>,
    pub head_init: HeadInit,
}

impl TrainConfig {
    pub fn new(epochs: u32, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            lr,
            batch_size: DEFAULT_BATCH,
            seed,
            anneal_horizon: DEFAULT_ANNEAL_HORIZON,
            kappa: DEFAULT_KAPPA,
            activation: None,
            risk: None,
            head_init: HeadInit::Zeros,
        }
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(EdlError::InvalidArgument("training set is empty".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(EdlError::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(EdlError::InvalidArgument("batch size must be positive".into()));
        }
        if let Some(r) = &self.risk {
            if r.k() != data.classes() {
                return Err(EdlError::InvalidArgument(format!(
                    "risk matrix is {0}×{0} but the data has {1} classes",
                    r.k(),
                    data.classes()
                )));
            }
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    /// Summed loss divided by the number of samples.
    pub loss: f64,
    pub lambda: f64,
    /// Accuracy of the decisions made during the epoch's forward passes.
    pub acc: f64,
    pub cost: Option<f64>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,lambda,acc,cost\n");
    for e in log {
        let cost = e.cost.map(|c| format!("{c:?}")).unwrap_or_default();
        out.push_str(&format!("{},{:?},{:?},{:?},{cost}\n", e.epoch, e.loss, e.lambda, e.acc));
    }
    out
}

fn shuffler(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    rng
}

#[derive(Clone, Copy)]
enum Objective {
    CrossEntropy,
    Edl,
    RiskEdl,
}

/// Minibatch Adam over every trainable parameter.
fn fit(model: &mut EvidenceModel, data: &Dataset, cfg: &TrainConfig, objective: Objective) -> Result<Vec<EpochLog>> {
    let mut adam = Adam::new(cfg.lr);
    let mut rng = shuffler(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let risk = cfg.risk.as_ref();
    let mut log = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let schedule = AnnealSchedule::new(cfg.anneal_horizon, epoch)?;
        let (mut total, mut hits, mut cost) = (0.0, 0usize, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let x = data.features().select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, |name| model.is_trainable(name));
            let input = model.input(&mut tape, &x)?;
            let (g, f) = model.forward(&mut tape, &vars, input)?;
            let (loss, scores) = match objective {
                Objective::CrossEntropy => {
                    let lp = tape.log_softmax(f)?;
                    let picked = tape.gather(lp, &labels)?;
                    let s = tape.sum(picked);
                    (tape.neg(s), f)
                }
                Objective::Edl | Objective::RiskEdl => {
                    let evidence = model.activation.apply(&mut tape, f)?;
                    let alpha = tape.add_scalar(evidence, 1.0);
                    let loss = edl_total_loss(&mut tape, alpha, &labels, &schedule)?;
                    if let Objective::RiskEdl = objective {
                        let r = risk.expect("checked by caller");
                        let w = vars[index_of(model, "pignistic.weight")];
                        let b = vars[index_of(model, "pignistic.bias")];
                        let gamma = pignistic_prior(&mut tape, g, w, b)?;
                        let penalty = risk_edl_penalty_loss(&mut tape, evidence, gamma, &labels, r, cfg.kappa)?;
                        let alpha = tape.add(evidence, gamma)?;
                        (tape.add(loss, penalty)?, alpha)
                    } else {
                        (loss, alpha)
                    }
                }
            };
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(EdlError::NonFinite(format!("training loss at epoch {epoch}")));
            }
            total += value;
            let scores = tape.value(scores);
            for (row, &y) in labels.iter().enumerate() {
                let p = crate::dirichlet::argmax(scores.row(row));
                hits += usize::from(p == y);
                if let Some(r) = risk {
                    cost += r.cost(y, p);
                }
            }
            tape.backward(loss)?;
            let mask: Vec<bool> = model.params().iter().map(|p| model.is_trainable(&p.name)).collect();
            for (i, &t) in mask.iter().enumerate() {
                if !t {
                    continue;
                }
                let grad = tape.grad(vars[i]).expect("tracked leaf");
                if !grad.is_finite() {
                    return Err(EdlError::NonFinite(format!("gradient of {}", model.params()[i].name)));
                }
                model.params_mut()[i].grad = Some(grad);
            }
            let params = model.params_mut().iter_mut().zip(&mask);
            adam.step(params.filter_map(|(p, &t)| t.then_some(p)))?;
        }
        let n = data.len() as f64;
        log.push(EpochLog {
            epoch,
            loss: total / n,
            lambda: match objective {
                Objective::CrossEntropy => 0.0,
                _ => schedule.lambda(),
            },
            acc: hits as f64 / n,
            cost: risk.map(|_| cost / n),
        });
    }
    model.meta.epochs += cfg.epochs;
    Ok(log)
}

fn index_of(model: &EvidenceModel, name: &str) -> usize {
    model.params().iter().position(|p| p.name == name).expect("known parameter")
}

fn fresh_model(spec: &BackboneSpec, data: &Dataset, kind: ActivationKind, seed: u64) -> Result<EvidenceModel> {
    EvidenceModel::new(
        spec.clone(),
        data.sample_shape(),
        data.class_labels().to_vec(),
        EvidenceActivation::new(kind),
        seed,
    )
}

/// Cross-entropy training from a seeded initialization.
pub fn pretrain_softmax(spec: &BackboneSpec, data: &Dataset, cfg: &TrainConfig) -> Result<(EvidenceModel, Vec<EpochLog>)> {
    cfg.validate(data)?;
    let kind = cfg.activation.unwrap_or(ActivationKind::ClampedExp);
    let mut model = fresh_model(spec, data, kind, cfg.seed)?;
    model.mode = TrainMode::Softmax;
    let log = fit(&mut model, data, cfg, Objective::CrossEntropy)?;
    model.meta.phases.push("softmax".into());
    Ok((model, log))
}

/// Evidential training from a seeded initialization; softplus evidence by
/// default.
pub fn train_edl(spec: &BackboneSpec, data: &Dataset, cfg: &TrainConfig) -> Result<(EvidenceModel, Vec<EpochLog>)> {
    cfg.validate(data)?;
    let kind = cfg.activation.unwrap_or(ActivationKind::Softplus);
    let mut model = fresh_model(spec, data, kind, cfg.seed)?;
    model.mode = TrainMode::Edl;
    let log = fit(&mut model, data, cfg, Objective::Edl)?;
    model.meta.phases.push("edl".into());
    Ok((model, log))
}

/// Continues a softmax model under the evidential loss, reading its logits
/// through the evidence activation (clamped exponent by default). The
/// annealing clock starts again at epoch 1.
pub fn finetune_edl(mut model: EvidenceModel, data: &Dataset, cfg: &TrainConfig) -> Result<(EvidenceModel, Vec<EpochLog>)> {
    cfg.validate(data)?;
    if model.mode != TrainMode::Softmax {
        return Err(EdlError::Contract(format!(
            "fine-tuning needs a softmax-trained model, got mode {}",
            model.mode
        )));
    }
    check_data(&model, data)?;
    let kind = cfg.activation.unwrap_or(ActivationKind::ClampedExp);
    model = model.with_activation(kind);
    model.mode = TrainMode::Edl;
    model.unfreeze_all();
    let log = fit(&mut model, data, cfg, Objective::Edl)?;
    model.meta.phases.push("finetune".into());
    Ok((model, log))
}

fn check_data(model: &EvidenceModel, data: &Dataset) -> Result<()> {
    if model.class_labels() != data.class_labels() || model.input_shape() != data.sample_shape() {
        return Err(EdlError::InvalidArgument(format!(
            "model (labels {:?}, inputs {:?}) does not match the data (labels {:?}, inputs {:?})",
            model.class_labels(),
            model.input_shape(),
            data.class_labels(),
            data.sample_shape()
        )));
    }
    Ok(())
}

/// Penultimate features and evidence of a frozen model over a dataset.
#[derive(Debug, Clone)]
pub struct FrozenOutputs {
    pub features: Tensor,
    pub evidence: Tensor,
}

impl FrozenOutputs {
    pub fn compute(model: &EvidenceModel, data: &Dataset) -> Result<Self> {
        let out = model.outputs(data.features())?;
        Ok(Self { evidence: model.evidence(&out.logits), features: out.features })
    }
}

/// One pass of bandit policy-gradient training of the pignistic head over
/// precomputed frozen outputs, in a shuffled order drawn from `rng`.
pub fn pg_epoch(
    model: &mut EvidenceModel,
    frozen: &FrozenOutputs,
    labels: &[usize],
    risk: &RiskMatrix,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<crate::risk::PgStep>> {
    if !(model.is_frozen(ParamGroup::Backbone) && model.is_frozen(ParamGroup::Logits)) {
        return Err(EdlError::Contract(
            "policy-gradient training needs the backbone and evidence head frozen".into(),
        ));
    }
    let mut head = model
        .head()
        .ok_or_else(|| EdlError::Contract("policy-gradient training needs a pignistic head".into()))?;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let mut feedback = RiskFeedback::new(risk, labels);
    let steps = pg_pass(&mut head, &frozen.features, &frozen.evidence, &order, &mut feedback, lr, rng)?;
    if !(head.weight.is_finite() && head.bias.is_finite()) {
        return Err(EdlError::NonFinite("pignistic head".into()));
    }
    model.set_head(head);
    Ok(steps)
}

/// Risk-aware training.
///
/// `RiskEdl` trains every parameter on the evidential loss plus the risk
/// penalty. `EdlP` and `EdlPg` require an evidential model, freeze everything
/// except the pignistic head, and fit it by minibatch Adam on the expected
/// risk or by bandit policy gradient.
pub fn train_risk(
    mut model: EvidenceModel,
    data: &Dataset,
    mode: TrainMode,
    cfg: &TrainConfig,
) -> Result<(EvidenceModel, Vec<EpochLog>)> {
    cfg.validate(data)?;
    check_data(&model, data)?;
    let risk = cfg
        .risk
        .clone()
        .ok_or_else(|| EdlError::InvalidArgument("risk-aware training needs a risk matrix".into()))?;
    if !model.has_head() {
        model.attach_head(cfg.head_init);
    }
    let log = match mode {
        TrainMode::RiskEdl => {
            if let Some(kind) = cfg.activation {
                model = model.with_activation(kind);
            } else if !model.mode.is_evidential() {
                model = model.with_activation(ActivationKind::Softplus);
            }
            model.unfreeze_all();
            fit(&mut model, data, cfg, Objective::RiskEdl)?
        }
        TrainMode::EdlP | TrainMode::EdlPg => {
            if !model.mode.is_evidential() {
                return Err(EdlError::Contract(format!(
                    "{mode} training needs a trained evidential model, got mode {}",
                    model.mode
                )));
            }
            model.unfreeze_all();
            model.freeze(ParamGroup::Backbone);
            model.freeze(ParamGroup::Logits);
            let digest = model.frozen_digest();
            let frozen = FrozenOutputs::compute(&model, data)?;
            let log = if mode == TrainMode::EdlP {
                fit_head(&mut model, &frozen, data.labels(), &risk, cfg)?
            } else {
                let mut rng = shuffler(cfg.seed);
                let mut log = Vec::with_capacity(cfg.epochs as usize);
                for epoch in 1..=cfg.epochs {
                    let steps = pg_epoch(&mut model, &frozen, data.labels(), &risk, cfg.lr, &mut rng)?;
                    let n = steps.len() as f64;
                    let mean_cost = steps.iter().map(|s| s.cost).sum::<f64>() / n;
                    let hits = steps.iter().filter(|s| s.cost == 0.0 && data.labels()[s.sample] == s.action).count();
                    log.push(EpochLog { epoch, loss: mean_cost, lambda: 0.0, acc: hits as f64 / n, cost: Some(mean_cost) });
                }
                model.meta.epochs += cfg.epochs;
                log
            };
            if model.frozen_digest() != digest {
                return Err(EdlError::Contract("frozen parameters changed during head training".into()));
            }
            log
        }
        TrainMode::Softmax | TrainMode::Edl => {
            return Err(EdlError::InvalidArgument(format!("{mode} is not a risk-aware mode")));
        }
    };
    model.mode = mode;
    model.meta.phases.push(mode.as_str().into());
    Ok((model, log))
}

/// Minibatch Adam on the batch-summed expected risk over the head only.
fn fit_head(
    model: &mut EvidenceModel,
    frozen: &FrozenOutputs,
    labels: &[usize],
    risk: &RiskMatrix,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    let mut head = model.head().expect("attached by caller");
    let mut adam = Adam::new(cfg.lr);
    let mut rng = shuffler(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut hits, mut cost) = (0.0, 0usize, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let g = tape.constant(frozen.features.select_rows(batch));
            let c = tape.constant(frozen.evidence.select_rows(batch));
            let w = tape.param(head.weight.clone());
            let b = tape.param(head.bias.clone());
            let gamma = pignistic_prior(&mut tape, g, w, b)?;
            let loss = expected_risk_loss(&mut tape, c, gamma, &ys, risk)?;
            total += tape.value(loss).data()[0];
            let alpha = tape.add(c, gamma)?;
            let alpha = tape.value(alpha);
            for (row, &y) in ys.iter().enumerate() {
                let p = crate::dirichlet::argmax(alpha.row(row));
                hits += usize::from(p == y);
                cost += risk.cost(y, p);
            }
            tape.backward(loss)?;
            let mut pw = edl_autodiff::Parameter::new("pignistic.weight", head.weight.clone());
            let mut pb = edl_autodiff::Parameter::new("pignistic.bias", head.bias.clone());
            pw.grad = tape.grad(w);
            pb.grad = tape.grad(b);
            adam.step([&mut pw, &mut pb])?;
            head.weight = pw.value;
            head.bias = pb.value;
        }
        if !(head.weight.is_finite() && head.bias.is_finite()) {
            return Err(EdlError::NonFinite("pignistic head".into()));
        }
        let n = labels.len() as f64;
        log.push(EpochLog { epoch, loss: total / n, lambda: 0.0, acc: hits as f64 / n, cost: Some(cost / n) });
    }
    model.set_head(head);
    model.meta.epochs += cfg.epochs;
    Ok(log)
}

/// Decisions and average cost of a model on a dataset.
pub fn decision_cost(model: &EvidenceModel, data: &Dataset, risk: &RiskMatrix) -> Result<f64> {
    let pred = model.predict(data.features())?;
    metrics::avg_cost(&pred.decisions, data.labels(), risk)
}
