use edl_core::data::{Dataset, SyntheticSpec};
use edl_core::model::{BackboneSpec, EvidenceModel, HeadInit, ParamGroup, TrainMode};
use edl_core::risk::RiskMatrix;
use edl_core::train::{
    decision_cost, finetune_edl, pg_epoch, pretrain_softmax, train_edl, train_risk, FrozenOutputs, TrainConfig,
};
use edl_core::EdlError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn blobs(k: usize, n: usize, sigma: f64, seed: u64) -> (SyntheticSpec, Dataset) {
    let spec = SyntheticSpec::blobs(k, n, sigma, seed);
    let data = spec.generate().unwrap();
    (spec, data)
}

fn mlp8() -> BackboneSpec {
    BackboneSpec::mlp(&[8])
}

fn train_accuracy(m: &EvidenceModel, d: &Dataset) -> f64 {
    m.evaluate(d, None, None).unwrap().accuracy
}

#[test]
fn softmax_separates_blobs() {
    let (_, data) = blobs(2, 100, 0.1, 1);
    let (m, log) = pretrain_softmax(&mlp8(), &data, &TrainConfig::new(50, 1e-2, 3)).unwrap();
    assert_eq!(m.mode, TrainMode::Softmax);
    assert_eq!(log.len(), 50);
    assert_eq!(train_accuracy(&m, &data), 1.0);
}

#[test]
fn zero_epochs_is_the_seeded_init() {
    let (_, data) = blobs(3, 20, 0.1, 1);
    let (m, log) = pretrain_softmax(&mlp8(), &data, &TrainConfig::new(0, 1e-2, 9)).unwrap();
    assert!(log.is_empty());
    let init = EvidenceModel::new(mlp8(), &[2], vec![0, 1, 2], m.activation, 9).unwrap();
    assert_eq!(m.params(), init.params());
}

#[test]
fn training_is_deterministic() {
    let (_, data) = blobs(3, 40, 0.2, 1);
    let cfg = TrainConfig::new(5, 1e-2, 4);
    let a = train_edl(&mlp8(), &data, &cfg).unwrap();
    let b = train_edl(&mlp8(), &data, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn edl_is_confident_on_blobs_and_uncertain_far_away() {
    // Eight blobs on a circle surround the far-away region at the center.
    let (spec, data) = blobs(8, 100, 0.1, 2);
    let mut cfg = TrainConfig::new(100, 1e-2, 2);
    cfg.activation = Some(edl_core::loss::ActivationKind::Exp);
    let (m, _) = train_edl(&BackboneSpec::mlp(&[16]), &data, &cfg).unwrap();
    let ln_k = 8f64.ln();
    let report = m.evaluate(&data, None, None).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert!(report.mean_entropy < 0.3 * ln_k, "train entropy {}", report.mean_entropy);
    let far = m.evaluate(&spec.ood(200, 7).unwrap(), None, None).unwrap();
    assert!(far.mean_entropy > 0.8 * ln_k, "far entropy {}", far.mean_entropy);
}

#[test]
fn empty_data_and_bad_lr_are_rejected() {
    let (_, data) = blobs(2, 10, 0.1, 1);
    let empty = data.select(&[]);
    assert!(pretrain_softmax(&mlp8(), &empty, &TrainConfig::new(1, 1e-2, 1)).is_err());
    assert!(train_edl(&mlp8(), &data, &TrainConfig::new(1, 0.0, 1)).is_err());
}

#[test]
fn finetune_needs_softmax_model_and_keeps_logits_at_zero_epochs() {
    let (_, data) = blobs(3, 30, 0.2, 1);
    let (pre, _) = pretrain_softmax(&mlp8(), &data, &TrainConfig::new(10, 1e-2, 1)).unwrap();
    let (tuned, _) = finetune_edl(pre.clone(), &data, &TrainConfig::new(0, 1e-5, 1)).unwrap();
    let a = pre.outputs(data.features()).unwrap();
    let b = tuned.outputs(data.features()).unwrap();
    assert_eq!(a.logits, b.logits);
    let expected = a.logits.map(|x| tuned.activation.eval(x));
    assert_eq!(tuned.evidence(&b.logits), expected);
    assert!(matches!(
        finetune_edl(tuned, &data, &TrainConfig::new(1, 1e-5, 1)),
        Err(EdlError::Contract(_))
    ));
}

/// Three overlapping blobs where deciding 2 for a true 0 is very costly.
fn asymmetric_task() -> (Dataset, Dataset, RiskMatrix) {
    let (_, train) = blobs(3, 200, 1.3, 11);
    let (_, test) = blobs(3, 300, 1.3, 12);
    let risk = RiskMatrix::from_rows(&[vec![0.0, 1.0, 20.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
    (train, test, risk)
}

fn risk_cfg(epochs: u32, lr: f64, risk: &RiskMatrix) -> TrainConfig {
    let mut cfg = TrainConfig::new(epochs, lr, 3);
    cfg.risk = Some(risk.clone());
    cfg
}

#[test]
fn pignistic_head_lowers_cost_and_bandit_gets_close() {
    let (train, test, risk) = asymmetric_task();
    let (edl, _) = train_edl(&BackboneSpec::mlp(&[16]), &train, &TrainConfig::new(30, 1e-2, 3)).unwrap();
    let base = decision_cost(&edl, &test, &risk).unwrap();

    let (p, _) = train_risk(edl.clone(), &train, TrainMode::EdlP, &risk_cfg(50, 1e-2, &risk)).unwrap();
    let p_cost = decision_cost(&p, &test, &risk).unwrap();
    assert_eq!(p.frozen_digest(), edl.frozen_digest());
    assert!(p_cost < base, "p {p_cost} vs base {base}");

    let (pg, _) = train_risk(edl.clone(), &train, TrainMode::EdlPg, &risk_cfg(50, 1e-2, &risk)).unwrap();
    let pg_cost = decision_cost(&pg, &test, &risk).unwrap();
    assert_eq!(pg.frozen_digest(), edl.frozen_digest());
    assert!(pg_cost <= 1.1 * p_cost, "pg {pg_cost} vs p {p_cost}");
}

#[test]
fn zero_risk_leaves_head_untouched() {
    let (train, _, _) = asymmetric_task();
    let (edl, _) = train_edl(&mlp8(), &train, &TrainConfig::new(3, 1e-2, 3)).unwrap();
    let zero = RiskMatrix::zeros(3).unwrap();
    for mode in [TrainMode::EdlP, TrainMode::EdlPg] {
        let (m, _) = train_risk(edl.clone(), &train, mode, &risk_cfg(5, 1e-2, &zero)).unwrap();
        assert_eq!(m.head().unwrap(), edl_core::risk::PignisticHead::zeros(3, 8));
    }
}

#[test]
fn head_modes_reject_softmax_models() {
    let (train, _, risk) = asymmetric_task();
    let (soft, _) = pretrain_softmax(&mlp8(), &train, &TrainConfig::new(1, 1e-2, 3)).unwrap();
    for mode in [TrainMode::EdlP, TrainMode::EdlPg] {
        assert!(matches!(
            train_risk(soft.clone(), &train, mode, &risk_cfg(1, 1e-3, &risk)),
            Err(EdlError::Contract(_))
        ));
    }
    let mut no_risk = risk_cfg(1, 1e-3, &risk);
    no_risk.risk = None;
    assert!(train_risk(soft, &train, TrainMode::RiskEdl, &no_risk).is_err());
}

#[test]
fn policy_gradient_needs_frozen_model_and_keeps_prior_mass() {
    let (train, _, risk) = asymmetric_task();
    let (mut edl, _) = train_edl(&mlp8(), &train, &TrainConfig::new(3, 1e-2, 3)).unwrap();
    edl.attach_head(HeadInit::Gaussian { sigma: 0.1, seed: 1 });
    let frozen = FrozenOutputs::compute(&edl, &train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        pg_epoch(&mut edl, &frozen, train.labels(), &risk, 1e-2, &mut rng),
        Err(EdlError::Contract(_))
    ));
    edl.freeze(ParamGroup::Backbone);
    edl.freeze(ParamGroup::Logits);
    let before = edl.frozen_digest();
    pg_epoch(&mut edl, &frozen, train.labels(), &risk, 1e-2, &mut rng).unwrap();
    assert_eq!(edl.frozen_digest(), before);
    let head = edl.head().unwrap();
    for i in 0..train.len() {
        let gamma = head.prior(frozen.features.row(i)).unwrap();
        assert!((gamma.iter().sum::<f64>() - 3.0).abs() < 1e-9);
    }
}

#[test]
fn risk_edl_trains_everything() {
    let (train, test, risk) = asymmetric_task();
    let init = EvidenceModel::new(
        mlp8(),
        &[2],
        vec![0, 1, 2],
        edl_core::loss::EvidenceActivation::new(edl_core::loss::ActivationKind::Softplus),
        3,
    )
    .unwrap();
    let mut cfg = risk_cfg(20, 1e-2, &risk);
    cfg.kappa = 1e-3;
    let (m, log) = train_risk(init.clone(), &train, TrainMode::RiskEdl, &cfg).unwrap();
    assert_eq!(m.mode, TrainMode::RiskEdl);
    assert_ne!(m.frozen_digest(), init.frozen_digest());
    assert!(log.iter().all(|l| l.cost.is_some()));
    assert!(decision_cost(&m, &test, &risk).unwrap().is_finite());
}
