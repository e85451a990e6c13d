//! `edl`: training, evaluation and diagnostics for evidential classifiers.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edl_autodiff::Tensor;
use edl_core::checkpoint;
use edl_core::data::{load_idx, noise_images, rotate, Dataset, SyntheticSpec};
use edl_core::fusion::fused_report;
use edl_core::gradcheck;
use edl_core::loss::ActivationKind;
use edl_core::model::{BackboneSpec, EvidenceModel, TrainMode};
use edl_core::risk::RiskMatrix;
use edl_core::train::{self, EpochLog, TrainConfig};
use edl_core::EdlError;

use config::RunConfig;

const CHECKPOINT: &str = "checkpoint.bin";
const TRAIN_LOG: &str = "train_log.csv";
const REPORT: &str = "report.json";
const RECORDS: &str = "records.csv";
const SWEEP: &str = "sweep.csv";

const DEFAULT_BACKBONE: &str = "mlp:128";
const DEFAULT_EPOCHS: u32 = 20;
const DEFAULT_LR: f64 = 1e-3;
const DEFAULT_PG_LR: f64 = 1e-5;
const GRADCHECK_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "edl", version, about = "Evidential classifiers with risk-aware decisions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a softmax classifier with cross-entropy.
    Pretrain(RunConfig),
    /// Train an evidential classifier from scratch.
    TrainEdl(RunConfig),
    /// Continue training a softmax checkpoint under the evidential loss.
    Finetune(RunConfig),
    /// Risk-aware training: risk-edl, edl-p or edl-pg.
    TrainRisk(RunConfig),
    /// Fuse two checkpoints with disjoint labels and evaluate the union.
    Fuse(RunConfig),
    /// Evaluate a checkpoint.
    Eval(RunConfig),
    /// Predictions for one image rotated from 0 to 180 degrees.
    RotateSweep(RunConfig),
    /// Finite-difference check of every operator and loss head.
    Gradcheck(RunConfig),
}

/// A failed command and its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<EdlError> for Failure {
    fn from(e: EdlError) -> Self {
        let msg = e.to_string();
        match e {
            EdlError::Data(_) | EdlError::Checkpoint(_) | EdlError::Io { .. } => Failure::Data(msg),
            EdlError::NonFinite(_) => Failure::Numerical(msg),
            _ => Failure::Usage(msg),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Pretrain(c) => cmd_pretrain(c.resolve().map_err(usage)?),
        Command::TrainEdl(c) => cmd_train_edl(c.resolve().map_err(usage)?),
        Command::Finetune(c) => cmd_finetune(c.resolve().map_err(usage)?),
        Command::TrainRisk(c) => cmd_train_risk(c.resolve().map_err(usage)?),
        Command::Fuse(c) => cmd_fuse(c.resolve().map_err(usage)?),
        Command::Eval(c) => cmd_eval(c.resolve().map_err(usage)?),
        Command::RotateSweep(c) => cmd_rotate_sweep(c.resolve().map_err(usage)?),
        Command::Gradcheck(c) => cmd_gradcheck(c.resolve().map_err(usage)?),
    }
}

fn seed(cfg: &RunConfig) -> Outcome<u64> {
    cfg.seed.ok_or_else(|| usage("--seed is required"))
}

fn out_dir(cfg: &RunConfig) -> Outcome<&Path> {
    let dir = cfg.out.as_deref().ok_or_else(|| usage("--out is required"))?;
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Outcome {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn parse<T: std::str::FromStr<Err = EdlError>>(value: &str) -> Outcome<T> {
    value.parse().map_err(Failure::from)
}

fn risk_matrix(cfg: &RunConfig, classes: usize) -> Outcome<Option<RiskMatrix>> {
    let risk = match cfg.risk_matrix.as_deref() {
        None => return Ok(None),
        Some("mnist") => RiskMatrix::mnist(classes)?,
        Some("grouped") => RiskMatrix::cifar10()?,
        Some(path) => RiskMatrix::load_csv(path)?,
    };
    if risk.k() != classes {
        return Err(usage(format!("risk matrix is {0}×{0} but the data has {classes} classes", risk.k())));
    }
    Ok(Some(risk))
}

/// The dataset named by the data flags, trimmed by `--limit` but before any
/// `--classes` filter.
fn raw_data(cfg: &RunConfig) -> Outcome<(Dataset, Option<SyntheticSpec>)> {
    let (data, spec) = match (&cfg.data_images, &cfg.data_labels, &cfg.synth) {
        (Some(images), Some(labels), None) => (load_idx(images, labels)?, None),
        (None, None, Some(text)) => {
            let mut spec: SyntheticSpec = parse(text)?;
            spec.seed = cfg.data_seed.or(cfg.seed).ok_or_else(|| usage("--synth needs --seed or --data-seed"))?;
            (spec.generate()?, Some(spec))
        }
        _ => return Err(usage("give either --data-images with --data-labels, or --synth")),
    };
    let data = match cfg.limit {
        Some(n) => data.range(0, n.min(data.len())),
        None => data,
    };
    Ok((data, spec))
}

fn filtered(cfg: &RunConfig, data: &Dataset) -> Outcome<Dataset> {
    Ok(match &cfg.classes {
        Some(keep) => data.filter_classes(keep)?,
        None => data.clone(),
    })
}

fn load_data(cfg: &RunConfig) -> Outcome<Dataset> {
    let (data, _) = raw_data(cfg)?;
    filtered(cfg, &data)
}

fn checkpoints(cfg: &RunConfig, want: usize) -> Outcome<Vec<EvidenceModel>> {
    let paths: &[PathBuf] = cfg.checkpoint.as_deref().unwrap_or_default();
    if paths.len() != want {
        return Err(usage(format!("expected {want} --checkpoint value(s), got {}", paths.len())));
    }
    paths.iter().map(|p| checkpoint::load(p).map_err(Failure::from)).collect()
}

fn check_compatible(model: &EvidenceModel, data: &Dataset) -> Outcome {
    if model.class_labels() != data.class_labels() {
        return Err(usage(format!(
            "checkpoint predicts labels {:?} but the data has {:?}",
            model.class_labels(),
            data.class_labels()
        )));
    }
    if model.input_shape() != data.sample_shape() {
        return Err(usage(format!(
            "checkpoint expects inputs {:?} but samples have shape {:?}",
            model.input_shape(),
            data.sample_shape()
        )));
    }
    Ok(())
}

fn train_config(cfg: &RunConfig, data: &Dataset, epochs: u32, lr: f64) -> Outcome<TrainConfig> {
    let mut tc = TrainConfig::new(cfg.epochs.unwrap_or(epochs), cfg.lr.unwrap_or(lr), seed(cfg)?);
    if let Some(b) = cfg.batch_size {
        tc.batch_size = b;
    }
    if let Some(t) = cfg.anneal_t {
        tc.anneal_horizon = t;
    }
    if let Some(k) = cfg.kappa {
        tc.kappa = k;
    }
    tc.activation = cfg.act.as_deref().map(parse::<ActivationKind>).transpose()?;
    tc.risk = risk_matrix(cfg, data.classes())?;
    Ok(tc)
}

fn finish_training(cfg: &RunConfig, model: &EvidenceModel, log: &[EpochLog]) -> Outcome {
    let dir = out_dir(cfg)?;
    write(dir, CHECKPOINT, checkpoint::to_bytes(model))?;
    write(dir, TRAIN_LOG, train::log_csv(log))?;
    if let Some(last) = log.last() {
        println!("epoch {} loss {:?} acc {:?}", last.epoch, last.loss, last.acc);
    }
    Ok(())
}

fn backbone(cfg: &RunConfig) -> Outcome<BackboneSpec> {
    parse(cfg.backbone.as_deref().unwrap_or(DEFAULT_BACKBONE))
}

fn reject_mode(cfg: &RunConfig, command: &str, allowed: TrainMode) -> Outcome {
    match cfg.mode.as_deref() {
        Some(m) if parse::<TrainMode>(m)? != allowed => {
            Err(usage(format!("{command} trains mode {allowed}; use train-risk for {m}")))
        }
        _ => Ok(()),
    }
}

fn cmd_pretrain(cfg: RunConfig) -> Outcome {
    reject_mode(&cfg, "pretrain", TrainMode::Softmax)?;
    let data = load_data(&cfg)?;
    let tc = train_config(&cfg, &data, DEFAULT_EPOCHS, DEFAULT_LR)?;
    let (model, log) = train::pretrain_softmax(&backbone(&cfg)?, &data, &tc)?;
    finish_training(&cfg, &model, &log)
}

fn cmd_train_edl(cfg: RunConfig) -> Outcome {
    reject_mode(&cfg, "train-edl", TrainMode::Edl)?;
    let data = load_data(&cfg)?;
    let tc = train_config(&cfg, &data, DEFAULT_EPOCHS, DEFAULT_LR)?;
    let (model, log) = train::train_edl(&backbone(&cfg)?, &data, &tc)?;
    finish_training(&cfg, &model, &log)
}

fn cmd_finetune(cfg: RunConfig) -> Outcome {
    let base = checkpoints(&cfg, 1)?.remove(0);
    let data = load_data(&cfg)?;
    check_compatible(&base, &data)?;
    let tc = train_config(&cfg, &data, train::FINETUNE_EPOCHS, train::FINETUNE_LR)?;
    let (model, log) = train::finetune_edl(base, &data, &tc)?;
    finish_training(&cfg, &model, &log)
}

fn cmd_train_risk(cfg: RunConfig) -> Outcome {
    let mode: TrainMode = parse(cfg.mode.as_deref().ok_or_else(|| usage("--mode is required"))?)?;
    let (epochs, lr) = match mode {
        TrainMode::RiskEdl => (DEFAULT_EPOCHS, DEFAULT_LR),
        TrainMode::EdlP => (DEFAULT_EPOCHS, train::HEAD_LR),
        TrainMode::EdlPg => (train::PG_EPOCHS, DEFAULT_PG_LR),
        other => return Err(usage(format!("{other} is not a risk-aware mode"))),
    };
    if cfg.risk_matrix.is_none() {
        return Err(usage("train-risk needs --risk-matrix"));
    }
    let data = load_data(&cfg)?;
    let tc = train_config(&cfg, &data, epochs, lr)?;
    let base = match (mode, cfg.checkpoint.is_some()) {
        (_, true) => checkpoints(&cfg, 1)?.remove(0),
        (TrainMode::RiskEdl, false) => {
            let act = tc.activation.unwrap_or(ActivationKind::Softplus);
            EvidenceModel::new(
                backbone(&cfg)?,
                data.sample_shape(),
                data.class_labels().to_vec(),
                edl_core::loss::EvidenceActivation::new(act),
                tc.seed,
            )?
        }
        (_, false) => return Err(usage(format!("{mode} needs a trained evidential --checkpoint"))),
    };
    check_compatible(&base, &data)?;
    let (model, log) = train::train_risk(base, &data, mode, &tc)?;
    finish_training(&cfg, &model, &log)
}

fn emit_report(cfg: &RunConfig, json: &str, records: Option<String>) -> Outcome {
    println!("{json}");
    if cfg.out.is_some() {
        let dir = out_dir(cfg)?;
        write(dir, REPORT, json)?;
        if let Some(r) = records {
            write(dir, RECORDS, r)?;
        }
    }
    Ok(())
}

fn cmd_fuse(cfg: RunConfig) -> Outcome {
    let mut models = checkpoints(&cfg, 2)?;
    let (b, a) = (models.pop().unwrap(), models.pop().unwrap());
    let data = load_data(&cfg)?;
    let report = fused_report(&a, &b, &data)?;
    emit_report(&cfg, &report.to_json(), Some(report.records_csv()))
}

fn cmd_eval(cfg: RunConfig) -> Outcome {
    let model = checkpoints(&cfg, 1)?.remove(0);
    let (raw, spec) = raw_data(&cfg)?;
    let data = filtered(&cfg, &raw)?;
    check_compatible(&model, &data)?;
    let ood = match cfg.ood.as_deref() {
        None => None,
        Some("noise") => Some(noise_images(data.len(), data.sample_shape(), data.classes(), seed(&cfg)?)?),
        Some("far") => {
            let spec = spec.ok_or_else(|| usage("--ood far needs a --synth task"))?;
            Some(spec.ood(data.len(), seed(&cfg)?)?)
        }
        Some(other) => {
            let list = other
                .strip_prefix("classes:")
                .ok_or_else(|| usage(format!("unknown --ood `{other}` (noise | far | classes:a,b,...)")))?;
            let keep = list
                .split(',')
                .map(|s| s.trim().parse::<u32>().map_err(|_| usage(format!("bad class `{s}` in --ood"))))
                .collect::<Outcome<Vec<u32>>>()?;
            Some(raw.filter_classes(&keep)?)
        }
    };
    let risk = risk_matrix(&cfg, data.classes())?;
    let report = model.evaluate(&data, risk.as_ref(), ood.as_ref())?;
    emit_report(&cfg, &report.to_json(), Some(report.records_csv()))
}

fn cmd_rotate_sweep(cfg: RunConfig) -> Outcome {
    let model = checkpoints(&cfg, 1)?.remove(0);
    let data = load_data(&cfg)?;
    check_compatible(&model, &data)?;
    let shape = data.sample_shape().to_vec();
    let (rows, cols) = match shape.as_slice() {
        [r, c] | [r, c, 1] => (*r, *c),
        _ => return Err(usage(format!("rotation needs single-channel images, got samples of shape {shape:?}"))),
    };
    let index = cfg.index.unwrap_or(0);
    if index >= data.len() {
        return Err(usage(format!("--index {index} out of range for {} samples", data.len())));
    }
    let step = cfg.angle_step.unwrap_or(10.0);
    if !(step.is_finite() && step > 0.0) {
        return Err(usage("--angle-step must be positive"));
    }
    let angles: Vec<f64> = (0..).map(|i| i as f64 * step).take_while(|a| *a <= 180.0 + 1e-9).collect();
    let mut batch = Vec::with_capacity(angles.len() * rows * cols);
    for &angle in &angles {
        batch.extend(rotate(data.sample(index), rows, cols, angle)?);
    }
    let mut batch_shape = vec![angles.len()];
    batch_shape.extend_from_slice(&shape);
    let pred = model.predict(&Tensor::new(batch_shape, batch).map_err(EdlError::from)?)?;

    let mut csv = String::from("angle");
    for label in model.class_labels() {
        let _ = write!(csv, ",p{label}");
    }
    csv.push_str(",entropy\n");
    for (i, angle) in angles.iter().enumerate() {
        let _ = write!(csv, "{angle:?}");
        for p in pred.probs[i].probs() {
            let _ = write!(csv, ",{p:?}");
        }
        let _ = writeln!(csv, ",{:?}", pred.entropy[i]);
    }
    match &cfg.out {
        Some(_) => write(out_dir(&cfg)?, SWEEP, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_gradcheck(cfg: RunConfig) -> Outcome {
    let instances = cfg.instances.unwrap_or(gradcheck::DEFAULT_INSTANCES);
    let results = gradcheck::run(instances, cfg.seed.unwrap_or(GRADCHECK_SEED), cfg.fault.as_deref())?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{:<18} {verdict} instances={} max_rel_err={:.3e}", r.name, r.instances, r.max_rel_error);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure::Numerical(format!(
            "{failed} of {} gradient checks exceeded relative error {:e}",
            results.len(),
            gradcheck::TOLERANCE
        )));
    }
    Ok(())
}
