//! The evidential training objective: evidence activations, the Bayes-risk
//! sum-of-squares loss, and the annealed KL regularizer.

use edl_autodiff::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dirichlet::DirichletParams;
use crate::error::{EdlError, Result};

/// Clamp threshold of the clamped exponent.
pub const DEFAULT_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    Softplus,
    Exp,
    ClampedExp,
}

impl std::str::FromStr for ActivationKind {
    type Err = EdlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "softplus" => Ok(Self::Softplus),
            "exp" => Ok(Self::Exp),
            "clamped-exp" => Ok(Self::ClampedExp),
            other => Err(EdlError::InvalidArgument(format!(
                "unknown activation `{other}` (relu | softplus | exp | clamped-exp)"
            ))),
        }
    }
}

/// Maps logits to non-negative evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceActivation {
    pub kind: ActivationKind,
    pub clamp: f64,
}

impl EvidenceActivation {
    pub fn new(kind: ActivationKind) -> Self {
        Self {
            kind,
            clamp: DEFAULT_CLAMP,
        }
    }

    /// Evidence on the tape.
    ///
    /// The clamped exponent is `exp(min(x, clamp)) + (x − bg(x))` where `bg`
    /// blocks the gradient: the forward value is the clamped exponent and the
    /// derivative is `eˣ + 1` below the clamp and `1` above it.
    pub fn apply(&self, tape: &mut Tape, logits: Var) -> Result<Var> {
        Ok(match self.kind {
            ActivationKind::Relu => tape.relu(logits),
            ActivationKind::Softplus => tape.softplus(logits),
            ActivationKind::Exp => tape.exp(logits),
            ActivationKind::ClampedExp => {
                let clamped = tape.min_const(logits, self.clamp);
                let e = tape.exp(clamped);
                let blocked = tape.stop_grad(logits);
                let straight_through = tape.sub(logits, blocked)?;
                tape.add(e, straight_through)?
            }
        })
    }

    /// Forward value for a single logit.
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            ActivationKind::Exp => x.exp(),
            ActivationKind::ClampedExp => x.min(self.clamp).exp(),
        }
    }
}

/// KL annealing `λ_t = min(1, t / T)` with a 1-based epoch `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub horizon: u32,
    pub epoch: u32,
}

impl AnnealSchedule {
    pub fn new(horizon: u32, epoch: u32) -> Result<Self> {
        if horizon == 0 {
            return Err(EdlError::InvalidArgument(
                "annealing horizon must be positive".into(),
            ));
        }
        Ok(Self { horizon, epoch })
    }

    pub fn lambda(&self) -> f64 {
        (self.epoch as f64 / self.horizon as f64).min(1.0)
    }
}

/// Per-component and total parts of the sum-of-squares Bayes risk.
#[derive(Debug, Clone, PartialEq)]
pub struct SseParts {
    pub total: f64,
    pub err: f64,
    pub var: f64,
    pub err_terms: Vec<f64>,
    pub var_terms: Vec<f64>,
}

/// `Σ_j (y_j − π̄_j)² + π̄_j (1 − π̄_j) / (1 + α₀)` for one sample.
pub fn sse_bayes_risk(alpha: &DirichletParams, y: usize) -> Result<SseParts> {
    let k = alpha.k();
    if y >= k {
        return Err(EdlError::IndexOutOfRange { index: y, len: k });
    }
    let s = alpha.strength();
    let mut err_terms = Vec::with_capacity(k);
    let mut var_terms = Vec::with_capacity(k);
    for (j, &a) in alpha.alpha().iter().enumerate() {
        let p = a / s;
        let target = if j == y { 1.0 } else { 0.0 };
        err_terms.push((target - p) * (target - p));
        var_terms.push(p * (1.0 - p) / (1.0 + s));
    }
    let err: f64 = err_terms.iter().sum();
    let var: f64 = var_terms.iter().sum();
    Ok(SseParts {
        total: err + var,
        err,
        var,
        err_terms,
        var_terms,
    })
}

fn check_batch(tape: &Tape, alpha: Var, labels: &[usize]) -> Result<usize> {
    let shape = tape.shape(alpha);
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(EdlError::InvalidArgument(format!(
            "alpha of shape {shape:?} does not match {} labels",
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(EdlError::InvalidArgument("empty batch".into()));
    }
    Ok(shape[1])
}

/// Batch-summed sum-of-squares Bayes risk of `N × K` concentrations.
pub fn sse_loss(tape: &mut Tape, alpha: Var, labels: &[usize]) -> Result<Var> {
    let k = check_batch(tape, alpha, labels)?;
    let y = tape.constant(Tensor::one_hot(labels, k)?);
    let strength = tape.sum_last_axis(alpha)?;
    let mean = tape.div(alpha, strength)?;
    let diff = tape.sub(y, mean)?;
    let err = tape.square(diff);
    let one_minus = tape.neg(mean);
    let one_minus = tape.add_scalar(one_minus, 1.0);
    let spread = tape.mul(mean, one_minus)?;
    let denom = tape.add_scalar(strength, 1.0);
    let var = tape.div(spread, denom)?;
    let total = tape.add(err, var)?;
    Ok(tape.sum(total))
}

/// Batch-summed `KL(Dir(α̃) ‖ Dir(1))` of `N × K` concentrations.
pub fn kl_to_uniform(tape: &mut Tape, alpha_tilde: Var) -> Result<Var> {
    let shape = tape.shape(alpha_tilde).to_vec();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(EdlError::InvalidArgument(format!(
            "KL needs N × K concentrations with K ≥ 2, got {shape:?}"
        )));
    }
    let k = shape[1] as f64;
    let strength = tape.sum_last_axis(alpha_tilde)?;
    let lg_strength = tape.ln_gamma(strength);
    let lg_alpha = tape.ln_gamma(alpha_tilde);
    let lg_alpha = tape.sum_last_axis(lg_alpha)?;
    let norm = tape.sub(lg_strength, lg_alpha)?;
    let norm = tape.add_scalar(norm, -edl_autodiff::special::ln_gamma(k));
    let psi_alpha = tape.digamma(alpha_tilde);
    let psi_strength = tape.digamma(strength);
    let psi_diff = tape.sub(psi_alpha, psi_strength)?;
    let excess = tape.add_scalar(alpha_tilde, -1.0);
    let cross = tape.mul(excess, psi_diff)?;
    let cross = tape.sum_last_axis(cross)?;
    let kl = tape.add(norm, cross)?;
    Ok(tape.sum(kl))
}

/// `α̃ = y + (1 − y) ⊙ α` on the tape.
pub fn remove_misleading(tape: &mut Tape, alpha: Var, labels: &[usize]) -> Result<Var> {
    let k = check_batch(tape, alpha, labels)?;
    let y = Tensor::one_hot(labels, k)?;
    let keep = y.map(|v| 1.0 - v);
    let keep = tape.constant(keep);
    let y = tape.constant(y);
    let kept = tape.mul(alpha, keep)?;
    Ok(tape.add(kept, y)?)
}

/// `Σ_i SSE_i + λ_t Σ_i KL(Dir(α̃_i) ‖ Dir(1))` over a batch.
pub fn edl_total_loss(
    tape: &mut Tape,
    alpha: Var,
    labels: &[usize],
    schedule: &AnnealSchedule,
) -> Result<Var> {
    let sse = sse_loss(tape, alpha, labels)?;
    let lambda = schedule.lambda();
    if lambda == 0.0 {
        return Ok(sse);
    }
    let tilde = remove_misleading(tape, alpha, labels)?;
    let kl = kl_to_uniform(tape, tilde)?;
    let kl = tape.scale(kl, lambda);
    Ok(tape.add(sse, kl)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(a: &[f64]) -> DirichletParams {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    #[test]
    fn clamped_exp_values_and_gradient() {
        let act = EvidenceActivation::new(ActivationKind::ClampedExp);
        assert_eq!(act.eval(0.0), 1.0);
        assert!((act.eval(12.0) - 22_026.465_794_806_718).abs() < 1e-9);
        assert!(act.eval(12.0) > 22e3);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![12.0, 3.0]));
        let e = act.apply(&mut tape, x).unwrap();
        assert_eq!(tape.value(e).data()[0], 10f64.exp());
        let s = tape.sum(e);
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g.data()[0], 1.0);
        assert!((g.data()[1] - (3f64.exp() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn clamped_exp_matches_exp_below_clamp() {
        let clamped = EvidenceActivation::new(ActivationKind::ClampedExp);
        let plain = EvidenceActivation::new(ActivationKind::Exp);
        for i in -400..=400 {
            let x = i as f64 * 0.025;
            assert_eq!(clamped.eval(x).to_bits(), plain.eval(x).to_bits());
        }
    }

    #[test]
    fn activations_are_non_negative() {
        for kind in [
            ActivationKind::Relu,
            ActivationKind::Softplus,
            ActivationKind::Exp,
            ActivationKind::ClampedExp,
        ] {
            let act = EvidenceActivation::new(kind);
            for x in [-50.0, -1.0, 0.0, 0.5, 30.0] {
                assert!(act.eval(x) >= 0.0);
            }
        }
    }

    #[test]
    fn anneal_examples() {
        let l = |t| AnnealSchedule::new(10, t).unwrap().lambda();
        assert_eq!(l(1), 0.1);
        assert_eq!(l(5), 0.5);
        assert_eq!(l(100), 1.0);
        assert_eq!(l(0), 0.0);
        assert!(AnnealSchedule::new(0, 1).is_err());
    }

    #[test]
    fn sse_examples() {
        let p = sse_bayes_risk(&dir(&[1.0, 1.0]), 0).unwrap();
        assert!((p.err - 0.5).abs() < 1e-15);
        assert!((p.var - 1.0 / 6.0).abs() < 1e-15);
        assert!((p.total - 2.0 / 3.0).abs() < 1e-15);
        assert!(sse_bayes_risk(&dir(&[1e6, 1.0]), 0).unwrap().total < 1e-5);
    }

    #[test]
    fn total_loss_examples() {
        let run = |epoch| {
            let mut tape = Tape::new();
            let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
            let sched = AnnealSchedule::new(10, epoch).unwrap();
            let l = edl_total_loss(&mut tape, a, &[0], &sched).unwrap();
            tape.value(l).item().unwrap()
        };
        assert!((run(10) - 2.0 / 3.0).abs() < 1e-12);
        assert!((run(0) - 2.0 / 3.0).abs() < 1e-12);

        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[0, 3]));
        let sched = AnnealSchedule::new(10, 1).unwrap();
        assert!(edl_total_loss(&mut tape, a, &[], &sched).is_err());
    }

    #[test]
    fn tape_kl_matches_closed_form() {
        let alphas = [[2.0, 1.0, 1.0], [0.7, 3.3, 12.0]];
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, alphas.concat()).unwrap());
        let kl = kl_to_uniform(&mut tape, a).unwrap();
        let expected: f64 = alphas.iter().map(|a| dir(a).kl_to_uniform()).sum();
        assert!((tape.value(kl).item().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_drops_kl() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, 3, vec![4.0, 2.0, 9.0]).unwrap());
        let sched = AnnealSchedule::new(10, 0).unwrap();
        let total = edl_total_loss(&mut tape, a, &[1], &sched).unwrap();
        let sse = sse_bayes_risk(&dir(&[4.0, 2.0, 9.0]), 1).unwrap().total;
        assert!((tape.value(total).item().unwrap() - sse).abs() < 1e-12);
    }
}
