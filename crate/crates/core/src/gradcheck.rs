//! Finite-difference suite over every tape operator and loss head.

use edl_autodiff::gradcheck::compare;
use edl_autodiff::{Padding, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::loss::{edl_total_loss, kl_to_uniform, sse_loss, ActivationKind, AnnealSchedule, EvidenceActivation};
use crate::risk::{expected_risk_loss, log_policy, pignistic_prior, risk_edl_penalty_loss, RiskMatrix};
use crate::Result;

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 100;
const STEP: f64 = 1e-5;
/// Scale applied to analytic gradients of the faulted check.
const FAULT_SCALE: f64 = 1.01;

type Scalar = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    inputs: Vec<Tensor>,
    f: Scalar,
}

type Builder = fn(&mut ChaCha8Rng) -> Result<Case>;

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn operator_names() -> Vec<&'static str> {
    CASES.iter().map(|(n, _)| *n).collect()
}

/// Runs `instances` random instances of each check. If `fault` names a check,
/// its analytic gradients are perturbed before comparison.
pub fn run(instances: usize, seed: u64, fault: Option<&str>) -> Result<Vec<OpCheck>> {
    if let Some(name) = fault {
        if !CASES.iter().any(|(n, _)| *n == name) {
            return Err(crate::EdlError::InvalidArgument(format!("no gradient check named `{name}`")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CASES
        .iter()
        .map(|&(name, build)| {
            let mut worst = 0.0f64;
            for _ in 0..instances {
                let case = build(&mut rng)?;
                let f = &case.f;
                let mut cmp = compare(|t, v| f(t, v), &case.inputs, STEP)?;
                if fault == Some(name) {
                    for g in &mut cmp.analytic {
                        g.data_mut().iter_mut().for_each(|x| *x *= FAULT_SCALE);
                    }
                }
                let err = cmp.max_relative_error();
                worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            }
            Ok(OpCheck { name, instances, max_rel_error: worst, passed: worst < TOLERANCE })
        })
        .collect()
}

const CASES: &[(&str, Builder)] = &[
    ("add", |r| binary(r, Broadcast::Row, |t, a, b| t.add(a, b))),
    ("sub", |r| binary(r, Broadcast::Column, |t, a, b| t.sub(a, b))),
    ("mul", |r| binary(r, Broadcast::None, |t, a, b| t.mul(a, b))),
    ("div", div_case),
    ("neg", |r| unary(r, (-2.0, 2.0), |t, x| Ok(t.neg(x)))),
    ("scale", |r| unary(r, (-2.0, 2.0), |t, x| Ok(t.scale(x, -1.7)))),
    ("add_scalar", |r| unary(r, (-2.0, 2.0), |t, x| Ok(t.add_scalar(x, 0.4)))),
    ("matmul", matmul_case),
    ("transpose", |r| unary(r, (-2.0, 2.0), |t, x| Ok(t.transpose(x)?))),
    ("reshape", reshape_case),
    ("relu", |r| unary_away(r, (-2.0, 2.0), 0.0, |t, x| Ok(t.relu(x)))),
    ("softplus", |r| unary(r, (-4.0, 4.0), |t, x| Ok(t.softplus(x)))),
    ("exp", |r| unary(r, (-3.0, 3.0), |t, x| Ok(t.exp(x)))),
    ("log", |r| unary(r, (0.2, 5.0), |t, x| Ok(t.log(x)))),
    ("square", |r| unary(r, (-2.0, 2.0), |t, x| Ok(t.square(x)))),
    ("min_const", |r| unary_away(r, (-1.0, 2.0), 0.5, |t, x| Ok(t.min_const(x, 0.5)))),
    ("ln_gamma", |r| unary(r, (0.3, 6.0), |t, x| Ok(t.ln_gamma(x)))),
    ("digamma", |r| unary(r, (0.3, 6.0), |t, x| Ok(t.digamma(x)))),
    ("stop_grad", |r| {
        unary(r, (-2.0, 2.0), |t, x| {
            let held = t.stop_grad(x);
            Ok(t.mul(x, held)?)
        })
    }),
    ("sum", |r| unary(r, (-2.0, 2.0), |t, x| Ok(t.sum(x)))),
    ("sum_last_axis", |r| unary(r, (-2.0, 2.0), |t, x| Ok(t.sum_last_axis(x)?))),
    ("mean", |r| unary(r, (-2.0, 2.0), |t, x| Ok(t.mean(x)))),
    ("softmax", |r| unary(r, (-3.0, 3.0), |t, x| Ok(t.softmax(x)?))),
    ("log_softmax", |r| unary(r, (-3.0, 3.0), |t, x| Ok(t.log_softmax(x)?))),
    ("gather", gather_case),
    ("conv2d", conv_case),
    ("max_pool2", pool_case),
    ("clamped_exp", |r| {
        unary_away(r, (-3.0, 13.0), 10.0, |t, x| {
            EvidenceActivation::new(ActivationKind::ClampedExp).apply(t, x)
        })
    }),
    ("sse_loss", sse_case),
    ("kl_to_uniform", kl_case),
    ("edl_total_loss", edl_case),
    ("pignistic_prior", prior_case),
    ("expected_risk", |r| risk_case(r, false)),
    ("risk_edl_penalty", |r| risk_case(r, true)),
    ("log_policy", policy_case),
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], (lo, hi): (f64, f64)) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Like [`uniform`] but keeps every entry at least 0.05 from `kink`.
fn uniform_away(rng: &mut ChaCha8Rng, shape: &[usize], range: (f64, f64), kink: f64) -> Tensor {
    let mut t = uniform(rng, shape, range);
    for v in t.data_mut() {
        if (*v - kink).abs() < 0.05 {
            *v = kink + if *v < kink { -0.05 } else { 0.05 };
        }
    }
    t
}

fn small(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=4)
}

fn matrix_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![small(rng), small(rng) + 1]
}

/// Fixed weights of the scalar probe `Σ w ⊙ v`, derived from the shape so
/// every evaluation of a case sees the same probe.
fn probe(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64 * 31 + shape.len() as u64);
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(0.5..1.5)).collect())?;
    let w = tape.constant(w);
    let weighted = tape.mul(v, w)?;
    Ok(tape.sum(weighted))
}

fn unary(rng: &mut ChaCha8Rng, range: (f64, f64), op: fn(&mut Tape, Var) -> Result<Var>) -> Result<Case> {
    let shape = matrix_shape(rng);
    Ok(Case {
        inputs: vec![uniform(rng, &shape, range)],
        f: Box::new(move |t, v| {
            let y = op(t, v[0])?;
            probe(t, y)
        }),
    })
}

fn unary_away(
    rng: &mut ChaCha8Rng,
    range: (f64, f64),
    kink: f64,
    op: fn(&mut Tape, Var) -> Result<Var>,
) -> Result<Case> {
    let shape = matrix_shape(rng);
    Ok(Case {
        inputs: vec![uniform_away(rng, &shape, range, kink)],
        f: Box::new(move |t, v| {
            let y = op(t, v[0])?;
            probe(t, y)
        }),
    })
}

enum Broadcast {
    None,
    Row,
    Column,
}

type BinaryOp = fn(&mut Tape, Var, Var) -> edl_autodiff::Result<Var>;

fn binary(rng: &mut ChaCha8Rng, broadcast: Broadcast, op: BinaryOp) -> Result<Case> {
    let shape = matrix_shape(rng);
    let other = match broadcast {
        Broadcast::None => shape.clone(),
        Broadcast::Row => vec![shape[1]],
        Broadcast::Column => vec![shape[0], 1],
    };
    Ok(Case {
        inputs: vec![uniform(rng, &shape, (-2.0, 2.0)), uniform(rng, &other, (-2.0, 2.0))],
        f: Box::new(move |t, v| {
            let y = op(t, v[0], v[1])?;
            probe(t, y)
        }),
    })
}

fn div_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let shape = matrix_shape(rng);
    let mut den = uniform(rng, &shape, (0.5, 2.0));
    for v in den.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    Ok(Case {
        inputs: vec![uniform(rng, &shape, (-2.0, 2.0)), den],
        f: Box::new(|t, v| {
            let y = t.div(v[0], v[1])?;
            probe(t, y)
        }),
    })
}

fn matmul_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (m, k, n) = (small(rng), small(rng), small(rng));
    Ok(Case {
        inputs: vec![uniform(rng, &[m, k], (-2.0, 2.0)), uniform(rng, &[k, n], (-2.0, 2.0))],
        f: Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            probe(t, y)
        }),
    })
}

fn reshape_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (a, b, c) = (small(rng), small(rng), small(rng));
    Ok(Case {
        inputs: vec![uniform(rng, &[a, b * c], (-2.0, 2.0))],
        f: Box::new(move |t, v| {
            let y = t.reshape(v[0], &[a * b, c])?;
            probe(t, y)
        }),
    })
}

fn labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn gather_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let shape = matrix_shape(rng);
    let idx = labels(rng, shape[0], shape[1]);
    Ok(Case {
        inputs: vec![uniform(rng, &shape, (-2.0, 2.0))],
        f: Box::new(move |t, v| {
            let y = t.gather(v[0], &idx)?;
            probe(t, y)
        }),
    })
}

fn conv_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2));
    let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
    let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
    Ok(Case {
        inputs: vec![uniform(rng, &[n, c, h, w], (-1.0, 1.0)), uniform(rng, &[o, c, 3, 3], (-1.0, 1.0))],
        f: Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], padding)?;
            probe(t, y)
        }),
    })
}

fn pool_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (n, c) = (rng.random_range(1..=2), rng.random_range(1..=2));
    let (h, w) = (2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3));
    // Distinct values spaced well beyond the difference step keep the argmax
    // of every window stable under perturbation.
    let mut values: Vec<f64> = (0..n * c * h * w).map(|i| i as f64 * 0.1).collect();
    values.shuffle(rng);
    for v in &mut values {
        *v += rng.random_range(0.0..0.01);
    }
    Ok(Case {
        inputs: vec![Tensor::new(vec![n, c, h, w], values)?],
        f: Box::new(|t, v| {
            let y = t.max_pool2(v[0])?;
            probe(t, y)
        }),
    })
}

fn alpha_batch(rng: &mut ChaCha8Rng) -> (Vec<usize>, Tensor) {
    let (n, k) = (small(rng), rng.random_range(2..=5));
    (vec![n, k], uniform(rng, &[n, k], (1.05, 6.0)))
}

fn sse_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (shape, alpha) = alpha_batch(rng);
    let y = labels(rng, shape[0], shape[1]);
    Ok(Case { inputs: vec![alpha], f: Box::new(move |t, v| sse_loss(t, v[0], &y)) })
}

fn kl_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (_, alpha) = alpha_batch(rng);
    Ok(Case { inputs: vec![alpha], f: Box::new(|t, v| kl_to_uniform(t, v[0])) })
}

fn edl_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (shape, alpha) = alpha_batch(rng);
    let y = labels(rng, shape[0], shape[1]);
    let schedule = AnnealSchedule::new(10, rng.random_range(1..=12))?;
    Ok(Case { inputs: vec![alpha], f: Box::new(move |t, v| edl_total_loss(t, v[0], &y, &schedule)) })
}

fn head_inputs(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<Tensor>) {
    let (n, d, k) = (small(rng), small(rng), rng.random_range(2..=5));
    let inputs = vec![
        uniform(rng, &[n, d], (-2.0, 2.0)),
        uniform(rng, &[k, d], (-1.0, 1.0)),
        uniform(rng, &[k], (-1.0, 1.0)),
    ];
    (n, k, inputs)
}

fn prior_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (_, _, inputs) = head_inputs(rng);
    Ok(Case {
        inputs,
        f: Box::new(|t, v| {
            let gamma = pignistic_prior(t, v[0], v[1], v[2])?;
            probe(t, gamma)
        }),
    })
}

fn random_risk(rng: &mut ChaCha8Rng, k: usize) -> Result<RiskMatrix> {
    let costs = (0..k * k)
        .map(|i| if i / k == i % k { 0.0 } else { rng.random_range(0.0..5.0) })
        .collect();
    RiskMatrix::new(k, costs)
}

fn risk_case(rng: &mut ChaCha8Rng, penalty: bool) -> Result<Case> {
    let (n, k) = (small(rng), rng.random_range(2..=5));
    let risk = random_risk(rng, k)?;
    let y = labels(rng, n, k);
    let kappa = rng.random_range(0.001..1.0);
    Ok(Case {
        inputs: vec![uniform(rng, &[n, k], (0.0, 8.0)), uniform(rng, &[n, k], (0.05, 2.0))],
        f: Box::new(move |t, v| {
            if penalty {
                risk_edl_penalty_loss(t, v[0], v[1], &y, &risk, kappa)
            } else {
                expected_risk_loss(t, v[0], v[1], &y, &risk)
            }
        }),
    })
}

fn policy_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (n, k, mut inputs) = head_inputs(rng);
    inputs.push(uniform(rng, &[n, k], (0.0, 8.0)));
    let actions = labels(rng, n, k);
    Ok(Case {
        inputs,
        f: Box::new(move |t, v| log_policy(t, v[0], v[1], v[2], v[3], &actions)),
    })
}
