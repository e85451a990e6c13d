//! Risk-aware decisions: risk matrices, the pignistic prior head, expected
//! risk, the joint-training risk penalty and bandit-feedback policy gradient.

use std::path::Path;

use edl_autodiff::{Tape, Tensor, Var};
use rand::Rng;

use crate::dirichlet::{argmax, SimplexPoint};
use crate::error::{io_error, DataError, EdlError, Result};

/// Default weight of the joint-training risk penalty.
pub const DEFAULT_KAPPA: f64 = 0.01;

/// `R[k][i]`: cost of classifying true class `k` as `i`. Zero diagonal,
/// non-negative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMatrix {
    k: usize,
    costs: Vec<f64>,
}

impl RiskMatrix {
    pub fn new(k: usize, costs: Vec<f64>) -> Result<Self> {
        if k < 2 || costs.len() != k * k {
            return Err(DataError::RiskMatrix(format!(
                "need a square matrix with K ≥ 2, got {} entries for K = {k}",
                costs.len()
            ))
            .into());
        }
        if let Some(bad) = costs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(DataError::RiskMatrix(format!("negative or non-finite cost {bad}")).into());
        }
        for i in 0..k {
            if costs[i * k + i] != 0.0 {
                return Err(DataError::RiskMatrix(format!(
                    "diagonal entry R[{i}][{i}] = {} must be 0",
                    costs[i * k + i]
                ))
                .into());
            }
        }
        Ok(Self { k, costs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(DataError::RiskMatrix("rows have unequal lengths".into()).into());
        }
        Self::new(k, rows.concat())
    }

    /// All-zero costs.
    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(k, vec![0.0; k * k])
    }

    /// Ordinal cost: `(i − j)²` when predicting a larger class `j > i`,
    /// `i − j` otherwise.
    pub fn mnist(k: usize) -> Result<Self> {
        let mut costs = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                let d = i as f64 - j as f64;
                costs.push(if j > i { d * d } else { d });
            }
        }
        Self::new(k, costs)
    }

    /// Group-structured costs: `within` between distinct classes of one group,
    /// `cross[g_true][g_pred]` across groups. `group_of[c]` is the group of
    /// class `c`.
    pub fn grouped(group_of: &[usize], within: f64, cross: &[Vec<f64>]) -> Result<Self> {
        let k = group_of.len();
        let groups = group_of.iter().max().map_or(0, |g| g + 1);
        if cross.len() < groups || cross.iter().any(|r| r.len() < groups) {
            return Err(DataError::RiskMatrix(format!(
                "cross-group cost table must be at least {groups} × {groups}"
            ))
            .into());
        }
        let mut costs = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                costs.push(match (i == j, group_of[i] == group_of[j]) {
                    (true, _) => 0.0,
                    (false, true) => within,
                    (false, false) => cross[group_of[i]][group_of[j]],
                });
            }
        }
        Self::new(k, costs)
    }

    /// CIFAR10 animals/vehicles: 1 within a group, 10 for an animal predicted
    /// as a vehicle, 50 for a vehicle predicted as an animal.
    pub fn cifar10() -> Result<Self> {
        const VEHICLE: usize = 1;
        // airplane, automobile, bird, cat, deer, dog, frog, horse, ship, truck
        let group_of = [1, 1, 0, 0, 0, 0, 0, 0, 1, 1];
        let mut cross = vec![vec![0.0; 2]; 2];
        cross[0][VEHICLE] = 10.0;
        cross[VEHICLE][0] = 50.0;
        Self::grouped(&group_of, 1.0, &cross)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cost(&self, truth: usize, predicted: usize) -> f64 {
        self.costs[truth * self.k + predicted]
    }

    pub fn row(&self, truth: usize) -> &[f64] {
        &self.costs[truth * self.k..(truth + 1) * self.k]
    }

    /// `N × K` tensor stacking the rows of each label.
    pub fn rows_for(&self, labels: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(labels.len() * self.k);
        for &y in labels {
            data.extend_from_slice(self.row(y));
        }
        Tensor::new(vec![labels.len(), self.k], data).expect("row-major rows")
    }

    pub fn is_zero(&self) -> bool {
        self.costs.iter().all(|&c| c == 0.0)
    }

    /// `K` lines of `K` comma-separated non-negative decimals.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        DataError::RiskMatrix(format!("line {}: `{}` is not a number", n + 1, cell.trim()))
                    })
                })
                .collect::<std::result::Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        Self::from_csv_str(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.k {
            let cells: Vec<String> = self.row(i).iter().map(|c| format!("{c}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// `γ = K · softmax(W g + b)` with `W: K × D` and `b: K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PignisticHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl PignisticHead {
    /// Zero weights and bias: an exactly uniform prior of ones.
    pub fn zeros(k: usize, features: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[k, features]),
            bias: Tensor::zeros(&[k]),
        }
    }

    pub fn k(&self) -> usize {
        self.bias.numel()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Prior for one feature vector.
    pub fn prior(&self, features: &[f64]) -> Result<Vec<f64>> {
        let (k, d) = (self.k(), self.feature_dim());
        if features.len() != d {
            return Err(EdlError::InvalidArgument(format!(
                "pignistic head expects {d} features, got {}",
                features.len()
            )));
        }
        let w = self.weight.data();
        let mut z: Vec<f64> = (0..k)
            .map(|i| {
                let row = &w[i * d..(i + 1) * d];
                row.iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + self.bias.data()[i]
            })
            .collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in &mut z {
            *v = (*v - max).exp();
            total += *v;
        }
        let scale = k as f64 / total;
        z.iter_mut().for_each(|v| *v *= scale);
        Ok(z)
    }
}

/// `γ = K · softmax(g Wᵀ + b)` for `N × D` features on the tape.
pub fn pignistic_prior(tape: &mut Tape, features: Var, weight: Var, bias: Var) -> Result<Var> {
    let (fs, ws) = (tape.shape(features).to_vec(), tape.shape(weight).to_vec());
    if fs.len() != 2 || ws.len() != 2 || fs[1] != ws[1] || tape.shape(bias) != [ws[0]] {
        return Err(EdlError::InvalidArgument(format!(
            "pignistic head shapes do not line up: features {fs:?}, W {ws:?}, b {:?}",
            tape.shape(bias)
        )));
    }
    let k = ws[0] as f64;
    let wt = tape.transpose(weight)?;
    let z = tape.matmul(features, wt)?;
    let z = tape.add(z, bias)?;
    let p = tape.softmax(z)?;
    Ok(tape.scale(p, k))
}

/// Evidence `c` and pignistic prior `γ` for one sample; `α = c + γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PignisticPrediction {
    evidence: Vec<f64>,
    prior: Vec<f64>,
}

impl PignisticPrediction {
    pub fn new(evidence: Vec<f64>, prior: Vec<f64>) -> Result<Self> {
        let k = evidence.len();
        if prior.len() != k || k < 2 {
            return Err(EdlError::InvalidArgument(format!(
                "evidence has {k} entries, prior {}",
                prior.len()
            )));
        }
        if evidence.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(EdlError::InvalidArgument("evidence must be non-negative".into()));
        }
        if prior.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(EdlError::InvalidArgument("prior counts must be positive".into()));
        }
        let total: f64 = prior.iter().sum();
        if (total - k as f64).abs() > 1e-9 * k as f64 {
            return Err(EdlError::InvalidArgument(format!(
                "prior counts sum to {total}, not {k}"
            )));
        }
        Ok(Self { evidence, prior })
    }

    /// Evidence with the uniform prior of ones.
    pub fn uniform(evidence: Vec<f64>) -> Result<Self> {
        let k = evidence.len();
        Self::new(evidence, vec![1.0; k])
    }

    pub fn k(&self) -> usize {
        self.evidence.len()
    }

    pub fn evidence(&self) -> &[f64] {
        &self.evidence
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.evidence.iter().zip(&self.prior).map(|(c, g)| c + g).collect()
    }

    /// `K + Σ c`, which equals `Σ α` because the prior sums to `K`.
    fn strength(&self) -> f64 {
        self.k() as f64 + self.evidence.iter().sum::<f64>()
    }
}

/// `Σ_i R[y][i] (c_i + γ_i) / (K + Σ_j c_j)`.
pub fn expected_risk(pred: &PignisticPrediction, y: usize, risk: &RiskMatrix) -> Result<f64> {
    check_risk(pred, y, risk)?;
    let num: f64 = risk.row(y).iter().zip(pred.alpha()).map(|(r, a)| r * a).sum();
    Ok(num / pred.strength())
}

/// `κ Σ_i R[y][i] (c_i + γ_i)`: the expected-risk numerator only.
pub fn risk_edl_penalty(
    pred: &PignisticPrediction,
    y: usize,
    risk: &RiskMatrix,
    kappa: f64,
) -> Result<f64> {
    check_kappa(kappa)?;
    check_risk(pred, y, risk)?;
    let num: f64 = risk.row(y).iter().zip(pred.alpha()).map(|(r, a)| r * a).sum();
    Ok(kappa * num)
}

fn check_risk(pred: &PignisticPrediction, y: usize, risk: &RiskMatrix) -> Result<()> {
    if risk.k() != pred.k() {
        return Err(EdlError::InvalidArgument(format!(
            "risk matrix is {}×{0}, prediction has {} classes",
            risk.k(),
            pred.k()
        )));
    }
    if y >= pred.k() {
        return Err(EdlError::IndexOutOfRange { index: y, len: pred.k() });
    }
    Ok(())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(EdlError::InvalidArgument(format!(
            "risk penalty weight must be non-negative, got {kappa}"
        )));
    }
    Ok(())
}

/// Batch-summed expected risk for `N × K` evidence and prior.
pub fn expected_risk_loss(
    tape: &mut Tape,
    evidence: Var,
    prior: Var,
    labels: &[usize],
    risk: &RiskMatrix,
) -> Result<Var> {
    let k = tape.shape(evidence)[1] as f64;
    let rows = tape.constant(risk.rows_for(labels));
    let alpha = tape.add(evidence, prior)?;
    let weighted = tape.mul(rows, alpha)?;
    let num = tape.sum_last_axis(weighted)?;
    let den = tape.sum_last_axis(evidence)?;
    let den = tape.add_scalar(den, k);
    let ratio = tape.div(num, den)?;
    Ok(tape.sum(ratio))
}

/// Batch-summed `κ Σ_i R[y][i] (c_i + γ_i)`.
pub fn risk_edl_penalty_loss(
    tape: &mut Tape,
    evidence: Var,
    prior: Var,
    labels: &[usize],
    risk: &RiskMatrix,
    kappa: f64,
) -> Result<Var> {
    check_kappa(kappa)?;
    let rows = tape.constant(risk.rows_for(labels));
    let alpha = tape.add(evidence, prior)?;
    let weighted = tape.mul(rows, alpha)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, kappa))
}

/// `P(i | x) = (c_i + γ_i) / (K + Σ_j c_j)`.
pub fn policy(pred: &PignisticPrediction) -> SimplexPoint {
    let s = pred.strength();
    let mut p: Vec<f64> = pred.alpha().iter().map(|a| a / s).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    SimplexPoint::new(p).expect("normalized positive entries")
}

/// `argmax_i (c_i + γ_i)`, lowest index on ties.
pub fn decide(pred: &PignisticPrediction) -> usize {
    argmax(&pred.alpha())
}

/// Source of costs for sampled actions. Only the cost of the action actually
/// taken is ever revealed.
pub trait BanditFeedback {
    fn cost(&mut self, sample: usize, action: usize) -> f64;
}

/// Bandit feedback backed by a known risk matrix and labels.
pub struct RiskFeedback<'a> {
    risk: &'a RiskMatrix,
    labels: &'a [usize],
}

impl<'a> RiskFeedback<'a> {
    pub fn new(risk: &'a RiskMatrix, labels: &'a [usize]) -> Self {
        Self { risk, labels }
    }
}

impl BanditFeedback for RiskFeedback<'_> {
    fn cost(&mut self, sample: usize, action: usize) -> f64 {
        self.risk.cost(self.labels[sample], action)
    }
}

/// One sampled decision of policy-gradient training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgStep {
    pub sample: usize,
    pub action: usize,
    pub cost: f64,
}

/// `∇_Θ log P(action | x)` for one sample, as (dW, db).
pub fn log_policy_gradient(
    head: &PignisticHead,
    features: &[f64],
    evidence: &[f64],
    action: usize,
) -> Result<(Tensor, Tensor)> {
    let (k, d) = (head.k(), head.feature_dim());
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::new(vec![1, d], features.to_vec())?);
    let w = tape.param(head.weight.clone());
    let b = tape.param(head.bias.clone());
    let c = tape.constant(Tensor::new(vec![1, k], evidence.to_vec())?);
    let log_p = log_policy(&mut tape, g, w, b, c, &[action])?;
    tape.backward(log_p)?;
    Ok((tape.grad(w).expect("tracked"), tape.grad(b).expect("tracked")))
}

/// Batch-summed `log P(a | x)` for evidence `c` and a head `(W, b)`.
pub fn log_policy(
    tape: &mut Tape,
    features: Var,
    weight: Var,
    bias: Var,
    evidence: Var,
    actions: &[usize],
) -> Result<Var> {
    let k = tape.shape(weight)[0] as f64;
    let gamma = pignistic_prior(tape, features, weight, bias)?;
    let alpha = tape.add(evidence, gamma)?;
    let picked = tape.gather(alpha, actions)?;
    let log_num = tape.log(picked);
    let strength = tape.sum_last_axis(evidence)?;
    let strength = tape.add_scalar(strength, k);
    let log_den = tape.log(strength);
    let log_den = tape.reshape(log_den, &[actions.len()])?;
    let log_p = tape.sub(log_num, log_den)?;
    Ok(tape.sum(log_p))
}

/// One pass of REINFORCE over frozen features and evidence, visiting samples
/// in `order`.
///
/// For each sample an action is drawn from the policy, its cost is queried
/// from `feedback`, and the head moves by `−lr · cost · ∇ log P(action | x)`.
pub fn pg_pass<R: Rng + ?Sized>(
    head: &mut PignisticHead,
    features: &Tensor,
    evidence: &Tensor,
    order: &[usize],
    feedback: &mut dyn BanditFeedback,
    lr: f64,
    rng: &mut R,
) -> Result<Vec<PgStep>> {
    let k = head.k();
    if evidence.shape().get(1) != Some(&k) || features.shape().get(1) != Some(&head.feature_dim()) {
        return Err(EdlError::InvalidArgument(format!(
            "frozen outputs {:?} / {:?} do not match the head ({k} classes, {} features)",
            evidence.shape(),
            features.shape(),
            head.feature_dim()
        )));
    }
    let mut log = Vec::with_capacity(order.len());
    for &n in order {
        let (g, c) = (features.row(n), evidence.row(n));
        let pred = PignisticPrediction::new(c.to_vec(), head.prior(g)?)?;
        let probs = policy(&pred);
        let action = sample_categorical(probs.probs(), rng);
        let cost = feedback.cost(n, action);
        log.push(PgStep { sample: n, action, cost });
        if cost == 0.0 {
            continue;
        }
        let (gw, gb) = log_policy_gradient(head, g, c, action)?;
        let step = lr * cost;
        for (w, d) in head.weight.data_mut().iter_mut().zip(gw.data()) {
            *w -= step * d;
        }
        for (b, d) in head.bias.data_mut().iter_mut().zip(gb.data()) {
            *b -= step * d;
        }
    }
    Ok(log)
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mnist_matrix_entries() {
        let r = RiskMatrix::mnist(10).unwrap();
        assert_eq!(r.cost(2, 5), 9.0);
        assert_eq!(r.cost(5, 2), 3.0);
        assert_eq!(r.cost(0, 5), 25.0);
        assert_eq!(r.cost(5, 0), 5.0);
        for k in 0..10 {
            assert_eq!(r.cost(k, k), 0.0);
        }
    }

    #[test]
    fn grouped_matrix_entries() {
        let r = RiskMatrix::cifar10().unwrap();
        // cat → truck, truck → cat, cat → dog, ship → airplane
        assert_eq!(r.cost(3, 9), 10.0);
        assert_eq!(r.cost(9, 3), 50.0);
        assert_eq!(r.cost(3, 5), 1.0);
        assert_eq!(r.cost(8, 0), 1.0);
        for k in 0..10 {
            assert_eq!(r.cost(k, k), 0.0);
        }
        assert!(RiskMatrix::grouped(&[0, 1], 1.0, &[vec![0.0, -1.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn csv_loader_validates() {
        let r = RiskMatrix::from_csv_str("0,1,5\n2,0,1\n1,1,0\n").unwrap();
        assert_eq!(r.cost(0, 2), 5.0);
        assert_eq!(RiskMatrix::from_csv_str(&r.to_csv()).unwrap(), r);
        assert!(RiskMatrix::from_csv_str("0,-1\n1,0\n").is_err());
        assert!(RiskMatrix::from_csv_str("1,1\n1,0\n").is_err());
        assert!(RiskMatrix::from_csv_str("0,1,2\n1,0\n").is_err());
        assert!(RiskMatrix::from_csv_str("0,x\n1,0\n").is_err());
    }

    #[test]
    fn prior_examples() {
        let head = PignisticHead::zeros(10, 4);
        let g = head.prior(&[0.3, -1.0, 2.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let mut head = PignisticHead::zeros(3, 2);
        head.bias.data_mut()[0] = 2f64.ln();
        let g = head.prior(&[1.0, 1.0]).unwrap();
        for (a, b) in g.iter().zip([1.5, 0.75, 0.75]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(head.prior(&[1.0]).is_err());
    }

    #[test]
    fn expected_risk_examples() {
        let r = RiskMatrix::mnist(10).unwrap();
        let pred = PignisticPrediction::uniform(vec![0.0; 10]).unwrap();
        assert!((expected_risk(&pred, 0, &r).unwrap() - 28.5).abs() < 1e-12);
        assert!((risk_edl_penalty(&pred, 0, &r, 0.01).unwrap() - 2.85).abs() < 1e-12);
        let zero = RiskMatrix::zeros(10).unwrap();
        assert_eq!(expected_risk(&pred, 3, &zero).unwrap(), 0.0);
        assert_eq!(risk_edl_penalty(&pred, 3, &zero, 0.01).unwrap(), 0.0);
        assert!(risk_edl_penalty(&pred, 0, &r, -0.1).is_err());
    }

    #[test]
    fn penalty_is_scaled_expected_risk() {
        let r = RiskMatrix::mnist(4).unwrap();
        let pred = PignisticPrediction::new(
            vec![3.0, 0.5, 0.0, 7.0],
            vec![0.5, 1.5, 1.0, 1.0],
        )
        .unwrap();
        let kappa = 0.01;
        let lhs = risk_edl_penalty(&pred, 1, &r, kappa).unwrap();
        let rhs = kappa * (4.0 + 10.5) * expected_risk(&pred, 1, &r).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn policy_examples() {
        let zero = PignisticPrediction::new(vec![0.0; 3], vec![0.5, 2.0, 0.5]).unwrap();
        let p = policy(&zero);
        for (a, b) in p.probs().iter().zip([0.5 / 3.0, 2.0 / 3.0, 0.5 / 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = policy(&PignisticPrediction::uniform(vec![6.0, 0.0, 0.0]).unwrap());
        for (a, b) in p.probs().iter().zip([7.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn decide_examples() {
        let d = |c: Vec<f64>, g: Vec<f64>| decide(&PignisticPrediction::new(c, g).unwrap());
        assert_eq!(d(vec![6.0, 0.0, 0.0], vec![1.0; 3]), 0);
        assert_eq!(d(vec![0.0; 3], vec![0.5, 2.0, 0.5]), 1);
        assert_eq!(d(vec![1.0; 3], vec![1.0; 3]), 0);
    }

    #[test]
    fn prediction_validation() {
        assert!(PignisticPrediction::new(vec![-1.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(PignisticPrediction::new(vec![0.0, 0.0], vec![1.5, 1.0]).is_err());
        assert!(PignisticPrediction::new(vec![0.0, 0.0], vec![2.0, 0.0]).is_err());
    }

    #[test]
    fn zero_cost_action_leaves_head_unchanged() {
        let mut head = PignisticHead::zeros(3, 2);
        head.weight.data_mut()[1] = 0.3;
        let before = head.clone();
        let features = Tensor::matrix(1, 2, vec![0.4, -0.2]).unwrap();
        let evidence = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        let zero = RiskMatrix::zeros(3).unwrap();
        let mut fb = RiskFeedback::new(&zero, &[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            pg_pass(&mut head, &features, &evidence, &[0], &mut fb, 0.5, &mut rng).unwrap();
        }
        assert_eq!(head, before);
    }

    #[test]
    fn costly_update_lowers_that_action_probability() {
        let mut head = PignisticHead::zeros(3, 2);
        let g = [0.4, -0.2];
        let c = [0.5, 0.0, 1.0];
        let prob = |head: &PignisticHead, a: usize| {
            let pred = PignisticPrediction::new(c.to_vec(), head.prior(&g).unwrap()).unwrap();
            policy(&pred).probs()[a]
        };
        let before = prob(&head, 2);
        let (gw, gb) = log_policy_gradient(&head, &g, &c, 2).unwrap();
        for (w, d) in head.weight.data_mut().iter_mut().zip(gw.data()) {
            *w -= 0.1 * 5.0 * d;
        }
        for (b, d) in head.bias.data_mut().iter_mut().zip(gb.data()) {
            *b -= 0.1 * 5.0 * d;
        }
        assert!(prob(&head, 2) < before);
    }

    #[test]
    fn bandit_learner_moves_prior_to_cheap_class() {
        // zero evidence everywhere, every true label 0, R[0] = [0, 1, 5]
        let r = RiskMatrix::from_rows(&[
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap();
        let n = 200;
        let mut rng_data = ChaCha8Rng::seed_from_u64(3);
        let feats: Vec<f64> = (0..n * 2).map(|_| rng_data.random::<f64>() - 0.5).collect();
        let features = Tensor::matrix(n, 2, feats).unwrap();
        let evidence = Tensor::zeros(&[n, 3]);
        let labels = vec![0usize; n];
        let mut head = PignisticHead::zeros(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let order: Vec<usize> = (0..n).collect();
        for _ in 0..50 {
            let mut fb = RiskFeedback::new(&r, &labels);
            pg_pass(&mut head, &features, &evidence, &order, &mut fb, 0.01, &mut rng).unwrap();
        }
        let mut mean = [0.0; 3];
        for i in 0..n {
            let g = head.prior(features.row(i)).unwrap();
            assert!((g.iter().sum::<f64>() - 3.0).abs() < 1e-9);
            for (m, v) in mean.iter_mut().zip(g) {
                *m += v / n as f64;
            }
        }
        assert_eq!(argmax(&mean), 0, "{mean:?}");
    }

    #[test]
    fn bandit_reads_only_sampled_costs() {
        struct Counting {
            calls: Vec<(usize, usize)>,
        }
        impl BanditFeedback for Counting {
            fn cost(&mut self, sample: usize, action: usize) -> f64 {
                self.calls.push((sample, action));
                1.0
            }
        }
        let mut head = PignisticHead::zeros(3, 2);
        let features = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let evidence = Tensor::zeros(&[2, 3]);
        let mut fb = Counting { calls: vec![] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let steps = pg_pass(&mut head, &features, &evidence, &[1, 0], &mut fb, 0.1, &mut rng).unwrap();
        assert_eq!(fb.calls.len(), 2);
        assert_eq!(fb.calls, steps.iter().map(|s| (s.sample, s.action)).collect::<Vec<_>>());
    }
}
