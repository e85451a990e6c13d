//! Closed-form Dirichlet machinery: moments, predictive entropy, KL to the
//! uniform Dirichlet, misleading-evidence removal, fusion over disjoint label
//! sets and seeded sampling.

use std::collections::BTreeSet;

use edl_autodiff::special::{digamma, ln_gamma};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{EdlError, Result};

/// Tolerance on the unit sum of a [`SimplexPoint`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Concentration parameters `α` of a Dirichlet over `K ≥ 2` categories.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    p: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EdlError::InvalidArgument(format!(
                "simplex entries must lie in [0, 1], got {p:?}"
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(EdlError::InvalidArgument(format!(
                "simplex entries sum to {total}, not 1"
            )));
        }
        Ok(Self { p })
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.p
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.p)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .p
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(EdlError::InvalidArgument(format!(
                "a Dirichlet needs at least 2 categories, got {}",
                alpha.len()
            )));
        }
        if let Some(bad) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(EdlError::InvalidArgument(format!(
                "concentrations must be positive and finite, got {bad}"
            )));
        }
        Ok(Self { alpha })
    }

    /// `α = c + 1` for non-negative evidence `c`.
    pub fn from_evidence(evidence: &[f64]) -> Result<Self> {
        Self::new(evidence.iter().map(|c| c + 1.0).collect())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    /// Total concentration `α₀`.
    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// `E[π_k] = α_k / α₀`, which is also the marginal `p(y = k | α)`.
    pub fn mean(&self) -> SimplexPoint {
        let s = self.strength();
        let mut p: Vec<f64> = self.alpha.iter().map(|a| a / s).collect();
        // Keep the sum within tolerance even for extreme concentrations.
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v = (*v / total).clamp(0.0, 1.0));
        SimplexPoint { p }
    }

    /// `Var[π_k] = α_k (α₀ − α_k) / (α₀² (α₀ + 1))`.
    pub fn variance(&self, k: usize) -> Result<f64> {
        let a = *self.alpha.get(k).ok_or(EdlError::IndexOutOfRange {
            index: k,
            len: self.k(),
        })?;
        let s = self.strength();
        Ok(a * (s - a) / (s * s * (s + 1.0)))
    }

    /// Entropy of the predictive categorical `α / α₀`, in nats.
    pub fn predictive_entropy(&self) -> f64 {
        let s = self.strength();
        let h = -self
            .alpha
            .iter()
            .map(|&a| {
                let p = a / s;
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>();
        h.clamp(0.0, (self.k() as f64).ln())
    }

    /// `KL(Dir(α) ‖ Dir(1))` in closed form.
    pub fn kl_to_uniform(&self) -> f64 {
        let k = self.k() as f64;
        let s = self.strength();
        let psi_s = digamma(s);
        let mut kl = ln_gamma(s) - ln_gamma(k);
        for &a in &self.alpha {
            kl -= ln_gamma(a);
            kl += (a - 1.0) * (digamma(a) - psi_s);
        }
        kl.max(0.0)
    }

    /// `α̃ = y + (1 − y) ⊙ α`: the true class's concentration reset to 1.
    pub fn remove_misleading(&self, y: usize) -> Result<Self> {
        if y >= self.k() {
            return Err(EdlError::IndexOutOfRange {
                index: y,
                len: self.k(),
            });
        }
        let mut alpha = self.alpha.clone();
        alpha[y] = 1.0;
        Ok(Self { alpha })
    }

    /// One draw from `Dir(α)` via `K` independent gamma variates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimplexPoint {
        loop {
            let draws: Vec<f64> = self.alpha.iter().map(|&a| sample_gamma(a, rng)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                return SimplexPoint {
                    p: draws.iter().map(|g| g / total).collect(),
                };
            }
        }
    }
}

/// Marsaglia–Tsang gamma variate with unit scale; shapes below 1 are boosted
/// through `Gamma(a) = Gamma(a + 1) · U^{1/a}`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = 1.0 - rng.random::<f64>();
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Concentrations attached to explicit (global) category labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledDirichlet {
    labels: Vec<u32>,
    alpha: Vec<f64>,
}

impl LabelledDirichlet {
    pub fn new(labels: Vec<u32>, alpha: Vec<f64>) -> Result<Self> {
        if labels.len() != alpha.len() {
            return Err(EdlError::InvalidArgument(format!(
                "{} labels for {} concentrations",
                labels.len(),
                alpha.len()
            )));
        }
        let unique: BTreeSet<_> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(EdlError::InvalidArgument(format!(
                "duplicate labels in {labels:?}"
            )));
        }
        if let Some(bad) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(EdlError::InvalidArgument(format!(
                "concentrations must be positive and finite, got {bad}"
            )));
        }
        Ok(Self { labels, alpha })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn to_dirichlet(&self) -> Result<DirichletParams> {
        DirichletParams::new(self.alpha.clone())
    }
}

/// Merges two predictions over disjoint label sets by concatenating their
/// concentrations: `[α_A1 … α_An, α_B1 … α_Bm]` over `A ∪ B`.
pub fn fuse(a: &LabelledDirichlet, b: &LabelledDirichlet) -> Result<LabelledDirichlet> {
    if a.labels.is_empty() || b.labels.is_empty() {
        return Err(EdlError::InvalidArgument(
            "cannot fuse with an empty label set".into(),
        ));
    }
    let left: BTreeSet<u32> = a.labels.iter().copied().collect();
    let overlap: Vec<u32> = b.labels.iter().copied().filter(|l| left.contains(l)).collect();
    if !overlap.is_empty() {
        return Err(EdlError::OverlappingLabels(overlap));
    }
    let labels = a.labels.iter().chain(&b.labels).copied().collect();
    let alpha = a.alpha.iter().chain(&b.alpha).copied().collect();
    LabelledDirichlet::new(labels, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dir(a: &[f64]) -> DirichletParams {
        DirichletParams::new(a.to_vec()).unwrap()
    }

    #[test]
    fn mean_examples() {
        for a in [[1.0, 1.0, 1.0], [8.0, 8.0, 8.0]] {
            for &p in dir(&a).mean().probs() {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let m = dir(&[4.0, 7.0, 17.0]).mean();
        for (p, e) in m.probs().iter().zip([0.142857, 0.25, 0.607143]) {
            assert!((p - e).abs() < 1e-6);
        }
    }

    #[test]
    fn variance_examples() {
        let v1 = dir(&[1.0, 1.0, 1.0]).variance(1).unwrap();
        let v8 = dir(&[8.0, 8.0, 8.0]).variance(2).unwrap();
        assert!((v1 - 2.0 / 36.0).abs() < 1e-15);
        assert!((v8 - 128.0 / 14400.0).abs() < 1e-15);
        assert!(v8 < v1);
        assert!(matches!(
            dir(&[1.0, 1.0]).variance(2),
            Err(EdlError::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn entropy_examples() {
        assert!((dir(&[1.0, 1.0, 1.0]).predictive_entropy() - 3f64.ln()).abs() < 1e-12);
        assert!(dir(&[1e6, 1.0, 1.0]).predictive_entropy() < 1e-3);
        // hand-evaluated from the mean [1/7, 1/4, 17/28]
        assert!((dir(&[4.0, 7.0, 17.0]).predictive_entropy() - 0.927_519_676_717_26).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(dir(&[1.0, 1.0, 1.0]).kl_to_uniform(), 0.0);
        // ln 3 + ψ(2) − ψ(4)
        assert!((dir(&[2.0, 1.0, 1.0]).kl_to_uniform() - 0.265_278_955_334_776_36).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_concentrations() {
        assert!(DirichletParams::new(vec![1.0]).is_err());
        assert!(DirichletParams::new(vec![1.0, 0.0]).is_err());
        assert!(DirichletParams::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn remove_misleading_examples() {
        assert_eq!(dir(&[5.0, 3.0, 2.0]).remove_misleading(0).unwrap().alpha(), &[1.0, 3.0, 2.0]);
        assert_eq!(dir(&[1.0; 4]).remove_misleading(3).unwrap().alpha(), &[1.0; 4]);
        assert_eq!(dir(&[1.0, 9.0]).remove_misleading(1).unwrap().alpha(), &[1.0, 1.0]);
        assert!(dir(&[1.0, 9.0]).remove_misleading(2).is_err());
    }

    #[test]
    fn fusion_examples() {
        let a = LabelledDirichlet::new(vec![0, 1], vec![2.0, 3.0]).unwrap();
        let b = LabelledDirichlet::new(vec![2, 3, 4], vec![4.0, 1.0, 1.0]).unwrap();
        let f = fuse(&a, &b).unwrap();
        assert_eq!(f.alpha(), &[2.0, 3.0, 4.0, 1.0, 1.0]);
        assert_eq!(f.labels(), &[0, 1, 2, 3, 4]);
        let m = f.to_dirichlet().unwrap().mean();
        assert!((m.probs()[0] - 2.0 / 11.0).abs() < 1e-15);

        let empty = LabelledDirichlet::new(vec![], vec![]).unwrap();
        assert!(fuse(&a, &empty).is_err());
        assert!(matches!(fuse(&a, &a), Err(EdlError::OverlappingLabels(_))));
    }

    #[test]
    fn sampling_is_seeded_and_on_simplex() {
        let d = dir(&[0.3, 2.0, 5.5]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| d.sample(&mut rng)).collect::<Vec<_>>()
        };
        let (a, b) = (draw(7), draw(7));
        assert_eq!(a, b);
        for p in &a {
            assert!(SimplexPoint::new(p.probs().to_vec()).is_ok());
        }
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexPoint::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![1.5, -0.5]).is_err());
    }
}
