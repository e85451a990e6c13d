//! Combining two classifiers trained on disjoint label sets.
//!
//! Evidential models are fused by concatenating their Dirichlet
//! concentrations. Softmax models are fused by concatenating logits and
//! taking one softmax over the union.

use std::collections::BTreeSet;

use crate::data::Dataset;
use crate::dirichlet::{argmax, fuse, DirichletParams, LabelledDirichlet};
use crate::error::EdlError;
use crate::metrics::EvalReport;
use crate::model::{softmax, EvidenceModel};
use crate::Result;

/// Per-sample predictions over `labels = labels(A) ++ labels(B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPredictions {
    pub labels: Vec<u32>,
    /// Index into `labels` of each decision.
    pub decisions: Vec<usize>,
    pub entropy: Vec<f64>,
    /// Fused concentrations, for evidential models only.
    pub alpha: Option<Vec<Vec<f64>>>,
}

impl FusedPredictions {
    /// Global label of each decision.
    pub fn decided_labels(&self) -> Vec<u32> {
        self.decisions.iter().map(|&d| self.labels[d]).collect()
    }
}

pub fn fuse_predict(a: &EvidenceModel, b: &EvidenceModel, x: &edl_autodiff::Tensor) -> Result<FusedPredictions> {
    let left: BTreeSet<u32> = a.class_labels().iter().copied().collect();
    let overlap: Vec<u32> = b.class_labels().iter().copied().filter(|l| left.contains(l)).collect();
    if !overlap.is_empty() {
        return Err(EdlError::OverlappingLabels(overlap));
    }
    let labels: Vec<u32> = a.class_labels().iter().chain(b.class_labels()).copied().collect();
    match (a.mode.is_evidential(), b.mode.is_evidential()) {
        (true, true) => {
            let (pa, pb) = (a.predict(x)?, b.predict(x)?);
            let (aa, ab) = (pa.alpha.expect("evidential"), pb.alpha.expect("evidential"));
            let mut decisions = Vec::with_capacity(aa.len());
            let mut entropy = Vec::with_capacity(aa.len());
            let mut alpha = Vec::with_capacity(aa.len());
            for (ra, rb) in aa.into_iter().zip(ab) {
                let fa = LabelledDirichlet::new(a.class_labels().to_vec(), ra)?;
                let fb = LabelledDirichlet::new(b.class_labels().to_vec(), rb)?;
                let fused = fuse(&fa, &fb)?;
                let dir = DirichletParams::new(fused.alpha().to_vec())?;
                decisions.push(argmax(dir.alpha()));
                entropy.push(dir.predictive_entropy());
                alpha.push(dir.alpha().to_vec());
            }
            Ok(FusedPredictions { labels, decisions, entropy, alpha: Some(alpha) })
        }
        (false, false) => {
            let (la, lb) = (a.outputs(x)?.logits, b.outputs(x)?.logits);
            let n = la.shape()[0];
            let mut decisions = Vec::with_capacity(n);
            let mut entropy = Vec::with_capacity(n);
            for i in 0..n {
                let joined: Vec<f64> = la.row(i).iter().chain(lb.row(i)).copied().collect();
                let p = softmax(&joined);
                decisions.push(p.argmax());
                entropy.push(p.entropy());
            }
            Ok(FusedPredictions { labels, decisions, entropy, alpha: None })
        }
        _ => Err(EdlError::InvalidArgument(format!(
            "cannot fuse a {} model with a {} model",
            a.mode, b.mode
        ))),
    }
}

/// Fused evaluation on `data`, whose class labels must lie in the union of
/// the two models' labels.
pub fn fused_report(a: &EvidenceModel, b: &EvidenceModel, data: &Dataset) -> Result<EvalReport> {
    let fused = fuse_predict(a, b, data.features())?;
    let position = |label: u32| {
        fused.labels.iter().position(|&l| l == label).ok_or_else(|| {
            EdlError::InvalidArgument(format!("data class {label} is not covered by either model"))
        })
    };
    let truth = data
        .labels()
        .iter()
        .map(|&y| position(data.class_labels()[y]))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::build(&truth, &fused.decisions, &fused.entropy, fused.labels.len(), None, None)
}
