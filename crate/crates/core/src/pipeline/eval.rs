//! ZSL and GZSL metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::classifier::{Classify, Gate};
use crate::error::{Error, Result};
use crate::numkit::DenseMatrix;
use crate::ClassId;

/// `H = 2su / (s + u)`, and 0 when `s + u = 0`. Equal inputs return that
/// value exactly.
pub fn harmonic_mean(seen: f64, unseen: f64) -> f64 {
    if seen + unseen == 0.0 {
        0.0
    } else if seen == unseen {
        seen
    } else {
        2.0 * seen * unseen / (seen + unseen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZslResult {
    pub accuracy: f64,
    pub per_class: BTreeMap<ClassId, ClassAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GzslResult {
    pub seen: f64,
    pub unseen: f64,
    pub harmonic_mean: f64,
    /// Fraction of seen-class samples the gate sent to the seen classifier.
    pub seen_routed_to_seen: f64,
    /// Fraction of unseen-class samples the gate sent to the unseen classifier.
    pub unseen_routed_to_unseen: f64,
    pub per_class: BTreeMap<ClassId, ClassAccuracy>,
}

fn tally(per_class: &mut BTreeMap<ClassId, ClassAccuracy>, label: ClassId, ok: bool) {
    let e = per_class.entry(label).or_default();
    e.total += 1;
    e.correct += usize::from(ok);
}

/// Sample-average accuracy of `classifier` over latent means.
pub fn zsl_accuracy(classifier: &dyn Classify, latents: &DenseMatrix, labels: &[ClassId]) -> Result<ZslResult> {
    if labels.is_empty() {
        return Err(Error::Empty("ZSL test set"));
    }
    let mut per_class = BTreeMap::new();
    let mut correct = 0;
    for (z, &l) in latents.iter_rows().zip(labels) {
        let ok = classifier.predict(z) == l;
        correct += usize::from(ok);
        tally(&mut per_class, l, ok);
    }
    Ok(ZslResult {
        accuracy: correct as f64 / labels.len() as f64,
        per_class,
    })
}

/// Routes every sample through `gate` and scores each group separately.
pub fn gzsl_accuracy(
    gate: &dyn Gate,
    seen_classifier: &dyn Classify,
    unseen_classifier: &dyn Classify,
    seen_latents: &DenseMatrix,
    seen_labels: &[ClassId],
    unseen_latents: &DenseMatrix,
    unseen_labels: &[ClassId],
) -> Result<GzslResult> {
    if seen_labels.is_empty() {
        return Err(Error::Empty("GZSL seen test set"));
    }
    if unseen_labels.is_empty() {
        return Err(Error::Empty("GZSL unseen test set"));
    }
    let mut per_class = BTreeMap::new();
    let mut run = |latents: &DenseMatrix, labels: &[ClassId], expect_seen: bool| {
        let mut correct = 0usize;
        let mut routed_right = 0usize;
        for (z, &l) in latents.iter_rows().zip(labels) {
            let probs = seen_classifier.predict_proba(z);
            let to_seen = gate.routes_to_seen(&probs);
            let pred = if to_seen {
                seen_classifier.predict(z)
            } else {
                unseen_classifier.predict(z)
            };
            let ok = pred == l;
            correct += usize::from(ok);
            routed_right += usize::from(to_seen == expect_seen);
            tally(&mut per_class, l, ok);
        }
        let n = labels.len() as f64;
        (correct as f64 / n, routed_right as f64 / n)
    };
    let (seen, seen_routed) = run(seen_latents, seen_labels, true);
    let (unseen, unseen_routed) = run(unseen_latents, unseen_labels, false);
    Ok(GzslResult {
        seen,
        unseen,
        harmonic_mean: harmonic_mean(seen, unseen),
        seen_routed_to_seen: seen_routed,
        unseen_routed_to_unseen: unseen_routed,
        per_class,
    })
}
