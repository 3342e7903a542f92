//! Softmax classifiers over latent vectors and the logistic seen/unseen gate.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, sigmoid, softmax_in_place, AdamState, DenseMatrix};
use crate::ClassId;

/// Anything that scores latents against a fixed list of classes.
pub trait Classify {
    fn classes(&self) -> &[ClassId];

    /// Probabilities in the order of [`Classify::classes`].
    fn predict_proba(&self, z: &[f64]) -> Vec<f64>;

    fn predict(&self, z: &[f64]) -> ClassId {
        let p = self.predict_proba(z);
        let best = p
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > p[best] { i } else { best });
        self.classes()[best]
    }
}

/// Decides whether a sample goes to the seen-class classifier, given that
/// classifier's probabilities.
pub trait Gate {
    fn routes_to_seen(&self, seen_probs: &[f64]) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxTraining {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

/// Linear softmax head `p = softmax(W z + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    classes: Vec<ClassId>,
    weights: DenseMatrix,
    bias: Vec<f64>,
}

impl SoftmaxClassifier {
    pub fn zeros(classes: Vec<ClassId>, dim: usize) -> Self {
        let k = classes.len();
        Self {
            classes,
            weights: DenseMatrix::zeros(k, dim),
            bias: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Mini-batch Adam on the mean cross-entropy. With a single class the
    /// result is a constant predictor and a warning is logged.
    pub fn train<R: Rng + ?Sized>(
        classes: Vec<ClassId>,
        inputs: &DenseMatrix,
        labels: &[ClassId],
        opts: &SoftmaxTraining,
        rng: &mut R,
    ) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Empty("classifier training set"));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::DimensionMismatch {
                context: "classifier labels",
                expected: inputs.rows(),
                actual: labels.len(),
            });
        }
        if classes.is_empty() {
            return Err(Error::Empty("classifier class list"));
        }
        let targets = labels
            .iter()
            .map(|l| classes.iter().position(|c| c == l).ok_or(Error::UnknownClass(*l)))
            .collect::<Result<Vec<_>>>()?;
        let mut clf = Self::zeros(classes, inputs.cols());
        if clf.classes.len() == 1 {
            warn!(
                "classifier has a single class ({}); it will always predict it",
                clf.classes[0]
            );
            return Ok(clf);
        }
        let k = clf.classes.len();
        let d = inputs.cols();
        let n_params = k * d + k;
        let mut adam = AdamState::new(n_params, opts.lr);
        let mut order: Vec<usize> = (0..inputs.rows()).collect();
        let mut flat = vec![0.0; n_params];
        let mut grads = vec![0.0; n_params];
        let bs = opts.batch_size.max(1);
        let mut probs = vec![0.0; k];
        for _ in 0..opts.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(bs) {
                grads.iter_mut().for_each(|g| *g = 0.0);
                let inv = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let x = inputs.row(i);
                    clf.logits_into(x, &mut probs);
                    softmax_in_place(&mut probs);
                    probs[targets[i]] -= 1.0;
                    for (c, p) in probs.iter().enumerate() {
                        let e = p * inv;
                        for (g, xv) in grads[c * d..(c + 1) * d].iter_mut().zip(x) {
                            *g += e * xv;
                        }
                        grads[k * d + c] += e;
                    }
                }
                flat[..k * d].copy_from_slice(clf.weights.data());
                flat[k * d..].copy_from_slice(&clf.bias);
                adam.step(&mut flat, &grads)?;
                clf.weights.data_mut().copy_from_slice(&flat[..k * d]);
                clf.bias.copy_from_slice(&flat[k * d..]);
            }
        }
        Ok(clf)
    }

    fn logits_into(&self, z: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = dot(self.weights.row(c), z) + self.bias[c];
        }
    }

    pub fn accuracy(&self, inputs: &DenseMatrix, labels: &[ClassId]) -> f64 {
        let correct = inputs
            .iter_rows()
            .zip(labels)
            .filter(|(z, l)| self.predict(z) == **l)
            .count();
        correct as f64 / labels.len().max(1) as f64
    }
}

impl Classify for SoftmaxClassifier {
    fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    fn predict_proba(&self, z: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes.len()];
        self.logits_into(z, &mut p);
        softmax_in_place(&mut p);
        p
    }
}

/// `(top-1 probability, entropy)` of a probability vector.
pub fn gate_features(probs: &[f64]) -> [f64; 2] {
    let top = probs.iter().cloned().fold(0.0, f64::max);
    let entropy = -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    [top, entropy]
}

/// Binary logistic regression on [`gate_features`]; positive class is "seen".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub weights: [f64; 2],
    pub bias: f64,
    /// Inverse regularisation strength: the objective is
    /// `½‖w‖² + C Σ_i s_i · logloss_i` (bias not penalised).
    pub c: f64,
}

impl GateModel {
    /// Fits by damped Newton iterations. Each group receives the same total
    /// sample weight, so group sizes do not shift the decision threshold.
    pub fn fit(seen: &[[f64; 2]], unseen: &[[f64; 2]], c: f64) -> Result<Self> {
        if seen.is_empty() || unseen.is_empty() {
            return Err(Error::Empty("gate training group"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig("gate regularisation C must be positive".into()));
        }
        let n = (seen.len() + unseen.len()) as f64;
        let ws = n / (2.0 * seen.len() as f64);
        let wu = n / (2.0 * unseen.len() as f64);
        let data: Vec<([f64; 3], f64, f64)> = seen
            .iter()
            .map(|x| ([x[0], x[1], 1.0], 1.0, ws))
            .chain(unseen.iter().map(|x| ([x[0], x[1], 1.0], 0.0, wu)))
            .collect();
        let objective = |theta: &[f64; 3]| -> f64 {
            let reg = 0.5 * (theta[0] * theta[0] + theta[1] * theta[1]);
            let ll: f64 = data
                .iter()
                .map(|(x, y, s)| {
                    let t = theta[0] * x[0] + theta[1] * x[1] + theta[2] * x[2];
                    // log(1 + e^t) − y t
                    s * (crate::numkit::softplus(t) - y * t)
                })
                .sum();
            reg + c * ll
        };
        let mut theta = [0.0; 3];
        let mut current = objective(&theta);
        for _ in 0..100 {
            let mut g = [theta[0], theta[1], 0.0];
            let mut h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1e-10]];
            for (x, y, s) in &data {
                let p = sigmoid(theta[0] * x[0] + theta[1] * x[1] + theta[2] * x[2]);
                for a in 0..3 {
                    g[a] += c * s * (p - y) * x[a];
                    for b in 0..3 {
                        h[a][b] += c * s * p * (1.0 - p) * x[a] * x[b];
                    }
                }
            }
            let step = solve3(h, g).ok_or(Error::NonFinite("gate Newton system"))?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = [theta[0] - t * step[0], theta[1] - t * step[1], theta[2] - t * step[2]];
                let v = objective(&cand);
                if v <= current {
                    theta = cand;
                    let improvement = current - v;
                    current = v;
                    accepted = improvement > 1e-14 * current.abs().max(1.0);
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(Self {
            weights: [theta[0], theta[1]],
            bias: theta[2],
            c,
        })
    }

    /// Probability that a sample with these gate features is "seen".
    pub fn prob_seen(&self, features: [f64; 2]) -> f64 {
        sigmoid(self.weights[0] * features[0] + self.weights[1] * features[1] + self.bias)
    }

    pub fn accuracy(&self, seen: &[[f64; 2]], unseen: &[[f64; 2]]) -> f64 {
        let ok = seen.iter().filter(|f| self.prob_seen(**f) >= 0.5).count()
            + unseen.iter().filter(|f| self.prob_seen(**f) < 0.5).count();
        ok as f64 / (seen.len() + unseen.len()).max(1) as f64
    }
}

impl Gate for GateModel {
    fn routes_to_seen(&self, seen_probs: &[f64]) -> bool {
        self.prob_seen(gate_features(seen_probs)) >= 0.5
    }
}

/// Gaussian elimination with partial pivoting on a 3×3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for k in col..3 {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{standard_normal, RngSeed};

    fn opts() -> SoftmaxTraining {
        SoftmaxTraining {
            epochs: 300,
            lr: 1e-3,
            batch_size: 64,
        }
    }

    fn gaussian_blobs(seed: u64, centers: &[[f64; 2]], sd: f64, n: usize) -> (DenseMatrix, Vec<ClassId>) {
        let mut rng = RngSeed::new(seed, 0).rng();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..n {
                rows.push(vec![c[0] + sd * standard_normal(&mut rng), c[1] + sd * standard_normal(&mut rng)]);
                labels.push(k as ClassId + 10);
            }
        }
        (DenseMatrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_classes_are_learned() {
        let (x, y) = gaussian_blobs(1, &[[3.0, 0.0], [-3.0, 0.0]], 0.3, 500);
        let clf = SoftmaxClassifier::train(vec![10, 11], &x, &y, &opts(), &mut RngSeed::new(2, 0).rng()).unwrap();
        assert!(clf.accuracy(&x, &y) >= 0.99);
        let again = SoftmaxClassifier::train(vec![10, 11], &x, &y, &opts(), &mut RngSeed::new(2, 0).rng()).unwrap();
        assert_eq!(clf, again);
    }

    #[test]
    fn single_class_is_constant() {
        let (x, y) = gaussian_blobs(3, &[[1.0, 1.0]], 1.0, 20);
        let clf = SoftmaxClassifier::train(vec![10], &x, &y, &opts(), &mut RngSeed::new(0, 0).rng()).unwrap();
        assert!(x.iter_rows().all(|z| clf.predict(z) == 10));
        assert!(SoftmaxClassifier::train(vec![10], &DenseMatrix::zeros(0, 2), &[], &opts(), &mut RngSeed::new(0, 0).rng()).is_err());
    }

    #[test]
    fn unknown_label_is_rejected() {
        let (x, y) = gaussian_blobs(3, &[[1.0, 1.0]], 1.0, 2);
        assert!(matches!(
            SoftmaxClassifier::train(vec![4], &x, &y, &opts(), &mut RngSeed::new(0, 0).rng()),
            Err(Error::UnknownClass(10))
        ));
    }

    #[test]
    fn gate_features_examples() {
        let [top, h] = gate_features(&[1.0, 0.0]);
        assert_eq!((top, h), (1.0, 0.0));
        let [top, h] = gate_features(&[0.5, 0.5]);
        assert_eq!(top, 0.5);
        assert!((h - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn separable_gate_is_perfect() {
        let seen: Vec<[f64; 2]> = (0..50).map(|i| [0.9 + 0.001 * i as f64, 0.1]).collect();
        let unseen: Vec<[f64; 2]> = (0..300).map(|i| [0.5 + 0.0005 * i as f64, 0.69]).collect();
        let gate = GateModel::fit(&seen, &unseen, 1.0).unwrap();
        assert_eq!(gate.accuracy(&seen, &unseen), 1.0);
        assert_eq!(gate.c, 1.0);
        assert!(GateModel::fit(&seen, &[], 1.0).is_err());
    }

    #[test]
    fn identical_groups_give_chance_accuracy() {
        let mut rng = RngSeed::new(5, 0).rng();
        let mut draw = |n: usize| -> Vec<[f64; 2]> {
            (0..n)
                .map(|_| {
                    let t: f64 = rng.random_range(0.3..1.0);
                    [t, 1.0 - t + 0.1 * standard_normal(&mut rng)]
                })
                .collect()
        };
        let (s, u) = (draw(2000), draw(2000));
        let gate = GateModel::fit(&s, &u, 1.0).unwrap();
        let (s2, u2) = (draw(5000), draw(5000));
        let acc = gate.accuracy(&s2, &u2);
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn newton_solution_is_stationary() {
        let seen: Vec<[f64; 2]> = (0..40).map(|i| [0.6 + 0.01 * i as f64, 0.5 - 0.01 * i as f64]).collect();
        let unseen: Vec<[f64; 2]> = (0..60).map(|i| [0.4 + 0.01 * i as f64, 0.9 - 0.01 * i as f64]).collect();
        let c = 1.0;
        let gate = GateModel::fit(&seen, &unseen, c).unwrap();
        let n = 100.0;
        let mut g = [gate.weights[0], gate.weights[1], 0.0];
        for (xs, y, s) in seen
            .iter()
            .map(|x| (x, 1.0, n / 80.0))
            .chain(unseen.iter().map(|x| (x, 0.0, n / 120.0)))
        {
            let p = gate.prob_seen(*xs);
            g[0] += c * s * (p - y) * xs[0];
            g[1] += c * s * (p - y) * xs[1];
            g[2] += c * s * (p - y);
        }
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }
}
