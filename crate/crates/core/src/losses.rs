//! Alignment, reconstruction and KL objectives with analytic gradients.
//!
//! Every alignment loss is a per-item function of two squared distances,
//! measured once in text space and once in skeleton space:
//!
//! - text: `d⁺ = ‖f_t(i) − g^s_t(i)‖²`, `d⁻ = ‖f_t(i) − g^s_t(i⁻)‖²`
//! - skeleton: `d⁺ = ‖f_s(i) − g^t_s(i)‖²`, `d⁻ = ‖f_s(i) − g^t_s(i⁻)‖²`
//!
//! The calibrated term `1 / (1 + exp((d⁻ − d⁺) / λ))` satisfies
//! `ℓ(a) + ℓ(−a) = 1`, so a mismatched pair and a correctly aligned pair with
//! the opposite distance gap cancel exactly. None of the triplet baselines
//! has that property.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{sigmoid, softplus, DenseMatrix};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Temperature of the calibrated loss (also used by the log-sigmoid and
    /// softmax-ratio baselines).
    pub lambda: f64,
    /// Weight of the alignment term in the total objective.
    pub alpha: f64,
    /// KL weight of the ELBO.
    pub beta: f64,
    /// Margin of the hinge baselines.
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            alpha: 0.1,
            beta: 1.0,
            margin: 0.2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be non-negative");
        }
        Ok(())
    }
}

/// Which alignment objective drives the cross-reconstructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentLoss {
    /// `λ/B Σ 1 / (1 + exp((d⁻ − d⁺)/λ))`
    Calibrated,
    /// `1/B Σ max(d⁺ − d⁻ + m, 0)`
    #[serde(rename = "t1")]
    TripletHinge,
    /// `1/B Σ log(1 / (1 + exp((d⁻ − d⁺)/λ)))`
    #[serde(rename = "t2")]
    TripletLogSigmoid,
    /// `λ/B Σ (e^{r⁺} / (e^{r⁺} + e^{r⁻}))²` with non-squared distances `r`
    #[serde(rename = "t3")]
    TripletSoftmaxRatio,
    /// `1/B Σ max(1 − d⁻ / (d⁺ + m), 0)`
    #[serde(rename = "t4")]
    TripletRatioHinge,
}

impl AlignmentLoss {
    pub const ALL: [AlignmentLoss; 5] = [
        AlignmentLoss::Calibrated,
        AlignmentLoss::TripletHinge,
        AlignmentLoss::TripletLogSigmoid,
        AlignmentLoss::TripletSoftmaxRatio,
        AlignmentLoss::TripletRatioHinge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlignmentLoss::Calibrated => "calibrated",
            AlignmentLoss::TripletHinge => "t1",
            AlignmentLoss::TripletLogSigmoid => "t2",
            AlignmentLoss::TripletSoftmaxRatio => "t3",
            AlignmentLoss::TripletRatioHinge => "t4",
        }
    }

    /// Factor in front of the batch sum (before the `1/B`).
    pub fn prefactor(self, cfg: &LossConfig) -> f64 {
        match self {
            AlignmentLoss::Calibrated | AlignmentLoss::TripletSoftmaxRatio => cfg.lambda,
            _ => 1.0,
        }
    }

    /// Per-item summand as a function of the squared positive and negative
    /// distances, without the prefactor.
    pub fn pair_term(self, d_pos: f64, d_neg: f64, cfg: &LossConfig) -> Result<f64> {
        self.pair_term_grad(d_pos, d_neg, cfg).map(|(v, _, _)| v)
    }

    /// `pair_term(d⁺, d⁻) + pair_term(d⁻, d⁺)`: constant (= 1) only for the
    /// calibrated loss.
    pub fn exchange_sum(self, d_pos: f64, d_neg: f64, cfg: &LossConfig) -> Result<f64> {
        Ok(self.pair_term(d_pos, d_neg, cfg)? + self.pair_term(d_neg, d_pos, cfg)?)
    }

    /// Summand with its partial derivatives in `d⁺` and `d⁻`.
    pub fn pair_term_grad(self, d_pos: f64, d_neg: f64, cfg: &LossConfig) -> Result<(f64, f64, f64)> {
        let lambda = cfg.lambda;
        let m = cfg.margin;
        let out = match self {
            AlignmentLoss::Calibrated => {
                let s = sigmoid((d_pos - d_neg) / lambda);
                let ds = s * (1.0 - s) / lambda;
                (s, ds, -ds)
            }
            AlignmentLoss::TripletHinge => {
                let h = d_pos - d_neg + m;
                if h > 0.0 {
                    (h, 1.0, -1.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            AlignmentLoss::TripletLogSigmoid => {
                let x = (d_neg - d_pos) / lambda;
                let s = sigmoid(x);
                (-softplus(x), s / lambda, -s / lambda)
            }
            AlignmentLoss::TripletSoftmaxRatio => {
                let r_pos = d_pos.max(0.0).sqrt();
                let r_neg = d_neg.max(0.0).sqrt();
                let s = sigmoid(r_pos - r_neg);
                let dr = 2.0 * s * s * (1.0 - s);
                // d r / d d = 1 / (2 r); the vector gradient (x − y)/r stays bounded,
                // and at r = 0 the subgradient 0 is used.
                let dp = if r_pos > 0.0 { dr / (2.0 * r_pos) } else { 0.0 };
                let dn = if r_neg > 0.0 { -dr / (2.0 * r_neg) } else { 0.0 };
                (s * s, dp, dn)
            }
            AlignmentLoss::TripletRatioHinge => {
                let denom = d_pos + m;
                if denom <= 0.0 {
                    return Err(Error::NonFinite("ratio hinge with zero positive distance and zero margin"));
                }
                let h = 1.0 - d_neg / denom;
                if h > 0.0 {
                    (h, d_neg / (denom * denom), -1.0 / denom)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        };
        Ok(out)
    }

    /// Loss over a batch with one sampled negative per item.
    pub fn evaluate(self, batch: &AlignmentBatch, cfg: &LossConfig) -> Result<LossValue<AlignmentGrads>> {
        if batch.negatives.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                context: "negative indices",
                expected: batch.len(),
                actual: batch.negatives.len(),
            });
        }
        let lists: Vec<Vec<usize>> = batch.negatives.iter().map(|&j| vec![j]).collect();
        self.evaluate_with(batch, &lists, cfg)
    }

    /// Loss averaged over every valid negative of each item instead of a
    /// single sampled one.
    pub fn evaluate_all_pairs(self, batch: &AlignmentBatch, cfg: &LossConfig) -> Result<LossValue<AlignmentGrads>> {
        let lists = all_negatives(&batch.labels)?;
        self.evaluate_with(batch, &lists, cfg)
    }

    fn evaluate_with(
        self,
        batch: &AlignmentBatch,
        negatives: &[Vec<usize>],
        cfg: &LossConfig,
    ) -> Result<LossValue<AlignmentGrads>> {
        cfg.validate()?;
        batch.validate()?;
        let b = batch.len();
        let mut grads = AlignmentGrads::zeros_like(batch);
        let mut total = 0.0;
        for (i, negs) in negatives.iter().enumerate() {
            if negs.is_empty() {
                return Err(Error::NoValidNegative { item: i });
            }
            let weight = 1.0 / negs.len() as f64;
            for &j in negs {
                if j >= b || batch.labels[j] == batch.labels[i] {
                    return Err(Error::NoValidNegative { item: i });
                }
                total += weight
                    * self.direction(
                        cfg,
                        weight,
                        i,
                        j,
                        &batch.text,
                        &batch.skel_to_text,
                        &mut grads.text,
                        &mut grads.skel_to_text,
                    )?;
                total += weight
                    * self.direction(
                        cfg,
                        weight,
                        i,
                        j,
                        &batch.skeleton,
                        &batch.text_to_skel,
                        &mut grads.skeleton,
                        &mut grads.text_to_skel,
                    )?;
            }
        }
        let scale = self.prefactor(cfg) / b as f64;
        for g in [
            &mut grads.text,
            &mut grads.skeleton,
            &mut grads.skel_to_text,
            &mut grads.text_to_skel,
        ] {
            g.scale(scale);
        }
        Ok(LossValue {
            value: scale * total,
            grads,
        })
    }

    /// One anchor/positive/negative triple in one modality; accumulates
    /// unscaled gradients (times `weight`) and returns the summand.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        self,
        cfg: &LossConfig,
        weight: f64,
        i: usize,
        j: usize,
        anchors: &DenseMatrix,
        cross: &DenseMatrix,
        anchor_grad: &mut DenseMatrix,
        cross_grad: &mut DenseMatrix,
    ) -> Result<f64> {
        let a = anchors.row(i);
        let p = cross.row(i);
        let n = cross.row(j);
        let d_pos = crate::numkit::squared_distance(a, p);
        let d_neg = crate::numkit::squared_distance(a, n);
        let (v, g_pos, g_neg) = self.pair_term_grad(d_pos, d_neg, cfg)?;
        let (g_pos, g_neg) = (weight * g_pos, weight * g_neg);
        if g_pos != 0.0 || g_neg != 0.0 {
            let ag = anchor_grad.row_mut(i);
            for k in 0..a.len() {
                ag[k] += 2.0 * g_pos * (a[k] - p[k]) + 2.0 * g_neg * (a[k] - n[k]);
            }
            let pg = cross_grad.row_mut(i);
            for k in 0..a.len() {
                pg[k] -= 2.0 * g_pos * (a[k] - p[k]);
            }
            let ng = cross_grad.row_mut(j);
            for k in 0..a.len() {
                ng[k] -= 2.0 * g_neg * (a[k] - n[k]);
            }
        }
        Ok(v)
    }
}

impl std::str::FromStr for AlignmentLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlignmentLoss::ALL
            .into_iter()
            .find(|l| l.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown alignment loss {s:?}")))
    }
}

impl std::fmt::Display for AlignmentLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The calibrated per-pair function `ℓ(a) = 1 / (1 + exp(a/λ))`.
pub fn calibrated_pair(a: f64, lambda: f64) -> f64 {
    sigmoid(-a / lambda)
}

/// Batch of text features, skeleton features and their cross-reconstructions.
#[derive(Debug, Clone)]
pub struct AlignmentBatch {
    /// `f_t`, `B × d_t`
    pub text: DenseMatrix,
    /// `f_s`, `B × d_s`
    pub skeleton: DenseMatrix,
    /// `g^s_t`: skeleton latents decoded into text space, `B × d_t`
    pub skel_to_text: DenseMatrix,
    /// `g^t_s`: text latents decoded into skeleton space, `B × d_s`
    pub text_to_skel: DenseMatrix,
    pub labels: Vec<ClassId>,
    /// Index `i⁻` per item.
    pub negatives: Vec<usize>,
}

impl AlignmentBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(Error::Empty("alignment batch"));
        }
        for (m, d, ctx) in [
            (&self.text, self.text.cols(), "text features"),
            (&self.skel_to_text, self.text.cols(), "skeleton-to-text reconstructions"),
            (&self.skeleton, self.skeleton.cols(), "skeleton features"),
            (&self.text_to_skel, self.skeleton.cols(), "text-to-skeleton reconstructions"),
        ] {
            if m.rows() != b {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: b,
                    actual: m.rows(),
                });
            }
            if m.cols() != d {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: d,
                    actual: m.cols(),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(ctx));
            }
        }
        Ok(())
    }
}

/// Gradients for the four vector roles of an [`AlignmentBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGrads {
    pub text: DenseMatrix,
    pub skeleton: DenseMatrix,
    pub skel_to_text: DenseMatrix,
    pub text_to_skel: DenseMatrix,
}

impl AlignmentGrads {
    fn zeros_like(batch: &AlignmentBatch) -> Self {
        Self {
            text: DenseMatrix::zeros(batch.text.rows(), batch.text.cols()),
            skeleton: DenseMatrix::zeros(batch.skeleton.rows(), batch.skeleton.cols()),
            skel_to_text: DenseMatrix::zeros(batch.skel_to_text.rows(), batch.skel_to_text.cols()),
            text_to_skel: DenseMatrix::zeros(batch.text_to_skel.rows(), batch.text_to_skel.cols()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<G> {
    pub value: f64,
    pub grads: G,
}

/// `KL(N(μ, diag e^{logσ²}) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_diag_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// `(∂KL/∂μ, ∂KL/∂logσ²)`.
pub fn kl_diag_gaussian_grad(mu: &[f64], logvar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        mu.to_vec(),
        logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboGrads {
    /// Gradient w.r.t. the reconstruction target.
    pub features: DenseMatrix,
    pub recon: DenseMatrix,
    pub mu: DenseMatrix,
    pub logvar: DenseMatrix,
}

/// Batch means of the two ELBO terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub kl: f64,
}

/// Negative ELBO under a unit-variance Gaussian likelihood:
/// `1/B Σ_i (‖x_i − x̂_i‖² + β KL_i)`.
pub fn elbo(
    features: &DenseMatrix,
    recon: &DenseMatrix,
    mu: &DenseMatrix,
    logvar: &DenseMatrix,
    beta: f64,
) -> Result<(LossValue<ElboGrads>, ElboTerms)> {
    if features.shape() != recon.shape() {
        return Err(Error::DimensionMismatch {
            context: "reconstruction shape",
            expected: features.cols(),
            actual: recon.cols(),
        });
    }
    if mu.shape() != logvar.shape() || mu.rows() != features.rows() {
        return Err(Error::DimensionMismatch {
            context: "latent shape",
            expected: features.rows(),
            actual: mu.rows(),
        });
    }
    let b = features.rows();
    if b == 0 {
        return Err(Error::Empty("ELBO batch"));
    }
    let inv_b = 1.0 / b as f64;
    let mut g_feat = DenseMatrix::zeros(b, features.cols());
    let mut g_recon = DenseMatrix::zeros(b, features.cols());
    let mut g_mu = DenseMatrix::zeros(b, mu.cols());
    let mut g_lv = DenseMatrix::zeros(b, mu.cols());
    let mut rec = 0.0;
    let mut kl = 0.0;
    for i in 0..b {
        for (k, (x, y)) in features.row(i).iter().zip(recon.row(i)).enumerate() {
            let d = x - y;
            rec += d * d;
            g_feat.row_mut(i)[k] = 2.0 * d * inv_b;
            g_recon.row_mut(i)[k] = -2.0 * d * inv_b;
        }
        kl += kl_diag_gaussian(mu.row(i), logvar.row(i));
        let (dm, dl) = kl_diag_gaussian_grad(mu.row(i), logvar.row(i));
        for (o, v) in g_mu.row_mut(i).iter_mut().zip(dm) {
            *o = beta * v * inv_b;
        }
        for (o, v) in g_lv.row_mut(i).iter_mut().zip(dl) {
            *o = beta * v * inv_b;
        }
    }
    let terms = ElboTerms {
        reconstruction: rec * inv_b,
        kl: kl * inv_b,
    };
    Ok((
        LossValue {
            value: terms.reconstruction + beta * terms.kl,
            grads: ElboGrads {
                features: g_feat,
                recon: g_recon,
                mu: g_mu,
                logvar: g_lv,
            },
        },
        terms,
    ))
}

/// `L_VAE + α · L_align`.
pub fn total_objective(vae_loss: f64, align_loss: f64, alpha: f64) -> f64 {
    vae_loss + alpha * align_loss
}

/// Draws one negative per item uniformly among items with a different label.
pub fn sample_negatives<R: Rng + ?Sized>(labels: &[ClassId], rng: &mut R) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(labels.len());
    let mut candidates = Vec::with_capacity(labels.len());
    for (i, &li) in labels.iter().enumerate() {
        candidates.clear();
        candidates.extend((0..labels.len()).filter(|&j| labels[j] != li));
        if candidates.is_empty() {
            return Err(Error::NoValidNegative { item: i });
        }
        out.push(candidates[rng.random_range(0..candidates.len())]);
    }
    Ok(out)
}

/// Every valid negative of each item.
pub fn all_negatives(labels: &[ClassId]) -> Result<Vec<Vec<usize>>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &li)| {
            let negs: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] != li).collect();
            if negs.is_empty() {
                Err(Error::NoValidNegative { item: i })
            } else {
                Ok(negs)
            }
        })
        .collect()
}
