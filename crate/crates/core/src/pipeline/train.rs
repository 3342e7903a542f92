//! Training stages and the assembled model.
//!
//! - stage 2: joint training of the twin VAE and the band weights on
//!   seen-class training samples
//! - stage 3: unseen-class classifier on latents sampled from the text
//!   posteriors of unseen classes
//! - stage 4: seen-class classifier and the seen/unseen gate

use std::collections::BTreeMap;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{gate_features, Classify, GateModel, SoftmaxClassifier, SoftmaxTraining};
use super::data::{FeatureDataset, Partition, SplitSpec};
use super::eval::{gzsl_accuracy, zsl_accuracy, GzslResult, ZslResult};
use super::features::{FeatureExtractor, PreparedSet, SkeletonEncoder};
use crate::crossvae::{sample_class_latents, train_step, LossBreakdown, Modality, TrainBatch, VaeConfig, VaeParams};
use crate::error::{Error, Result, StageContext};
use crate::frequency::{squash_weight, EnhancementConfig, EnhancementMode};
use crate::losses::{AlignmentLoss, LossConfig};
use crate::numkit::{AdamState, DenseMatrix, RngSeed};
use crate::semantics::{fuse_all, SemanticTable};
use crate::ClassId;

/// Every hyperparameter of stages 2–4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Apply the frequency enhancement before the skeleton encoder.
    pub enhance: bool,
    pub enhancement_mode: EnhancementMode,
    pub phi: usize,
    pub b: f64,
    /// Number of equal-width bands; `None` gives one band per coefficient.
    pub bands: Option<usize>,
    pub floor: f64,
    /// Learn the band weights during stage 2.
    pub train_enhancement: bool,
    pub enhancement_lr: f64,
    /// Output size of the projection encoder for raw sequences.
    pub feature_dim: usize,
    pub loss: AlignmentLoss,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub unseen_samples: usize,
    pub unseen_epochs: usize,
    pub unseen_lr: f64,
    pub seen_epochs: usize,
    pub seen_lr: f64,
    pub classifier_batch_size: usize,
    pub gate_c: f64,
    /// Fraction of seen training samples held out from the seen classifier
    /// to give the gate honest "seen" confidence values.
    pub gate_holdout: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            enhance: true,
            enhancement_mode: EnhancementMode::Piecewise,
            phi: 35,
            b: 30.0,
            bands: None,
            floor: 0.0,
            train_enhancement: true,
            enhancement_lr: 1e-4,
            feature_dim: 256,
            loss: AlignmentLoss::Calibrated,
            lambda: 100.0,
            alpha: 0.1,
            beta: 1.0,
            margin: 0.2,
            latent_dim: 100,
            hidden: vec![128],
            epochs: 1900,
            batch_size: 64,
            lr: 1e-4,
            unseen_samples: 500,
            unseen_epochs: 300,
            unseen_lr: 1e-3,
            seen_epochs: 100,
            seen_lr: 1e-3,
            classifier_batch_size: 64,
            gate_c: 1.0,
            gate_holdout: 0.2,
        }
    }
}

impl PipelineConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            alpha: self.alpha,
            beta: self.beta,
            margin: self.margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.classifier_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        for (name, lr) in [
            ("lr", self.lr),
            ("enhancement_lr", self.enhancement_lr),
            ("unseen_lr", self.unseen_lr),
            ("seen_lr", self.seen_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.unseen_samples == 0 {
            return bad("unseen_samples must be positive");
        }
        if !(self.gate_holdout > 0.0 && self.gate_holdout < 1.0) {
            return bad("gate_holdout must lie strictly between 0 and 1");
        }
        if !(self.gate_c > 0.0 && self.gate_c.is_finite()) {
            return bad("gate_c must be positive");
        }
        if self.feature_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return bad("network sizes must be positive");
        }
        if self.bands == Some(0) {
            return bad("bands must be positive");
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad("b must be positive");
        }
        Ok(())
    }

    /// Enhancement over an axis of `len` coefficients, weights at the
    /// squashed value of a zero raw parameter.
    pub fn enhancement_for(&self, len: usize) -> Result<Option<EnhancementConfig>> {
        if !self.enhance {
            return Ok(None);
        }
        let w = squash_weight(0.0);
        let mut cfg = match self.bands {
            None => EnhancementConfig::per_coefficient(len, self.enhancement_mode, self.phi, self.b, w),
            Some(n) => EnhancementConfig::uniform_bands(len, n, self.enhancement_mode, self.phi, self.b, w)?,
        };
        cfg.floor = self.floor;
        cfg.validate()?;
        Ok(Some(cfg))
    }

    fn seed(&self, stream: u64) -> RngSeed {
        RngSeed::new(self.seed, stream)
    }
}

mod streams {
    pub const ENCODER: u64 = 1;
    pub const VAE_INIT: u64 = 2;
    pub const STAGE2: u64 = 3;
    pub const UNSEEN: u64 = 4;
    pub const HOLDOUT: u64 = 5;
    pub const SEEN: u64 = 6;
}

/// Mean loss terms of one stage-2 epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub batches: usize,
    pub loss: LossBreakdown,
    pub band_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub params: VaeParams,
    pub extractor: FeatureExtractor,
    pub raw_weights: Vec<f64>,
    pub log: Vec<EpochLog>,
}

fn check_seen(labels: &[ClassId], split: &SplitSpec, what: &str) -> Result<()> {
    if let Some(l) = labels.iter().find(|l| !split.is_seen(**l)) {
        return Err(Error::Split(format!("{what} contains non-seen class {l}")));
    }
    Ok(())
}

/// Stage 2: minimise `L_VAE^s + L_VAE^t + α L_align` over mini-batches of
/// seen training samples, updating the VAE and (optionally) the band weights.
pub fn run_stage2(
    train: &PreparedSet,
    split: &SplitSpec,
    fused: &BTreeMap<ClassId, Vec<f64>>,
    extractor: FeatureExtractor,
    params: VaeParams,
    cfg: &PipelineConfig,
) -> Result<Stage2Output> {
    if train.is_empty() {
        return Err(Error::Empty("seen training partition"));
    }
    check_seen(&train.labels, split, "stage-2 training data")?;
    for c in &split.seen {
        if !fused.contains_key(c) {
            return Err(Error::UnknownClass(*c));
        }
    }
    let loss_cfg = cfg.loss_config();
    let mut params = params;
    let mut extractor = extractor;
    let mut raw_weights: Vec<f64> = match &extractor.enhancement {
        Some(e) => e.weights.iter().map(|w| (w / (1.0 - w)).ln()).collect(),
        None => Vec::new(),
    };
    let learn_bands = cfg.train_enhancement && !raw_weights.is_empty();
    let mut adam = AdamState::new(params.num_params(), cfg.lr);
    let mut band_adam = AdamState::new(raw_weights.len(), cfg.enhancement_lr);
    let mut rng = cfg.seed(streams::STAGE2).rng();
    let text_dim = params.feature_dim(Modality::Text);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let labels: Vec<ClassId> = chunk.iter().map(|&i| train.labels[i]).collect();
            if labels.iter().all(|l| *l == labels[0]) {
                debug!("epoch {epoch}: skipping a single-class batch");
                continue;
            }
            let skeleton = train.features(&extractor, chunk);
            let mut text = DenseMatrix::zeros(chunk.len(), text_dim);
            for (r, l) in labels.iter().enumerate() {
                text.row_mut(r).copy_from_slice(&fused[l]);
            }
            let batch = TrainBatch {
                skeleton,
                text,
                labels,
            };
            let out = train_step(&mut params, &mut adam, &batch, cfg.loss, &loss_cfg, &mut rng)?;
            if learn_bands {
                let comps: Vec<&DenseMatrix> = chunk.iter().map(|&i| &train.components[i]).collect();
                let g = extractor.raw_weight_gradient(&comps, &out.skeleton_grads);
                band_adam.step(&mut raw_weights, &g)?;
                if let Some(e) = extractor.enhancement.as_mut() {
                    for (w, r) in e.weights.iter_mut().zip(&raw_weights) {
                        *w = squash_weight(*r);
                    }
                }
            }
            let b = out.breakdown;
            sum.total += b.total;
            sum.recon_skeleton += b.recon_skeleton;
            sum.kl_skeleton += b.kl_skeleton;
            sum.recon_text += b.recon_text;
            sum.kl_text += b.kl_text;
            sum.vae += b.vae;
            sum.align += b.align;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::NoValidNegative { item: 0 });
        }
        let n = batches as f64;
        let mean = LossBreakdown {
            total: sum.total / n,
            recon_skeleton: sum.recon_skeleton / n,
            kl_skeleton: sum.kl_skeleton / n,
            recon_text: sum.recon_text / n,
            kl_text: sum.kl_text / n,
            vae: sum.vae / n,
            align: sum.align / n,
        };
        debug!("epoch {epoch}: total {:.6}", mean.total);
        log.push(EpochLog {
            epoch,
            batches,
            loss: mean,
            band_weights: extractor.enhancement.as_ref().map(|e| e.weights.clone()).unwrap_or_default(),
        });
    }
    Ok(Stage2Output {
        params,
        extractor,
        raw_weights,
        log,
    })
}

/// Latents sampled from the text posteriors of `classes`, with labels.
pub fn synthesize_latents<R: Rng + ?Sized>(
    params: &VaeParams,
    fused: &BTreeMap<ClassId, Vec<f64>>,
    classes: &[ClassId],
    n: usize,
    rng: &mut R,
) -> Result<(DenseMatrix, Vec<ClassId>)> {
    let l = params.latent_dim();
    let mut out = DenseMatrix::zeros(n * classes.len(), l);
    let mut labels = Vec::with_capacity(n * classes.len());
    for (k, c) in classes.iter().enumerate() {
        let f = fused.get(c).ok_or(Error::UnknownClass(*c))?;
        let z = sample_class_latents(params, f, n, rng)?;
        for r in 0..n {
            out.row_mut(k * n + r).copy_from_slice(z.row(r));
        }
        labels.extend(std::iter::repeat_n(*c, n));
    }
    Ok((out, labels))
}

/// Stage 3: softmax classifier over unseen classes trained only on latents
/// synthesised from their semantic features.
pub fn synthesize_unseen_classifier<R: Rng + ?Sized>(
    params: &VaeParams,
    fused: &BTreeMap<ClassId, Vec<f64>>,
    unseen: &[ClassId],
    n_per_class: usize,
    opts: &SoftmaxTraining,
    rng: &mut R,
) -> Result<(SoftmaxClassifier, DenseMatrix)> {
    let (z, labels) = synthesize_latents(params, fused, unseen, n_per_class, rng)?;
    let clf = SoftmaxClassifier::train(unseen.to_vec(), &z, &labels, opts, rng)?;
    Ok((clf, z))
}

/// Stage 4a: softmax classifier over seen-class latent means.
pub fn train_seen_classifier<R: Rng + ?Sized>(
    seen: &[ClassId],
    latent_means: &DenseMatrix,
    labels: &[ClassId],
    opts: &SoftmaxTraining,
    rng: &mut R,
) -> Result<SoftmaxClassifier> {
    SoftmaxClassifier::train(seen.to_vec(), latent_means, labels, opts, rng)
}

/// Stage 4b: gate trained on seen-classifier confidences of held-out seen
/// latents (positive) and synthesised unseen latents (negative).
pub fn train_gate(
    seen_classifier: &SoftmaxClassifier,
    unseen_latents: &DenseMatrix,
    heldout_seen_latents: &DenseMatrix,
    c: f64,
) -> Result<GateModel> {
    let feats = |m: &DenseMatrix| -> Vec<[f64; 2]> {
        m.iter_rows()
            .map(|z| gate_features(&seen_classifier.predict_proba(z)))
            .collect()
    };
    GateModel::fit(&feats(heldout_seen_latents), &feats(unseen_latents), c)
}

/// Everything needed to classify a new sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub split: SplitSpec,
    pub extractor: FeatureExtractor,
    pub vae: VaeParams,
    pub seen_classifier: SoftmaxClassifier,
    pub unseen_classifier: SoftmaxClassifier,
    pub gate: GateModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: Vec<EpochLog>,
    pub seen_classifier_train_accuracy: f64,
    pub unseen_classifier_train_accuracy: f64,
    pub gate_train_accuracy: f64,
}

impl TrainingSummary {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss.total)
    }
}

/// Runs stages 2 → 3 → 4.
pub fn run_pipeline(
    dataset: &FeatureDataset,
    split: &SplitSpec,
    table: &SemanticTable,
    cfg: &PipelineConfig,
) -> Result<(TrainedModel, TrainingSummary)> {
    cfg.validate().stage("setup")?;
    dataset.validate(split).stage("setup")?;
    let fused = fuse_all(table).stage("setup")?;
    for c in split.seen.iter().chain(&split.unseen) {
        if !fused.contains_key(c) {
            return Err(Error::UnknownClass(*c)).stage("setup");
        }
    }
    let first = dataset.records.first().ok_or(Error::Empty("feature dataset")).stage("setup")?;
    let encoder = SkeletonEncoder::for_dataset(dataset, cfg.feature_dim, &mut cfg.seed(streams::ENCODER).rng())
        .stage("setup")?;
    let extractor = FeatureExtractor {
        encoder,
        enhancement: cfg.enhancement_for(first.features.axis_len()).stage("setup")?,
    };
    let train = PreparedSet::build(dataset, Partition::TrainSeen, &extractor).stage("stage 2")?;
    let vae_cfg = VaeConfig {
        skeleton_dim: extractor.output_dim(),
        text_dim: table.fused_dim(),
        latent_dim: cfg.latent_dim,
        hidden: cfg.hidden.clone(),
    };
    let init = VaeParams::seeded(&vae_cfg, &mut cfg.seed(streams::VAE_INIT).rng()).stage("stage 2")?;
    info!("stage 2: {} training samples, {} epochs", train.len(), cfg.epochs);
    let s2 = run_stage2(&train, split, &fused, extractor, init, cfg).stage("stage 2")?;

    let unseen_opts = SoftmaxTraining {
        epochs: cfg.unseen_epochs,
        lr: cfg.unseen_lr,
        batch_size: cfg.classifier_batch_size,
    };
    let mut rng = cfg.seed(streams::UNSEEN).rng();
    let (unseen_classifier, unseen_latents) = synthesize_unseen_classifier(
        &s2.params,
        &fused,
        &split.unseen,
        cfg.unseen_samples,
        &unseen_opts,
        &mut rng,
    )
    .stage("stage 3")?;
    let unseen_labels: Vec<ClassId> = split
        .unseen
        .iter()
        .flat_map(|c| std::iter::repeat_n(*c, cfg.unseen_samples))
        .collect();
    let unseen_acc = unseen_classifier.accuracy(&unseen_latents, &unseen_labels);

    // stage 4: seen classifier on most of the training latents, gate on the rest
    let means = latent_means(&s2.params, &s2.extractor, &train).stage("stage 4")?;
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut cfg.seed(streams::HOLDOUT).rng());
    let n_hold = ((train.len() as f64 * cfg.gate_holdout).round() as usize).clamp(1, train.len().saturating_sub(1).max(1));
    let (hold, fit) = idx.split_at(n_hold);
    if fit.is_empty() {
        return Err(Error::Empty("seen classifier training split")).stage("stage 4");
    }
    let fit_means = means.select_rows(fit);
    let fit_labels: Vec<ClassId> = fit.iter().map(|&i| train.labels[i]).collect();
    check_seen(&fit_labels, split, "seen classifier data").stage("stage 4")?;
    let seen_opts = SoftmaxTraining {
        epochs: cfg.seen_epochs,
        lr: cfg.seen_lr,
        batch_size: cfg.classifier_batch_size,
    };
    let seen_classifier = train_seen_classifier(
        &split.seen,
        &fit_means,
        &fit_labels,
        &seen_opts,
        &mut cfg.seed(streams::SEEN).rng(),
    )
    .stage("stage 4")?;
    let seen_acc = seen_classifier.accuracy(&fit_means, &fit_labels);
    let hold_means = means.select_rows(hold);
    let gate = train_gate(&seen_classifier, &unseen_latents, &hold_means, cfg.gate_c).stage("stage 4")?;
    let gate_feats = |m: &DenseMatrix| -> Vec<[f64; 2]> {
        m.iter_rows().map(|z| gate_features(&seen_classifier.predict_proba(z))).collect()
    };
    let gate_acc = gate.accuracy(&gate_feats(&hold_means), &gate_feats(&unseen_latents));

    let summary = TrainingSummary {
        epochs: s2.log,
        seen_classifier_train_accuracy: seen_acc,
        unseen_classifier_train_accuracy: unseen_acc,
        gate_train_accuracy: gate_acc,
    };
    let model = TrainedModel {
        split: split.clone(),
        extractor: s2.extractor,
        vae: s2.params,
        seen_classifier,
        unseen_classifier,
        gate,
    };
    Ok((model, summary))
}

/// Skeleton posterior means of every sample of a prepared set.
pub fn latent_means(vae: &VaeParams, extractor: &FeatureExtractor, set: &PreparedSet) -> Result<DenseMatrix> {
    let feats = set.all_features(extractor);
    if feats.rows() == 0 {
        return Ok(DenseMatrix::zeros(0, vae.latent_dim()));
    }
    vae.encode_batch(Modality::Skeleton, &feats).map(|(mu, _)| mu)
}

impl TrainedModel {
    /// Skeleton posterior means of a partition, with ids and labels.
    pub fn encode_partition(&self, dataset: &FeatureDataset, partition: Partition) -> Result<(PreparedSet, DenseMatrix)> {
        let set = PreparedSet::build(dataset, partition, &self.extractor)?;
        let means = latent_means(&self.vae, &self.extractor, &set)?;
        Ok((set, means))
    }

    pub fn evaluate_zsl(&self, dataset: &FeatureDataset) -> Result<ZslResult> {
        let (set, z) = self.encode_partition(dataset, Partition::TestUnseen)?;
        if let Some(l) = set.labels.iter().find(|l| !self.split.is_unseen(**l)) {
            return Err(Error::Split(format!("test-unseen partition contains class {l}")));
        }
        zsl_accuracy(&self.unseen_classifier, &z, &set.labels)
    }

    pub fn evaluate_gzsl(&self, dataset: &FeatureDataset) -> Result<GzslResult> {
        let (seen_set, zs) = self.encode_partition(dataset, Partition::TestSeen)?;
        let (unseen_set, zu) = self.encode_partition(dataset, Partition::TestUnseen)?;
        gzsl_accuracy(
            &self.gate,
            &self.seen_classifier,
            &self.unseen_classifier,
            &zs,
            &seen_set.labels,
            &zu,
            &unseen_set.labels,
        )
    }

    /// Writes `sample_id`, `class_id`, `partition` and the latent mean of
    /// every record, tab-separated, after one `#` header line.
    pub fn export_latents(&self, dataset: &FeatureDataset, path: impl AsRef<Path>, config_hash: &str) -> Result<usize> {
        let mut rows = Vec::new();
        for p in Partition::ALL {
            let (set, z) = self.encode_partition(dataset, p)?;
            for (i, id) in set.sample_ids.iter().enumerate() {
                rows.push(super::LatentRow {
                    sample_id: id.clone(),
                    class_id: set.labels[i],
                    partition: p,
                    latent: z.row(i).to_vec(),
                });
            }
        }
        super::write_latents(&rows, self.vae.latent_dim(), config_hash, path)?;
        Ok(rows.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::{FeatureRecord, Features};
    use crate::semantics::{EmbeddingRecord, Kind};

    /// Vector-feature dataset where class `k` sits at a distinct corner and
    /// the text embedding of class `k` is the same corner.
    fn toy(classes: &[ClassId], per_class: usize) -> (FeatureDataset, SemanticTable, SplitSpec) {
        let mut rng = RngSeed::new(77, 0).rng();
        let dim = 6;
        let proto = |c: ClassId| -> Vec<f64> {
            (0..dim)
                .map(|k| if k == c as usize % dim { 1.0 } else { 0.0 } + if k == (c as usize + 1) % dim { 0.5 } else { 0.0 })
                .collect()
        };
        let split = SplitSpec {
            seen: classes[..classes.len() - 1].to_vec(),
            unseen: vec![*classes.last().unwrap()],
        };
        let mut records = Vec::new();
        for &c in classes {
            for s in 0..per_class {
                let partition = if split.is_unseen(c) {
                    Partition::TestUnseen
                } else if s % 4 == 0 {
                    Partition::TestSeen
                } else {
                    Partition::TrainSeen
                };
                let v = proto(c)
                    .iter()
                    .map(|x| x + 0.05 * crate::numkit::standard_normal(&mut rng))
                    .collect();
                records.push(FeatureRecord {
                    sample_id: format!("{c}-{s}"),
                    class_id: c,
                    partition,
                    features: Features::Vector(v),
                });
            }
        }
        let emb = classes
            .iter()
            .flat_map(|&c| {
                Kind::ALL.into_iter().map(move |kind| EmbeddingRecord {
                    class_id: c,
                    kind,
                    vector: proto(c),
                })
            })
            .collect();
        (FeatureDataset::new(records), SemanticTable::from_records(emb).unwrap(), split)
    }

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            enhance: true,
            phi: 2,
            b: 2.0,
            bands: Some(3),
            feature_dim: 6,
            latent_dim: 4,
            hidden: vec![8],
            epochs: 5,
            batch_size: 16,
            lr: 1e-3,
            unseen_samples: 20,
            unseen_epochs: 5,
            seen_epochs: 5,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_initial_parameters() {
        let (ds, table, split) = toy(&[0, 1, 2], 12);
        let cfg = PipelineConfig {
            epochs: 0,
            ..small_cfg()
        };
        let fused = fuse_all(&table).unwrap();
        let extractor = FeatureExtractor {
            encoder: SkeletonEncoder::Identity { dim: 6 },
            enhancement: cfg.enhancement_for(6).unwrap(),
        };
        let train = PreparedSet::build(&ds, Partition::TrainSeen, &extractor).unwrap();
        let vc = VaeConfig {
            skeleton_dim: 6,
            text_dim: 18,
            latent_dim: 4,
            hidden: vec![8],
        };
        let init = VaeParams::seeded(&vc, &mut RngSeed::new(1, 0).rng()).unwrap();
        let out = run_stage2(&train, &split, &fused, extractor.clone(), init.clone(), &cfg).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.extractor, extractor);
        assert!(out.log.is_empty());
    }

    #[test]
    fn stage2_rejects_unseen_training_labels_and_missing_semantics() {
        let (ds, table, split) = toy(&[0, 1, 2], 12);
        let cfg = small_cfg();
        let mut fused = fuse_all(&table).unwrap();
        let extractor = FeatureExtractor {
            encoder: SkeletonEncoder::Identity { dim: 6 },
            enhancement: None,
        };
        let mut train = PreparedSet::build(&ds, Partition::TrainSeen, &extractor).unwrap();
        let vc = VaeConfig {
            skeleton_dim: 6,
            text_dim: 18,
            latent_dim: 4,
            hidden: vec![8],
        };
        let init = VaeParams::seeded(&vc, &mut RngSeed::new(1, 0).rng()).unwrap();
        fused.remove(&1);
        assert!(matches!(
            run_stage2(&train, &split, &fused, extractor.clone(), init.clone(), &cfg),
            Err(Error::UnknownClass(1))
        ));
        let fused = fuse_all(&table).unwrap();
        train.labels[0] = 2;
        assert!(matches!(
            run_stage2(&train, &split, &fused, extractor, init, &cfg),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn pipeline_runs_and_is_deterministic() {
        let (ds, table, split) = toy(&[0, 1, 2, 3], 16);
        let cfg = small_cfg();
        let (m1, s1) = run_pipeline(&ds, &split, &table, &cfg).unwrap();
        let (m2, s2) = run_pipeline(&ds, &split, &table, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
        assert_eq!(s1.epochs.len(), 5);
        let z = m1.evaluate_zsl(&ds).unwrap();
        // a single unseen class is always predicted correctly
        assert_eq!(z.accuracy, 1.0);
        let g = m1.evaluate_gzsl(&ds).unwrap();
        assert!((0.0..=1.0).contains(&g.seen) && (0.0..=1.0).contains(&g.unseen));
    }

    #[test]
    fn stage_errors_carry_labels() {
        let (ds, table, mut split) = toy(&[0, 1, 2], 8);
        split.unseen = vec![9];
        let err = run_pipeline(&ds, &split, &table, &small_cfg()).unwrap_err();
        assert!(err.to_string().starts_with("stage setup"), "{err}");
    }
}
