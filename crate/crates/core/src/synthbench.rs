//! Seeded synthetic skeleton benchmark.
//!
//! Class `k` owns a unit prototype `p_k` of DCT amplitudes over
//! `(joint, coord, coefficient)` with coefficients restricted to the class
//! band `[band_start, band_end)`. Prototypes are `normalize(A a_k)` for a
//! shared random `A` of rank `attribute_rank`, so unseen classes are linear
//! combinations of seen ones. A sample of class `k`:
//!
//! - amplitudes `p_k + intra_class_noise · n / √P`
//! - scaled so the clean signal has per-entry RMS `amplitude`
//! - shifted in time by `τ ~ N(0, phase_jitter²)` frames
//! - plus jitter: first-differenced white noise with per-entry standard
//!   deviation `jitter`, whose energy sits mostly at high frequencies
//!
//! Embeddings of kind AL/LD/GD are `M_kind p_k` plus kind-specific noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{DctBasis, MotionSequence};
use crate::numkit::{squared_distance, standard_normal, DenseMatrix, RngSeed};
use crate::pipeline::{
    write_features, write_split, FeatureDataset, FeatureRecord, Features, Partition, PipelineConfig, SplitSpec,
};
use crate::semantics::{write_embeddings, EmbeddingRecord, Kind, SemanticTable};
use crate::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub unseen_classes: usize,
    pub joints: usize,
    pub coords: usize,
    pub frames: usize,
    /// First DCT index carrying class signal.
    pub band_start: usize,
    /// One past the last DCT index carrying class signal.
    pub band_end: usize,
    /// Per-entry RMS of the clean class signal.
    pub amplitude: f64,
    /// Per-entry standard deviation of the high-frequency jitter.
    pub jitter: f64,
    pub intra_class_noise: f64,
    /// Standard deviation of the per-sample time shift, in frames.
    pub phase_jitter: f64,
    pub attribute_rank: usize,
    pub train_per_class: usize,
    pub test_seen_per_class: usize,
    pub test_unseen_per_class: usize,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 12,
            unseen_classes: 2,
            joints: 5,
            coords: 3,
            frames: 32,
            band_start: 1,
            band_end: 7,
            amplitude: 1.0,
            jitter: 0.0,
            intra_class_noise: 0.3,
            phase_jitter: 0.1,
            attribute_rank: 4,
            train_per_class: 40,
            test_seen_per_class: 10,
            test_unseen_per_class: 30,
            embedding_dim: 16,
            embedding_noise: 0.05,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.classes < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.unseen_classes == 0 || self.unseen_classes >= self.classes {
            return bad(format!(
                "unseen_classes must be in 1..{}, got {}",
                self.classes, self.unseen_classes
            ));
        }
        if self.joints == 0 || self.coords == 0 || self.frames == 0 {
            return bad("sequence shape must be non-empty".into());
        }
        if self.band_start >= self.band_end {
            return bad("class band is empty".into());
        }
        if self.band_end > self.frames {
            return bad(format!(
                "class band ends at {} but there are only {} coefficients",
                self.band_end, self.frames
            ));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad("jitter must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("intra_class_noise", self.intra_class_noise),
            ("phase_jitter", self.phase_jitter),
            ("embedding_noise", self.embedding_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.attribute_rank == 0 || self.embedding_dim == 0 {
            return bad("attribute_rank and embedding_dim must be positive".into());
        }
        if self.train_per_class == 0 || self.test_unseen_per_class == 0 {
            return bad("every class needs training and test samples".into());
        }
        Ok(())
    }

    /// Length of a prototype vector.
    pub fn prototype_len(&self) -> usize {
        self.joints * self.coords * (self.band_end - self.band_start)
    }
}

/// Pipeline settings sized for the default benchmark: eight equal bands over
/// 32 frames with the low/high threshold at coefficient 8, and small networks
/// so a full run takes seconds.
pub fn bench_pipeline_config() -> PipelineConfig {
    PipelineConfig {
        phi: 8,
        b: 4.0,
        bands: Some(8),
        feature_dim: 64,
        latent_dim: 16,
        hidden: vec![64],
        epochs: 200,
        lr: 1e-3,
        unseen_samples: 200,
        unseen_epochs: 100,
        seen_epochs: 50,
        ..PipelineConfig::default()
    }
}

mod streams {
    pub const PROTOTYPES: u64 = 10;
    pub const EMBEDDINGS: u64 = 11;
    pub const SPLIT: u64 = 12;
    pub const SAMPLES: u64 = 13;
    pub const LABEL_NOISE: u64 = 14;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub config: SynthConfig,
    pub dataset: FeatureDataset,
    pub table: SemanticTable,
    pub split: SplitSpec,
    /// Unit prototype per class.
    pub prototypes: BTreeMap<ClassId, Vec<f64>>,
}

/// File names written by [`GeneratedDataset::write_files`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub features: PathBuf,
    pub embeddings: PathBuf,
    pub split: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            features: dir.join("features.jsonl"),
            embeddings: dir.join("embeddings.jsonl"),
            split: dir.join("split.json"),
        }
    }
}

impl GeneratedDataset {
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<DatasetFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = DatasetFiles::in_dir(dir);
        write_features(&self.dataset, &files.features)?;
        write_embeddings(&self.table, &files.embeddings)?;
        write_split(&self.split, &files.split)?;
        Ok(files)
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Random low-rank unit prototypes, one per class id `0..classes`.
pub fn random_prototypes(config: &SynthConfig) -> BTreeMap<ClassId, Vec<f64>> {
    let mut rng = RngSeed::new(config.seed, streams::PROTOTYPES).rng();
    let p = config.prototype_len();
    let r = config.attribute_rank;
    let a = DenseMatrix::from_fn(p, r, |_, _| standard_normal(&mut rng));
    (0..config.classes)
        .map(|k| {
            let attr: Vec<f64> = (0..r).map(|_| standard_normal(&mut rng)).collect();
            let mut v = a.matvec(&attr).expect("shapes agree");
            normalize(&mut v);
            (k as ClassId, v)
        })
        .collect()
}

/// Full dataset from the configured seed.
pub fn generate(config: &SynthConfig) -> Result<GeneratedDataset> {
    config.validate()?;
    generate_with_prototypes(config, random_prototypes(config))
}

/// Dataset around caller-supplied unit prototypes (class ids are the map
/// keys; the configured class count is ignored).
pub fn generate_with_prototypes(
    config: &SynthConfig,
    prototypes: BTreeMap<ClassId, Vec<f64>>,
) -> Result<GeneratedDataset> {
    let mut config = config.clone();
    config.classes = prototypes.len();
    config.validate()?;
    let p = config.prototype_len();
    if let Some((c, _)) = prototypes.iter().find(|(_, v)| v.len() != p) {
        return Err(Error::DimensionMismatch {
            context: "prototype length",
            expected: p,
            actual: prototypes[c].len(),
        });
    }
    let ids: Vec<ClassId> = prototypes.keys().copied().collect();

    let mut split_rng = RngSeed::new(config.seed, streams::SPLIT).rng();
    let mut shuffled = ids.clone();
    shuffled.shuffle(&mut split_rng);
    let mut unseen = shuffled[..config.unseen_classes].to_vec();
    unseen.sort_unstable();
    let seen: Vec<ClassId> = ids.iter().copied().filter(|c| !unseen.contains(c)).collect();
    let split = SplitSpec { seen, unseen };

    let table = embeddings(&config, &prototypes)?;

    let mut rng = RngSeed::new(config.seed, streams::SAMPLES).rng();
    let mut records = Vec::new();
    for (&class_id, proto) in &prototypes {
        let plan: Vec<(Partition, usize)> = if split.is_unseen(class_id) {
            vec![(Partition::TestUnseen, config.test_unseen_per_class)]
        } else {
            vec![
                (Partition::TrainSeen, config.train_per_class),
                (Partition::TestSeen, config.test_seen_per_class),
            ]
        };
        for (partition, count) in plan {
            for s in 0..count {
                let seq = sample_sequence(&config, proto, &mut rng)?;
                records.push(FeatureRecord {
                    sample_id: format!("c{class_id:03}-{}-{s:04}", partition.name()),
                    class_id,
                    partition,
                    features: Features::Sequence(seq),
                });
            }
        }
    }
    let mut dataset = FeatureDataset::new(records);
    if config.label_noise > 0.0 {
        let mut noise_rng = RngSeed::new(config.seed, streams::LABEL_NOISE).rng();
        dataset = inject_label_noise(&dataset, &split, config.label_noise, &mut noise_rng)?.0;
    }
    Ok(GeneratedDataset {
        config,
        dataset,
        table,
        split,
        prototypes,
    })
}

fn embeddings(config: &SynthConfig, prototypes: &BTreeMap<ClassId, Vec<f64>>) -> Result<SemanticTable> {
    let mut rng = RngSeed::new(config.seed, streams::EMBEDDINGS).rng();
    let d = config.embedding_dim;
    let p = config.prototype_len();
    let sd = 1.0 / (d as f64).sqrt();
    let maps: Vec<DenseMatrix> = Kind::ALL
        .iter()
        .map(|_| DenseMatrix::from_fn(d, p, |_, _| sd * standard_normal(&mut rng)))
        .collect();
    let mut records = Vec::new();
    for (&class_id, proto) in prototypes {
        for (kind, m) in Kind::ALL.into_iter().zip(&maps) {
            let mut v = m.matvec(proto)?;
            for x in &mut v {
                *x += config.embedding_noise * sd * standard_normal(&mut rng);
            }
            records.push(EmbeddingRecord {
                class_id,
                kind,
                vector: v,
            });
        }
    }
    SemanticTable::from_records(records)
}

fn sample_sequence<R: Rng + ?Sized>(
    config: &SynthConfig,
    proto: &[f64],
    rng: &mut R,
) -> Result<MotionSequence> {
    let (j, c, f) = (config.joints, config.coords, config.frames);
    let nb = config.band_end - config.band_start;
    let p = proto.len() as f64;
    let scale = config.amplitude * ((j * c * f) as f64).sqrt();
    let tau = config.phase_jitter * standard_normal(rng);
    let fl = f as f64;
    let mut values = Vec::with_capacity(j * c * f);
    for traj in 0..j * c {
        let amps: Vec<f64> = (0..nb)
            .map(|i| proto[traj * nb + i] + config.intra_class_noise * standard_normal(rng) / p.sqrt())
            .collect();
        let e: Vec<f64> = (0..=f).map(|_| standard_normal(rng)).collect();
        for t in 0..f {
            let mut x = 0.0;
            for (k, a) in amps.iter().enumerate() {
                let i = config.band_start + k;
                let norm = if i == 0 { (1.0 / fl).sqrt() } else { (2.0 / fl).sqrt() };
                x += a * norm * (PI / fl * (t as f64 + 0.5 + tau) * i as f64).cos();
            }
            let jitter = config.jitter * (e[t + 1] - e[t]) / std::f64::consts::SQRT_2;
            values.push(scale * x + jitter);
        }
    }
    MotionSequence::new(j, c, f, values)
}

/// Relabels exactly `⌊rate · N_train⌋` distinct training records to a
/// uniformly chosen different seen class. Returns the new dataset and the
/// indices of the corrupted records.
pub fn inject_label_noise<R: Rng + ?Sized>(
    dataset: &FeatureDataset,
    split: &SplitSpec,
    rate: f64,
    rng: &mut R,
) -> Result<(FeatureDataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("label noise rate {rate} outside [0, 1]")));
    }
    let mut train: Vec<usize> = dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.partition == Partition::TrainSeen)
        .map(|(i, _)| i)
        .collect();
    let n = (rate * train.len() as f64 + 1e-9).floor() as usize;
    let mut out = dataset.clone();
    if n == 0 {
        return Ok((out, Vec::new()));
    }
    if split.seen.len() < 2 {
        return Err(Error::Split("label noise needs at least two seen classes".into()));
    }
    let (picked, _) = train.partial_shuffle(rng, n);
    let mut picked = picked.to_vec();
    picked.sort_unstable();
    for &i in &picked {
        let orig = out.records[i].class_id;
        let others: Vec<ClassId> = split.seen.iter().copied().filter(|c| *c != orig).collect();
        out.records[i].class_id = others[rng.random_range(0..others.len())];
    }
    Ok((out, picked))
}

/// Energy of each trajectory's DCT coefficients inside `[start, end)` over
/// the total, summed over the sequence.
pub fn band_energy_fraction(seq: &MotionSequence, start: usize, end: usize) -> Result<f64> {
    let spec = DctBasis::new(seq.frames())?.forward_sequence(seq)?;
    let mut inside = 0.0;
    let mut total = 0.0;
    for traj in spec.trajectories() {
        for (i, c) in traj.iter().enumerate() {
            total += c * c;
            if (start..end).contains(&i) {
                inside += c * c;
            }
        }
    }
    Ok(if total == 0.0 { 0.0 } else { inside / total })
}

/// Nearest-prototype accuracies on the test partitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Test-unseen samples, candidates = unseen classes.
    pub zsl_accuracy: f64,
    /// Test-seen samples, candidates = seen classes.
    pub seen_accuracy: f64,
    /// All test samples, candidates = all classes.
    pub all_accuracy: f64,
}

/// Classifies each test sample by the Euclidean distance between its class
/// band reconstruction (scaled back to prototype units) and the prototypes.
pub fn oracle_nearest_prototype(generated: &GeneratedDataset) -> Result<OracleReport> {
    let cfg = &generated.config;
    let basis = DctBasis::new(cfg.frames)?;
    let scale = cfg.amplitude * ((cfg.joints * cfg.coords * cfg.frames) as f64).sqrt();
    let reconstruct = |seq: &MotionSequence| -> Result<Vec<f64>> {
        let spec = basis.forward_sequence(seq)?;
        Ok(spec
            .trajectories()
            .flat_map(|t| t[cfg.band_start..cfg.band_end].iter().map(|c| c / scale).collect::<Vec<_>>())
            .collect())
    };
    let nearest = |x: &[f64], candidates: &[ClassId]| -> ClassId {
        *candidates
            .iter()
            .min_by(|a, b| {
                squared_distance(x, &generated.prototypes[a]).total_cmp(&squared_distance(x, &generated.prototypes[b]))
            })
            .expect("non-empty candidates")
    };
    let all: Vec<ClassId> = generated.prototypes.keys().copied().collect();
    let mut counts = [(0usize, 0usize); 3];
    for r in &generated.dataset.records {
        let Features::Sequence(seq) = &r.features else {
            return Err(Error::InvalidConfig("oracle needs raw sequences".into()));
        };
        let x = reconstruct(seq)?;
        let slot = match r.partition {
            Partition::TrainSeen => continue,
            Partition::TestSeen => 1,
            Partition::TestUnseen => 0,
        };
        let own = if slot == 0 { &generated.split.unseen } else { &generated.split.seen };
        counts[slot].0 += usize::from(nearest(&x, own) == r.class_id);
        counts[slot].1 += 1;
        counts[2].0 += usize::from(nearest(&x, &all) == r.class_id);
        counts[2].1 += 1;
    }
    let acc = |(c, n): (usize, usize)| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(OracleReport {
        zsl_accuracy: acc(counts[0]),
        seen_accuracy: acc(counts[1]),
        all_accuracy: acc(counts[2]),
    })
}
