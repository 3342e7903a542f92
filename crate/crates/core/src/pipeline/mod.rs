//! Training stages 2–4 and ZSL/GZSL evaluation, plus the files they read and
//! write.
//!
//! Output files:
//!
//! - checkpoint: JSON object `{format_version, config_hash, model}`; `model`
//!   holds the split, feature extractor (encoder and band weights), the VAE
//!   networks, both classifiers and the gate
//! - loss log and latent export: tab-separated values after a single header
//!   line starting with `# config_hash=<hex>`
//! - report: JSON [`EvalReport`]

mod classifier;
mod data;
mod eval;
mod features;
mod train;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classifier::{gate_features, Classify, Gate, GateModel, SoftmaxClassifier, SoftmaxTraining};
pub use data::{
    load_features, load_split, write_features, write_split, FeatureDataset, FeatureRecord, Features, Partition,
    SplitSpec,
};
pub use eval::{gzsl_accuracy, harmonic_mean, zsl_accuracy, ClassAccuracy, GzslResult, ZslResult};
pub use features::{FeatureExtractor, PreparedSet, SkeletonEncoder};
pub use train::{
    latent_means, run_pipeline, run_stage2, synthesize_latents, synthesize_unseen_classifier, train_gate,
    train_seen_classifier, EpochLog, PipelineConfig, Stage2Output, TrainedModel, TrainingSummary,
};

use crate::error::{Error, Result};
use crate::ClassId;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(model: TrainedModel, config_hash: impl Into<String>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash: config_hash.into(),
            model,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint format version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Zsl,
    Gzsl,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zsl" => Ok(EvalMode::Zsl),
            "gzsl" => Ok(EvalMode::Gzsl),
            other => Err(Error::InvalidConfig(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

/// Metrics of one evaluation run. Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub config_hash: String,
    pub zsl_accuracy: Option<f64>,
    pub seen_accuracy: Option<f64>,
    pub unseen_accuracy: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub per_class: BTreeMap<ClassId, ClassAccuracy>,
}

impl EvalReport {
    pub fn from_zsl(r: ZslResult, config_hash: impl Into<String>) -> Self {
        Self {
            mode: EvalMode::Zsl,
            config_hash: config_hash.into(),
            zsl_accuracy: Some(r.accuracy),
            seen_accuracy: None,
            unseen_accuracy: None,
            harmonic_mean: None,
            per_class: r.per_class,
        }
    }

    pub fn from_gzsl(r: GzslResult, config_hash: impl Into<String>) -> Self {
        Self {
            mode: EvalMode::Gzsl,
            config_hash: config_hash.into(),
            zsl_accuracy: None,
            seen_accuracy: Some(r.seen),
            unseen_accuracy: Some(r.unseen),
            harmonic_mean: Some(r.harmonic_mean),
            per_class: r.per_class,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub sample_id: String,
    pub class_id: ClassId,
    pub partition: Partition,
    pub latent: Vec<f64>,
}

fn header(config_hash: &str, columns: &[String]) -> String {
    format!("# config_hash={config_hash} columns={}", columns.join(","))
}

/// Writes latent rows; floats use the shortest representation that parses
/// back to the same value.
pub fn write_latents(rows: &[LatentRow], latent_dim: usize, config_hash: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut cols: Vec<String> = ["sample_id", "class_id", "partition"].map(String::from).to_vec();
    cols.extend((0..latent_dim).map(|k| format!("z{k}")));
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header(config_hash, &cols)).map_err(io)?;
    for r in rows {
        write!(w, "{}\t{}\t{}", r.sample_id, r.class_id, r.partition.name()).map_err(io)?;
        for v in &r.latent {
            write!(w, "\t{v:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Inverse of [`write_latents`]; returns the config hash and the rows.
pub fn read_latents(path: impl AsRef<Path>) -> Result<(String, Vec<LatentRow>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut hash = String::new();
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(rest) = line.strip_prefix("# config_hash=") {
            hash = rest.split_whitespace().next().unwrap_or_default().to_string();
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let sample_id = parts.next().unwrap_or_default().to_string();
        let class_id = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(n + 1, "bad class id".into()))?;
        let partition = match parts.next() {
            Some("train_seen") => Partition::TrainSeen,
            Some("test_seen") => Partition::TestSeen,
            Some("test_unseen") => Partition::TestUnseen,
            other => return Err(parse_err(n + 1, format!("bad partition {other:?}"))),
        };
        let latent = parts
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(n + 1, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.push(LatentRow {
            sample_id,
            class_id,
            partition,
            latent,
        });
    }
    Ok((hash, rows))
}

/// One row per stage-2 epoch.
pub fn write_loss_log(epochs: &[EpochLog], config_hash: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let cols = [
        "epoch",
        "batches",
        "total",
        "vae",
        "align",
        "recon_skeleton",
        "kl_skeleton",
        "recon_text",
        "kl_text",
        "band_weights",
    ]
    .map(String::from);
    writeln!(w, "{}", header(config_hash, &cols)).map_err(io)?;
    for e in epochs {
        let l = &e.loss;
        let weights: Vec<String> = e.band_weights.iter().map(|v| format!("{v:?}")).collect();
        writeln!(
            w,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{}",
            e.epoch,
            e.batches,
            l.total,
            l.vae,
            l.align,
            l.recon_skeleton,
            l.kl_skeleton,
            l.recon_text,
            l.kl_text,
            weights.join(",")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
