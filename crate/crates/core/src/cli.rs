//! Command implementations behind the `fsvae` binary.
//!
//! A run config is a flat TOML file: pipeline hyperparameters and paths at
//! the top level, generator settings in an optional `[synth]` table.
//!
//! ```toml
//! seed = 3
//! epochs = 200
//! loss = "calibrated"
//! data_dir = "data"
//!
//! [synth]
//! jitter = 0.5
//! ```

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frequency::{
    enhance, redistributed_energy, signal_energy, DctBasis, EnhancementConfig, EnhancementMode, MotionSequence,
};
use crate::losses::AlignmentLoss;
use crate::numkit::{standard_normal, RngSeed};
use crate::pipeline::{
    load_features, load_split, write_loss_log, Checkpoint, EvalMode, EvalReport, FeatureDataset, Features,
    PipelineConfig, SplitSpec, TrainingSummary,
};
use crate::semantics::{load_embeddings, SemanticTable};
use crate::synthbench::{generate, inject_label_noise, oracle_nearest_prototype, DatasetFiles, OracleReport, SynthConfig};

const NOISE_STREAM: u64 = 7;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    /// Fraction of training labels corrupted before training.
    pub label_noise: f64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub synth: SynthConfig,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn take_path(table: &mut toml::Table, key: &str) -> Result<Option<PathBuf>> {
    match table.remove(key) {
        None => Ok(None),
        Some(toml::Value::String(s)) => Ok(Some(PathBuf::from(s))),
        Some(v) => Err(invalid(format!("{key} must be a string, got {v}"))),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        let synth = match table.remove("synth") {
            None => SynthConfig::default(),
            Some(v) => v.try_into().map_err(|e: toml::de::Error| invalid(format!("[synth]: {e}")))?,
        };
        let label_noise = match table.remove("label_noise") {
            None => 0.0,
            Some(toml::Value::Float(f)) => f,
            Some(toml::Value::Integer(i)) => i as f64,
            Some(v) => return Err(invalid(format!("label_noise must be a number, got {v}"))),
        };
        let data_dir = take_path(&mut table, "data_dir")?;
        let out_dir = take_path(&mut table, "out_dir")?;
        let pipeline: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        let cfg = Self {
            pipeline,
            label_noise,
            data_dir,
            out_dir,
            synth,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let ser = |e: toml::ser::Error| Error::Serde(e.to_string());
        let mut table = match toml::Value::try_from(&self.pipeline).map_err(ser)? {
            toml::Value::Table(t) => t,
            _ => unreachable!("structs serialize to tables"),
        };
        table.insert("label_noise".into(), toml::Value::Float(self.label_noise));
        for (key, p) in [("data_dir", &self.data_dir), ("out_dir", &self.out_dir)] {
            if let Some(p) = p {
                table.insert(key.into(), toml::Value::String(p.display().to_string()));
            }
        }
        table.insert("synth".into(), toml::Value::try_from(&self.synth).map_err(ser)?);
        toml::to_string(&table).map_err(ser)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.synth.validate()?;
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(invalid("label_noise must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Hex SHA-256 of every hyperparameter; paths are excluded.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            pipeline: &'a PipelineConfig,
            label_noise: f64,
            synth: &'a SynthConfig,
        }
        let json = serde_json::to_string(&Hashed {
            pipeline: &self.pipeline,
            label_noise: self.label_noise,
            synth: &self.synth,
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Applies command-line overrides. `seed` replaces both the pipeline and
    /// the generator seed.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.pipeline.seed = seed;
            self.synth.seed = seed;
        }
        if let Some(loss) = o.loss {
            self.pipeline.loss = loss;
        }
        if let Some(rate) = o.noise_rate {
            self.label_noise = rate;
        }
        if let Some(out) = &o.out {
            self.out_dir = Some(out.clone());
        }
        if let Some(data) = &o.data {
            self.data_dir = Some(data.clone());
        }
        self.validate()
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data_dir.as_deref().ok_or_else(|| invalid("no data directory given"))
    }

    fn out_dir(&self) -> Result<&Path> {
        let dir = self.out_dir.as_deref().ok_or_else(|| invalid("no output directory given"))?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(dir)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub loss: Option<AlignmentLoss>,
    pub noise_rate: Option<f64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::Parse { .. } | Error::Io { .. } | Error::Serde(_) => 2,
        Error::Stage { source, .. } => exit_code(source),
        _ => 1,
    }
}

pub fn load_data(dir: &Path) -> Result<(FeatureDataset, SemanticTable, SplitSpec)> {
    let files = DatasetFiles::in_dir(dir);
    Ok((
        load_features(&files.features)?,
        load_embeddings(&files.embeddings)?,
        load_split(&files.split)?,
    ))
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub files: DatasetFiles,
    pub records: usize,
    pub classes: usize,
    pub oracle: OracleReport,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthOutcome> {
    let out = cfg.out_dir()?;
    let generated = generate(&cfg.synth)?;
    let files = generated.write_files(out)?;
    Ok(SynthOutcome {
        files,
        records: generated.dataset.len(),
        classes: generated.prototypes.len(),
        oracle: oracle_nearest_prototype(&generated)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DctCheck {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DctCheckReport {
    pub sequences: usize,
    pub checks: Vec<DctCheck>,
    pub elapsed: Duration,
}

impl DctCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DctCheckOptions {
    /// Sequences from a feature file; random sequences when absent.
    pub input: Option<PathBuf>,
    pub random_sequences: usize,
    pub shape: (usize, usize, usize),
    pub random_configs: usize,
    /// Perturb one basis entry to show the suite catches a broken transform.
    pub corrupt_basis: bool,
    pub seed: u64,
}

impl Default for DctCheckOptions {
    fn default() -> Self {
        Self {
            input: None,
            random_sequences: 100,
            shape: (25, 3, 64),
            random_configs: 50,
            corrupt_basis: false,
            seed: 0,
        }
    }
}

fn random_enhancement<R: Rng + ?Sized>(frames: usize, rng: &mut R) -> Result<EnhancementConfig> {
    let mode = if rng.random_bool(0.5) {
        EnhancementMode::Piecewise
    } else {
        EnhancementMode::LearnableOnly
    };
    let phi = rng.random_range(0..frames);
    let b = rng.random_range(0.5..frames as f64);
    let mut cfg = if rng.random_bool(0.5) {
        EnhancementConfig::per_coefficient(frames, mode, phi, b, 0.0)
    } else {
        EnhancementConfig::uniform_bands(frames, rng.random_range(1..=frames), mode, phi, b, 0.0)?
    };
    for w in &mut cfg.weights {
        *w = rng.random();
    }
    cfg.floor = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.5) };
    Ok(cfg)
}

pub fn cmd_dct_check(opts: &DctCheckOptions) -> Result<DctCheckReport> {
    let start = Instant::now();
    let mut rng = RngSeed::new(opts.seed, 0).rng();
    let sequences: Vec<MotionSequence> = match &opts.input {
        Some(path) => load_features(path)?
            .records
            .into_iter()
            .map(|r| match r.features {
                Features::Sequence(s) => s,
                Features::Vector(v) => MotionSequence::new(1, 1, v.len(), v).expect("non-empty vector"),
            })
            .collect(),
        None => {
            let (j, c, f) = opts.shape;
            (0..opts.random_sequences)
                .map(|_| MotionSequence::new(j, c, f, (0..j * c * f).map(|_| standard_normal(&mut rng)).collect()))
                .collect::<Result<_>>()?
        }
    };
    if sequences.is_empty() {
        return Err(Error::Empty("dct-check input"));
    }
    let mut bases: Vec<(usize, DctBasis)> = Vec::new();
    let mut basis_for = |frames: usize| -> Result<DctBasis> {
        if let Some((_, b)) = bases.iter().find(|(f, _)| *f == frames) {
            return Ok(b.clone());
        }
        let mut b = DctBasis::new(frames)?;
        if opts.corrupt_basis {
            b = b.with_perturbation(frames.min(3) - 1, frames / 2, 1e-3);
        }
        bases.push((frames, b.clone()));
        Ok(b)
    };

    let mut round_trip = 0.0f64;
    let mut parseval = 0.0f64;
    let mut orthonormality = 0.0f64;
    let mut identity = 0.0f64;
    let mut redistribution = 0.0f64;
    for (n, seq) in sequences.iter().enumerate() {
        let basis = basis_for(seq.frames())?;
        orthonormality = orthonormality.max(basis.orthonormality_error());
        let spec = basis.forward_sequence(seq)?;
        let back = basis.inverse_spectrum(&spec)?;
        for (a, b) in back.values().iter().zip(seq.values()) {
            round_trip = round_trip.max((a - b).abs());
        }
        let e = signal_energy(seq);
        if e > 0.0 {
            parseval = parseval.max((signal_energy(&spec) - e).abs() / e);
        }
        let zero = EnhancementConfig::per_coefficient(seq.frames(), EnhancementMode::Piecewise, 0, 1.0, 0.0);
        let same = basis.inverse_spectrum(&enhance(&spec, &zero)?)?;
        for (a, b) in same.values().iter().zip(seq.values()) {
            identity = identity.max((a - b).abs());
        }
        if n < opts.random_configs {
            let cfg = random_enhancement(seq.frames(), &mut rng)?;
            let enhanced = basis.inverse_spectrum(&enhance(&spec, &cfg)?)?;
            let expected = redistributed_energy(&spec, &cfg)?;
            let got = signal_energy(&enhanced);
            let rel = (got - expected).abs() / expected.max(f64::MIN_POSITIVE);
            redistribution = redistribution.max(rel);
        }
    }
    let check = |name: &str, max_error: f64, tolerance: f64| DctCheck {
        name: name.to_string(),
        max_error,
        tolerance,
        passed: max_error < tolerance,
    };
    Ok(DctCheckReport {
        sequences: sequences.len(),
        checks: vec![
            check("round_trip", round_trip, 1e-9),
            check("parseval", parseval, 1e-12),
            check("orthonormality", orthonormality, 1e-12),
            check("redistribution", redistribution, 1e-9),
            check("identity", identity, 1e-12),
        ],
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub config_hash: String,
    pub summary: TrainingSummary,
    pub corrupted_labels: usize,
}

/// Stages 2–4 on the data directory; writes `checkpoint.json`,
/// `loss_log.tsv` and the resolved `run_config.toml` to the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let (mut dataset, table, split) = load_data(cfg.data_dir()?)?;
    let out = cfg.out_dir()?;
    let hash = cfg.config_hash();
    let mut corrupted_labels = 0;
    if cfg.label_noise > 0.0 {
        let mut rng = RngSeed::new(cfg.pipeline.seed, NOISE_STREAM).rng();
        let (noisy, idx) = inject_label_noise(&dataset, &split, cfg.label_noise, &mut rng)?;
        dataset = noisy;
        corrupted_labels = idx.len();
    }
    let (model, summary) = crate::pipeline::run_pipeline(&dataset, &split, &table, &cfg.pipeline)?;
    let checkpoint = out.join("checkpoint.json");
    Checkpoint::new(model, hash.clone()).save(&checkpoint)?;
    let loss_log = out.join("loss_log.tsv");
    write_loss_log(&summary.epochs, &hash, &loss_log)?;
    let resolved = out.join("run_config.toml");
    std::fs::write(&resolved, cfg.to_toml_string()?).map_err(|e| Error::io(&resolved, e))?;
    Ok(TrainOutcome {
        checkpoint,
        loss_log,
        config_hash: hash,
        summary,
        corrupted_labels,
    })
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub report_path: PathBuf,
    /// `(checkpoint hash, config hash)` when they differ.
    pub hash_mismatch: Option<(String, String)>,
}

/// Evaluates a checkpoint; `expected_hash` comes from the run config when
/// one is given, and a mismatch is reported, never ignored.
pub fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    mode: EvalMode,
    out: &Path,
    expected_hash: Option<&str>,
) -> Result<EvalOutcome> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let hash_mismatch = expected_hash
        .filter(|h| *h != ckpt.config_hash)
        .map(|h| (ckpt.config_hash.clone(), h.to_string()));
    if let Some((found, expected)) = &hash_mismatch {
        warn!("checkpoint config hash {found} differs from config hash {expected}");
    }
    let dataset = load_features(DatasetFiles::in_dir(data_dir).features)?;
    let report = match mode {
        EvalMode::Zsl => EvalReport::from_zsl(ckpt.model.evaluate_zsl(&dataset)?, &ckpt.config_hash),
        EvalMode::Gzsl => EvalReport::from_gzsl(ckpt.model.evaluate_gzsl(&dataset)?, &ckpt.config_hash),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report_path = out.join(format!("report_{}.json", if mode == EvalMode::Zsl { "zsl" } else { "gzsl" }));
    report.save(&report_path)?;
    Ok(EvalOutcome {
        report,
        report_path,
        hash_mismatch,
    })
}

pub fn cmd_export_latents(checkpoint: &Path, data_dir: &Path, out: &Path) -> Result<usize> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = load_features(DatasetFiles::in_dir(data_dir).features)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    ckpt.model.export_latents(&dataset, out, &ckpt.config_hash)
}

/// Unseen (ZSL) accuracy per noise rate, loss and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBenchTable {
    pub config_hash: String,
    pub rates: Vec<f64>,
    pub losses: Vec<AlignmentLoss>,
    pub seeds: Vec<u64>,
    /// `accuracy[rate][loss][seed]`.
    pub accuracy: Vec<Vec<Vec<f64>>>,
}

impl LossBenchTable {
    pub fn mean(&self, rate: usize, loss: usize) -> f64 {
        let v = &self.accuracy[rate][loss];
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Tab-separated means, one row per noise rate.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# config_hash={} seeds={}\nnoise_rate", self.config_hash, self.seeds.len());
        for l in &self.losses {
            s.push('\t');
            s.push_str(l.name());
        }
        s.push('\n');
        for (r, rate) in self.rates.iter().enumerate() {
            s.push_str(&format!("{rate:?}"));
            for l in 0..self.losses.len() {
                s.push_str(&format!("\t{:.4}", self.mean(r, l)));
            }
            s.push('\n');
        }
        s
    }
}

/// Trains one pipeline per (seed, rate, loss) on the synthetic benchmark.
/// Seed `s` drives the generator, the label noise and the pipeline.
pub fn loss_bench(cfg: &RunConfig, rates: &[f64], seeds: &[u64], losses: &[AlignmentLoss]) -> Result<LossBenchTable> {
    if rates.is_empty() || seeds.is_empty() || losses.is_empty() {
        return Err(invalid("loss-bench needs at least one rate, seed and loss"));
    }
    let mut accuracy = vec![vec![vec![0.0; seeds.len()]; losses.len()]; rates.len()];
    for (si, &seed) in seeds.iter().enumerate() {
        let generated = generate(&SynthConfig {
            seed,
            label_noise: 0.0,
            ..cfg.synth.clone()
        })?;
        for (ri, &rate) in rates.iter().enumerate() {
            let mut rng = RngSeed::new(seed, NOISE_STREAM).rng();
            let (noisy, _) = inject_label_noise(&generated.dataset, &generated.split, rate, &mut rng)?;
            for (li, &loss) in losses.iter().enumerate() {
                let pcfg = PipelineConfig {
                    seed,
                    loss,
                    ..cfg.pipeline.clone()
                };
                let (model, _) = crate::pipeline::run_pipeline(&noisy, &generated.split, &generated.table, &pcfg)?;
                let acc = model.evaluate_zsl(&noisy)?.accuracy;
                log::info!("seed {seed} rate {rate} loss {loss}: {acc:.4}");
                accuracy[ri][li][si] = acc;
            }
        }
    }
    Ok(LossBenchTable {
        config_hash: cfg.config_hash(),
        rates: rates.to_vec(),
        losses: losses.to_vec(),
        seeds: seeds.to_vec(),
        accuracy,
    })
}

/// Runs [`loss_bench`] and writes `loss_bench.tsv` and `loss_bench.json`.
pub fn cmd_loss_bench(cfg: &RunConfig, rates: &[f64], seeds: usize) -> Result<LossBenchTable> {
    let out = cfg.out_dir()?;
    let seeds: Vec<u64> = (0..seeds as u64).map(|s| cfg.synth.seed + s).collect();
    let table = loss_bench(cfg, rates, &seeds, &AlignmentLoss::ALL)?;
    let tsv = out.join("loss_bench.tsv");
    std::fs::write(&tsv, table.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
    let json = out.join("loss_bench.json");
    let text = serde_json::to_string_pretty(&table).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(table)
}
