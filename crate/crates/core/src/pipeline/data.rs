//! Feature records, partitions and class splits, with their file formats.
//!
//! Feature file (one JSON object per line):
//!
//! ```text
//! {"sample_id": "s0001", "class_id": 4, "partition": "train_seen", "vector": [..]}
//! {"sample_id": "s0002", "class_id": 9, "partition": "test_unseen", "sequence": [[[..]]]}
//! ```
//!
//! `sequence` is nested `joints × coords × frames`. Split file:
//! `{"seen": [..], "unseen": [..]}`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::frequency::MotionSequence;
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    TrainSeen,
    TestSeen,
    TestUnseen,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::TrainSeen, Partition::TestSeen, Partition::TestUnseen];

    pub fn name(self) -> &'static str {
        match self {
            Partition::TrainSeen => "train_seen",
            Partition::TestSeen => "test_seen",
            Partition::TestUnseen => "test_unseen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Vector(Vec<f64>),
    Sequence(MotionSequence),
}

impl Features {
    /// Length of the axis the enhancement acts on: frames for sequences,
    /// the vector length otherwise.
    pub fn axis_len(&self) -> usize {
        match self {
            Features::Vector(v) => v.len(),
            Features::Sequence(s) => s.frames(),
        }
    }

    fn shape(&self) -> (bool, usize, usize, usize) {
        match self {
            Features::Vector(v) => (false, v.len(), 0, 0),
            Features::Sequence(s) => (true, s.joints(), s.coords(), s.frames()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct FeatureRecord {
    pub sample_id: String,
    pub class_id: ClassId,
    pub partition: Partition,
    pub features: Features,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    sample_id: String,
    class_id: ClassId,
    partition: Partition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sequence: Option<Vec<Vec<Vec<f64>>>>,
}

impl TryFrom<RawRecord> for FeatureRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        let features = match (raw.vector, raw.sequence) {
            (Some(v), None) => {
                if v.is_empty() {
                    return Err(Error::Empty("feature vector"));
                }
                ensure_finite(&v, "feature vector")?;
                Features::Vector(v)
            }
            (None, Some(s)) => Features::Sequence(MotionSequence::from_nested(&s)?),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "record {} must carry exactly one of `vector` or `sequence`",
                    raw.sample_id
                )))
            }
        };
        Ok(Self {
            sample_id: raw.sample_id,
            class_id: raw.class_id,
            partition: raw.partition,
            features,
        })
    }
}

impl From<FeatureRecord> for RawRecord {
    fn from(r: FeatureRecord) -> Self {
        let (vector, sequence) = match r.features {
            Features::Vector(v) => (Some(v), None),
            Features::Sequence(s) => (None, Some(s.to_nested())),
        };
        Self {
            sample_id: r.sample_id,
            class_id: r.class_id,
            partition: r.partition,
            vector,
            sequence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seen.is_empty() {
            return Err(Error::Split("no seen classes".into()));
        }
        if self.unseen.is_empty() {
            return Err(Error::Split("no unseen classes".into()));
        }
        let seen: BTreeSet<_> = self.seen.iter().collect();
        if seen.len() != self.seen.len() {
            return Err(Error::Split("duplicate seen class".into()));
        }
        let unseen: BTreeSet<_> = self.unseen.iter().collect();
        if unseen.len() != self.unseen.len() {
            return Err(Error::Split("duplicate unseen class".into()));
        }
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(Error::Split(format!("class {c} is both seen and unseen")));
        }
        Ok(())
    }

    pub fn is_seen(&self, class_id: ClassId) -> bool {
        self.seen.contains(&class_id)
    }

    pub fn is_unseen(&self, class_id: ClassId) -> bool {
        self.unseen.contains(&class_id)
    }
}

/// Records tagged with their partition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureDataset {
    pub records: Vec<FeatureRecord>,
}

impl FeatureDataset {
    pub fn new(records: Vec<FeatureRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &FeatureRecord> {
        self.records.iter().filter(move |r| r.partition == p)
    }

    pub fn count(&self, p: Partition) -> usize {
        self.partition(p).count()
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.records.iter().map(|r| r.class_id).collect()
    }

    /// Checks uniform feature shapes, unique ids, and that every partition
    /// only holds classes of the matching side of `split`.
    pub fn validate(&self, split: &SplitSpec) -> Result<()> {
        split.validate()?;
        let mut ids = BTreeSet::new();
        let mut shape = None;
        for r in &self.records {
            if !ids.insert(r.sample_id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate sample id {}", r.sample_id)));
            }
            let s = r.features.shape();
            match shape {
                None => shape = Some(s),
                Some(prev) if prev != s => {
                    return Err(Error::InvalidConfig(format!(
                        "sample {} has a different feature shape from earlier records",
                        r.sample_id
                    )))
                }
                _ => {}
            }
            let ok = match r.partition {
                Partition::TrainSeen | Partition::TestSeen => split.is_seen(r.class_id),
                Partition::TestUnseen => split.is_unseen(r.class_id),
            };
            if !ok {
                return Err(Error::Split(format!(
                    "sample {} of class {} does not belong in {}",
                    r.sample_id,
                    r.class_id,
                    r.partition.name()
                )));
            }
        }
        let covered: BTreeSet<ClassId> = split.seen.iter().chain(&split.unseen).copied().collect();
        if let Some(c) = self.classes().difference(&covered).next() {
            return Err(Error::Split(format!("class {c} is in neither the seen nor the unseen set")));
        }
        Ok(())
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(FeatureDataset { records })
}

pub fn write_features(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in &dataset.records {
        let line = serde_json::to_string(rec).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let split: SplitSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    split.validate()?;
    Ok(split)
}

pub fn write_split(split: &SplitSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(split).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
