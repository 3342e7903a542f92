//! Precomputed text embeddings for the action label (AL), local description
//! (LD) and global description (GD) of each class, and their fusion into a
//! single unit-norm text feature.
//!
//! Embedding files are line-delimited JSON, one record per line:
//!
//! ```text
//! {"class_id": 3, "kind": "AL", "vector": [0.1, -0.4, ...]}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "AL")]
    ActionLabel,
    #[serde(rename = "LD")]
    LocalDescription,
    #[serde(rename = "GD")]
    GlobalDescription,
}

impl Kind {
    /// Fusion order.
    pub const ALL: [Kind; 3] = [Kind::ActionLabel, Kind::LocalDescription, Kind::GlobalDescription];

    pub fn tag(self) -> &'static str {
        match self {
            Kind::ActionLabel => "AL",
            Kind::LocalDescription => "LD",
            Kind::GlobalDescription => "GD",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub class_id: ClassId,
    pub kind: Kind,
    pub vector: Vec<f64>,
}

/// Source of raw embeddings. Files are the only shipped provider; a client
/// for a text encoder would implement this and write records out.
pub trait EmbeddingProvider {
    fn embed(&self, class_id: ClassId, kind: Kind) -> Result<Vec<f64>>;
}

/// Validated AL/LD/GD vectors per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTable {
    entries: BTreeMap<ClassId, [Vec<f64>; 3]>,
    dims: [usize; 3],
}

impl SemanticTable {
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut partial: BTreeMap<ClassId, [Option<Vec<f64>>; 3]> = BTreeMap::new();
        let mut dims: [Option<usize>; 3] = [None; 3];
        for rec in records {
            if rec.vector.is_empty() {
                return Err(Error::Empty("embedding vector"));
            }
            ensure_finite(&rec.vector, "embedding vector")?;
            let k = rec.kind.index();
            match dims[k] {
                None => dims[k] = Some(rec.vector.len()),
                Some(d) if d != rec.vector.len() => {
                    return Err(Error::DimensionMismatch {
                        context: "embedding dimension within a kind",
                        expected: d,
                        actual: rec.vector.len(),
                    })
                }
                Some(_) => {}
            }
            let slot = &mut partial.entry(rec.class_id).or_default()[k];
            if slot.is_some() {
                return Err(Error::DuplicateRecord {
                    class_id: rec.class_id,
                    kind: rec.kind.tag(),
                });
            }
            *slot = Some(rec.vector);
        }
        if partial.is_empty() {
            return Err(Error::Empty("embedding table"));
        }
        let mut entries = BTreeMap::new();
        for (class_id, slots) in partial {
            let [al, ld, gd] = slots;
            let missing = |kind: Kind| Error::MissingRecord {
                class_id,
                kind: kind.tag(),
            };
            entries.insert(
                class_id,
                [
                    al.ok_or_else(|| missing(Kind::ActionLabel))?,
                    ld.ok_or_else(|| missing(Kind::LocalDescription))?,
                    gd.ok_or_else(|| missing(Kind::GlobalDescription))?,
                ],
            );
        }
        let dims = dims.map(|d| d.expect("every kind seen when no record is missing"));
        Ok(Self { entries, dims })
    }

    /// Pulls all three kinds for each class from a provider.
    pub fn from_provider(provider: &dyn EmbeddingProvider, classes: &[ClassId]) -> Result<Self> {
        let mut records = Vec::with_capacity(classes.len() * 3);
        for &class_id in classes {
            for kind in Kind::ALL {
                records.push(EmbeddingRecord {
                    class_id,
                    kind,
                    vector: provider.embed(class_id, kind)?,
                });
            }
        }
        Self::from_records(records)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        self.entries.contains_key(&class_id)
    }

    pub fn dim(&self, kind: Kind) -> usize {
        self.dims[kind.index()]
    }

    /// Width of the fused feature.
    pub fn fused_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn get(&self, class_id: ClassId, kind: Kind) -> Option<&[f64]> {
        self.entries.get(&class_id).map(|e| e[kind.index()].as_slice())
    }

    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        self.entries.iter().flat_map(|(&class_id, parts)| {
            Kind::ALL.into_iter().map(move |kind| EmbeddingRecord {
                class_id,
                kind,
                vector: parts[kind.index()].clone(),
            })
        })
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<SemanticTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    SemanticTable::from_records(records)
}

pub fn write_embeddings(table: &SemanticTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in table.records() {
        let line = serde_json::to_string(&rec).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Unit-norm concatenation of a class's AL, LD and GD vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSemantic {
    pub class_id: ClassId,
    pub vector: Vec<f64>,
}

/// `concat(AL, LD, GD) / ‖concat(AL, LD, GD)‖`.
pub fn fuse(table: &SemanticTable, class_id: ClassId) -> Result<FusedSemantic> {
    let parts = table
        .entries
        .get(&class_id)
        .ok_or(Error::UnknownClass(class_id))?;
    let vector = fuse_parts(class_id, &parts[0], &parts[1], &parts[2])?;
    Ok(FusedSemantic { class_id, vector })
}

pub fn fuse_parts(class_id: ClassId, al: &[f64], ld: &[f64], gd: &[f64]) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(al.len() + ld.len() + gd.len());
    v.extend_from_slice(al);
    v.extend_from_slice(ld);
    v.extend_from_slice(gd);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm(class_id));
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Fused features for every class in the table, keyed by class.
pub fn fuse_all(table: &SemanticTable) -> Result<BTreeMap<ClassId, Vec<f64>>> {
    table
        .classes()
        .map(|c| fuse(table, c).map(|f| (c, f.vector)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{standard_normal, RngSeed};
    use proptest::prelude::*;

    fn rec(class_id: ClassId, kind: Kind, vector: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            class_id,
            kind,
            vector,
        }
    }

    fn full_records(classes: u32, d: usize) -> Vec<EmbeddingRecord> {
        let mut rng = RngSeed::new(5, 0).rng();
        let mut out = Vec::new();
        for c in 0..classes {
            for kind in Kind::ALL {
                out.push(rec(c, kind, (0..d).map(|_| standard_normal(&mut rng)).collect()));
            }
        }
        out
    }

    #[test]
    fn loads_three_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let table = SemanticTable::from_records(full_records(3, 8)).unwrap();
        write_embeddings(&table, &path).unwrap();
        let loaded = load_embeddings(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded, table);
        assert_eq!(loaded.fused_dim(), 24);
    }

    #[test]
    fn parses_wire_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        std::fs::write(
            &path,
            "{\"class_id\": 1, \"kind\": \"AL\", \"vector\": [1.0, 0.0]}\n\
             {\"class_id\": 1, \"kind\": \"LD\", \"vector\": [0, 1]}\n\
             {\"class_id\": 1, \"kind\": \"GD\", \"vector\": [1, 0]}\n",
        )
        .unwrap();
        let t = load_embeddings(&path).unwrap();
        assert_eq!(t.get(1, Kind::LocalDescription).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn missing_kind_is_named() {
        let mut records = full_records(2, 4);
        records.retain(|r| !(r.class_id == 1 && r.kind == Kind::GlobalDescription));
        match SemanticTable::from_records(records) {
            Err(Error::MissingRecord { class_id, kind }) => {
                assert_eq!((class_id, kind), (1, "GD"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_is_rejected() {
        let mut records = full_records(6, 4);
        records.push(rec(5, Kind::ActionLabel, vec![1.0; 4]));
        assert!(matches!(
            SemanticTable::from_records(records),
            Err(Error::DuplicateRecord { class_id: 5, kind: "AL" })
        ));
    }

    #[test]
    fn inconsistent_dimension_is_rejected() {
        let mut records = full_records(2, 4);
        records[3].vector.push(0.0);
        assert!(matches!(
            SemanticTable::from_records(records),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"class_id\": 1, \"kind\": \"AL\", \"vector\": [1]}\nnot json\n").unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn fusion_example() {
        let v = fuse_parts(0, &[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]).unwrap();
        let s = 1.0 / 3f64.sqrt();
        let expected = [s, 0.0, 0.0, s, s, 0.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((v[0] - 0.57735).abs() < 1e-5);
    }

    #[test]
    fn zero_concatenation_is_rejected() {
        assert!(matches!(fuse_parts(9, &[0.0], &[0.0], &[0.0]), Err(Error::ZeroNorm(9))));
    }

    #[test]
    fn fusion_matches_scalar_oracle() {
        let table = SemanticTable::from_records(full_records(4, 5)).unwrap();
        for c in 0..4 {
            let fused = fuse(&table, c).unwrap();
            let mut raw = Vec::new();
            for kind in Kind::ALL {
                for &x in table.get(c, kind).unwrap() {
                    raw.push(x);
                }
            }
            let mut sq = 0.0;
            for x in &raw {
                sq += x * x;
            }
            let norm = sq.sqrt();
            for (a, b) in fused.vector.iter().zip(&raw) {
                assert!((a - b / norm).abs() < 1e-12);
            }
        }
        assert!(matches!(fuse(&table, 99), Err(Error::UnknownClass(99))));
    }

    proptest! {
        #[test]
        fn fused_vectors_are_unit_norm_and_scale_invariant(
            al in prop::collection::vec(-5.0f64..5.0, 3),
            ld in prop::collection::vec(-5.0f64..5.0, 2),
            gd in prop::collection::vec(-5.0f64..5.0, 4),
            scale in 1e-3f64..1e3,
        ) {
            prop_assume!(al.iter().chain(&ld).chain(&gd).any(|x| x.abs() > 1e-6));
            let v = fuse_parts(0, &al, &ld, &gd).unwrap();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            let s = |x: &Vec<f64>| x.iter().map(|y| y * scale).collect::<Vec<_>>();
            let w = fuse_parts(0, &s(&al), &s(&ld), &s(&gd)).unwrap();
            for (a, b) in v.iter().zip(&w) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
