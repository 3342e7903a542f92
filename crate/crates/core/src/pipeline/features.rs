//! Skeleton feature extraction: optional frequency enhancement followed by a
//! fixed encoder.
//!
//! Enhancement is linear in the band scales, so every sample is stored as one
//! encoded component per band and the feature is `f_s = Σ_b g_b U_b`. That
//! keeps stage-2 gradients w.r.t. the band weights exact and cheap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{FeatureDataset, Features, Partition};
use crate::error::{Error, Result};
use crate::frequency::{
    enhance_sequence, enhance_vector, scaling_factor, squash_derivative, DctBasis, EnhancementConfig, MotionSequence,
};
use crate::numkit::{standard_normal, DenseMatrix};
use crate::ClassId;

/// Maps (possibly enhanced) inputs to skeleton feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkeletonEncoder {
    /// Pre-extracted vectors are used as they are.
    Identity { dim: usize },
    /// Fixed random projection of the flattened `[joint][coord][frame]` values.
    Projection {
        joints: usize,
        coords: usize,
        frames: usize,
        matrix: DenseMatrix,
    },
}

impl SkeletonEncoder {
    /// Projection with `N(0, 1/(J·C·F))` entries, which keeps the per-entry
    /// scale of the input.
    pub fn projection<R: Rng + ?Sized>(
        joints: usize,
        coords: usize,
        frames: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = joints * coords * frames;
        if n == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("projection encoder needs non-empty shapes".into()));
        }
        let sd = 1.0 / (n as f64).sqrt();
        let matrix = DenseMatrix::from_fn(out_dim, n, |_, _| sd * standard_normal(rng));
        Ok(SkeletonEncoder::Projection {
            joints,
            coords,
            frames,
            matrix,
        })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SkeletonEncoder::Identity { dim } => *dim,
            SkeletonEncoder::Projection { matrix, .. } => matrix.rows(),
        }
    }

    pub fn encode(&self, features: &Features) -> Result<Vec<f64>> {
        match (self, features) {
            (SkeletonEncoder::Identity { dim }, Features::Vector(v)) => {
                if v.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        context: "feature vector",
                        expected: *dim,
                        actual: v.len(),
                    });
                }
                Ok(v.clone())
            }
            (
                SkeletonEncoder::Projection {
                    joints,
                    coords,
                    frames,
                    matrix,
                },
                Features::Sequence(s),
            ) => {
                if (s.joints(), s.coords(), s.frames()) != (*joints, *coords, *frames) {
                    return Err(Error::DimensionMismatch {
                        context: "sequence shape",
                        expected: joints * coords * frames,
                        actual: s.values().len(),
                    });
                }
                matrix.matvec(s.values())
            }
            (SkeletonEncoder::Identity { .. }, Features::Sequence(_)) => Err(Error::InvalidConfig(
                "raw sequences need the projection encoder".into(),
            )),
            (SkeletonEncoder::Projection { .. }, Features::Vector(_)) => Err(Error::InvalidConfig(
                "pre-extracted vectors cannot go through the sequence encoder".into(),
            )),
        }
    }

    /// Suitable encoder for the records of a dataset.
    pub fn for_dataset<R: Rng + ?Sized>(dataset: &FeatureDataset, out_dim: usize, rng: &mut R) -> Result<Self> {
        let first = dataset.records.first().ok_or(Error::Empty("feature dataset"))?;
        match &first.features {
            Features::Vector(v) => Ok(SkeletonEncoder::Identity { dim: v.len() }),
            Features::Sequence(s) => Self::projection(s.joints(), s.coords(), s.frames(), out_dim, rng),
        }
    }
}

/// Enhancement (on the temporal axis for sequences, on the feature axis for
/// vectors) followed by the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub encoder: SkeletonEncoder,
    pub enhancement: Option<EnhancementConfig>,
}

impl FeatureExtractor {
    pub fn output_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn num_components(&self) -> usize {
        self.enhancement.as_ref().map_or(1, |e| e.num_bands())
    }

    /// Current band scales `g_b` (a single 1 without enhancement).
    pub fn band_scales(&self) -> Vec<f64> {
        match &self.enhancement {
            None => vec![1.0],
            Some(cfg) => (0..cfg.num_bands()).map(|b| scaling_factor(cfg, b)).collect(),
        }
    }

    /// Reference path: enhance the input directly, then encode.
    pub fn extract(&self, features: &Features) -> Result<Vec<f64>> {
        let enhanced = match (&self.enhancement, features) {
            (None, f) => f.clone(),
            (Some(cfg), Features::Sequence(s)) => Features::Sequence(enhance_sequence(s, cfg)?),
            (Some(cfg), Features::Vector(v)) => Features::Vector(enhance_vector(v, cfg)?),
        };
        self.encoder.encode(&enhanced)
    }

    /// Encoded contribution of every band (`bands × D`).
    pub fn band_components(&self, features: &Features) -> Result<DenseMatrix> {
        let Some(cfg) = &self.enhancement else {
            let v = self.encoder.encode(features)?;
            return DenseMatrix::from_vec(1, v.len(), v);
        };
        cfg.validate()?;
        if cfg.len() != features.axis_len() {
            return Err(Error::Partition(format!(
                "bands cover {} coefficients but the input axis has {}",
                cfg.len(),
                features.axis_len()
            )));
        }
        let basis = DctBasis::new(features.axis_len())?;
        let mut out = DenseMatrix::zeros(cfg.num_bands(), self.output_dim());
        match features {
            Features::Vector(v) => {
                let coeffs = basis.forward(v)?;
                for band in 0..cfg.num_bands() {
                    let masked = mask(&coeffs, cfg.band_range(band));
                    let part = Features::Vector(basis.inverse(&masked)?);
                    out.row_mut(band).copy_from_slice(&self.encoder.encode(&part)?);
                }
            }
            Features::Sequence(s) => {
                let spec = basis.forward_sequence(s)?;
                let f = s.frames();
                for band in 0..cfg.num_bands() {
                    let range = cfg.band_range(band);
                    let mut values = Vec::with_capacity(s.values().len());
                    for traj in spec.coeffs().chunks_exact(f) {
                        values.extend(basis.inverse(&mask(traj, range.clone()))?);
                    }
                    let part = MotionSequence::new(s.joints(), s.coords(), f, values)?;
                    out.row_mut(band)
                        .copy_from_slice(&self.encoder.encode(&Features::Sequence(part))?);
                }
            }
        }
        Ok(out)
    }

    /// `Σ_b g_b U_b`.
    pub fn combine(&self, components: &DenseMatrix) -> Vec<f64> {
        let scales = self.band_scales();
        let mut out = vec![0.0; components.cols()];
        for (row, g) in components.iter_rows().zip(&scales) {
            for (o, u) in out.iter_mut().zip(row) {
                *o += g * u;
            }
        }
        out
    }

    /// Gradient w.r.t. the raw (pre-sigmoid) band weights, given per-sample
    /// feature gradients and components.
    pub fn raw_weight_gradient(&self, components: &[&DenseMatrix], feature_grads: &DenseMatrix) -> Vec<f64> {
        let Some(cfg) = &self.enhancement else {
            return Vec::new();
        };
        let mut out = vec![0.0; cfg.num_bands()];
        for (i, comp) in components.iter().enumerate() {
            let g = feature_grads.row(i);
            for (band, o) in out.iter_mut().enumerate() {
                *o += crate::numkit::dot(comp.row(band), g);
            }
        }
        for (band, o) in out.iter_mut().enumerate() {
            *o *= cfg.scaling_derivative(band) * squash_derivative(cfg.weights[band]);
        }
        out
    }
}

fn mask(coeffs: &[f64], keep: std::ops::Range<usize>) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| if keep.contains(&i) { *c } else { 0.0 })
        .collect()
}

/// One partition after band decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub sample_ids: Vec<String>,
    pub labels: Vec<ClassId>,
    pub components: Vec<DenseMatrix>,
}

impl PreparedSet {
    pub fn build(dataset: &FeatureDataset, partition: Partition, extractor: &FeatureExtractor) -> Result<Self> {
        let mut out = PreparedSet {
            sample_ids: Vec::new(),
            labels: Vec::new(),
            components: Vec::new(),
        };
        for r in dataset.partition(partition) {
            out.sample_ids.push(r.sample_id.clone());
            out.labels.push(r.class_id);
            out.components.push(extractor.band_components(&r.features)?);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Features of the selected samples under the extractor's current scales.
    pub fn features(&self, extractor: &FeatureExtractor, indices: &[usize]) -> DenseMatrix {
        let d = extractor.output_dim();
        let mut out = DenseMatrix::zeros(indices.len(), d);
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(&extractor.combine(&self.components[i]));
        }
        out
    }

    pub fn all_features(&self, extractor: &FeatureExtractor) -> DenseMatrix {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.features(extractor, &idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::EnhancementMode;
    use crate::numkit::RngSeed;

    fn random_seq(seed: u64) -> MotionSequence {
        let mut rng = RngSeed::new(seed, 0).rng();
        let values = (0..2 * 3 * 12).map(|_| standard_normal(&mut rng)).collect();
        MotionSequence::new(2, 3, 12, values).unwrap()
    }

    #[test]
    fn components_match_direct_enhancement() {
        let mut rng = RngSeed::new(1, 0).rng();
        for mode in [EnhancementMode::Piecewise, EnhancementMode::LearnableOnly] {
            let mut cfg = EnhancementConfig::uniform_bands(12, 4, mode, 6, 2.0, 0.0).unwrap();
            cfg.weights = vec![0.2, 0.9, 0.4, 0.7];
            let ex = FeatureExtractor {
                encoder: SkeletonEncoder::projection(2, 3, 12, 5, &mut rng).unwrap(),
                enhancement: Some(cfg.clone()),
            };
            let f = Features::Sequence(random_seq(2));
            let direct = ex.extract(&f).unwrap();
            let via = ex.combine(&ex.band_components(&f).unwrap());
            for (a, b) in direct.iter().zip(&via) {
                assert!((a - b).abs() < 1e-10);
            }

            let vex = FeatureExtractor {
                encoder: SkeletonEncoder::Identity { dim: 12 },
                enhancement: Some(cfg),
            };
            let v = Features::Vector((0..12).map(|i| (i as f64 * 0.7).sin()).collect());
            let direct = vex.extract(&v).unwrap();
            let via = vex.combine(&vex.band_components(&v).unwrap());
            for (a, b) in direct.iter().zip(&via) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_enhancement_is_plain_encoding() {
        let ex = FeatureExtractor {
            encoder: SkeletonEncoder::Identity { dim: 3 },
            enhancement: None,
        };
        let f = Features::Vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(ex.combine(&ex.band_components(&f).unwrap()), vec![1.0, 2.0, 3.0]);
        assert!(ex.encoder.encode(&Features::Sequence(random_seq(3))).is_err());
    }

    #[test]
    fn raw_weight_gradient_matches_finite_differences() {
        let mut rng = RngSeed::new(4, 0).rng();
        let encoder = SkeletonEncoder::projection(2, 3, 12, 4, &mut rng).unwrap();
        let raw = [0.3, -0.8, 1.1, -0.2];
        let make = |raw: &[f64]| {
            let mut cfg = EnhancementConfig::uniform_bands(12, 4, EnhancementMode::Piecewise, 6, 3.0, 0.0).unwrap();
            cfg.weights = raw.iter().map(|r| crate::frequency::squash_weight(*r)).collect();
            FeatureExtractor {
                encoder: encoder.clone(),
                enhancement: Some(cfg),
            }
        };
        let ex = make(&raw);
        let comps: Vec<DenseMatrix> = (0..3)
            .map(|s| ex.band_components(&Features::Sequence(random_seq(10 + s))).unwrap())
            .collect();
        let targets = DenseMatrix::from_fn(3, 4, |_, _| standard_normal(&mut rng));
        // loss = Σ_i ‖f_i − t_i‖²
        let loss = |raw: &[f64]| {
            let ex = make(raw);
            comps
                .iter()
                .enumerate()
                .map(|(i, c)| crate::numkit::squared_distance(&ex.combine(c), targets.row(i)))
                .sum::<f64>()
        };
        let grads = DenseMatrix::from_fn(3, 4, |i, k| 2.0 * (ex.combine(&comps[i])[k] - targets.get(i, k)));
        let refs: Vec<&DenseMatrix> = comps.iter().collect();
        let analytic = ex.raw_weight_gradient(&refs, &grads);
        let report = crate::numkit::grad_check(loss, &raw, &analytic, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
