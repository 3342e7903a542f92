//! Orthonormal DCT over the temporal axis of motion sequences and the
//! piecewise frequency scaling applied between the forward and inverse
//! transforms.
//!
//! Coefficients are 0-based with the DC term at index 0. The 1-based form
//! that writes the normalisation with `δ_{i1}` is the same transform with
//! `i_one_based = i + 1`.
//!
//! Scaling of band `i` (0-based band index, `b` the adjusting parameter):
//!
//! - low band (band end ≤ φ): `g = 1 + w (1 − i / b)`
//! - high band: `g = 1 − w (1 − (i − b) / b)`
//! - learnable-only mode: `g = w`
//!
//! The piecewise forms are clamped below at `floor`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numkit::{sigmoid, DenseMatrix};

/// Joint trajectories laid out as `[joint][coord][frame]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    joints: usize,
    coords: usize,
    frames: usize,
    values: Vec<f64>,
}

/// DCT coefficients with the same `[joint][coord][index]` layout as the
/// sequence they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    joints: usize,
    coords: usize,
    frames: usize,
    coeffs: Vec<f64>,
}

fn check_shape(joints: usize, coords: usize, frames: usize, len: usize) -> Result<()> {
    if frames == 0 {
        return Err(Error::Empty("sequence has no frames"));
    }
    if joints == 0 || coords == 0 {
        return Err(Error::Empty("sequence has no trajectories"));
    }
    if len != joints * coords * frames {
        return Err(Error::DimensionMismatch {
            context: "sequence values",
            expected: joints * coords * frames,
            actual: len,
        });
    }
    Ok(())
}

impl MotionSequence {
    pub fn new(joints: usize, coords: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(joints, coords, frames, values.len())?;
        ensure_finite(&values, "motion sequence")?;
        Ok(Self {
            joints,
            coords,
            frames,
            values,
        })
    }

    pub fn zeros(joints: usize, coords: usize, frames: usize) -> Result<Self> {
        Self::new(joints, coords, frames, vec![0.0; joints * coords * frames])
    }

    /// Builds a sequence from nested `J × C × F` arrays.
    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let joints = nested.len();
        let coords = nested.first().map_or(0, Vec::len);
        let frames = nested
            .first()
            .and_then(|j| j.first())
            .map_or(0, Vec::len);
        let mut values = Vec::with_capacity(joints * coords * frames);
        for joint in nested {
            if joint.len() != coords {
                return Err(Error::DimensionMismatch {
                    context: "nested sequence coords",
                    expected: coords,
                    actual: joint.len(),
                });
            }
            for traj in joint {
                if traj.len() != frames {
                    return Err(Error::DimensionMismatch {
                        context: "nested sequence frames",
                        expected: frames,
                        actual: traj.len(),
                    });
                }
                values.extend_from_slice(traj);
            }
        }
        Self::new(joints, coords, frames, values)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let mut it = self.values.chunks_exact(self.frames);
        (0..self.joints)
            .map(|_| {
                (0..self.coords)
                    .map(|_| it.next().expect("shape checked").to_vec())
                    .collect()
            })
            .collect()
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trajectory(&self, joint: usize, coord: usize) -> &[f64] {
        let start = (joint * self.coords + coord) * self.frames;
        &self.values[start..start + self.frames]
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.frames)
    }
}

impl Spectrum {
    pub fn new(joints: usize, coords: usize, frames: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_shape(joints, coords, frames, coeffs.len())?;
        ensure_finite(&coeffs, "spectrum")?;
        Ok(Self {
            joints,
            coords,
            frames,
            coeffs,
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn trajectory(&self, joint: usize, coord: usize) -> &[f64] {
        let start = (joint * self.coords + coord) * self.frames;
        &self.coeffs[start..start + self.frames]
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &[f64]> {
        self.coeffs.chunks_exact(self.frames)
    }
}

/// Orthonormal DCT-II basis; row `i` holds `φ_i(f) = √((2 − δ_{i0}) / F) · cos(π (f + ½) i / F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    matrix: DenseMatrix,
}

impl DctBasis {
    pub fn new(frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Empty("DCT length"));
        }
        let n = frames as f64;
        let matrix = DenseMatrix::from_fn(frames, frames, |i, f| {
            let norm = if i == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            norm * (PI / n * (f as f64 + 0.5) * i as f64).cos()
        });
        Ok(Self { matrix })
    }

    /// Adds `delta` to one basis entry. Only useful for exercising the
    /// invariant checks against a known-bad transform.
    pub fn with_perturbation(mut self, index: usize, frame: usize, delta: f64) -> Self {
        let v = self.matrix.get(index, frame);
        self.matrix.set(index, frame, v + delta);
        self
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn forward(&self, signal: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(signal)
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec_t(coeffs)
    }

    /// Largest entry of `|Φ Φᵀ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.len();
        let gram = self
            .matrix
            .matmul_nt(&self.matrix)
            .expect("square basis");
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram.get(i, j) - target).abs());
            }
        }
        worst
    }

    pub fn forward_sequence(&self, seq: &MotionSequence) -> Result<Spectrum> {
        self.check_len(seq.frames)?;
        let mut coeffs = Vec::with_capacity(seq.values.len());
        for traj in seq.trajectories() {
            coeffs.extend(self.forward(traj)?);
        }
        Spectrum::new(seq.joints, seq.coords, seq.frames, coeffs)
    }

    pub fn inverse_spectrum(&self, spec: &Spectrum) -> Result<MotionSequence> {
        self.check_len(spec.frames)?;
        let mut values = Vec::with_capacity(spec.coeffs.len());
        for traj in spec.trajectories() {
            values.extend(self.inverse(traj)?);
        }
        MotionSequence::new(spec.joints, spec.coords, spec.frames, values)
    }

    fn check_len(&self, frames: usize) -> Result<()> {
        if frames != self.len() {
            return Err(Error::DimensionMismatch {
                context: "DCT basis length",
                expected: self.len(),
                actual: frames,
            });
        }
        Ok(())
    }
}

/// Orthonormal type-II DCT of every trajectory over frames.
pub fn dct_forward(seq: &MotionSequence) -> Result<Spectrum> {
    DctBasis::new(seq.frames)?.forward_sequence(seq)
}

/// Exact inverse of [`dct_forward`].
pub fn idct(spec: &Spectrum) -> Result<MotionSequence> {
    DctBasis::new(spec.frames)?.inverse_spectrum(spec)
}

/// Sum of squared entries.
pub trait Energy {
    fn energy(&self) -> f64;
}

impl Energy for MotionSequence {
    fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

impl Energy for Spectrum {
    fn energy(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum()
    }
}

impl Energy for [f64] {
    fn energy(&self) -> f64 {
        self.iter().map(|v| v * v).sum()
    }
}

pub fn signal_energy<T: Energy + ?Sized>(x: &T) -> f64 {
    x.energy()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementMode {
    /// Low-band amplification and high-band suppression with learnable strengths.
    Piecewise,
    /// Every band scaled directly by its learnable weight.
    LearnableOnly,
}

impl std::str::FromStr for EnhancementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piecewise" => Ok(Self::Piecewise),
            "learnable_only" | "learnable-only" => Ok(Self::LearnableOnly),
            other => Err(Error::InvalidConfig(format!("unknown enhancement mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementConfig {
    pub mode: EnhancementMode,
    /// Low-frequency threshold: bands ending at or below it are "low".
    pub phi: usize,
    /// Adjusting parameter of the scaling ramps.
    pub b: f64,
    /// Band boundaries `0 = s_0 < s_1 < … < s_n = F`; band `k` covers `s_k..s_{k+1}`.
    pub split_points: Vec<usize>,
    /// One weight in `[0, 1]` per band.
    pub weights: Vec<f64>,
    /// Lower clamp on the piecewise scaling.
    pub floor: f64,
}

impl EnhancementConfig {
    /// One band per coefficient, all weights equal to `weight`.
    pub fn per_coefficient(len: usize, mode: EnhancementMode, phi: usize, b: f64, weight: f64) -> Self {
        Self {
            mode,
            phi,
            b,
            split_points: (0..=len).collect(),
            weights: vec![weight; len],
            floor: 0.0,
        }
    }

    /// `bands` contiguous bands of near-equal width.
    pub fn uniform_bands(
        len: usize,
        bands: usize,
        mode: EnhancementMode,
        phi: usize,
        b: f64,
        weight: f64,
    ) -> Result<Self> {
        if bands == 0 || bands > len {
            return Err(Error::Partition(format!(
                "cannot split {len} coefficients into {bands} bands"
            )));
        }
        let split_points = (0..=bands).map(|k| k * len / bands).collect();
        Ok(Self {
            mode,
            phi,
            b,
            split_points,
            weights: vec![weight; bands],
            floor: 0.0,
        })
    }

    pub fn num_bands(&self) -> usize {
        self.split_points.len().saturating_sub(1)
    }

    /// Coefficient count the partition covers.
    pub fn len(&self) -> usize {
        self.split_points.last().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn band_range(&self, band: usize) -> std::ops::Range<usize> {
        self.split_points[band]..self.split_points[band + 1]
    }

    pub fn validate(&self) -> Result<()> {
        let sp = &self.split_points;
        if sp.len() < 2 {
            return Err(Error::Partition("need at least one band".into()));
        }
        if sp[0] != 0 {
            return Err(Error::Partition(format!("partition starts at {} instead of 0", sp[0])));
        }
        if let Some(w) = sp.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Partition(format!(
                "split points {} then {} leave an empty or overlapping band",
                w[0], w[1]
            )));
        }
        if self.weights.len() != self.num_bands() {
            return Err(Error::DimensionMismatch {
                context: "band weights",
                expected: self.num_bands(),
                actual: self.weights.len(),
            });
        }
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidConfig("band weights must lie in [0, 1]".into()));
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(Error::InvalidConfig(format!("b must be positive, got {}", self.b)));
        }
        if self.phi >= self.len() {
            return Err(Error::InvalidConfig(format!(
                "phi = {} must be below the coefficient count {}",
                self.phi,
                self.len()
            )));
        }
        if !self.floor.is_finite() || self.floor < 0.0 {
            return Err(Error::InvalidConfig("floor must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn validate_for(&self, len: usize) -> Result<()> {
        self.validate()?;
        if self.len() != len {
            return Err(Error::Partition(format!(
                "bands cover {} coefficients but the signal has {len}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn is_low_band(&self, band: usize) -> bool {
        self.split_points[band + 1] <= self.phi
    }

    fn unclamped(&self, band: usize) -> f64 {
        let w = self.weights[band];
        let i = band as f64;
        if self.is_low_band(band) {
            1.0 + w * (1.0 - i / self.b)
        } else {
            1.0 - w * (1.0 - (i - self.b) / self.b)
        }
    }

    /// `∂g/∂w` for one band; zero where the floor clamp is active.
    pub fn scaling_derivative(&self, band: usize) -> f64 {
        match self.mode {
            EnhancementMode::LearnableOnly => 1.0,
            EnhancementMode::Piecewise => {
                if self.unclamped(band) < self.floor {
                    return 0.0;
                }
                let i = band as f64;
                if self.is_low_band(band) {
                    1.0 - i / self.b
                } else {
                    -(1.0 - (i - self.b) / self.b)
                }
            }
        }
    }

    /// `g` expanded to one factor per coefficient.
    pub fn coefficient_scales(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for band in 0..self.num_bands() {
            let g = scaling_factor(self, band);
            out.extend(std::iter::repeat_n(g, self.band_range(band).len()));
        }
        out
    }
}

/// Scaling `g` applied to every coefficient of `band`.
pub fn scaling_factor(config: &EnhancementConfig, band: usize) -> f64 {
    match config.mode {
        EnhancementMode::LearnableOnly => config.weights[band],
        EnhancementMode::Piecewise => config.unclamped(band).max(config.floor),
    }
}

/// Multiplies every coefficient by its band's `g`.
pub fn enhance(spec: &Spectrum, config: &EnhancementConfig) -> Result<Spectrum> {
    config.validate_for(spec.frames)?;
    let scales = config.coefficient_scales();
    let mut coeffs = spec.coeffs.clone();
    for traj in coeffs.chunks_exact_mut(spec.frames) {
        for (c, g) in traj.iter_mut().zip(&scales) {
            *c *= g;
        }
    }
    Spectrum::new(spec.joints, spec.coords, spec.frames, coeffs)
}

/// `idct(enhance(dct_forward(seq)))`.
pub fn enhance_sequence(seq: &MotionSequence, config: &EnhancementConfig) -> Result<MotionSequence> {
    config.validate_for(seq.frames)?;
    let basis = DctBasis::new(seq.frames)?;
    let spec = basis.forward_sequence(seq)?;
    basis.inverse_spectrum(&enhance(&spec, config)?)
}

/// The same band scaling applied along the axis of a plain feature vector.
pub fn enhance_vector(v: &[f64], config: &EnhancementConfig) -> Result<Vec<f64>> {
    config.validate_for(v.len())?;
    ensure_finite(v, "feature vector")?;
    let basis = DctBasis::new(v.len())?;
    let mut coeffs = basis.forward(v)?;
    for (c, g) in coeffs.iter_mut().zip(config.coefficient_scales()) {
        *c *= g;
    }
    basis.inverse(&coeffs)
}

/// `Σ_i g(i)² C_i²`, the energy the enhanced signal must carry.
pub fn redistributed_energy(spec: &Spectrum, config: &EnhancementConfig) -> Result<f64> {
    config.validate_for(spec.frames)?;
    let scales = config.coefficient_scales();
    Ok(spec
        .trajectories()
        .flat_map(|t| t.iter().zip(&scales).map(|(c, g)| g * g * c * c))
        .sum())
}

/// Maps an unconstrained parameter into `[0, 1]`.
pub fn squash_weight(raw: f64) -> f64 {
    sigmoid(raw)
}

/// `d squash / d raw` expressed through the squashed value.
pub fn squash_derivative(weight: f64) -> f64 {
    weight * (1.0 - weight)
}
