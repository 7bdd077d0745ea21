//! Domain data model shared by matching, transfer, metrics and I/O.
//!
//! Every grid is linearized row-major: pixel `(x, y)` has linear index
//! `y * width + x`. Correspondence entries and protocol payloads use the same
//! indexing.

use crate::error::{dims_mismatch, Error, Result};

/// Dense `height x width x channels` feature tensor, row-major `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    timestep: Option<u32>,
    layer: Option<u32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: expected,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData("feature map"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            timestep: None,
            layer: None,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            timestep: None,
            layer: None,
        }
    }

    /// Tags the map with the denoising step and up-block layer it was tapped at.
    pub fn with_tags(mut self, timestep: Option<u32>, layer: Option<u32>) -> Self {
        self.timestep = timestep;
        self.layer = layer;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn timestep(&self) -> Option<u32> {
        self.timestep
    }

    pub fn layer(&self) -> Option<u32> {
        self.layer
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Feature vector of the pixel with linear index `idx`.
    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    #[inline]
    pub(crate) fn pixel_mut(&mut self, idx: usize) -> &mut [f32] {
        &mut self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteData("feature map"))
        }
    }
}

/// Checks that two maps can be matched against each other: equal channel
/// counts and finite data. Spatial sizes may differ.
pub fn validate_pair(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.channels != b.channels {
        return Err(Error::ChannelMismatch {
            left: a.channels,
            right: b.channels,
        });
    }
    a.check_finite()?;
    b.check_finite()
}

/// Binary per-pixel object mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl ObjectMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::LengthMismatch {
                left: bits.len(),
                right: height * width,
            });
        }
        Ok(Self { height, width, bits })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Linear indices of set pixels, ascending.
    pub fn indices(&self) -> Vec<u32> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub(crate) fn check_dims(&self, what: &str, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(dims_mismatch(what, self.dims(), dims));
        }
        Ok(())
    }
}

/// Per-target-pixel matched reference index; `None` is UNMATCHED.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceMap {
    height: usize,
    width: usize,
    entries: Vec<Option<u32>>,
}

impl CorrespondenceMap {
    /// On-disk and on-wire value for an unmatched pixel.
    pub const UNMATCHED: u32 = u32::MAX;

    pub fn new(height: usize, width: usize, entries: Vec<Option<u32>>) -> Result<Self> {
        if entries.len() != height * width {
            return Err(Error::LengthMismatch {
                left: entries.len(),
                right: height * width,
            });
        }
        Ok(Self { height, width, entries })
    }

    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            entries: (0..(height * width) as u32).map(Some).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn entries(&self) -> &[Option<u32>] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, q: usize) -> Option<u32> {
        self.entries[q]
    }

    /// Entries with UNMATCHED encoded as [`Self::UNMATCHED`].
    pub fn to_raw(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.unwrap_or(Self::UNMATCHED)).collect()
    }

    pub fn from_raw(height: usize, width: usize, raw: &[u32]) -> Result<Self> {
        let entries = raw.iter().map(|&v| (v != Self::UNMATCHED).then_some(v)).collect();
        Self::new(height, width, entries)
    }

    /// Fails if any matched index falls outside a reference grid of `ref_pixels`.
    pub fn check_indices(&self, ref_pixels: usize) -> Result<()> {
        for p in self.entries.iter().flatten() {
            if *p as usize >= ref_pixels {
                return Err(Error::IndexOutOfRange {
                    index: *p as usize,
                    len: ref_pixels,
                });
            }
        }
        Ok(())
    }
}

/// Per-pixel displacement field with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    height: usize,
    width: usize,
    displacement: Vec<[f32; 2]>,
    validity: Vec<bool>,
}

impl FlowMap {
    pub fn new(height: usize, width: usize, displacement: Vec<[f32; 2]>, validity: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if displacement.len() != n || validity.len() != n {
            return Err(Error::LengthMismatch {
                left: displacement.len().max(validity.len()),
                right: n,
            });
        }
        let bad = displacement
            .iter()
            .zip(&validity)
            .any(|(d, v)| *v && !(d[0].is_finite() && d[1].is_finite()));
        if bad {
            return Err(Error::NonFiniteData("flow displacement"));
        }
        Ok(Self {
            height,
            width,
            displacement,
            validity,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn displacement(&self) -> &[[f32; 2]] {
        &self.displacement
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: height * width,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData("depth map"));
        }
        Ok(Self { height, width, values })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Rescales values to `[0, 1]` by the map's own min and max. A constant
    /// map becomes all zeros.
    pub fn min_max_normalized(&self) -> DepthMap {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let values = if range > 0.0 {
            self.values.iter().map(|v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        DepthMap {
            height: self.height,
            width: self.width,
            values,
        }
    }
}

/// Ground-truth or detected keypoints of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    points: Vec<[f64; 2]>,
    visibility: Vec<u8>,
    scale: f64,
    kappas: Vec<f64>,
}

impl KeypointSet {
    pub fn new(points: Vec<[f64; 2]>, visibility: Vec<u8>, scale: f64, kappas: Vec<f64>) -> Result<Self> {
        if points.len() != visibility.len() || points.len() != kappas.len() {
            return Err(Error::InvariantViolation(format!(
                "keypoint arrays differ in length: {} points, {} visibilities, {} kappas",
                points.len(),
                visibility.len(),
                kappas.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvariantViolation(format!(
                "object scale must be positive, got {scale}"
            )));
        }
        if let Some(k) = kappas.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::InvariantViolation(format!("kappa must be positive, got {k}")));
        }
        if let Some(v) = visibility.iter().find(|v| **v > 2) {
            return Err(Error::InvariantViolation(format!(
                "visibility must be 0, 1 or 2, got {v}"
            )));
        }
        Ok(Self {
            points,
            visibility,
            scale,
            kappas,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn visibility(&self) -> &[u8] {
        &self.visibility
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }
}

/// Externally produced image embedding (e.g. CLIP).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData("embedding"));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::InvariantViolation("embedding has zero norm".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: height * width * 3,
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn black(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> [u8; 3] {
        let d = &self.data[idx * 3..idx * 3 + 3];
        [d[0], d[1], d[2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, idx: usize, rgb: [u8; 3]) {
        self.data[idx * 3..idx * 3 + 3].copy_from_slice(&rgb);
    }
}
