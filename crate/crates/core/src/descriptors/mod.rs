//! Object descriptors: cosine distance, the deterministic fallback descriptor,
//! and the client side of the neural sidecar protocol.

mod sidecar;

pub use sidecar::{
    resolve_sidecar_command, Activation, Handshake, SidecarBackend, SidecarClient, SidecarError,
    SidecarProcess, SIDECAR_ENV,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::image::RgbImage;

/// Side length the fallback descriptor resamples crops to.
pub const FALLBACK_SIDE: usize = 32;
pub const FALLBACK_LEN: usize = FALLBACK_SIDE * FALLBACK_SIDE * 3;

#[derive(Debug, thiserror::Error)]
pub enum DescriptorError {
    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,
    #[error("descriptor lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("descriptors come from different layers or resolutions: {0} vs {1}")]
    KindMismatch(DescriptorKind, DescriptorKind),
    #[error("descriptor must be non-empty with finite values")]
    InvalidValues,
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("unsupported input resolution {0} (expected 224, 128, 64 or 32)")]
    InvalidResolution(u32),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

/// ResNet-50 stage outputs usable as object descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerId {
    Pool1,
    Res2c,
    Res3d,
    Res4f,
    Res5c,
    Pool5,
}

impl LayerId {
    pub const ALL: [LayerId; 6] = [
        LayerId::Pool1,
        LayerId::Res2c,
        LayerId::Res3d,
        LayerId::Res4f,
        LayerId::Res5c,
        LayerId::Pool5,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LayerId::Pool1 => "pool1",
            LayerId::Res2c => "res2c",
            LayerId::Res3d => "res3d",
            LayerId::Res4f => "res4f",
            LayerId::Res5c => "res5c",
            LayerId::Pool5 => "pool5",
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerId {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerId::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| DescriptorError::UnknownLayer(s.to_string()))
    }
}

/// Square network input side: one of 224, 128, 64, 32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct InputResolution(u32);

impl InputResolution {
    pub const SUPPORTED: [u32; 4] = [224, 128, 64, 32];

    pub fn new(side: u32) -> Result<Self, DescriptorError> {
        if Self::SUPPORTED.contains(&side) {
            Ok(Self(side))
        } else {
            Err(DescriptorError::InvalidResolution(side))
        }
    }

    pub fn side(&self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for InputResolution {
    type Error = DescriptorError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<InputResolution> for u32 {
    fn from(r: InputResolution) -> u32 {
        r.0
    }
}

impl fmt::Display for InputResolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Activation tensor shape `(channels, height, width)` of a torchvision
/// ResNet-50 stage for a square input of the given side.
///
/// Every stride-2 stage maps a side `n` to `ceil(n / 2)`.
pub fn resnet50_activation_shape(layer: LayerId, side: u32) -> [usize; 3] {
    let half = |n: usize| n.div_ceil(2);
    let conv1 = half(side as usize);
    let pool1 = half(conv1);
    let res3 = half(pool1);
    let res4 = half(res3);
    let res5 = half(res4);
    match layer {
        LayerId::Pool1 => [64, pool1, pool1],
        LayerId::Res2c => [256, pool1, pool1],
        LayerId::Res3d => [512, res3, res3],
        LayerId::Res4f => [1024, res4, res4],
        LayerId::Res5c => [2048, res5, res5],
        LayerId::Pool5 => [2048, 1, 1],
    }
}

/// Which extractor produced a descriptor. Only descriptors of the same kind
/// are comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum DescriptorKind {
    Fallback,
    Cnn {
        layer: LayerId,
        resolution: InputResolution,
    },
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DescriptorKind::Fallback => f.write_str("fallback"),
            DescriptorKind::Cnn { layer, resolution } => write!(f, "{layer}@{resolution}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDescriptor {
    values: Vec<f32>,
    kind: DescriptorKind,
}

impl ObjectDescriptor {
    pub fn new(values: Vec<f32>, kind: DescriptorKind) -> Result<Self, DescriptorError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::InvalidValues);
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl AsRef<[f32]> for ObjectDescriptor {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

/// `1 - u.v / (|u| |v|)` with 64-bit accumulation, or `None` when either
/// vector has zero norm. The lengths must match.
pub fn cosine_distance_values(u: &[f32], v: &[f32]) -> Option<f64> {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu <= 0.0 || nv <= 0.0 {
        return None;
    }
    Some((1.0 - dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 2.0))
}

pub fn cosine_distance(u: &ObjectDescriptor, v: &ObjectDescriptor) -> Result<f64, DescriptorError> {
    if u.kind != v.kind {
        return Err(DescriptorError::KindMismatch(u.kind, v.kind));
    }
    if u.len() != v.len() {
        return Err(DescriptorError::LengthMismatch(u.len(), v.len()));
    }
    cosine_distance_values(&u.values, &v.values).ok_or(DescriptorError::ZeroVector)
}

/// Converts `f64` values to `f32`, choosing each rounding direction so the
/// running sum of the `f32` values tracks the exact sum.
fn round_preserving_sum(values: &[f64]) -> Vec<f32> {
    let mut drift = 0.0f64;
    values
        .iter()
        .map(|&v| {
            let near = v as f32;
            let alt = if (near as f64) < v {
                near.next_up()
            } else {
                near.next_down()
            };
            let err_near = drift + near as f64 - v;
            let err_alt = drift + alt as f64 - v;
            let pick = if err_alt.abs() < err_near.abs() { alt } else { near };
            drift += pick as f64 - v;
            pick
        })
        .collect()
}

/// Non-neural descriptor: the crop resampled to 32x32, interleaved RGB in
/// row-major order (3072 values in `[0, 1]`), minus its mean.
pub fn describe_fallback(crop: &RgbImage) -> ObjectDescriptor {
    let small = crop.resize(FALLBACK_SIDE, FALLBACK_SIDE);
    let raw: Vec<f64> = small
        .pixels()
        .iter()
        .flat_map(|p| p.iter().map(|&v| v as f64))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    ObjectDescriptor {
        values: round_preserving_sum(&centered),
        kind: DescriptorKind::Fallback,
    }
}

/// Source of object descriptors for proposal crops.
pub trait DescriptorBackend {
    /// Side length crops should be extracted at before `describe`.
    fn crop_resolution(&self) -> usize;

    fn describe(&mut self, crop: &RgbImage) -> Result<ObjectDescriptor, DescriptorError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackBackend;

impl DescriptorBackend for FallbackBackend {
    fn crop_resolution(&self) -> usize {
        FALLBACK_SIDE
    }

    fn describe(&mut self, crop: &RgbImage) -> Result<ObjectDescriptor, DescriptorError> {
        Ok(describe_fallback(crop))
    }
}
