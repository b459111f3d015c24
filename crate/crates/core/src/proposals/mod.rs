//! Class-agnostic object proposals.

mod segmentation;
mod selective_search;

pub use segmentation::{graph_segment, LabelMap};
pub use selective_search::{group_regions, selective_search, Hierarchy};

use serde::{Deserialize, Serialize};

use crate::descriptors::ObjectDescriptor;
use crate::geometry::BBox;
use crate::image::RgbImage;

/// Smallest retained proposal area in square pixels.
pub const MIN_PROPOSAL_AREA: f64 = 200.0;
/// Largest retained width/height ratio (and its reciprocal as the smallest).
pub const MAX_ASPECT_RATIO: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProposalError {
    #[error("image {width}x{height} is smaller than the 32x32 minimum")]
    ImageTooSmall { width: usize, height: usize },
    #[error("bounding box {bbox:?} lies outside the {width}x{height} image")]
    BBoxOutOfBounds {
        bbox: BBox,
        width: usize,
        height: usize,
    },
    #[error("crop resolution must be positive")]
    ZeroResolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    /// Merging constant; larger values favour larger regions.
    pub k: f64,
    pub smoothing_sigma: f64,
    /// Minimum region size in pixels.
    pub min_region: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            k: 300.0,
            smoothing_sigma: 0.8,
            min_region: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProposal {
    pub bbox: BBox,
    pub descriptor: Option<ObjectDescriptor>,
}

impl ObjectProposal {
    pub fn new(bbox: BBox) -> Self {
        Self {
            bbox,
            descriptor: None,
        }
    }
}

/// Keeps proposals with area of at least 200 px² and aspect ratio within
/// `[1/3, 3]`, in input order.
pub fn filter_proposals(proposals: Vec<ObjectProposal>) -> Vec<ObjectProposal> {
    proposals
        .into_iter()
        .filter(|p| {
            let aspect = p.bbox.aspect_ratio();
            p.bbox.area() >= MIN_PROPOSAL_AREA
                && (1.0 / MAX_ASPECT_RATIO..=MAX_ASPECT_RATIO).contains(&aspect)
        })
        .collect()
}

/// Bilinearly resamples the region under `bbox` to a square of side `resolution`.
pub fn extract_crop(
    image: &RgbImage,
    bbox: &BBox,
    resolution: usize,
) -> Result<RgbImage, ProposalError> {
    if resolution == 0 {
        return Err(ProposalError::ZeroResolution);
    }
    if !bbox.is_within(image.width() as f64, image.height() as f64) {
        return Err(ProposalError::BBoxOutOfBounds {
            bbox: *bbox,
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(image.resample_region(bbox, resolution, resolution))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(w: f64, h: f64) -> ObjectProposal {
        ObjectProposal::new(BBox::new(0.0, 0.0, w, h).unwrap())
    }

    #[test]
    fn filter_rules() {
        let kept = filter_proposals(vec![
            boxed(10.0, 10.0),
            boxed(100.0, 20.0),
            boxed(20.0, 20.0),
            boxed(20.0, 100.0),
            boxed(30.0, 10.0),
            boxed(20.0, 10.0),
        ]);
        let dims: Vec<(f64, f64)> = kept.iter().map(|p| (p.bbox.width(), p.bbox.height())).collect();
        assert_eq!(dims, vec![(20.0, 20.0), (30.0, 10.0), (20.0, 10.0)]);
    }

    #[test]
    fn crop_identity() {
        let img = RgbImage::from_fn(100, 90, |x, y| [x as f32 / 100.0, y as f32 / 90.0, 0.3]);
        let bbox = BBox::new(10.0, 20.0, 74.0, 84.0).unwrap();
        let crop = extract_crop(&img, &bbox, 64).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(crop.get(x, y), img.get(x + 10, y + 20));
            }
        }
    }

    #[test]
    fn crop_constant() {
        let img = RgbImage::filled(50, 50, [0.1, 0.6, 0.9]);
        let bbox = BBox::new(3.5, 7.25, 41.0, 20.0).unwrap();
        for res in [1, 7, 32, 224] {
            let crop = extract_crop(&img, &bbox, res).unwrap();
            assert!(crop.pixels().iter().all(|p| {
                (p[0] - 0.1).abs() < 1e-6 && (p[1] - 0.6).abs() < 1e-6 && (p[2] - 0.9).abs() < 1e-6
            }));
        }
    }

    #[test]
    fn crop_checkerboard_average() {
        let img = RgbImage::from_fn(2, 2, |x, y| {
            let v = if (x + y) % 2 == 0 { 0.0 } else { 100.0 };
            [v, v, v]
        });
        let crop = extract_crop(&img, &img.full_bbox(), 1).unwrap();
        assert_eq!(crop.get(0, 0), [50.0, 50.0, 50.0]);
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = RgbImage::filled(20, 20, [0.0; 3]);
        let bbox = BBox::new(5.0, 5.0, 21.0, 10.0).unwrap();
        assert!(matches!(
            extract_crop(&img, &bbox, 8),
            Err(ProposalError::BBoxOutOfBounds { .. })
        ));
    }
}
