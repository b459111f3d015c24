//! Two-image localization: proposals, descriptors, matching and robust
//! estimation chained together.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorBackend, DescriptorError};
use crate::geometry::{
    estimate_essential_ransac, estimate_homography_ransac, recover_pose, CameraIntrinsics,
    Estimate, GeometryError, PointMatch, RansacConfig,
};
use crate::image::RgbImage;
use crate::matching::{
    global_sift_matches, match_objects, object_center_matches, region_guided_sift_matches,
    MatchError, MatchMethod, ObjectMatch,
};
use crate::proposals::{
    extract_crop, filter_proposals, selective_search, ObjectProposal, ProposalError,
    SegmentationParams,
};
use crate::sift::{detect_and_describe, SiftError, SiftFeature, SiftParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Homography,
    Essential,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Homography => "homography",
            EstimatorKind::Essential => "essential",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "homography" => Ok(EstimatorKind::Homography),
            "essential" => Ok(EstimatorKind::Essential),
            _ => Err(format!("unknown estimator `{s}` (expected homography or essential)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: MatchMethod,
    pub estimator: EstimatorKind,
    pub ransac: RansacConfig,
    pub sift: SiftParams,
    pub segmentation: SegmentationParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: MatchMethod::Combined,
            estimator: EstimatorKind::Homography,
            ransac: RansacConfig::default(),
            sift: SiftParams::default(),
            segmentation: SegmentationParams::default(),
        }
    }
}

/// Problems with the configuration or the descriptor backend. Localization
/// failures are reported in [`Localization`] instead.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("the essential-matrix estimator needs camera intrinsics")]
    MissingIntrinsics,
    #[error("invalid RANSAC configuration: {0}")]
    Ransac(GeometryError),
    #[error("invalid SIFT configuration: {0}")]
    Sift(SiftError),
    #[error("descriptor backend failed: {0}")]
    Descriptor(#[from] DescriptorError),
    #[error("object matching failed: {0}")]
    Matching(#[from] MatchError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub proposals: f64,
    pub descriptors: f64,
    pub sift: f64,
    pub matching: f64,
    pub estimation: f64,
    pub total: f64,
}

/// Outcome of localizing image `b` relative to image `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub estimate: Option<Estimate>,
    pub inlier_count: usize,
    pub object_match_count: usize,
    pub point_match_count: usize,
    pub failed: bool,
    pub failure_reason: Option<String>,
    pub timings_ms: Timings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn propose(
    image: &RgbImage,
    params: &SegmentationParams,
) -> Result<Vec<ObjectProposal>, ProposalError> {
    selective_search(image, params).map(filter_proposals)
}

fn describe_all(
    image: &RgbImage,
    proposals: &mut [ObjectProposal],
    backend: &mut dyn DescriptorBackend,
) -> Result<(), DescriptorError> {
    let res = backend.crop_resolution();
    for p in proposals.iter_mut() {
        let crop = extract_crop(image, &p.bbox, res).expect("proposals lie inside their image");
        p.descriptor = Some(backend.describe(&crop)?);
    }
    Ok(())
}

fn sift(image: &RgbImage, params: &SiftParams) -> Result<Vec<SiftFeature>, SiftError> {
    detect_and_describe(&image.to_luma(), params)
}

struct Partial {
    timings: Timings,
    object_match_count: usize,
    point_match_count: usize,
}

impl Partial {
    fn fail(self, reason: impl fmt::Display, start: Instant) -> Localization {
        let mut timings_ms = self.timings;
        timings_ms.total = ms(start);
        Localization {
            estimate: None,
            inlier_count: 0,
            object_match_count: self.object_match_count,
            point_match_count: self.point_match_count,
            failed: true,
            failure_reason: Some(reason.to_string()),
            timings_ms,
        }
    }
}

/// Localizes `image_b` relative to `image_a`. The homography maps points of
/// `a` into `b`; the pose maps camera-`a` coordinates into camera `b`.
pub fn localize_pair(
    config: &PipelineConfig,
    backend: &mut dyn DescriptorBackend,
    image_a: &RgbImage,
    image_b: &RgbImage,
    intrinsics: Option<&CameraIntrinsics>,
) -> Result<Localization, PipelineError> {
    config.ransac.validate().map_err(PipelineError::Ransac)?;
    config.sift.validate().map_err(PipelineError::Sift)?;
    let k = match config.estimator {
        EstimatorKind::Essential => Some(intrinsics.ok_or(PipelineError::MissingIntrinsics)?),
        EstimatorKind::Homography => None,
    };

    let start = Instant::now();
    let mut partial = Partial {
        timings: Timings::default(),
        object_match_count: 0,
        point_match_count: 0,
    };

    let mut objects: Option<(Vec<ObjectProposal>, Vec<ObjectProposal>, Vec<ObjectMatch>)> = None;
    if config.method.uses_objects() {
        let t = Instant::now();
        let (pa, pb) = rayon::join(
            || propose(image_a, &config.segmentation),
            || propose(image_b, &config.segmentation),
        );
        partial.timings.proposals = ms(t);
        let (mut pa, mut pb) = match (pa, pb) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Ok(partial.fail(e, start)),
        };

        let t = Instant::now();
        describe_all(image_a, &mut pa, backend)?;
        describe_all(image_b, &mut pb, backend)?;
        partial.timings.descriptors = ms(t);

        let t = Instant::now();
        let om = match_objects(&pa, &pb)?;
        partial.timings.matching += ms(t);
        partial.object_match_count = om.len();
        objects = Some((pa, pb, om));
    }

    let mut features: Option<(Vec<SiftFeature>, Vec<SiftFeature>)> = None;
    if config.method.uses_sift() {
        let t = Instant::now();
        let (fa, fb) = rayon::join(
            || sift(image_a, &config.sift),
            || sift(image_b, &config.sift),
        );
        partial.timings.sift = ms(t);
        match (fa, fb) {
            (Ok(a), Ok(b)) => features = Some((a, b)),
            (Err(e), _) | (_, Err(e)) => return Ok(partial.fail(e, start)),
        }
    }

    let t = Instant::now();
    let matches: Vec<PointMatch> = match (config.method, &objects, &features) {
        (MatchMethod::SiftOnly, _, Some((fa, fb))) => global_sift_matches(fa, fb),
        (MatchMethod::ObjectsOnly, Some((pa, pb, om)), _) => object_center_matches(om, pa, pb),
        (MatchMethod::Combined, Some((pa, pb, om)), Some((fa, fb))) => {
            region_guided_sift_matches(om, pa, pb, fa, fb)
        }
        _ => unreachable!("inputs follow from the method"),
    };
    partial.timings.matching += ms(t);
    partial.point_match_count = matches.len();

    let t = Instant::now();
    let outcome = match k {
        None => estimate_homography_ransac(&matches, &config.ransac)
            .map(|(h, mask)| (Estimate::Homography { matrix: h }, mask)),
        Some(k) => estimate_essential_ransac(&matches, k, &config.ransac).and_then(|(e, mask)| {
            let inliers: Vec<PointMatch> = matches
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(p, _)| *p)
                .collect();
            recover_pose(&e, &inliers, k).map(|pose| (Estimate::Pose(pose), mask))
        }),
    };
    partial.timings.estimation = ms(t);
    match outcome {
        Ok((estimate, mask)) => {
            let mut timings_ms = partial.timings;
            timings_ms.total = ms(start);
            Ok(Localization {
                estimate: Some(estimate),
                inlier_count: mask.iter().filter(|&&m| m).count(),
                object_match_count: partial.object_match_count,
                point_match_count: partial.point_match_count,
                failed: false,
                failure_reason: None,
                timings_ms,
            })
        }
        Err(e) => Ok(partial.fail(e, start)),
    }
}
