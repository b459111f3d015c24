//! Error metrics, dataset loaders, pair generation and result summaries.

mod kitti;
mod pairs;
mod report;

pub use kitti::{
    build_pairs, gaze_compatible, kitti_image_path, kitti_paths, load_kitti_sequence,
    yaw_pitch_roll, FramePose, PairRecord, GAZE_LIMIT_DEG,
};
pub use pairs::{load_pair_dataset, median_scale_change, PairAnnotation, CORRESPONDENCE_COUNT};
pub use report::{mean_log_ste, write_records_csv, CSV_HEADER};

use std::path::PathBuf;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{Estimate, Homography, Point2, RelativePose, UnitQuaternion};
use crate::matching::MatchMethod;

/// Symmetric transfer error assigned to a failed localization.
pub const STE_MAX: f64 = 15_833_861_380.8;

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("translational error undefined when both translations are zero")]
    BothZero,
    #[error("homography is not invertible")]
    SingularHomography,
    #[error("homography maps an annotated point to infinity")]
    PointAtInfinity,
    #[error("two far-image points coincide, so a scale ratio is undefined")]
    DuplicateFarPoints,
    #[error("at least two correspondences are required")]
    TooFewCorrespondences,
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("missing image {}", .0.display())]
    MissingImage(PathBuf),
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("log curve fit needs at least two distinct x values")]
    DegenerateX,
    #[error("log curve fit needs x > 0, got {0}")]
    NonPositiveX(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

impl EvaluationError {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        EvaluationError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

/// `|t_g - t_e| / (|t_g| + |t_e|)`, in `[0, 1]`.
pub fn translational_error(t_g: &Vector3<f64>, t_e: &Vector3<f64>) -> Result<f64, EvaluationError> {
    let denom = t_g.norm() + t_e.norm();
    if denom == 0.0 {
        return Err(EvaluationError::BothZero);
    }
    Ok(((t_g - t_e).norm() / denom).clamp(0.0, 1.0))
}

/// `1 - |q_g . q_e|`, in `[0, 1]` and blind to quaternion sign.
///
/// Evaluated as `min(|q_g - q_e|^2, |q_g + q_e|^2) / 2`, which is equal for
/// unit quaternions and is exactly zero for `q_e = -q_g`.
pub fn rotational_error(q_g: &UnitQuaternion, q_e: &UnitQuaternion) -> f64 {
    let g = [q_g.w, q_g.x, q_g.y, q_g.z];
    let e = [q_e.w, q_e.x, q_e.y, q_e.z];
    let minus: f64 = g.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum();
    let plus: f64 = g.iter().zip(&e).map(|(a, b)| (a + b) * (a + b)).sum();
    (minus.min(plus) / 2.0).clamp(0.0, 1.0)
}

/// Sum over correspondences of `|far - H near| + |near - H^-1 far|`.
pub fn symmetric_transfer_error_points(
    h: &Homography,
    correspondences: &[(Point2, Point2)],
) -> Result<f64, EvaluationError> {
    let inv = h.inverse().map_err(|_| EvaluationError::SingularHomography)?;
    let mut total = 0.0;
    for (near, far) in correspondences {
        let fwd = h.apply(near).map_err(|_| EvaluationError::PointAtInfinity)?;
        let bwd = inv.apply(far).map_err(|_| EvaluationError::PointAtInfinity)?;
        total += far.distance(&fwd) + near.distance(&bwd);
    }
    Ok(total)
}

pub fn symmetric_transfer_error(
    h: &Homography,
    annotation: &PairAnnotation,
) -> Result<f64, EvaluationError> {
    symmetric_transfer_error_points(h, annotation.correspondences())
}

/// Natural log of the STE floored at 1; a failure (`None`) scores `ln(STE_MAX)`.
pub fn log_ste(ste: Option<f64>) -> f64 {
    ste.unwrap_or(STE_MAX).max(1.0).ln()
}

/// Translational error on directions only. Monocular estimates carry no
/// scale, so both vectors are reduced to unit length first; a zero ground
/// truth is kept as is.
pub fn direction_error(t_g: &Vector3<f64>, t_e: &Vector3<f64>) -> Result<f64, EvaluationError> {
    let unit = |v: &Vector3<f64>| {
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            *v
        }
    };
    translational_error(&unit(t_g), &unit(t_e))
}

/// One localization attempt and its errors. KITTI records carry a
/// [`PairRecord`] and `t_err`/`r_err`; pair-dataset records carry `ste`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sequence: String,
    pub near: String,
    pub far: String,
    pub pair: Option<PairRecord>,
    pub method: MatchMethod,
    pub estimate: Option<Estimate>,
    pub t_err: Option<f64>,
    pub r_err: Option<f64>,
    pub ste: Option<f64>,
    pub failed: bool,
    pub match_count: usize,
}

impl EvalRecord {
    /// Scores a relative-pose estimate; `None` is a failure and scores 1 on both metrics.
    pub fn kitti(
        sequence: &str,
        pair: &PairRecord,
        method: MatchMethod,
        estimate: Option<RelativePose>,
        match_count: usize,
    ) -> Self {
        let gt = &pair.ground_truth;
        let scored = estimate.and_then(|e| {
            let t = direction_error(&gt.translation_vector(), &e.translation_vector()).ok()?;
            Some((e, t, rotational_error(&gt.rotation, &e.rotation)))
        });
        let (estimate, t_err, r_err, failed) = match scored {
            Some((e, t, r)) => (Some(Estimate::Pose(e)), t, r, false),
            None => (None, 1.0, 1.0, true),
        };
        Self {
            sequence: sequence.to_string(),
            near: pair.index_near.to_string(),
            far: pair.index_far.to_string(),
            pair: Some(pair.clone()),
            method,
            estimate,
            t_err: Some(t_err),
            r_err: Some(r_err),
            ste: None,
            failed,
            match_count,
        }
    }

    /// Scores a homography against the annotation; `None` or a degenerate
    /// homography is a failure and scores `STE_MAX`.
    pub fn scene(
        annotation: &PairAnnotation,
        method: MatchMethod,
        estimate: Option<Homography>,
        match_count: usize,
    ) -> Self {
        let scored = estimate.and_then(|h| {
            symmetric_transfer_error(&h, annotation).ok().map(|ste| (h, ste))
        });
        let (estimate, ste, failed) = match scored {
            Some((h, ste)) => (Some(Estimate::Homography { matrix: h }), ste, false),
            None => (None, STE_MAX, true),
        };
        let name = |p: &std::path::Path| {
            p.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        };
        Self {
            sequence: annotation.scene.clone(),
            near: name(&annotation.near_image),
            far: name(&annotation.far_image),
            pair: None,
            method,
            estimate,
            t_err: None,
            r_err: None,
            ste: Some(ste),
            failed,
            match_count,
        }
    }

    pub fn log_ste(&self) -> Option<f64> {
        self.ste.map(|s| log_ste(Some(s)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub gap_j: usize,
    /// Mean ground-truth translation length in metres.
    pub mean_distance: f64,
    pub mean_t_err: f64,
    pub mean_r_err: f64,
    pub failure_rate: f64,
    pub pair_count: usize,
}

/// Groups KITTI records by frame gap, ascending. Means are plain running
/// sums in record order divided by the count; failed records already carry
/// errors of 1. Records without a [`PairRecord`] are ignored.
pub fn summarize_groups(records: &[EvalRecord]) -> Vec<GroupSummary> {
    let mut groups: std::collections::BTreeMap<usize, Vec<&EvalRecord>> = Default::default();
    for r in records {
        if let Some(p) = &r.pair {
            groups.entry(p.gap_j).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|(gap_j, rs)| {
            let n = rs.len() as f64;
            let mut distance = 0.0;
            let mut t = 0.0;
            let mut r = 0.0;
            let mut failures = 0usize;
            for rec in &rs {
                let pair = rec.pair.as_ref().expect("grouped records have pairs");
                distance += pair.ground_truth.translation_vector().norm();
                t += rec.t_err.unwrap_or(1.0);
                r += rec.r_err.unwrap_or(1.0);
                failures += rec.failed as usize;
            }
            GroupSummary {
                gap_j,
                mean_distance: distance / n,
                mean_t_err: t / n,
                mean_r_err: r / n,
                failure_rate: failures as f64 / n,
                pair_count: rs.len(),
            }
        })
        .collect()
}

/// Least-squares `y = a + b ln(x)`, returned as `(a, b)`.
pub fn fit_log_curve(points: &[(f64, f64)]) -> Result<(f64, f64), EvaluationError> {
    if let Some(&(x, _)) = points.iter().find(|(x, _)| x.is_nan() || *x <= 0.0) {
        return Err(EvaluationError::NonPositiveX(x));
    }
    if points.len() < 2 {
        return Err(EvaluationError::DegenerateX);
    }
    let n = points.len() as f64;
    let mean_u = points.iter().map(|(x, _)| x.ln()).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut suu = 0.0;
    let mut suy = 0.0;
    for (x, y) in points {
        let du = x.ln() - mean_u;
        suu += du * du;
        suy += du * (y - mean_y);
    }
    if suu <= 0.0 {
        return Err(EvaluationError::DegenerateX);
    }
    let b = suy / suu;
    Ok((mean_y - b * mean_u, b))
}
