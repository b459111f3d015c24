use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::EvaluationError;
use crate::geometry::{CameraIntrinsics, RelativePose, UnitQuaternion};

/// Largest per-axis relative rotation, in degrees, for two frames to form a pair.
pub const GAZE_LIMIT_DEG: f64 = 45.0;

/// Camera-to-world pose of one frame: `x_world = R x_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub rotation: UnitQuaternion,
    /// World-frame position in metres.
    pub translation: [f64; 3],
}

impl FramePose {
    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation: [translation.x, translation.y, translation.z],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix()
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Pose of `far` relative to `self`, mapping points from this camera's
    /// frame into `far`'s frame.
    pub fn relative_to(&self, far: &FramePose) -> RelativePose {
        let r_far_t = far.rotation_matrix().transpose();
        let r = r_far_t * self.rotation_matrix();
        let t = r_far_t * (self.translation_vector() - far.translation_vector());
        RelativePose::new(UnitQuaternion::from_rotation_matrix(&r), t)
    }
}

/// A near/far frame pair from a sequence. `gap_j` counts subsampled frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index_near: usize,
    pub index_far: usize,
    pub gap_j: usize,
    pub ground_truth: RelativePose,
}

/// Intrinsic Z-Y-X angles `(yaw, pitch, roll)` in radians of `r = Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn yaw_pitch_roll(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    (yaw, pitch, roll)
}

/// True when every Z-Y-X angle of the rotation between the two cameras is
/// within `limit_deg`.
pub fn gaze_compatible(pose_a: &FramePose, pose_b: &FramePose, limit_deg: f64) -> bool {
    let rel = pose_a.rotation_matrix().transpose() * pose_b.rotation_matrix();
    let (y, p, r) = yaw_pitch_roll(&rel);
    let limit = limit_deg.to_radians() + 1e-12;
    y.abs() <= limit && p.abs() <= limit && r.abs() <= limit
}

fn read(path: &Path) -> Result<String, EvaluationError> {
    fs::read_to_string(path).map_err(|source| EvaluationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_reals(path: &Path, line_no: usize, fields: &str) -> Result<[f64; 12], EvaluationError> {
    let values: Vec<f64> = fields
        .split_whitespace()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| EvaluationError::parse(path, line_no, format!("`{f}` is not a number")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != 12 {
        return Err(EvaluationError::parse(
            path,
            line_no,
            format!("expected 12 values, found {}", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvaluationError::parse(path, line_no, "non-finite value"));
    }
    Ok(values.try_into().expect("length checked"))
}

fn parse_pose(path: &Path, line_no: usize, line: &str) -> Result<FramePose, EvaluationError> {
    let v = parse_reals(path, line_no, line)?;
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let t = Vector3::new(v[3], v[7], v[11]);
    let deviation = (r.transpose() * r - Matrix3::identity()).abs().max();
    if deviation > 1e-3 {
        return Err(EvaluationError::parse(
            path,
            line_no,
            format!("rotation is not orthonormal (deviation {deviation:.2e})"),
        ));
    }
    if r.determinant() <= 0.0 {
        return Err(EvaluationError::parse(path, line_no, "rotation has negative determinant"));
    }
    Ok(FramePose::new(UnitQuaternion::from_rotation_matrix(&r), t))
}

/// Reads a KITTI odometry pose file (one row-major 3x4 `[R|t]` per line) and
/// the left colour camera intrinsics from the `P2:` row of `calib.txt`.
pub fn load_kitti_sequence(
    pose_file: &Path,
    calib_file: &Path,
) -> Result<(Vec<FramePose>, CameraIntrinsics), EvaluationError> {
    let poses = read(pose_file)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_pose(pose_file, i + 1, l))
        .collect::<Result<Vec<_>, _>>()?;

    let calib = read(calib_file)?;
    let (line_no, p2) = calib
        .lines()
        .enumerate()
        .find_map(|(i, l)| l.trim_start().strip_prefix("P2:").map(|rest| (i + 1, rest)))
        .ok_or_else(|| EvaluationError::parse(calib_file, 0, "no `P2:` line"))?;
    let p = parse_reals(calib_file, line_no, p2)?;
    let k = CameraIntrinsics::new(p[0], p[5], p[2], p[6])
        .map_err(|e| EvaluationError::parse(calib_file, line_no, e.to_string()))?;
    Ok((poses, k))
}

/// `(poses/<seq>.txt, sequences/<seq>/calib.txt, sequences/<seq>/image_2)` under `root`.
pub fn kitti_paths(root: &Path, sequence: &str) -> (PathBuf, PathBuf, PathBuf) {
    let seq_dir = root.join("sequences").join(sequence);
    (
        root.join("poses").join(format!("{sequence}.txt")),
        seq_dir.join("calib.txt"),
        seq_dir.join("image_2"),
    )
}

pub fn kitti_image_path(root: &Path, sequence: &str, frame: usize) -> PathBuf {
    kitti_paths(root, sequence).2.join(format!("{frame:06}.png"))
}

/// Keeps every `subsample`-th frame and pairs each kept frame with the next
/// `max_gap` kept frames, dropping pairs whose relative rotation exceeds
/// the gaze limit. Output is ordered by near frame, then gap.
pub fn build_pairs(
    poses: &[FramePose],
    subsample: usize,
    max_gap: usize,
) -> Result<Vec<PairRecord>, EvaluationError> {
    if subsample == 0 {
        return Err(EvaluationError::InvalidParameter("subsample must be at least 1"));
    }
    if max_gap == 0 {
        return Err(EvaluationError::InvalidParameter("max_gap must be at least 1"));
    }
    let kept: Vec<usize> = (0..poses.len()).step_by(subsample).collect();
    let mut pairs = Vec::new();
    for (k, &near) in kept.iter().enumerate() {
        for gap_j in 1..=max_gap {
            let Some(&far) = kept.get(k + gap_j) else {
                break;
            };
            if gaze_compatible(&poses[near], &poses[far], GAZE_LIMIT_DEG) {
                pairs.push(PairRecord {
                    index_near: near,
                    index_far: far,
                    gap_j,
                    ground_truth: poses[near].relative_to(&poses[far]),
                });
            }
        }
    }
    Ok(pairs)
}
