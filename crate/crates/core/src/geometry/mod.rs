//! 2D/3D geometric primitives and robust two-view model estimation.

mod essential;
mod homography;
mod ransac;

pub use essential::{
    eight_point_essential, estimate_essential_ransac, essential_from_pose, recover_pose,
    sampson_distance, EssentialMatrix,
};
pub use homography::{apply_homography, dlt_homography, estimate_homography_ransac, Homography};
pub use ransac::RansacConfig;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point maps to infinity (|w| < 1e-12)")]
    PointAtInfinity,
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("need at least {needed} matches, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("no consensus: best model has {inliers} inliers")]
    NoConsensus { inliers: usize },
    #[error("no decomposition places a strict majority of points in front of both cameras")]
    CheiralityAmbiguity,
    #[error("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned box in continuous pixel coordinates.
///
/// A box covering pixels `x0..=x1` spans `x0 .. x1 + 1`, so the full image
/// is `(0, 0, width, height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let ok = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite())
            && x_max > x_min
            && y_max > y_min;
        if !ok {
            return Err(GeometryError::InvalidBBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Width over height.
    pub fn aspect_ratio(&self) -> f64 {
        self.width() / self.height()
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Closed-interval containment.
    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn is_within(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

/// A pair of corresponding points with the distance of the descriptor match
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub a: Point2,
    pub b: Point2,
    pub score: f64,
}

impl PointMatch {
    pub fn new(a: Point2, b: Point2, score: f64) -> Self {
        Self { a, b, score }
    }

    pub fn exact(a: Point2, b: Point2) -> Self {
        Self { a, b, score: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidParameter("focal lengths must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidParameter("principal point must be finite"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Pixel to normalized camera coordinates.
    pub fn normalize(&self, p: &Point2) -> Point2 {
        Point2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, p: &Point2) -> Point2 {
        Point2::new(p.x * self.fx + self.cx, p.y * self.fy + self.cy)
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the given components. Fails on a zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::InvalidParameter("quaternion must be nonzero and finite"));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn dot(&self, other: &UnitQuaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Flips sign so that `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            self.neg()
        } else {
            self
        }
    }

    /// Canonical (`w >= 0`) quaternion of a rotation matrix.
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        Self {
            w: q.w,
            x: q.i,
            y: q.j,
            z: q.k,
        }
        .renormalized()
        .canonical()
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        let q = nalgebra::UnitQuaternion::from_axis_angle(&axis, angle);
        Self {
            w: q.w,
            x: q.i,
            y: q.j,
            z: q.k,
        }
        .canonical()
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let q = nalgebra::UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
            self.w, self.x, self.y, self.z,
        ));
        *q.to_rotation_matrix().matrix()
    }

    fn renormalized(self) -> Self {
        let n = self.norm();
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }
}

/// Rigid transform taking points from camera `a` coordinates into camera `b`
/// coordinates: `x_b = R x_a + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    pub rotation: UnitQuaternion,
    pub translation: [f64; 3],
}

impl RelativePose {
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
}

/// Output of a localization: a relative pose or a near-to-far homography.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Estimate {
    Pose(RelativePose),
    Homography { matrix: Homography },
}

/// Hartley normalization: centroid to the origin, mean distance `sqrt(2)`.
pub(crate) fn hartley_normalization<'a>(points: impl Iterator<Item = &'a Point2> + Clone) -> Matrix3<f64> {
    let mut n = 0usize;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points.clone() {
        cx += p.x;
        cy += p.y;
        n += 1;
    }
    cx /= n as f64;
    cy /= n as f64;
    let mean_dist = points.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n as f64;
    let s = if mean_dist > 1e-300 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_rejects_empty() {
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
        let b = BBox::new(0.0, 0.0, 10.0, 20.0).unwrap();
        assert_eq!(b.area(), 200.0);
        assert_eq!(b.aspect_ratio(), 0.5);
    }

    #[test]
    fn bbox_containment_is_closed() {
        let b = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert!(b.contains(&Point2::new(1.0, 3.0)));
        assert!(!b.contains(&Point2::new(0.999, 2.0)));
    }

    #[test]
    fn quaternion_from_rotation_has_nonnegative_w() {
        for angle in [0.1, 1.0, 3.0, 3.1, -2.5] {
            let axis = Vector3::new(0.3, -0.7, 0.2);
            let r = *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix();
            let q = UnitQuaternion::from_rotation_matrix(&r);
            assert!(q.w >= 0.0);
            assert!((q.norm() - 1.0).abs() < 1e-9);
            assert!((q.to_rotation_matrix() - r).norm() < 1e-9);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        let k = CameraIntrinsics::new(700.0, 710.0, 600.0, 180.0).unwrap();
        let p = Point2::new(123.0, 45.0);
        let back = k.denormalize(&k.normalize(&p));
        assert!(back.distance(&p) < 1e-9);
    }
}
