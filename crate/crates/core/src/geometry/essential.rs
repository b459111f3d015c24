use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};

use super::homography::null_vector;
use super::ransac::{consensus, RansacConfig};
use super::{
    hartley_normalization, CameraIntrinsics, GeometryError, Point2, PointMatch, RelativePose,
    UnitQuaternion,
};

/// Essential matrix with singular values projected to `(s, s, 0)` and unit
/// Frobenius norm. Satisfies `b^T E a = 0` for normalized points `a`, `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Projects an arbitrary 3x3 matrix onto the essential manifold.
    pub fn project(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::DegenerateConfiguration),
        };
        let sv = svd.singular_values;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
        let s = 0.5 * (sv[order[0]] + sv[order[1]]);
        if !(s.is_finite() && s > 0.0) {
            return Err(GeometryError::DegenerateConfiguration);
        }
        let mut d = Matrix3::zeros();
        d[(order[0], order[0])] = std::f64::consts::FRAC_1_SQRT_2;
        d[(order[1], order[1])] = std::f64::consts::FRAC_1_SQRT_2;
        let mut e = u * d * v_t;
        let pivot = e
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            e = -e;
        }
        Ok(Self(e))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn singular_values(&self) -> [f64; 3] {
        let sv = self.0.singular_values();
        let mut v = [sv[0], sv[1], sv[2]];
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// Algebraic residual `b^T E a` for normalized points.
    pub fn residual(&self, a: &Point2, b: &Point2) -> f64 {
        let a = Vector3::new(a.x, a.y, 1.0);
        let b = Vector3::new(b.x, b.y, 1.0);
        b.dot(&(self.0 * a))
    }
}

/// `E = [t]x R` for the pose taking camera-`a` points into camera `b`.
pub fn essential_from_pose(pose: &RelativePose) -> Result<EssentialMatrix, GeometryError> {
    let t = pose.translation_vector();
    EssentialMatrix::project(&(t.cross_matrix() * pose.rotation_matrix()))
}

/// First-order geometric (Sampson) distance in normalized coordinates.
pub fn sampson_distance(e: &EssentialMatrix, a: &Point2, b: &Point2) -> f64 {
    let m = e.matrix();
    let av = Vector3::new(a.x, a.y, 1.0);
    let bv = Vector3::new(b.x, b.y, 1.0);
    let ea = m * av;
    let etb = m.transpose() * bv;
    let num = bv.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num.abs() / den.sqrt()
}

/// Normalized eight-point algorithm on correspondences in normalized camera
/// coordinates.
pub fn eight_point_essential(matches: &[PointMatch]) -> Result<EssentialMatrix, GeometryError> {
    if matches.len() < 8 {
        return Err(GeometryError::InsufficientMatches {
            needed: 8,
            got: matches.len(),
        });
    }
    if matches.iter().any(|m| !m.a.is_finite() || !m.b.is_finite()) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let ta = hartley_normalization(matches.iter().map(|m| &m.a));
    let tb = hartley_normalization(matches.iter().map(|m| &m.b));
    let mut a = DMatrix::<f64>::zeros(matches.len(), 9);
    for (i, m) in matches.iter().enumerate() {
        let p = ta * Vector3::new(m.a.x, m.a.y, 1.0);
        let q = tb * Vector3::new(m.b.x, m.b.y, 1.0);
        let (x, y) = (p.x, p.y);
        let (u, v) = (q.x, q.y);
        a.row_mut(i)
            .copy_from_slice(&[u * x, u * y, u, v * x, v * y, v, x, y, 1.0]);
    }
    let e = null_vector(&a).ok_or(GeometryError::DegenerateConfiguration)?;
    let en = Matrix3::from_row_slice(e.as_slice());
    EssentialMatrix::project(&(tb.transpose() * en * ta))
}

fn normalize_matches(matches: &[PointMatch], k: &CameraIntrinsics) -> Vec<PointMatch> {
    matches
        .iter()
        .map(|m| PointMatch::new(k.normalize(&m.a), k.normalize(&m.b), m.score))
        .collect()
}

fn inlier_mask(
    e: &EssentialMatrix,
    normalized: &[PointMatch],
    focal: f64,
    threshold: f64,
) -> (Vec<bool>, f64) {
    let mut residual = 0.0;
    let mask = normalized
        .iter()
        .map(|m| {
            let d = sampson_distance(e, &m.a, &m.b) * focal;
            if d <= threshold {
                residual += d;
                true
            } else {
                false
            }
        })
        .collect();
    (mask, residual)
}

/// Robust essential matrix from pixel correspondences.
///
/// Points are normalized with `k`; a match is an inlier when its Sampson
/// distance, scaled back to pixels by the mean focal length, is within
/// `cfg.inlier_threshold`.
pub fn estimate_essential_ransac(
    matches: &[PointMatch],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<(EssentialMatrix, Vec<bool>), GeometryError> {
    cfg.validate()?;
    if matches.len() < 8 {
        return Err(GeometryError::InsufficientMatches {
            needed: 8,
            got: matches.len(),
        });
    }
    let normalized = normalize_matches(matches, k);
    let focal = k.mean_focal();
    let threshold = cfg.inlier_threshold;
    let mut sample_buf = Vec::with_capacity(8);
    let best = consensus(
        normalized.len(),
        8,
        cfg,
        |idx| {
            sample_buf.clear();
            sample_buf.extend(idx.iter().map(|&i| normalized[i]));
            eight_point_essential(&sample_buf).ok()
        },
        |e| {
            let (mask, residual) = inlier_mask(e, &normalized, focal, threshold);
            (mask.iter().filter(|&&m| m).count(), residual)
        },
    );
    let Some(best) = best else {
        return Err(GeometryError::DegenerateConfiguration);
    };
    if best.inliers < 8 {
        return Err(GeometryError::NoConsensus {
            inliers: best.inliers,
        });
    }

    let mut e = best.model;
    let (mut mask, _) = inlier_mask(&e, &normalized, focal, threshold);
    for _ in 0..5 {
        let inliers: Vec<PointMatch> = normalized
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(m, _)| *m)
            .collect();
        let Ok(refit) = eight_point_essential(&inliers) else {
            break;
        };
        let (refit_mask, _) = inlier_mask(&refit, &normalized, focal, threshold);
        let count = refit_mask.iter().filter(|&&m| m).count();
        if count < 8 {
            break;
        }
        let converged = refit_mask == mask;
        e = refit;
        mask = refit_mask;
        if converged {
            break;
        }
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count < 8 {
        return Err(GeometryError::NoConsensus { inliers: count });
    }
    Ok((e, mask))
}

/// Depths `(lambda_a, lambda_b)` solving `lambda_b b = lambda_a R a + t` in the
/// least-squares sense.
fn triangulated_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    a: &Point2,
    b: &Point2,
) -> Option<(f64, f64)> {
    let ra = r * Vector3::new(a.x, a.y, 1.0);
    let bv = Vector3::new(b.x, b.y, 1.0);
    // [ra, -b] [la; lb] = -t
    let m11 = ra.dot(&ra);
    let m12 = -ra.dot(&bv);
    let m22 = bv.dot(&bv);
    let rhs = Vector2::new(-ra.dot(t), bv.dot(t));
    let normal = Matrix2::new(m11, m12, m12, m22);
    let sol = normal.try_inverse()? * rhs;
    Some((sol.x, sol.y))
}

/// Chooses among the four `(R, t)` decompositions of `e` the one that puts the
/// most inlier points in front of both cameras.
///
/// The returned pose maps camera-`a` coordinates into camera `b`, has a unit
/// translation, and a canonical quaternion.
pub fn recover_pose(
    e: &EssentialMatrix,
    inliers: &[PointMatch],
    k: &CameraIntrinsics,
) -> Result<RelativePose, GeometryError> {
    if inliers.is_empty() {
        return Err(GeometryError::InsufficientMatches { needed: 1, got: 0 });
    }
    let svd = e.matrix().svd(true, true);
    let (mut u, mut v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateConfiguration),
    };
    // Order columns so the null direction is last.
    let sv = svd.singular_values;
    let null_idx = (0..3)
        .min_by(|&i, &j| sv[i].total_cmp(&sv[j]))
        .expect("three singular values");
    if null_idx != 2 {
        u.swap_columns(null_idx, 2);
        v_t.swap_rows(null_idx, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).normalize();
    let candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)];

    let normalized = normalize_matches(inliers, k);
    let mut best = (0usize, 0usize);
    for (ci, (r, t)) in candidates.iter().enumerate() {
        let in_front = normalized
            .iter()
            .filter(|m| {
                matches!(triangulated_depths(r, t, &m.a, &m.b), Some((da, db)) if da > 0.0 && db > 0.0)
            })
            .count();
        if in_front > best.1 {
            best = (ci, in_front);
        }
    }
    if 2 * best.1 <= normalized.len() {
        return Err(GeometryError::CheiralityAmbiguity);
    }
    let (r, t) = candidates[best.0];
    Ok(RelativePose::new(UnitQuaternion::from_rotation_matrix(&r), t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_x_translation_closed_form() {
        let pose = RelativePose::new(UnitQuaternion::IDENTITY, Vector3::new(1.0, 0.0, 0.0));
        let e = essential_from_pose(&pose).unwrap();
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let expected: Matrix3<f64> = expected / expected.norm();
        let m = e.matrix();
        let same = (m - expected).norm().min((m + expected).norm());
        assert!(same < 1e-12, "{m}");
    }

    #[test]
    fn projection_enforces_equal_singular_values() {
        let m = Matrix3::new(3.0, 1.0, 0.2, -0.5, 2.0, 1.0, 0.3, 0.1, 0.7);
        let e = EssentialMatrix::project(&m).unwrap();
        let [s0, s1, s2] = e.singular_values();
        assert!((s0 - s1).abs() <= 1e-9 * s0);
        assert!(s2.abs() <= 1e-9 * s0);
        assert!(s0 > 0.0);
    }

    #[test]
    fn seven_matches_rejected() {
        let m = PointMatch::exact(Point2::new(0.0, 0.0), Point2::new(0.1, 0.0));
        assert!(matches!(
            eight_point_essential(&[m; 7]),
            Err(GeometryError::InsufficientMatches { needed: 8, got: 7 })
        ));
    }

    #[test]
    fn identical_points_are_degenerate() {
        let m = PointMatch::exact(Point2::new(0.1, 0.2), Point2::new(0.15, 0.2));
        assert_eq!(
            eight_point_essential(&[m; 12]),
            Err(GeometryError::DegenerateConfiguration)
        );
    }
}
