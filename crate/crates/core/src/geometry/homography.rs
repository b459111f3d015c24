use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::ransac::{consensus, RansacConfig};
use super::{hartley_normalization, GeometryError, Point2, PointMatch};

const DET_EPS: f64 = 1e-12;

/// Projective transform of the plane, stored with unit Frobenius norm and
/// `h[2][2] >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity()).expect("identity is invertible")
    }

    /// Normalizes `m` and checks invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let norm = m.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(GeometryError::DegenerateConfiguration);
        }
        let mut m = m / norm;
        let pivot = if m[(2, 2)] != 0.0 {
            m[(2, 2)]
        } else {
            m.iter().copied().find(|v| *v != 0.0).unwrap_or(1.0)
        };
        if pivot < 0.0 {
            m = -m;
        }
        if m.determinant().abs() <= DET_EPS {
            return Err(GeometryError::DegenerateConfiguration);
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .0
            .try_inverse()
            .ok_or(GeometryError::DegenerateConfiguration)?;
        Self::from_matrix(inv)
    }

    pub fn apply(&self, p: &Point2) -> Result<Point2, GeometryError> {
        apply_homography(self, p)
    }

    /// Frobenius distance to `other`, both in normalized form.
    pub fn distance(&self, other: &Homography) -> f64 {
        (self.0 - other.0).norm()
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Homography::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

pub fn apply_homography(h: &Homography, p: &Point2) -> Result<Point2, GeometryError> {
    let m = &h.0;
    let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    if w.abs() < 1e-12 {
        return Err(GeometryError::PointAtInfinity);
    }
    Ok(Point2::new(
        (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
        (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
    ))
}

/// Right singular vector of the smallest singular value, or `None` when the
/// null space has dimension greater than one.
pub(crate) fn null_vector(a: &DMatrix<f64>) -> Option<nalgebra::DVector<f64>> {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, a.nrows()).copy_from(a);
        padded
    } else {
        a.clone()
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let smallest = order[0];
    let second = order[1];
    let largest = order[sv.len() - 1];
    if sv[largest].is_nan() || sv[largest] <= 0.0 || sv[second] <= 1e-10 * sv[largest] {
        return None;
    }
    Some(v_t.row(smallest).transpose())
}

pub fn dlt_homography(matches: &[PointMatch]) -> Result<Homography, GeometryError> {
    if matches.len() < 4 {
        return Err(GeometryError::InsufficientMatches {
            needed: 4,
            got: matches.len(),
        });
    }
    if matches.iter().any(|m| !m.a.is_finite() || !m.b.is_finite()) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let ta = hartley_normalization(matches.iter().map(|m| &m.a));
    let tb = hartley_normalization(matches.iter().map(|m| &m.b));

    let mut a = DMatrix::<f64>::zeros(2 * matches.len(), 9);
    for (i, m) in matches.iter().enumerate() {
        let p = ta * Vector3::new(m.a.x, m.a.y, 1.0);
        let q = tb * Vector3::new(m.b.x, m.b.y, 1.0);
        let (x, y) = (p.x, p.y);
        let (u, v) = (q.x, q.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let h = null_vector(&a).ok_or(GeometryError::DegenerateConfiguration)?;
    let hn = Matrix3::from_row_slice(h.as_slice());
    let tb_inv = tb
        .try_inverse()
        .ok_or(GeometryError::DegenerateConfiguration)?;
    Homography::from_matrix(tb_inv * hn * ta)
}

/// True when any three of the points are (nearly) collinear or coincident.
fn has_collinear_triple(points: &[Point2]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let (p, q, r) = (points[i], points[j], points[k]);
                let (ux, uy) = (q.x - p.x, q.y - p.y);
                let (vx, vy) = (r.x - p.x, r.y - p.y);
                let cross = (ux * vy - uy * vx).abs();
                let scale = ux.hypot(uy) * vx.hypot(vy);
                if cross <= 1e-3 * scale || scale == 0.0 {
                    return true;
                }
            }
        }
    }
    false
}

/// Forward and backward transfer distances of one match, or `None` when either
/// direction maps to infinity.
fn transfer_distances(h: &Homography, h_inv: &Homography, m: &PointMatch) -> Option<(f64, f64)> {
    let fwd = apply_homography(h, &m.a).ok()?;
    let bwd = apply_homography(h_inv, &m.b).ok()?;
    Some((fwd.distance(&m.b), bwd.distance(&m.a)))
}

fn inlier_mask(h: &Homography, matches: &[PointMatch], threshold: f64) -> (Vec<bool>, f64) {
    let Ok(h_inv) = h.inverse() else {
        return (vec![false; matches.len()], 0.0);
    };
    let mut residual = 0.0;
    let mask = matches
        .iter()
        .map(|m| match transfer_distances(h, &h_inv, m) {
            Some((f, b)) if f <= threshold && b <= threshold => {
                residual += f + b;
                true
            }
            _ => false,
        })
        .collect();
    (mask, residual)
}

/// Robust homography mapping `a` points onto `b` points.
///
/// A match is an inlier when both its forward and its backward transfer
/// distance are within `cfg.inlier_threshold`. The best hypothesis is refit on
/// its inliers until the inlier set stops changing (at most a few rounds).
pub fn estimate_homography_ransac(
    matches: &[PointMatch],
    cfg: &RansacConfig,
) -> Result<(Homography, Vec<bool>), GeometryError> {
    cfg.validate()?;
    if matches.len() < 4 {
        return Err(GeometryError::InsufficientMatches {
            needed: 4,
            got: matches.len(),
        });
    }
    let threshold = cfg.inlier_threshold;
    let mut sample_buf = Vec::with_capacity(4);
    let best = consensus(
        matches.len(),
        4,
        cfg,
        |idx| {
            sample_buf.clear();
            sample_buf.extend(idx.iter().map(|&i| matches[i]));
            let a: Vec<Point2> = sample_buf.iter().map(|m| m.a).collect();
            let b: Vec<Point2> = sample_buf.iter().map(|m| m.b).collect();
            if has_collinear_triple(&a) || has_collinear_triple(&b) {
                return None;
            }
            dlt_homography(&sample_buf).ok()
        },
        |h| {
            let (mask, residual) = inlier_mask(h, matches, threshold);
            (mask.iter().filter(|&&m| m).count(), residual)
        },
    );
    let Some(best) = best else {
        return Err(GeometryError::NoConsensus { inliers: 0 });
    };
    if best.inliers < 4 {
        return Err(GeometryError::NoConsensus {
            inliers: best.inliers,
        });
    }

    let mut h = best.model;
    let (mut mask, _) = inlier_mask(&h, matches, threshold);
    for _ in 0..5 {
        let inliers: Vec<PointMatch> = matches
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(m, _)| *m)
            .collect();
        let Ok(refit) = dlt_homography(&inliers) else {
            break;
        };
        let (refit_mask, _) = inlier_mask(&refit, matches, threshold);
        let count = refit_mask.iter().filter(|&&m| m).count();
        if count < 4 {
            break;
        }
        let converged = refit_mask == mask;
        h = refit;
        mask = refit_mask;
        if converged {
            break;
        }
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count < 4 {
        return Err(GeometryError::NoConsensus { inliers: count });
    }
    Ok((h, mask))
}
