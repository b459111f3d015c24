//! SIFT keypoints and 128-dimensional descriptors.
//!
//! Scale space follows the usual construction: `octave_layers + 3` Gaussian
//! images per octave, difference-of-Gaussian extrema in the interior layers,
//! quadratic sub-pixel refinement, contrast and edge rejection, a 36-bin
//! orientation histogram and a 4x4x8 gradient histogram descriptor.
//!
//! The input is not upsampled, so keypoint coordinates are in native pixels.
//! Orientations are measured in image coordinates (x right, y down) as
//! `atan2(dy, dx)` in `[0, 2pi)`.

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::filter::gaussian_blur;
use crate::geometry::Point2;
use crate::image::GrayImage;

const IMG_BORDER: usize = 5;
const MAX_INTERP_STEPS: usize = 5;
const ORI_HIST_BINS: usize = 36;
const ORI_SIG_FCTR: f64 = 1.5;
const ORI_RADIUS: f64 = 3.0 * ORI_SIG_FCTR;
const ORI_PEAK_RATIO: f64 = 0.8;
const DESCR_WIDTH: usize = 4;
const DESCR_HIST_BINS: usize = 8;
const DESCR_SCL_FCTR: f64 = 3.0;
const DESCR_MAG_THR: f32 = 0.2;
/// Blur assumed to be present in the input image.
const INIT_SIGMA: f64 = 0.5;

pub const DESCRIPTOR_LEN: usize = DESCR_WIDTH * DESCR_WIDTH * DESCR_HIST_BINS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SiftError {
    #[error("image {width}x{height} is smaller than the 16x16 minimum")]
    ImageTooSmall { width: usize, height: usize },
    #[error("invalid SIFT parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SiftParams {
    pub octave_layers: usize,
    pub initial_sigma: f64,
    pub edge_threshold: f64,
    pub contrast_threshold: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            octave_layers: 3,
            initial_sigma: 1.6,
            edge_threshold: 10.0,
            contrast_threshold: 0.04,
        }
    }
}

impl SiftParams {
    pub fn validate(&self) -> Result<(), SiftError> {
        if self.octave_layers < 1 {
            return Err(SiftError::InvalidParams("octave_layers must be at least 1"));
        }
        for (v, msg) in [
            (self.initial_sigma, "initial_sigma must be positive"),
            (self.edge_threshold, "edge_threshold must be positive"),
            (self.contrast_threshold, "contrast_threshold must be positive"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SiftError::InvalidParams(msg));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftFeature {
    pub location: Point2,
    /// Gaussian scale of the keypoint in input-image pixels.
    pub scale: f64,
    /// Radians in `[0, 2pi)`.
    pub orientation: f64,
    pub octave: usize,
    /// Absolute interpolated DoG response.
    pub response: f64,
    pub descriptor: [f32; DESCRIPTOR_LEN],
}

impl AsRef<[f32]> for SiftFeature {
    fn as_ref(&self) -> &[f32] {
        &self.descriptor
    }
}

/// Number of octaves: `floor(log2(min(w, h))) - 3`, at least one.
pub fn octave_count(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    let log2 = usize::BITS - 1 - m.leading_zeros();
    (log2 as usize).saturating_sub(3).max(1)
}

struct Octave {
    gauss: Vec<GrayImage>,
    dog: Vec<GrayImage>,
}

fn downsample(img: &GrayImage) -> GrayImage {
    let w = img.width().div_ceil(2);
    let h = img.height().div_ceil(2);
    GrayImage::from_fn(w, h, |x, y| img.get(2 * x, 2 * y))
}

fn build_pyramid(image: &GrayImage, params: &SiftParams) -> Vec<Octave> {
    let s = params.octave_layers;
    let sigma = params.initial_sigma;
    let n_octaves = octave_count(image.width(), image.height());
    let k = 2f64.powf(1.0 / s as f64);
    let mut incremental = vec![sigma];
    for i in 1..s + 3 {
        let prev = sigma * k.powi(i as i32 - 1);
        let total = prev * k;
        incremental.push((total * total - prev * prev).sqrt());
    }
    let base_sigma = (sigma * sigma - INIT_SIGMA * INIT_SIGMA).max(0.01).sqrt();
    let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
    for o in 0..n_octaves {
        let mut gauss = Vec::with_capacity(s + 3);
        for (i, &sig) in incremental.iter().enumerate() {
            let img = match (o, i) {
                (0, 0) => gaussian_blur(image, base_sigma),
                (_, 0) => downsample(&octaves[o - 1].gauss[s]),
                _ => gaussian_blur(&gauss[i - 1], sig),
            };
            gauss.push(img);
        }
        let dog = gauss
            .windows(2)
            .map(|pair| {
                let data = pair[1]
                    .as_slice()
                    .iter()
                    .zip(pair[0].as_slice())
                    .map(|(b, a)| b - a)
                    .collect();
                GrayImage::from_vec(pair[0].width(), pair[0].height(), data)
                    .expect("same dimensions")
            })
            .collect();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[GrayImage], layer: usize, x: usize, y: usize) -> bool {
    let v = dog[layer].get(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for (l, img) in dog[layer - 1..=layer + 1].iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if l == 1 && xx == x && yy == y {
                    continue;
                }
                let n = img.get(xx, yy);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

struct Refined {
    x: usize,
    y: usize,
    layer: usize,
    offset: [f64; 3],
    response: f64,
}

fn refine_extremum(
    dog: &[GrayImage],
    params: &SiftParams,
    mut x: usize,
    mut y: usize,
    mut layer: usize,
) -> Option<Refined> {
    let s = params.octave_layers;
    let (w, h) = (dog[0].width(), dog[0].height());
    let mut offset = [0.0f64; 3];
    let mut grad = [0.0f64; 3];
    let mut converged = false;
    for _ in 0..MAX_INTERP_STEPS {
        let (prev, cur, next) = (&dog[layer - 1], &dog[layer], &dog[layer + 1]);
        let at = |img: &GrayImage, dx: isize, dy: isize| {
            img.get((x as isize + dx) as usize, (y as isize + dy) as usize) as f64
        };
        let v = at(cur, 0, 0);
        grad = [
            0.5 * (at(cur, 1, 0) - at(cur, -1, 0)),
            0.5 * (at(cur, 0, 1) - at(cur, 0, -1)),
            0.5 * (at(next, 0, 0) - at(prev, 0, 0)),
        ];
        let dxx = at(cur, 1, 0) + at(cur, -1, 0) - 2.0 * v;
        let dyy = at(cur, 0, 1) + at(cur, 0, -1) - 2.0 * v;
        let dss = at(next, 0, 0) + at(prev, 0, 0) - 2.0 * v;
        let dxy = 0.25 * (at(cur, 1, 1) - at(cur, -1, 1) - at(cur, 1, -1) + at(cur, -1, -1));
        let dxs = 0.25 * (at(next, 1, 0) - at(next, -1, 0) - at(prev, 1, 0) + at(prev, -1, 0));
        let dys = 0.25 * (at(next, 0, 1) - at(next, 0, -1) - at(prev, 0, 1) + at(prev, 0, -1));
        let hess = nalgebra::Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let g = nalgebra::Vector3::from(grad);
        let sol = hess.lu().solve(&g)?;
        offset = [-sol.x, -sol.y, -sol.z];
        if offset.iter().all(|o| o.abs() < 0.5) {
            converged = true;
            break;
        }
        if offset.iter().any(|o| !o.is_finite() || o.abs() > 1e6) {
            return None;
        }
        let nx = x as isize + offset[0].round() as isize;
        let ny = y as isize + offset[1].round() as isize;
        let nl = layer as isize + offset[2].round() as isize;
        if nl < 1
            || nl > s as isize
            || nx < IMG_BORDER as isize
            || nx >= (w - IMG_BORDER) as isize
            || ny < IMG_BORDER as isize
            || ny >= (h - IMG_BORDER) as isize
        {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    if !converged {
        return None;
    }

    let cur = &dog[layer];
    let v = cur.get(x, y) as f64;
    let contrast = v + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
    if contrast.abs() * (s as f64) < params.contrast_threshold {
        return None;
    }

    let at = |dx: isize, dy: isize| {
        cur.get((x as isize + dx) as usize, (y as isize + dy) as usize) as f64
    };
    let dxx = at(1, 0) + at(-1, 0) - 2.0 * v;
    let dyy = at(0, 1) + at(0, -1) - 2.0 * v;
    let dxy = 0.25 * (at(1, 1) - at(-1, 1) - at(1, -1) + at(-1, -1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = params.edge_threshold;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    Some(Refined {
        x,
        y,
        layer,
        offset,
        response: contrast.abs(),
    })
}

#[inline]
fn pixel_gradient(img: &GrayImage, x: usize, y: usize) -> (f64, f64) {
    let dx = img.get(x + 1, y) as f64 - img.get(x - 1, y) as f64;
    let dy = img.get(x, y + 1) as f64 - img.get(x, y - 1) as f64;
    (dx, dy)
}

/// Dominant orientations of a keypoint at octave pixel `(x, y)`.
fn orientations(img: &GrayImage, x: usize, y: usize, scl_octv: f64) -> Vec<f64> {
    let radius = (ORI_RADIUS * scl_octv).round() as isize;
    let sigma = ORI_SIG_FCTR * scl_octv;
    let exp_scale = -1.0 / (2.0 * sigma * sigma);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let n = ORI_HIST_BINS;
    let mut hist = vec![0.0f64; n];
    for i in -radius..=radius {
        let yy = y as isize + i;
        if yy <= 0 || yy >= h - 1 {
            continue;
        }
        for j in -radius..=radius {
            let xx = x as isize + j;
            if xx <= 0 || xx >= w - 1 {
                continue;
            }
            let (dx, dy) = pixel_gradient(img, xx as usize, yy as usize);
            let weight = (((i * i + j * j) as f64) * exp_scale).exp();
            let angle = dy.atan2(dx).rem_euclid(TAU);
            let bin = ((n as f64 * angle / TAU).round() as usize) % n;
            hist[bin] += weight * dx.hypot(dy);
        }
    }
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let at = |d: isize| hist[(i as isize + d).rem_euclid(n as isize) as usize];
            (at(-2) + at(2)) * (1.0 / 16.0) + (at(-1) + at(1)) * (4.0 / 16.0) + at(0) * (6.0 / 16.0)
        })
        .collect();
    let max = smoothed.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let l = smoothed[(i + n - 1) % n];
        let r = smoothed[(i + 1) % n];
        let c = smoothed[i];
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let bin = i as f64 + 0.5 * (l - r) / (l - 2.0 * c + r);
            let angle = (TAU * bin / n as f64).rem_euclid(TAU);
            // rem_euclid can round up to exactly TAU
            out.push(if angle >= TAU { 0.0 } else { angle });
        }
    }
    out
}

/// 4x4 spatial cells of 8-bin gradient histograms, trilinearly interpolated.
fn descriptor(
    img: &GrayImage,
    x: f64,
    y: f64,
    orientation: f64,
    scl_octv: f64,
) -> [f32; DESCRIPTOR_LEN] {
    let d = DESCR_WIDTH;
    let n = DESCR_HIST_BINS;
    let px = x.round() as isize;
    let py = y.round() as isize;
    let (cos_t, sin_t) = (orientation.cos(), orientation.sin());
    let bins_per_rad = n as f64 / TAU;
    let exp_scale = -1.0 / (d as f64 * d as f64 * 0.5);
    let hist_width = DESCR_SCL_FCTR * scl_octv;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let max_radius = ((w * w + h * h) as f64).sqrt();
    let radius =
        (hist_width * std::f64::consts::SQRT_2 * (d as f64 + 1.0) * 0.5).min(max_radius).round()
            as isize;
    let (cos_t, sin_t) = (cos_t / hist_width, sin_t / hist_width);

    let stride_c = n + 2;
    let stride_r = (d + 2) * stride_c;
    let mut hist = vec![0.0f64; (d + 2) * stride_r];

    for i in -radius..=radius {
        for j in -radius..=radius {
            // offset rotated into the keypoint frame
            let c_rot = j as f64 * cos_t + i as f64 * sin_t;
            let r_rot = -(j as f64) * sin_t + i as f64 * cos_t;
            let rbin = r_rot + d as f64 / 2.0 - 0.5;
            let cbin = c_rot + d as f64 / 2.0 - 0.5;
            let yy = py + i;
            let xx = px + j;
            if !(rbin > -1.0 && rbin < d as f64 && cbin > -1.0 && cbin < d as f64) {
                continue;
            }
            if yy <= 0 || yy >= h - 1 || xx <= 0 || xx >= w - 1 {
                continue;
            }
            let (dx, dy) = pixel_gradient(img, xx as usize, yy as usize);
            let mag = dx.hypot(dy);
            let grad_ori = dy.atan2(dx);
            let weight = ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let mut obin = (grad_ori - orientation).rem_euclid(TAU) * bins_per_rad;
            let r0 = rbin.floor();
            let c0 = cbin.floor();
            let mut o0 = obin.floor();
            let rb = rbin - r0;
            let cb = cbin - c0;
            obin -= o0;
            if o0 >= n as f64 {
                o0 -= n as f64;
            }
            let (r0, c0, o0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize, o0 as usize);
            let v = mag * weight;
            let v_r1 = v * rb;
            let v_r0 = v - v_r1;
            let v_rc11 = v_r1 * cb;
            let v_rc10 = v_r1 - v_rc11;
            let v_rc01 = v_r0 * cb;
            let v_rc00 = v_r0 - v_rc01;
            let idx = r0 * stride_r + c0 * stride_c + o0;
            let mut add = |base: usize, val: f64| {
                let hi = val * obin;
                hist[base] += val - hi;
                hist[base + 1] += hi;
            };
            add(idx, v_rc00);
            add(idx + stride_c, v_rc01);
            add(idx + stride_r, v_rc10);
            add(idx + stride_r + stride_c, v_rc11);
        }
    }

    let mut out = [0.0f32; DESCRIPTOR_LEN];
    for r in 0..d {
        for c in 0..d {
            let base = (r + 1) * stride_r + (c + 1) * stride_c;
            // wrap the two overflow orientation bins
            hist[base] += hist[base + n];
            hist[base + 1] += hist[base + n + 1];
            for o in 0..n {
                out[(r * d + c) * n + o] = hist[base + o] as f32;
            }
        }
    }
    normalize_descriptor(&mut out);
    out
}

/// Unit-normalize, clamp at 0.2, renormalize, and clamp again so every entry
/// stays within `[0, 0.2]` and the norm within 1.
fn normalize_descriptor(v: &mut [f32; DESCRIPTOR_LEN]) {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return;
    }
    for x in v.iter_mut() {
        *x = ((*x as f64 / norm) as f32).min(DESCR_MAG_THR);
    }
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return;
    }
    for x in v.iter_mut() {
        *x = ((*x as f64 / norm) as f32).min(DESCR_MAG_THR);
    }
}

fn detect_octave(octave: &Octave, index: usize, params: &SiftParams) -> Vec<SiftFeature> {
    let s = params.octave_layers;
    let dog = &octave.dog;
    let (w, h) = (dog[0].width(), dog[0].height());
    let mut out = Vec::new();
    if w <= 2 * IMG_BORDER || h <= 2 * IMG_BORDER {
        return out;
    }
    let prelim = 0.5 * params.contrast_threshold / s as f64;
    let octave_scale = (1u64 << index) as f64;
    for layer in 1..=s {
        let img = &dog[layer];
        for y in IMG_BORDER..h - IMG_BORDER {
            for x in IMG_BORDER..w - IMG_BORDER {
                let v = img.get(x, y) as f64;
                if v.abs() <= prelim || !is_extremum(dog, layer, x, y) {
                    continue;
                }
                let Some(kp) = refine_extremum(dog, params, x, y, layer) else {
                    continue;
                };
                let xo = kp.x as f64 + kp.offset[0];
                let yo = kp.y as f64 + kp.offset[1];
                let scl_octv = params.initial_sigma
                    * 2f64.powf((kp.layer as f64 + kp.offset[2]) / s as f64);
                let gauss = &octave.gauss[kp.layer];
                for ori in orientations(gauss, kp.x, kp.y, scl_octv) {
                    out.push(SiftFeature {
                        location: Point2::new(xo * octave_scale, yo * octave_scale),
                        scale: scl_octv * octave_scale,
                        orientation: ori,
                        octave: index,
                        response: kp.response,
                        descriptor: descriptor(gauss, xo, yo, ori, scl_octv),
                    });
                }
            }
        }
    }
    out
}

/// Detects SIFT keypoints on a grayscale image and computes their descriptors.
///
/// Output is sorted by octave, then scale, then y, then x (orientation breaks
/// any remaining tie).
pub fn detect_and_describe(
    image: &GrayImage,
    params: &SiftParams,
) -> Result<Vec<SiftFeature>, SiftError> {
    params.validate()?;
    if image.width() < 16 || image.height() < 16 {
        return Err(SiftError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
        });
    }
    let pyramid = build_pyramid(image, params);
    let mut features: Vec<SiftFeature> = pyramid
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, octave)| detect_octave(octave, i, params))
        .collect();
    features.sort_by(|a, b| {
        a.octave
            .cmp(&b.octave)
            .then(a.scale.total_cmp(&b.scale))
            .then(a.location.y.total_cmp(&b.location.y))
            .then(a.location.x.total_cmp(&b.location.x))
            .then(a.orientation.total_cmp(&b.orientation))
    });
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn octave_counts() {
        assert_eq!(octave_count(16, 16), 1);
        assert_eq!(octave_count(256, 300), 5);
        assert_eq!(octave_count(1241, 376), 5);
        assert_eq!(octave_count(1200, 900), 6);
    }

    #[test]
    fn too_small_rejected() {
        let img = GrayImage::new(15, 40);
        assert_eq!(
            detect_and_describe(&img, &SiftParams::default()),
            Err(SiftError::ImageTooSmall {
                width: 15,
                height: 40
            })
        );
    }

    #[test]
    fn flat_image_has_no_features() {
        let img = GrayImage::filled(64, 64, 0.5);
        assert!(detect_and_describe(&img, &SiftParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn invalid_params() {
        let p = SiftParams {
            octave_layers: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = SiftParams {
            contrast_threshold: -1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn normalization_bounds() {
        let mut v = [0.0f32; DESCRIPTOR_LEN];
        v[0] = 10.0;
        v[1] = 1.0;
        v[5] = 0.5;
        normalize_descriptor(&mut v);
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!(norm <= 1.0 + 1e-6);
        assert!(v.iter().all(|&x| (0.0..=0.2 + 1e-6).contains(&x)));
    }
}
