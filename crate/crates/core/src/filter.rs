//! Separable Gaussian filtering with reflect-101 borders.

use crate::image::GrayImage;

/// Normalized 1-D Gaussian kernel with radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = ((4.0 * sigma).ceil() as usize).max(1);
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / denom).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / sum) as f32).collect()
}

/// Reflect-101 border index (`-1 -> 1`, `n -> n - 2`).
#[inline]
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let src = img.as_slice();

    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, kv) in kernel.iter().enumerate() {
                let xi = reflect101(x as isize + k as isize - r, w);
                acc += kv * row[xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for (k, kv) in kernel.iter().enumerate() {
            let yi = reflect101(y as isize + k as isize - r, h);
            let src_row = &tmp[yi * w..(yi + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    GrayImage::from_vec(w, h, out).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_one() {
        for sigma in [0.5, 0.8, 1.6, 3.2] {
            let k = gaussian_kernel(sigma);
            let s: f32 = k.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert_eq!(k.len() % 2, 1);
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect101(-1, 5), 1);
        assert_eq!(reflect101(-2, 5), 2);
        assert_eq!(reflect101(5, 5), 3);
        assert_eq!(reflect101(6, 5), 2);
        assert_eq!(reflect101(-9, 3), 1);
        assert_eq!(reflect101(4, 1), 0);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = GrayImage::filled(9, 4, 0.25);
        let out = gaussian_blur(&img, 2.0);
        assert!(out.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-6));
    }
}
