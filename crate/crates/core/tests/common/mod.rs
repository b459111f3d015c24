#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalematch_core::geometry::{Homography, Point2};
use scalematch_core::image::{GrayImage, RgbImage};

/// Sum of seeded Gaussian blobs on a grey background, sampled at pixel centres.
pub fn blob_texture(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width * height / 500;
    let blobs: Vec<(f32, f32, f32, f32)> = (0..n)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (
                rng.random_range(0.0..width as f32),
                rng.random_range(0.0..height as f32),
                rng.random_range(2.0..7.0),
                sign * rng.random_range(0.15..0.4),
            )
        })
        .collect();
    GrayImage::from_fn(width, height, |x, y| {
        let mut v = 0.5;
        for &(bx, by, s, a) in &blobs {
            let d2 = (x as f32 - bx).powi(2) + (y as f32 - by).powi(2);
            if d2 < 16.0 * s * s {
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// Bilinear 2x upsampling; original point `p` lands on `2p + 0.5`.
pub fn upsample2(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    GrayImage::from_fn(2 * w, 2 * h, |x, y| {
        let sx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (w - 1) as f64);
        let sy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
        let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
        let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

struct Object {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    ellipse: bool,
    color: [f64; 3],
    dots: Vec<(f64, f64, f64, f64)>,
}

impl Object {
    fn inside(&self, x: f64, y: f64) -> bool {
        let (u, v) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        if self.ellipse {
            u * u + v * v <= 1.0
        } else {
            u.abs() <= 1.0 && v.abs() <= 1.0
        }
    }

    fn shade(&self, x: f64, y: f64) -> [f64; 3] {
        let mut k = 1.0;
        for &(dx, dy, r, a) in &self.dots {
            let d2 = (x - dx).powi(2) + (y - dy).powi(2);
            k += a * (-d2 / (2.0 * r * r)).exp();
        }
        self.color.map(|c| (c * k).clamp(0.0, 1.0))
    }
}

/// A scene of distinctly coloured objects with dotted interiors on a quiet
/// background, defined in continuous world coordinates.
pub struct Scene {
    objects: Vec<Object>,
}

const PALETTE: [[f64; 3]; 10] = [
    [0.85, 0.2, 0.2],
    [0.2, 0.7, 0.25],
    [0.2, 0.3, 0.85],
    [0.9, 0.8, 0.2],
    [0.75, 0.25, 0.75],
    [0.2, 0.75, 0.8],
    [0.95, 0.55, 0.15],
    [0.45, 0.3, 0.15],
    [0.6, 0.85, 0.5],
    [0.35, 0.35, 0.55],
];

impl Scene {
    /// Objects laid out on a jittered grid over `(x0, y0)..(x1, y1)`.
    pub fn new(seed: u64, x0: f64, y0: f64, x1: f64, y1: f64, cols: usize, rows: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cw = (x1 - x0) / cols as f64;
        let ch = (y1 - y0) / rows as f64;
        let mut objects = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let rx = cw * rng.random_range(0.28..0.38);
                let ry = ch * rng.random_range(0.28..0.38);
                let cx = x0 + cw * (c as f64 + 0.5) + rng.random_range(-0.08..0.08) * cw;
                let cy = y0 + ch * (r as f64 + 0.5) + rng.random_range(-0.08..0.08) * ch;
                let dots = (0..rng.random_range(5..9))
                    .map(|_| {
                        let a = if rng.random_bool(0.5) { 0.55 } else { -0.6 };
                        (
                            cx + rng.random_range(-0.7..0.7) * rx,
                            cy + rng.random_range(-0.7..0.7) * ry,
                            rng.random_range(1.6..3.2),
                            a,
                        )
                    })
                    .collect();
                objects.push(Object {
                    cx,
                    cy,
                    rx,
                    ry,
                    ellipse: rng.random_bool(0.5),
                    color: PALETTE[objects.len() % PALETTE.len()],
                    dots,
                });
            }
        }
        Self { objects }
    }

    pub fn color(&self, x: f64, y: f64) -> [f64; 3] {
        for o in &self.objects {
            if o.inside(x, y) {
                return o.shade(x, y);
            }
        }
        let v = 0.55 + 0.04 * (x * 0.05).sin() * (y * 0.04).cos();
        [v, v, v * 0.95]
    }

    /// Renders the view in which pixel `(x, y)` shows world point
    /// `(scale * x + ox, scale * y + oy)`, box-filtering each pixel footprint.
    pub fn render(&self, width: usize, height: usize, scale: f64, ox: f64, oy: f64) -> RgbImage {
        const SS: usize = 4;
        RgbImage::from_fn(width, height, |x, y| {
            let mut acc = [0.0f64; 3];
            for j in 0..SS {
                for i in 0..SS {
                    let px = x as f64 - 0.5 + (i as f64 + 0.5) / SS as f64;
                    let py = y as f64 - 0.5 + (j as f64 + 0.5) / SS as f64;
                    let c = self.color(scale * px + ox, scale * py + oy);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            acc.map(|v| (v / (SS * SS) as f64) as f32)
        })
    }
}

/// A near/far pair with a 2x scale change: the near view magnifies the
/// window of the far view starting at `offset`. Returns the images and the
/// near-to-far homography.
pub fn scale_pair(seed: u64) -> (RgbImage, RgbImage, Homography) {
    let (w, h) = (320usize, 240usize);
    let (ox, oy) = (80.0, 60.0);
    let scene = Scene::new(seed, ox, oy, ox + w as f64 / 2.0, oy + h as f64 / 2.0, 3, 2);
    let near = scene.render(w, h, 0.5, ox, oy);
    let far = scene.render(w, h, 1.0, 0.0, 0.0);
    let hm = Homography::from_rows([[0.5, 0.0, ox], [0.0, 0.5, oy], [0.0, 0.0, 1.0]]).unwrap();
    (near, far, hm)
}

/// Ten well-spread near-image points and their far-image images under `h`.
pub fn planted_points(h: &Homography, width: f64, height: f64) -> Vec<(Point2, Point2)> {
    (0..10)
        .map(|i| {
            let near = Point2::new(
                width * (0.1 + 0.8 * ((i * 3) % 10) as f64 / 9.0),
                height * (0.15 + 0.7 * ((i * 7) % 10) as f64 / 9.0),
            );
            (near, h.apply(&near).unwrap())
        })
        .collect()
}
