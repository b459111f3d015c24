//! Floating-point image grids used throughout the pipeline.
//!
//! Intensities are stored as `f32` with a nominal range of `[0, 1]`. Nothing
//! clamps values, so synthetic tests may use any finite range.

use std::path::Path;

use crate::geometry::BBox;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: ::image::ImageError,
    },
    #[error("image dimensions {width}x{height} do not match buffer of {len} pixels")]
    BadBuffer { width: usize, height: usize, len: usize },
}

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BadBuffer {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel access with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Three-channel image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, value: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BadBuffer {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Loads any format the `image` crate understands and scales channels to `[0, 1]`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let img = ::image::open(path)
            .map_err(|source| ImageError::Read {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &::image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| {
                [
                    p[0] as f32 / 255.0,
                    p[1] as f32 / 255.0,
                    p[2] as f32 / 255.0,
                ]
            })
            .collect();
        Self {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    /// Quantizes to 8 bits per channel, rounding and clamping to `[0, 255]`.
    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let mut out = ::image::RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in out.pixels_mut().zip(&self.data) {
            for c in 0..3 {
                dst[c] = (src[c] * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    /// Raw interleaved 8-bit bytes, row-major.
    pub fn to_rgb8_bytes(&self) -> Vec<u8> {
        self.to_rgb8().into_raw()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f32; 3]) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Luma with weights 0.299, 0.587, 0.114.
    pub fn to_luma(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    pub fn channel(&self, c: usize) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p[c]).collect(),
        }
    }

    pub fn full_bbox(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
            .expect("image has positive dimensions")
    }

    /// Bilinear sample at continuous pixel coordinates where integer
    /// coordinates are pixel centers. Out-of-range coordinates clamp to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            out[c] = (top * (1.0 - fy) + bottom * fy) as f32;
        }
        out
    }

    /// Resamples the continuous region `bbox` onto an `out_w` x `out_h` grid.
    ///
    /// Output pixel centers are spread evenly over the box, so a box whose size
    /// equals the output size and whose corners lie on pixel boundaries is
    /// copied exactly.
    pub fn resample_region(&self, bbox: &BBox, out_w: usize, out_h: usize) -> RgbImage {
        let sx = bbox.width() / out_w as f64;
        let sy = bbox.height() / out_h as f64;
        RgbImage::from_fn(out_w, out_h, |i, j| {
            let x = bbox.x_min + (i as f64 + 0.5) * sx - 0.5;
            let y = bbox.y_min + (j as f64 + 0.5) * sy - 0.5;
            self.sample_bilinear(x, y)
        })
    }

    pub fn resize(&self, out_w: usize, out_h: usize) -> RgbImage {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        self.resample_region(&self.full_bbox(), out_w, out_h)
    }
}

impl GrayImage {
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| [v, v, v]).collect(),
        }
    }
}
