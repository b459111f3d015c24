//! Hierarchical grouping of an over-segmentation into object proposals.
//!
//! Single strategy: one segmentation, HSV histograms, and an equal-weight sum
//! of colour, texture, size and fill similarities.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use crate::filter::gaussian_blur;
use crate::geometry::BBox;
use crate::image::{GrayImage, RgbImage};

use super::segmentation::{graph_segment, LabelMap};
use super::{ObjectProposal, ProposalError, SegmentationParams};

const COLOR_BINS: usize = 25;
const TEXTURE_ORIENTATIONS: usize = 8;
const TEXTURE_BINS: usize = 10;
const COLOR_LEN: usize = 3 * COLOR_BINS;
const TEXTURE_LEN: usize = 3 * TEXTURE_ORIENTATIONS * TEXTURE_BINS;

#[derive(Debug, Clone)]
struct Region {
    min_x: usize,
    min_y: usize,
    max_x: usize,
    max_y: usize,
    size: usize,
    color: Vec<f32>,
    texture: Vec<f32>,
}

impl Region {
    fn bbox(&self) -> BBox {
        BBox::new(
            self.min_x as f64,
            self.min_y as f64,
            (self.max_x + 1) as f64,
            (self.max_y + 1) as f64,
        )
        .expect("regions are non-empty")
    }

    fn merge(&self, other: &Region) -> Region {
        let total = (self.size + other.size) as f32;
        let mix = |a: &[f32], b: &[f32]| -> Vec<f32> {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x * self.size as f32 + y * other.size as f32) / total)
                .collect()
        };
        Region {
            min_x: self.min_x.min(other.min_x),
            min_y: self.min_y.min(other.min_y),
            max_x: self.max_x.max(other.max_x),
            max_y: self.max_y.max(other.max_y),
            size: self.size + other.size,
            color: mix(&self.color, &other.color),
            texture: mix(&self.texture, &other.texture),
        }
    }
}

fn rgb_to_hsv(p: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = p.map(|v| v.clamp(0.0, 1.0));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    [h.clamp(0.0, 1.0), s, max]
}

#[inline]
fn bin_of(v: f32, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1)
}

fn l1_normalize(v: &mut [f32]) {
    let sum: f32 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
}

fn histogram_intersection(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y) as f64).sum()
}

/// Per-pixel texture bin indices: for each channel and each of eight
/// orientations, the positive part of the directional Gaussian derivative
/// quantized into ten bins after scaling by the image-wide maximum.
fn texture_bins(hsv: &[GrayImage; 3]) -> Vec<[u8; 3 * TEXTURE_ORIENTATIONS]> {
    let (w, h) = (hsv[0].width(), hsv[0].height());
    let mut out = vec![[0u8; 3 * TEXTURE_ORIENTATIONS]; w * h];
    let dirs: Vec<(f32, f32)> = (0..TEXTURE_ORIENTATIONS)
        .map(|o| {
            let a = o as f32 * std::f32::consts::TAU / TEXTURE_ORIENTATIONS as f32;
            (a.cos(), a.sin())
        })
        .collect();
    for (c, channel) in hsv.iter().enumerate() {
        let smooth = gaussian_blur(channel, 1.0);
        let mut responses = vec![0.0f32; w * h * TEXTURE_ORIENTATIONS];
        let mut max = [0.0f32; TEXTURE_ORIENTATIONS];
        for y in 0..h {
            for x in 0..w {
                let gx = 0.5
                    * (smooth.get_clamped(x as isize + 1, y as isize)
                        - smooth.get_clamped(x as isize - 1, y as isize));
                let gy = 0.5
                    * (smooth.get_clamped(x as isize, y as isize + 1)
                        - smooth.get_clamped(x as isize, y as isize - 1));
                for (o, (cos, sin)) in dirs.iter().enumerate() {
                    let r = (gx * cos + gy * sin).max(0.0);
                    responses[(y * w + x) * TEXTURE_ORIENTATIONS + o] = r;
                    max[o] = max[o].max(r);
                }
            }
        }
        for p in 0..w * h {
            for o in 0..TEXTURE_ORIENTATIONS {
                let r = responses[p * TEXTURE_ORIENTATIONS + o];
                let scaled = if max[o] > 0.0 { r / max[o] } else { 0.0 };
                out[p][c * TEXTURE_ORIENTATIONS + o] = bin_of(scaled, TEXTURE_BINS) as u8;
            }
        }
    }
    out
}

fn initial_regions(image: &RgbImage, labels: &LabelMap) -> Vec<Region> {
    let (w, h) = (image.width(), image.height());
    let hsv_pixels: Vec<[f32; 3]> = image.pixels().iter().map(|&p| rgb_to_hsv(p)).collect();
    let hsv = [0, 1, 2].map(|c| {
        GrayImage::from_vec(w, h, hsv_pixels.iter().map(|p| p[c]).collect())
            .expect("same dimensions")
    });
    let tex = texture_bins(&hsv);
    let mut regions: Vec<Region> = (0..labels.region_count)
        .map(|_| Region {
            min_x: usize::MAX,
            min_y: usize::MAX,
            max_x: 0,
            max_y: 0,
            size: 0,
            color: vec![0.0; COLOR_LEN],
            texture: vec![0.0; TEXTURE_LEN],
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let r = &mut regions[labels.labels[p] as usize];
            r.min_x = r.min_x.min(x);
            r.min_y = r.min_y.min(y);
            r.max_x = r.max_x.max(x);
            r.max_y = r.max_y.max(y);
            r.size += 1;
            for (c, &v) in hsv_pixels[p].iter().enumerate() {
                r.color[c * COLOR_BINS + bin_of(v, COLOR_BINS)] += 1.0;
            }
            for (slot, &bin) in tex[p].iter().enumerate() {
                r.texture[slot * TEXTURE_BINS + bin as usize] += 1.0;
            }
        }
    }
    for r in &mut regions {
        l1_normalize(&mut r.color);
        l1_normalize(&mut r.texture);
    }
    regions
}

fn adjacency(labels: &LabelMap) -> BTreeSet<(usize, usize)> {
    let (w, h) = (labels.width, labels.height);
    let mut pairs = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = labels.get(x, y) as usize;
            if x + 1 < w {
                let b = labels.get(x + 1, y) as usize;
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < h {
                let b = labels.get(x, y + 1) as usize;
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    pairs
}

fn similarity(a: &Region, b: &Region, image_size: f64) -> f64 {
    let color = histogram_intersection(&a.color, &b.color);
    let texture = histogram_intersection(&a.texture, &b.texture);
    let size = 1.0 - (a.size + b.size) as f64 / image_size;
    let union_area = (a.max_x.max(b.max_x) - a.min_x.min(b.min_x) + 1)
        * (a.max_y.max(b.max_y) - a.min_y.min(b.min_y) + 1);
    let fill = 1.0 - (union_area as f64 - a.size as f64 - b.size as f64) / image_size;
    color + texture + size + fill
}

/// Heap entry ordered by similarity, then by the lowest `(a, b)` pair.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    sim: f64,
    a: usize,
    b: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

/// Result of the hierarchical grouping, before deduplication.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub initial_regions: usize,
    /// Bounding box of every region in creation order: initial regions by
    /// label, then one per merge.
    pub boxes: Vec<BBox>,
}

pub fn group_regions(image: &RgbImage, labels: &LabelMap) -> Hierarchy {
    let mut regions = initial_regions(image, labels);
    let initial = regions.len();
    let image_size = (image.width() * image.height()) as f64;
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); initial];
    let mut heap = BinaryHeap::new();
    for (a, b) in adjacency(labels) {
        neighbors[a].insert(b);
        neighbors[b].insert(a);
        heap.push(Candidate {
            sim: similarity(&regions[a], &regions[b], image_size),
            a,
            b,
        });
    }
    let mut alive = vec![true; initial];

    while let Some(Candidate { a, b, .. }) = heap.pop() {
        if !alive[a] || !alive[b] {
            continue;
        }
        let merged = regions[a].merge(&regions[b]);
        let t = regions.len();
        regions.push(merged);
        alive[a] = false;
        alive[b] = false;
        alive.push(true);
        let mut adj: BTreeSet<usize> = neighbors[a].union(&neighbors[b]).copied().collect();
        adj.remove(&a);
        adj.remove(&b);
        for &n in &adj {
            neighbors[n].remove(&a);
            neighbors[n].remove(&b);
            neighbors[n].insert(t);
            heap.push(Candidate {
                sim: similarity(&regions[n], &regions[t], image_size),
                a: n,
                b: t,
            });
        }
        neighbors[a].clear();
        neighbors[b].clear();
        neighbors.push(adj);
    }

    Hierarchy {
        initial_regions: initial,
        boxes: regions.iter().map(Region::bbox).collect(),
    }
}

/// Object proposals for `image`.
///
/// Every region ever formed contributes its bounding box. Identical boxes are
/// collapsed onto their last occurrence, so the final proposal is always the
/// root of the hierarchy (the full image).
pub fn selective_search(
    image: &RgbImage,
    params: &SegmentationParams,
) -> Result<Vec<ObjectProposal>, ProposalError> {
    if image.width() < 32 || image.height() < 32 {
        return Err(ProposalError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
        });
    }
    let labels = graph_segment(image, params);
    let hierarchy = group_regions(image, &labels);
    Ok(dedup_keep_last(&hierarchy.boxes)
        .into_iter()
        .map(ObjectProposal::new)
        .collect())
}

fn dedup_keep_last(boxes: &[BBox]) -> Vec<BBox> {
    let key = |b: &BBox| {
        (
            b.x_min.to_bits(),
            b.y_min.to_bits(),
            b.x_max.to_bits(),
            b.y_max.to_bits(),
        )
    };
    let mut seen = HashSet::new();
    let mut out: Vec<BBox> = boxes
        .iter()
        .rev()
        .filter(|b| seen.insert(key(b)))
        .copied()
        .collect();
    out.reverse();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_primaries() {
        assert_eq!(rgb_to_hsv([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
        let g = rgb_to_hsv([0.0, 1.0, 0.0]);
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-6);
        let b = rgb_to_hsv([0.0, 0.0, 1.0]);
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(rgb_to_hsv([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn heap_breaks_ties_by_lowest_pair() {
        let mut heap = BinaryHeap::new();
        heap.push(Candidate { sim: 1.0, a: 2, b: 5 });
        heap.push(Candidate { sim: 1.0, a: 1, b: 7 });
        heap.push(Candidate { sim: 1.0, a: 1, b: 3 });
        heap.push(Candidate { sim: 0.5, a: 0, b: 1 });
        let c = heap.pop().unwrap();
        assert_eq!((c.a, c.b), (1, 3));
        let c = heap.pop().unwrap();
        assert_eq!((c.a, c.b), (1, 7));
    }

    #[test]
    fn dedup_keeps_last_occurrence() {
        let b1 = BBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
        let b2 = BBox::new(0.0, 0.0, 8.0, 8.0).unwrap();
        let b3 = BBox::new(1.0, 1.0, 8.0, 8.0).unwrap();
        assert_eq!(dedup_keep_last(&[b2, b1, b3, b2]), vec![b1, b3, b2]);
    }

    #[test]
    fn merge_count_is_regions_minus_one() {
        let img = RgbImage::from_fn(96, 64, |x, y| {
            let v = (((x / 16) + (y / 16)) % 3) as f32 / 2.0;
            [v, 1.0 - v, 0.5]
        });
        let labels = graph_segment(&img, &SegmentationParams::default());
        let hierarchy = group_regions(&img, &labels);
        assert!(labels.region_count > 2);
        assert_eq!(hierarchy.boxes.len(), 2 * labels.region_count - 1);
        assert_eq!(*hierarchy.boxes.last().unwrap(), img.full_bbox());
    }
}
