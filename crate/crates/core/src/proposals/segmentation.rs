//! Graph-based over-segmentation on an 8-connected pixel grid.

use crate::filter::gaussian_blur;
use crate::image::RgbImage;

use super::SegmentationParams;

/// Per-pixel region labels, contiguous from 0 in raster order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub region_count: usize,
}

impl LabelMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    threshold: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize, k: f64) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            threshold: vec![k; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins two roots, returning the new root.
    fn join(&mut self, a: usize, b: usize) -> usize {
        let (big, small) = if self.size[a] >= self.size[b] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        big
    }
}

struct Edge {
    w: f32,
    a: u32,
    b: u32,
}

/// Felzenszwalb-Huttenlocher segmentation.
///
/// Channels are smoothed with `params.smoothing_sigma` and compared on a
/// 0-255 scale, so `params.k` has its conventional magnitude. Components
/// smaller than `params.min_region` are merged afterwards along the cheapest
/// remaining edges.
pub fn graph_segment(image: &RgbImage, params: &SegmentationParams) -> LabelMap {
    let (w, h) = (image.width(), image.height());
    let n = w * h;
    if n == 0 {
        return LabelMap {
            width: w,
            height: h,
            labels: Vec::new(),
            region_count: 0,
        };
    }
    let channels: Vec<Vec<f32>> = (0..3)
        .map(|c| {
            gaussian_blur(&image.channel(c), params.smoothing_sigma)
                .as_slice()
                .iter()
                .map(|v| v * 255.0)
                .collect()
        })
        .collect();
    let diff = |p: usize, q: usize| -> f32 {
        let mut acc = 0.0f32;
        for ch in &channels {
            let d = ch[p] - ch[q];
            acc += d * d;
        }
        acc.sqrt()
    };

    let mut edges = Vec::with_capacity(4 * n);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut push = |q: usize| {
                edges.push(Edge {
                    w: diff(p, q),
                    a: p as u32,
                    b: q as u32,
                })
            };
            if x + 1 < w {
                push(p + 1);
            }
            if y + 1 < h {
                push(p + w);
            }
            if x + 1 < w && y + 1 < h {
                push(p + w + 1);
            }
            if x + 1 < w && y > 0 {
                push(p - w + 1);
            }
        }
    }
    edges.sort_by(|e, f| e.w.total_cmp(&f.w).then(e.a.cmp(&f.a)).then(e.b.cmp(&f.b)));

    let k = params.k;
    let mut set = DisjointSet::new(n, k);
    for e in &edges {
        let a = set.find(e.a as usize);
        let b = set.find(e.b as usize);
        if a == b {
            continue;
        }
        let w = e.w as f64;
        if w <= set.threshold[a] && w <= set.threshold[b] {
            let root = set.join(a, b);
            set.threshold[root] = w + k / set.size[root] as f64;
        }
    }
    for e in &edges {
        let a = set.find(e.a as usize);
        let b = set.find(e.b as usize);
        if a != b && (set.size[a] < params.min_region || set.size[b] < params.min_region) {
            set.join(a, b);
        }
    }

    let mut remap = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut labels = Vec::with_capacity(n);
    for p in 0..n {
        let root = set.find(p);
        if remap[root] == u32::MAX {
            remap[root] = next;
            next += 1;
        }
        labels.push(remap[root]);
    }
    LabelMap {
        width: w,
        height: h,
        labels,
        region_count: next as usize,
    }
}
