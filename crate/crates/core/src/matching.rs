//! Cross-checked nearest-neighbour matching of descriptors, objects and
//! SIFT features.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{cosine_distance_values, ObjectDescriptor};
use crate::geometry::PointMatch;
use crate::proposals::ObjectProposal;
use crate::sift::SiftFeature;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("descriptor length {got} differs from {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("proposal {index} in image {image} has no descriptor")]
    MissingDescriptor { image: char, index: usize },
    #[error("proposals were described by different extractors")]
    KindMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

/// A cross-checked pair of indices into two descriptor sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexMatch {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

/// Match between proposal `index_a` of the first image and `index_b` of the
/// second, with their cosine distance.
pub type ObjectMatch = IndexMatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    SiftOnly,
    ObjectsOnly,
    Combined,
}

impl MatchMethod {
    pub const ALL: [MatchMethod; 3] = [
        MatchMethod::SiftOnly,
        MatchMethod::ObjectsOnly,
        MatchMethod::Combined,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MatchMethod::SiftOnly => "sift_only",
            MatchMethod::ObjectsOnly => "objects_only",
            MatchMethod::Combined => "combined",
        }
    }

    /// Whether the method needs object proposals and descriptors.
    pub fn uses_objects(&self) -> bool {
        !matches!(self, MatchMethod::SiftOnly)
    }

    pub fn uses_sift(&self) -> bool {
        !matches!(self, MatchMethod::ObjectsOnly)
    }
}

impl fmt::Display for MatchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MatchMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected sift_only, objects_only or combined)"))
    }
}

fn euclidean(u: &[f32], v: &[f32]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_dims<T: AsRef<[f32]>>(a: &[T], b: &[T]) -> Result<(), MatchError> {
    let Some(expected) = a.iter().chain(b).map(|d| d.as_ref().len()).next() else {
        return Ok(());
    };
    for d in a.iter().chain(b) {
        let got = d.as_ref().len();
        if got != expected {
            return Err(MatchError::LengthMismatch { expected, got });
        }
    }
    Ok(())
}

/// Lexicographic minimum on `(distance, index)`.
#[derive(Clone, Copy)]
struct Best {
    distance: f64,
    index: usize,
}

impl Best {
    const NONE: Best = Best {
        distance: f64::INFINITY,
        index: usize::MAX,
    };

    fn offer(&mut self, distance: f64, index: usize) {
        if distance < self.distance || (distance == self.distance && index < self.index) {
            *self = Best { distance, index };
        }
    }

    fn merge(mut self, other: Best) -> Best {
        self.offer(other.distance, other.index);
        self
    }
}

/// Cross-checked nearest-neighbour matching: `(i, j)` is returned iff `j`
/// is the nearest element of `b` to `a[i]` and `i` is the nearest element of
/// `a` to `b[j]`. Ties go to the lowest index. Under the cosine metric, zero
/// vectors have no defined distance and never match. Output is sorted by
/// `index_a`.
pub fn mutual_nearest_match<T: AsRef<[f32]> + Sync>(
    a: &[T],
    b: &[T],
    metric: Metric,
) -> Result<Vec<IndexMatch>, MatchError> {
    check_dims(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let distance = |u: &[f32], v: &[f32]| -> f64 {
        match metric {
            Metric::Euclidean => euclidean(u, v),
            Metric::Cosine => cosine_distance_values(u, v).unwrap_or(f64::INFINITY),
        }
    };

    const CHUNK: usize = 64;
    let (row_best, col_best) = a
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, rows)| {
            let mut row_best = Vec::with_capacity(rows.len());
            let mut col_best = vec![Best::NONE; b.len()];
            for (r, u) in rows.iter().enumerate() {
                let i = c * CHUNK + r;
                let mut best = Best::NONE;
                for (j, v) in b.iter().enumerate() {
                    let d = distance(u.as_ref(), v.as_ref());
                    best.offer(d, j);
                    col_best[j].offer(d, i);
                }
                row_best.push(best);
            }
            (row_best, col_best)
        })
        .reduce(
            || (Vec::new(), vec![Best::NONE; b.len()]),
            |(mut rows_l, cols_l), (rows_r, cols_r)| {
                rows_l.extend(rows_r);
                let cols = cols_l.into_iter().zip(cols_r).map(|(l, r)| l.merge(r)).collect();
                (rows_l, cols)
            },
        );

    Ok(row_best
        .iter()
        .enumerate()
        .filter(|(i, best)| best.distance.is_finite() && col_best[best.index].index == *i)
        .map(|(i, best)| IndexMatch {
            index_a: i,
            index_b: best.index,
            distance: best.distance,
        })
        .collect())
}

/// Cross-checked cosine matching of described proposals.
pub fn match_objects(
    objs_a: &[ObjectProposal],
    objs_b: &[ObjectProposal],
) -> Result<Vec<ObjectMatch>, MatchError> {
    fn collect(objs: &[ObjectProposal], image: char) -> Result<Vec<&ObjectDescriptor>, MatchError> {
        objs.iter()
            .enumerate()
            .map(|(index, p)| {
                p.descriptor
                    .as_ref()
                    .ok_or(MatchError::MissingDescriptor { image, index })
            })
            .collect()
    }
    let da = collect(objs_a, 'a')?;
    let db = collect(objs_b, 'b')?;
    if let Some(first) = da.iter().chain(&db).next() {
        if da.iter().chain(&db).any(|d| d.kind() != first.kind()) {
            return Err(MatchError::KindMismatch);
        }
    }
    mutual_nearest_match(&da, &db, Metric::Cosine)
}

fn descriptors(features: &[SiftFeature]) -> Vec<&[f32]> {
    features.iter().map(|f| f.descriptor.as_slice()).collect()
}

fn to_point_matches(
    matches: &[IndexMatch],
    sift_a: &[SiftFeature],
    sift_b: &[SiftFeature],
) -> Vec<PointMatch> {
    matches
        .iter()
        .map(|m| {
            PointMatch::new(
                sift_a[m.index_a].location,
                sift_b[m.index_b].location,
                m.distance,
            )
        })
        .collect()
}

/// Cross-checked Euclidean matching over all SIFT features, as feature indices.
pub fn global_feature_matches(sift_a: &[SiftFeature], sift_b: &[SiftFeature]) -> Vec<IndexMatch> {
    mutual_nearest_match(&descriptors(sift_a), &descriptors(sift_b), Metric::Euclidean)
        .expect("SIFT descriptors share one length")
}

pub fn global_sift_matches(sift_a: &[SiftFeature], sift_b: &[SiftFeature]) -> Vec<PointMatch> {
    to_point_matches(&global_feature_matches(sift_a, sift_b), sift_a, sift_b)
}

/// For every object match, cross-checks the SIFT features inside box `a`
/// against those inside box `b` (boundaries included). Candidates from all
/// object matches are merged greedily by ascending distance so each feature
/// is used at most once. Output is sorted by `(index_a, index_b)`.
///
/// Panics if an object match indexes past the proposal slices.
pub fn region_guided_feature_matches(
    object_matches: &[ObjectMatch],
    proposals_a: &[ObjectProposal],
    proposals_b: &[ObjectProposal],
    sift_a: &[SiftFeature],
    sift_b: &[SiftFeature],
) -> Vec<IndexMatch> {
    let inside = |features: &[SiftFeature], p: &ObjectProposal| -> Vec<usize> {
        features
            .iter()
            .enumerate()
            .filter(|(_, f)| p.bbox.contains(&f.location))
            .map(|(i, _)| i)
            .collect()
    };

    let mut candidates: Vec<IndexMatch> = object_matches
        .par_iter()
        .flat_map_iter(|om| {
            let ia = inside(sift_a, &proposals_a[om.index_a]);
            let ib = inside(sift_b, &proposals_b[om.index_b]);
            let da: Vec<&[f32]> = ia.iter().map(|&i| sift_a[i].descriptor.as_slice()).collect();
            let db: Vec<&[f32]> = ib.iter().map(|&i| sift_b[i].descriptor.as_slice()).collect();
            mutual_nearest_match(&da, &db, Metric::Euclidean)
                .expect("SIFT descriptors share one length")
                .into_iter()
                .map(move |m| IndexMatch {
                    index_a: ia[m.index_a],
                    index_b: ib[m.index_b],
                    distance: m.distance,
                })
                .collect::<Vec<_>>()
        })
        .collect();

    candidates.sort_by(|x, y| {
        x.distance
            .total_cmp(&y.distance)
            .then(x.index_a.cmp(&y.index_a))
            .then(x.index_b.cmp(&y.index_b))
    });
    let mut used_a = vec![false; sift_a.len()];
    let mut used_b = vec![false; sift_b.len()];
    let mut kept: Vec<IndexMatch> = candidates
        .into_iter()
        .filter(|m| {
            if used_a[m.index_a] || used_b[m.index_b] {
                return false;
            }
            used_a[m.index_a] = true;
            used_b[m.index_b] = true;
            true
        })
        .collect();
    kept.sort_by_key(|m| (m.index_a, m.index_b));
    kept
}

pub fn region_guided_sift_matches(
    object_matches: &[ObjectMatch],
    proposals_a: &[ObjectProposal],
    proposals_b: &[ObjectProposal],
    sift_a: &[SiftFeature],
    sift_b: &[SiftFeature],
) -> Vec<PointMatch> {
    let matches =
        region_guided_feature_matches(object_matches, proposals_a, proposals_b, sift_a, sift_b);
    to_point_matches(&matches, sift_a, sift_b)
}

/// One point match per object match, joining the two box centres.
pub fn object_center_matches(
    object_matches: &[ObjectMatch],
    proposals_a: &[ObjectProposal],
    proposals_b: &[ObjectProposal],
) -> Vec<PointMatch> {
    object_matches
        .iter()
        .map(|m| {
            PointMatch::new(
                proposals_a[m.index_a].bbox.center(),
                proposals_b[m.index_b].bbox.center(),
                m.distance,
            )
        })
        .collect()
}
