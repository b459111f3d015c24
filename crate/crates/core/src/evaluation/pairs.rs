use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::EvaluationError;
use crate::geometry::Point2;

/// Number of hand-annotated correspondences per scene.
pub const CORRESPONDENCE_COUNT: usize = 10;

/// A near/far image pair with point correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAnnotation {
    pub scene: String,
    pub near_image: PathBuf,
    pub far_image: PathBuf,
    correspondences: Vec<(Point2, Point2)>,
}

impl PairAnnotation {
    /// Validates the correspondence count and that every point lies inside
    /// its image (`near_size` and `far_size` are `(width, height)`).
    pub fn new(
        scene: impl Into<String>,
        near_image: PathBuf,
        far_image: PathBuf,
        correspondences: Vec<(Point2, Point2)>,
        near_size: (u32, u32),
        far_size: (u32, u32),
    ) -> Result<Self, String> {
        if correspondences.len() != CORRESPONDENCE_COUNT {
            return Err(format!(
                "expected {CORRESPONDENCE_COUNT} correspondences, found {}",
                correspondences.len()
            ));
        }
        let inside = |p: &Point2, (w, h): (u32, u32)| {
            p.is_finite() && (0.0..=w as f64).contains(&p.x) && (0.0..=h as f64).contains(&p.y)
        };
        for (i, (n, f)) in correspondences.iter().enumerate() {
            if !inside(n, near_size) {
                return Err(format!("near point {i} ({}, {}) lies outside the image", n.x, n.y));
            }
            if !inside(f, far_size) {
                return Err(format!("far point {i} ({}, {}) lies outside the image", f.x, f.y));
            }
        }
        Ok(Self {
            scene: scene.into(),
            near_image,
            far_image,
            correspondences,
        })
    }

    /// `(near, far)` pairs.
    pub fn correspondences(&self) -> &[(Point2, Point2)] {
        &self.correspondences
    }
}

#[derive(Deserialize)]
struct AnnotationFile {
    correspondences: Vec<CorrespondenceEntry>,
}

#[derive(Deserialize)]
struct CorrespondenceEntry {
    near: [f64; 2],
    far: [f64; 2],
}

fn image_size(path: &Path) -> Result<(u32, u32), EvaluationError> {
    if !path.is_file() {
        return Err(EvaluationError::MissingImage(path.to_path_buf()));
    }
    image::image_dimensions(path)
        .map_err(|e| EvaluationError::parse(path, 0, format!("unreadable image: {e}")))
}

fn load_scene(dir: &Path) -> Result<PairAnnotation, EvaluationError> {
    let scene = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let near = dir.join("near.png");
    let far = dir.join("far.png");
    let ann_path = dir.join("annotation.json");
    let near_size = image_size(&near)?;
    let far_size = image_size(&far)?;
    let text = fs::read_to_string(&ann_path).map_err(|source| EvaluationError::Io {
        path: ann_path.clone(),
        source,
    })?;
    let file: AnnotationFile = serde_json::from_str(&text)
        .map_err(|e| EvaluationError::parse(&ann_path, e.line(), e.to_string()))?;
    let correspondences = file
        .correspondences
        .iter()
        .map(|c| (Point2::new(c.near[0], c.near[1]), Point2::new(c.far[0], c.far[1])))
        .collect();
    PairAnnotation::new(scene, near, far, correspondences, near_size, far_size)
        .map_err(|m| EvaluationError::parse(&ann_path, 0, m))
}

/// Loads every scene directory under `root` in name order. Each scene holds
/// `near.png`, `far.png` and `annotation.json`.
pub fn load_pair_dataset(root: &Path) -> Result<Vec<PairAnnotation>, EvaluationError> {
    let entries = fs::read_dir(root).map_err(|source| EvaluationError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_scene(d)).collect()
}

/// Median over all point pairs `(i, j)` of `|near_i - near_j| / |far_i - far_j|`.
pub fn median_scale_change(correspondences: &[(Point2, Point2)]) -> Result<f64, EvaluationError> {
    if correspondences.len() < 2 {
        return Err(EvaluationError::TooFewCorrespondences);
    }
    let mut ratios = Vec::new();
    for (i, (ni, fi)) in correspondences.iter().enumerate() {
        for (nj, fj) in &correspondences[i + 1..] {
            let d_far = fi.distance(fj);
            if d_far == 0.0 {
                return Err(EvaluationError::DuplicateFarPoints);
            }
            ratios.push(ni.distance(nj) / d_far);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let m = ratios.len();
    Ok(if m % 2 == 1 {
        ratios[m / 2]
    } else {
        (ratios[m / 2 - 1] + ratios[m / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn far_points() -> Vec<Point2> {
        (0..10)
            .map(|i| Point2::new(30.0 + 11.0 * i as f64, 40.0 + ((i * 7) % 10) as f64 * 9.0))
            .collect()
    }

    #[test]
    fn scale_change_examples() {
        let same: Vec<(Point2, Point2)> = far_points().into_iter().map(|p| (p, p)).collect();
        assert_eq!(median_scale_change(&same).unwrap(), 1.0);
        let doubled: Vec<(Point2, Point2)> = far_points()
            .into_iter()
            .map(|p| (Point2::new(2.0 * p.x, 2.0 * p.y), p))
            .collect();
        assert!((median_scale_change(&doubled).unwrap() - 2.0).abs() < 1e-12);
        let mut dup = same.clone();
        dup[3].1 = dup[4].1;
        assert!(matches!(median_scale_change(&dup), Err(EvaluationError::DuplicateFarPoints)));
    }

    #[test]
    fn scale_change_matches_naive_oracle() {
        let corr: Vec<(Point2, Point2)> = far_points()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (Point2::new(p.x * 1.7 + (i * i) as f64, p.y * 2.3 - i as f64), p))
            .collect();
        let mut ratios = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                if i < j {
                    let dn = ((corr[i].0.x - corr[j].0.x).powi(2) + (corr[i].0.y - corr[j].0.y).powi(2)).sqrt();
                    let df = ((corr[i].1.x - corr[j].1.x).powi(2) + (corr[i].1.y - corr[j].1.y).powi(2)).sqrt();
                    ratios.push(dn / df);
                }
            }
        }
        assert_eq!(ratios.len(), 45);
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(median_scale_change(&corr).unwrap(), ratios[22]);
    }

    #[test]
    fn even_count_median_averages_middle() {
        // Two points give one ratio; three give three; four give six.
        let corr = vec![
            (Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)),
            (Point2::new(1.0, 0.0), Point2::new(1.0, 0.0)),
            (Point2::new(0.0, 3.0), Point2::new(0.0, 1.0)),
            (Point2::new(2.0, 0.0), Point2::new(4.0, 0.0)),
        ];
        // Ratios: 1, 3, 0.5, sqrt(10)/sqrt(2), 1/3, sqrt(13)/sqrt(17).
        let mut r = [1.0, 3.0, 0.5, 10f64.sqrt() / 2f64.sqrt(), 1.0 / 3.0, 13f64.sqrt() / 17f64.sqrt()];
        r.sort_by(f64::total_cmp);
        assert_eq!(median_scale_change(&corr).unwrap(), (r[2] + r[3]) / 2.0);
    }

    fn write_png(path: &Path, w: u32, h: u32) {
        image::RgbImage::new(w, h).save(path).unwrap();
    }

    fn write_scene(root: &Path, name: &str, corr: &[([f64; 2], [f64; 2])]) {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        write_png(&dir.join("near.png"), 64, 48);
        write_png(&dir.join("far.png"), 64, 48);
        let json = serde_json::json!({
            "correspondences": corr.iter().map(|(n, f)| serde_json::json!({"near": n, "far": f})).collect::<Vec<_>>()
        });
        fs::write(dir.join("annotation.json"), json.to_string()).unwrap();
    }

    fn valid_corr() -> Vec<([f64; 2], [f64; 2])> {
        (0..10)
            .map(|i| ([i as f64 * 6.0, 5.0 + i as f64], [10.0 + i as f64 * 3.0, 20.0 + (i % 3) as f64]))
            .collect()
    }

    #[test]
    fn loads_valid_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), "b_scene", &valid_corr());
        write_scene(dir.path(), "a_scene", &valid_corr());
        fs::write(dir.path().join("README"), "not a scene").unwrap();
        let anns = load_pair_dataset(dir.path()).unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!(anns[0].scene, "a_scene");
        assert_eq!(anns[1].correspondences()[9].0, Point2::new(54.0, 14.0));
    }

    #[test]
    fn rejects_nine_points_and_out_of_bounds() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), "s", &valid_corr()[..9]);
        let err = load_pair_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, EvaluationError::Parse { .. }) && err.to_string().contains("found 9"));

        let dir = tempfile::tempdir().unwrap();
        let mut corr = valid_corr();
        corr[4].1 = [64.5, 10.0];
        write_scene(dir.path(), "s", &corr);
        let err = load_pair_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn missing_image() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), "s", &valid_corr());
        fs::remove_file(dir.path().join("s/far.png")).unwrap();
        assert!(matches!(
            load_pair_dataset(dir.path()),
            Err(EvaluationError::MissingImage(p)) if p.ends_with("far.png")
        ));
    }
}
