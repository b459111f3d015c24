use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold in pixels.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    /// Target probability of drawing at least one all-inlier sample; drives
    /// early termination.
    pub confidence: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 6.0,
            max_iterations: 2000,
            confidence: 0.999,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(GeometryError::InvalidParameter("inlier_threshold must be positive"));
        }
        if self.max_iterations < 1 {
            return Err(GeometryError::InvalidParameter("max_iterations must be at least 1"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(GeometryError::InvalidParameter("confidence must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Number of samples needed to hit an all-inlier sample with the configured
/// confidence, given the current inlier ratio.
pub(crate) fn required_iterations(
    confidence: f64,
    inlier_ratio: f64,
    sample_size: usize,
    cap: usize,
) -> usize {
    let good = inlier_ratio.powi(sample_size as i32);
    if good >= 1.0 {
        return 1;
    }
    if good <= 0.0 {
        return cap;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - good).ln()).ceil();
    if !n.is_finite() || n >= cap as f64 {
        cap
    } else {
        (n as usize).max(1)
    }
}

pub(crate) struct Hypothesis<M> {
    pub model: M,
    pub inliers: usize,
    pub residual_sum: f64,
}

/// Core hypothesize-and-verify loop shared by the homography and essential
/// estimators.
///
/// `fit` returns `None` for degenerate minimal samples, which still consume an
/// iteration. `score` returns the inlier count and the sum of inlier residuals;
/// ties on count go to the lower residual sum.
pub(crate) fn consensus<M>(
    n: usize,
    sample_size: usize,
    cfg: &RansacConfig,
    mut fit: impl FnMut(&[usize]) -> Option<M>,
    mut score: impl FnMut(&M) -> (usize, f64),
) -> Option<Hypothesis<M>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<Hypothesis<M>> = None;
    let mut budget = cfg.max_iterations;
    let mut iteration = 0;
    let mut sample = Vec::with_capacity(sample_size);
    while iteration < budget {
        iteration += 1;
        sample.clear();
        sample.extend(rand::seq::index::sample(&mut rng, n, sample_size).iter());
        let Some(model) = fit(&sample) else {
            continue;
        };
        let (inliers, residual_sum) = score(&model);
        let better = match &best {
            None => true,
            Some(b) => {
                inliers > b.inliers || (inliers == b.inliers && residual_sum < b.residual_sum)
            }
        };
        if better {
            budget = required_iterations(
                cfg.confidence,
                inliers as f64 / n as f64,
                sample_size,
                cfg.max_iterations,
            )
            .max(iteration);
            best = Some(Hypothesis {
                model,
                inliers,
                residual_sum,
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_schedule() {
        assert_eq!(required_iterations(0.999, 1.0, 4, 2000), 1);
        assert_eq!(required_iterations(0.999, 0.0, 4, 2000), 2000);
        // 0.5^4 = 1/16: ln(0.001)/ln(15/16) = 107.03
        assert_eq!(required_iterations(0.999, 0.5, 4, 2000), 108);
        assert_eq!(required_iterations(0.999, 0.1, 8, 2000), 2000);
    }

    #[test]
    fn config_validation() {
        assert!(RansacConfig::default().validate().is_ok());
        let bad = RansacConfig {
            inlier_threshold: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RansacConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RansacConfig {
            confidence: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
