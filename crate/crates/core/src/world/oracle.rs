use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::Detection;
use crate::toyvlm::scene::Scene;
use crate::util::derive_seed;
use crate::world::corpus::{sample_categorical, CooccurStats};

/// Noise model of the upstream object detector. Per true object: drop it with
/// `p_miss`; otherwise relabel it with `p_swap` (uniform over the other
/// categories) and jitter every box coordinate with Gaussian noise of standard
/// deviation `jitter_sigma` (clamped to [0, 1]). Independently, each true
/// object spawns one spurious detection with `p_false`, labelled with an
/// absent category drawn by co-occurrence weight against the scene content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub p_miss: f64,
    pub p_swap: f64,
    pub p_false: f64,
    pub jitter_sigma: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { p_miss: 0.0, p_swap: 0.0, p_false: 0.0, jitter_sigma: 0.0 }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_miss", self.p_miss),
            ("p_swap", self.p_swap),
            ("p_false", self.p_false),
        ] {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "jitter_sigma = {} must be finite and non-negative",
                self.jitter_sigma
            )));
        }
        Ok(())
    }
}

/// Detections for one scene plus bookkeeping on what the noise did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub detections: Vec<Detection>,
    pub total_true: usize,
    pub missed: usize,
    pub swapped: usize,
    pub spurious: usize,
}

/// `DetectionOutcome` tagged with its scene for line-oriented persistence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDetections {
    pub scene_id: u64,
    #[serde(flatten)]
    pub outcome: DetectionOutcome,
}

const SPURIOUS_SIZE_MIN: f64 = 0.08;
const SPURIOUS_SIZE_MAX: f64 = 0.35;

pub struct DetectionOracle {
    cfg: OracleConfig,
    categories: usize,
    coord_bins: usize,
    cooccur: Option<CooccurStats>,
}

impl DetectionOracle {
    pub fn new(
        cfg: OracleConfig,
        categories: usize,
        coord_bins: usize,
        cooccur: Option<CooccurStats>,
    ) -> Result<DetectionOracle> {
        cfg.validate()?;
        if categories == 0 || coord_bins == 0 {
            return Err(Error::Config(
                "oracle needs at least one category and one coordinate bin".into(),
            ));
        }
        if let Some(stats) = &cooccur {
            if stats.categories() != categories {
                return Err(Error::Config(format!(
                    "co-occurrence stats cover {} categories, oracle expects {}",
                    stats.categories(),
                    categories
                )));
            }
        }
        Ok(DetectionOracle { cfg, categories, coord_bins, cooccur })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    /// Runs the noise model on one scene. `seed` fixes the entire outcome.
    pub fn detect(&self, scene: &Scene, seed: u64) -> DetectionOutcome {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let present = scene.present_categories();
        let mut out = DetectionOutcome {
            detections: Vec::new(),
            total_true: scene.objects.len(),
            missed: 0,
            swapped: 0,
            spurious: 0,
        };
        for obj in &scene.objects {
            if rng.random::<f64>() < self.cfg.p_miss {
                out.missed += 1;
                continue;
            }
            let mut category = obj.category;
            if rng.random::<f64>() < self.cfg.p_swap {
                let pick = rng.random_range(0..self.categories.saturating_sub(1).max(1));
                category = if pick >= obj.category && self.categories > 1 { pick + 1 } else { pick };
                if category != obj.category {
                    out.swapped += 1;
                }
            }
            let mut coords = obj.bbox;
            if self.cfg.jitter_sigma > 0.0 {
                for c in coords.iter_mut() {
                    let noise: f64 = rng.sample(rand_distr::StandardNormal);
                    *c = (*c + noise * self.cfg.jitter_sigma).clamp(0.0, 1.0);
                }
            }
            out.detections.push(Detection::from_coords(category, coords, self.coord_bins));
        }
        for _ in &scene.objects {
            if rng.random::<f64>() < self.cfg.p_false {
                if let Some(det) = self.spurious_detection(&present, &mut rng) {
                    out.detections.push(det);
                    out.spurious += 1;
                }
            }
        }
        out
    }

    /// One detection per scene, each scene seeded independently from `base_seed`.
    pub fn detect_all(&self, scenes: &[Scene], base_seed: u64) -> Vec<SceneDetections> {
        scenes
            .iter()
            .map(|s| SceneDetections {
                scene_id: s.id,
                outcome: self.detect(s, derive_seed(base_seed, &format!("scene/{}", s.id))),
            })
            .collect()
    }

    fn spurious_detection<R: Rng>(&self, present: &[usize], rng: &mut R) -> Option<Detection> {
        let absent: Vec<usize> =
            (0..self.categories).filter(|c| !present.contains(c)).collect();
        if absent.is_empty() {
            return None;
        }
        let category = match &self.cooccur {
            Some(stats) => {
                let weights: Vec<f64> = absent
                    .iter()
                    .map(|&c| {
                        1.0 + present.iter().map(|&p| stats.pair(p, c) as f64).sum::<f64>()
                    })
                    .collect();
                absent[sample_categorical(&weights, rng)]
            }
            None => absent[rng.random_range(0..absent.len())],
        };
        let bw = rng.random_range(SPURIOUS_SIZE_MIN..=SPURIOUS_SIZE_MAX);
        let bh = rng.random_range(SPURIOUS_SIZE_MIN..=SPURIOUS_SIZE_MAX);
        let x1 = rng.random_range(0.0..=(1.0 - bw));
        let y1 = rng.random_range(0.0..=(1.0 - bh));
        Some(Detection::from_coords(category, [x1, y1, x1 + bw, y1 + bh], self.coord_bins))
    }
}
