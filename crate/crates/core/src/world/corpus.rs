use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toyvlm::scene::{Scene, SceneObject};

/// Symmetric co-occurrence preference between two categories. During corpus
/// sampling, once `a` is present in a scene the weight of drawing `b` next is
/// boosted by `weight` (and vice versa).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurPair {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub categories: usize,
    pub scenes: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Object side lengths are drawn uniformly from [size_min, size_max).
    pub size_min: f64,
    pub size_max: f64,
    pub cooccur: Vec<CooccurPair>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            categories: 40,
            scenes: 300,
            objects_min: 2,
            objects_max: 6,
            size_min: 0.08,
            size_max: 0.35,
            cooccur: default_pairs(40),
            seed: 7,
        }
    }
}

/// Canonical pairing scheme: category 2i prefers 2i+1. Covers every category
/// with exactly one strong partner, so adversarial negatives always exist.
pub fn default_pairs(categories: usize) -> Vec<CooccurPair> {
    (0..categories / 2)
        .map(|i| CooccurPair { a: 2 * i, b: 2 * i + 1, weight: 6.0 })
        .collect()
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Config(m);
        if self.categories == 0 {
            return Err(bad("corpus needs at least one category".into()));
        }
        if self.scenes == 0 {
            return Err(bad("corpus needs at least one scene".into()));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(bad(format!(
                "object count range {}..={} is invalid",
                self.objects_min, self.objects_max
            )));
        }
        if !(self.size_min > 0.0 && self.size_min <= self.size_max && self.size_max <= 1.0) {
            return Err(bad(format!(
                "object size range [{}, {}] must sit inside (0, 1]",
                self.size_min, self.size_max
            )));
        }
        for p in &self.cooccur {
            if p.a >= self.categories || p.b >= self.categories {
                return Err(bad(format!(
                    "co-occurrence pair ({}, {}) is out of range for {} categories",
                    p.a, p.b, self.categories
                )));
            }
            if p.a == p.b {
                return Err(bad(format!("co-occurrence pair ({}, {}) is degenerate", p.a, p.b)));
            }
            if !(p.weight.is_finite() && p.weight >= 0.0) {
                return Err(bad(format!("co-occurrence weight {} is invalid", p.weight)));
            }
        }
        Ok(())
    }

    fn weight_matrix(&self) -> Vec<Vec<f64>> {
        let mut w = vec![vec![0.0; self.categories]; self.categories];
        for p in &self.cooccur {
            w[p.a][p.b] += p.weight;
            w[p.b][p.a] += p.weight;
        }
        w
    }
}

/// Draws an index with probability proportional to `weights` (left to right).
pub(crate) fn sample_categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "categorical weights must not all be zero");
    let mut t = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        t -= w;
        if t < 0.0 {
            return i;
        }
    }
    last
}

/// Generates the scene corpus. The first object of each scene is uniform over
/// categories; each later object is drawn with weight 1 plus the summed
/// co-occurrence weight toward the categories already present.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let w = cfg.weight_matrix();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut scenes = Vec::with_capacity(cfg.scenes);
    for id in 0..cfg.scenes {
        let count = rng.random_range(cfg.objects_min..=cfg.objects_max);
        let mut present: Vec<usize> = Vec::new();
        let mut objects = Vec::with_capacity(count);
        for k in 0..count {
            let category = if k == 0 {
                rng.random_range(0..cfg.categories)
            } else {
                let weights: Vec<f64> = (0..cfg.categories)
                    .map(|c| 1.0 + present.iter().map(|&p| w[p][c]).sum::<f64>())
                    .collect();
                sample_categorical(&weights, &mut rng)
            };
            if !present.contains(&category) {
                present.push(category);
            }
            let bw = rng.random_range(cfg.size_min..=cfg.size_max);
            let bh = rng.random_range(cfg.size_min..=cfg.size_max);
            let x1 = rng.random_range(0.0..=(1.0 - bw));
            let y1 = rng.random_range(0.0..=(1.0 - bh));
            objects.push(SceneObject { category, bbox: [x1, y1, x1 + bw, y1 + bh] });
        }
        let scene = Scene { id: id as u64, objects };
        scene.validate(cfg.categories, cfg.objects_max)?;
        scenes.push(scene);
    }
    Ok(scenes)
}

/// Scene-level presence statistics over a corpus: how often each category
/// appears, and how often each unordered pair appears together.
#[derive(Clone, Debug)]
pub struct CooccurStats {
    categories: usize,
    presence: Vec<u64>,
    pair: Vec<Vec<u64>>,
    scenes: u64,
}

impl CooccurStats {
    pub fn from_scenes(scenes: &[Scene], categories: usize) -> CooccurStats {
        let mut presence = vec![0u64; categories];
        let mut pair = vec![vec![0u64; categories]; categories];
        for scene in scenes {
            let cats = scene.present_categories();
            for &c in &cats {
                presence[c] += 1;
            }
            for i in 0..cats.len() {
                for j in i + 1..cats.len() {
                    pair[cats[i]][cats[j]] += 1;
                    pair[cats[j]][cats[i]] += 1;
                }
            }
        }
        CooccurStats { categories, presence, pair, scenes: scenes.len() as u64 }
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn scenes(&self) -> u64 {
        self.scenes
    }

    pub fn presence(&self, c: usize) -> u64 {
        self.presence[c]
    }

    pub fn pair(&self, a: usize, b: usize) -> u64 {
        self.pair[a][b]
    }

    /// Among `candidates`, the one that co-occurs most with `anchor`.
    /// Ties resolve to the smallest category id.
    pub fn top_partner(&self, anchor: usize, candidates: &[usize]) -> Option<usize> {
        candidates
            .iter()
            .copied()
            .max_by(|&a, &b| {
                self.pair[anchor][a]
                    .cmp(&self.pair[anchor][b])
                    .then(b.cmp(&a))
            })
    }
}
