use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toyvlm::model::Answer;
use crate::toyvlm::scene::Scene;
use crate::toyvlm::vocab::Vocab;
use crate::world::corpus::CooccurStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One yes/no existence question about a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub id: u64,
    pub scene_id: u64,
    pub category: usize,
    pub label: Answer,
    pub split: Split,
}

/// Token ids for "is there a {category} in the image ?". Building from ids
/// keeps synthetic fallback category names out of the tokenizer.
pub fn question_tokens(category: usize, vocab: &Vocab) -> Result<Vec<u32>> {
    let word = |w: &str| {
        vocab
            .id(w)
            .ok_or_else(|| Error::Vocab(format!("question word {w:?} is missing")))
    };
    let mut ids = Vec::with_capacity(8);
    for w in ["is", "there", "a"] {
        ids.push(word(w)?);
    }
    ids.push(vocab.category_id(category)?);
    for w in ["in", "the", "image", "?"] {
        ids.push(word(w)?);
    }
    Ok(ids)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QaBuildReport {
    pub samples: usize,
    pub yes: usize,
    pub no: usize,
    pub skipped_scenes: usize,
}

/// Builds a balanced question set. Per usable scene: `k` positive questions
/// over distinct present categories, and for each positive one adversarial
/// negative, the absent category that co-occurs most with it in the corpus
/// (ties to the smaller id, already-used negatives excluded). Scenes in the
/// first half of the corpus feed the train split, the rest the test split.
/// Scenes without `k` distinct present or `k` usable absent categories are
/// skipped and counted.
pub fn make_pope_qa(
    scenes: &[Scene],
    categories: usize,
    k: usize,
    seed: u64,
) -> Result<(Vec<QASample>, QaBuildReport)> {
    if k == 0 {
        return Err(Error::Config("questions per scene must be positive".into()));
    }
    if scenes.is_empty() {
        return Err(Error::Config("question set needs at least one scene".into()));
    }
    let stats = CooccurStats::from_scenes(scenes, categories);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut report = QaBuildReport::default();
    let train_cutoff = scenes.len() / 2;
    for (idx, scene) in scenes.iter().enumerate() {
        let present = scene.present_categories();
        let mut absent: Vec<usize> =
            (0..categories).filter(|c| !present.contains(c)).collect();
        if present.len() < k || absent.len() < k {
            report.skipped_scenes += 1;
            continue;
        }
        let positives = sample_distinct(&present, k, &mut rng);
        let mut negatives = Vec::with_capacity(k);
        for &p in &positives {
            let pick = stats
                .top_partner(p, &absent)
                .expect("absent pool was sized for k picks");
            absent.retain(|&c| c != pick);
            negatives.push(pick);
        }
        let split = if idx < train_cutoff { Split::Train } else { Split::Test };
        for &category in &positives {
            samples.push(QASample {
                id: samples.len() as u64,
                scene_id: scene.id,
                category,
                label: Answer::Yes,
                split,
            });
        }
        for &category in &negatives {
            samples.push(QASample {
                id: samples.len() as u64,
                scene_id: scene.id,
                category,
                label: Answer::No,
                split,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "no scene had {k} distinct present and absent categories"
        )));
    }
    report.samples = samples.len();
    report.yes = samples.iter().filter(|s| s.label == Answer::Yes).count();
    report.no = report.samples - report.yes;
    Ok((samples, report))
}

/// First `k` entries of a seeded partial Fisher-Yates shuffle of `pool`.
fn sample_distinct<R: Rng>(pool: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    let mut pool = pool.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
