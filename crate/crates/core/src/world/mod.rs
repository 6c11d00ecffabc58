//! Synthetic benchmark world: scene corpus with co-occurrence bias, a noisy
//! detection oracle, and POPE-style yes/no question sets.

mod corpus;
mod oracle;
mod persist;
mod qa;

pub use corpus::{
    default_pairs, generate_corpus, CooccurPair, CooccurStats, CorpusConfig,
};
pub use oracle::{DetectionOracle, DetectionOutcome, OracleConfig, SceneDetections};
pub use persist::{read_jsonl, write_jsonl, FORMAT_DETECTIONS, FORMAT_QA, FORMAT_SCENES};
pub use qa::{make_pope_qa, question_tokens, QaBuildReport, QASample, Split};
