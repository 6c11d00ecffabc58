//! Desk-scale testbed for virtual-token prompt tuning against a frozen
//! decoder-only vision-language model.
//!
//! The crate is organized around a small reverse-mode tape ([`numcore`]),
//! a fixed toy VLM ([`toyvlm`]), prompt assembly for serialized object
//! detections ([`prompt`]), a synthetic scene/QA generator with a noisy
//! detection oracle ([`world`]), the trainable virtual-token block and its
//! optimizer ([`patch`]), and benchmark scoring plus hallucination
//! contingency analysis ([`eval`]).

pub mod error;
pub mod eval;
pub mod numcore;
pub mod patch;
pub mod prompt;
pub mod toyvlm;
pub mod util;
pub mod world;

pub use error::{Error, Result};
pub use numcore::tape::{GradTape, NodeId};
pub use numcore::tensor::Tensor2;
pub use prompt::{Detection, DetectionMode, PromptTemplate, Segment, TokenSequence};
pub use toyvlm::model::{Answer, ForwardPass, Model};
pub use toyvlm::params::VlmConfig;
pub use toyvlm::scene::{Scene, SceneObject};
pub use toyvlm::vocab::Vocab;
