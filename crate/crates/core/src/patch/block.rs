use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor2;
use crate::toyvlm::model::Model;

/// Instruction text for seeding the block from existing embeddings.
pub const INIT_TEXT_BRIEF: &str =
    "According to the previous object detection results, please answer the following question";
pub const INIT_TEXT_FULL: &str =
    "According to the previous object detection results, please answer the following question with 'yes' or 'no'";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Random,
    Text(String),
}

impl InitStrategy {
    pub fn tag(&self) -> &'static str {
        match self {
            InitStrategy::Random => "random",
            InitStrategy::Text(_) => "text",
        }
    }
}

/// The trainable block delta: `n` rows of model dimension, living outside the
/// frozen parameter set. Row k backs the token `[refk]` when plugged in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualTokenBlock {
    n: usize,
    dim: usize,
    matrix: Tensor2,
    init: InitStrategy,
    trained_epochs: usize,
}

impl VirtualTokenBlock {
    pub fn zeros(n: usize, dim: usize) -> VirtualTokenBlock {
        VirtualTokenBlock {
            n,
            dim,
            matrix: Tensor2::zeros(n, dim),
            init: InitStrategy::Random,
            trained_epochs: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Tensor2 {
        &self.matrix
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Tensor2 {
        &mut self.matrix
    }

    pub fn init(&self) -> &InitStrategy {
        &self.init
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub(crate) fn set_trained_epochs(&mut self, epochs: usize) {
        self.trained_epochs = epochs;
    }

    pub(crate) fn restore(
        n: usize,
        dim: usize,
        matrix: Tensor2,
        init: InitStrategy,
        trained_epochs: usize,
    ) -> VirtualTokenBlock {
        VirtualTokenBlock { n, dim, matrix, init, trained_epochs }
    }

    pub fn trainable_count(&self) -> usize {
        self.n * self.dim
    }

    /// Extends the model vocabulary with this block: `[refk]` gets row k.
    pub fn plug_into(&self, model: &Model) -> Result<Model> {
        model.with_virtual_rows(&self.matrix)
    }
}

/// Builds the starting block. `Random` draws Gaussian rows whose scale is the
/// population standard deviation of the base embedding table; `Text` copies
/// the embedding rows of the tokenized text, truncated to `n` rows or padded
/// with zero rows.
pub fn init_virtual(
    model: &Model,
    n: usize,
    init: &InitStrategy,
    seed: u64,
) -> Result<VirtualTokenBlock> {
    let dim = model.cfg().dim;
    let matrix = match init {
        InitStrategy::Random => {
            let base = model.vocab().base_size();
            let std = model.params().embed.slice_rows(0, base)?.std();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            Tensor2::gaussian(n, dim, std, &mut rng)
        }
        InitStrategy::Text(text) => {
            if text.is_empty() {
                return Err(Error::Config("init text is empty".into()));
            }
            let ids = model.vocab().tokenize(text)?;
            let mut m = Tensor2::zeros(n, dim);
            for (row, &id) in ids.iter().take(n).enumerate() {
                m.row_mut(row).copy_from_slice(model.params().embed.row(id as usize));
            }
            m
        }
    };
    Ok(VirtualTokenBlock { n, dim, matrix, init: init.clone(), trained_epochs: 0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainableCount {
    pub trainable: usize,
    pub frozen: usize,
    pub ratio: f64,
}

/// Parameter accounting for a block against a frozen backbone.
pub fn count_trainable(block: &VirtualTokenBlock, frozen: usize) -> TrainableCount {
    let trainable = block.trainable_count();
    TrainableCount {
        trainable,
        frozen,
        ratio: trainable as f64 / (trainable + frozen) as f64,
    }
}
