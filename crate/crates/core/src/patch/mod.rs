//! The trainable virtual-token block: initialization, the training loop that
//! tunes it against a frozen backbone, and checkpoint persistence.

mod block;
mod checkpoint;
mod train;

pub use block::{
    count_trainable, init_virtual, InitStrategy, TrainableCount, VirtualTokenBlock,
    INIT_TEXT_BRIEF, INIT_TEXT_FULL,
};
pub use checkpoint::PatchCheckpoint;
pub use train::{
    cosine_lr, prepare_examples, train, Optimizer, TrainConfig, TrainExample, TrainReport,
};
