//! Desk-scale sequence-to-sequence answer generator.
//!
//! Everything runs in `f64` on the CPU; gradients come from a small
//! reverse-mode tape ([`tensor::Graph`]). Training minimizes the mean token
//! cross-entropy with plain SGD at a fixed rate.

pub mod checkpoint;
pub mod infer;
pub mod model;
pub mod tensor;
pub mod train;

pub use model::{
    forward, forward_batch, init_model, ModelConfig, ModelParams, Tensor, DEFAULT_MAX_SOURCE_LEN,
    DEFAULT_MAX_TARGET_LEN,
};
pub use infer::{Decoder, DecoderState};
pub use tensor::Mat;
pub use train::{
    encode_examples, grad, loss, loss_and_grad, make_schedule, run_strategy, train, train_encoded, Batch,
    EncodedExample, Gradients, LrPreset, ScheduleItem, StrategySpec, Tag, TrainConfig, TrainOutcome,
    BART_LEARNING_RATE, UQA_T5_LEARNING_RATE,
};
