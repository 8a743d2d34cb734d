//! Memory-augmented encoder-decoder over MuMIDI sequences.
//!
//! The condition (melody and chords) is encoded one bar at a time, each bar
//! attending to cached layer inputs of earlier bars. The decoder does the
//! same over the target, and its cross-attention only sees encoder outputs
//! of the bar it is in. Every step's input is a sum of embeddings (token or
//! note attributes, bar, position, tempo); three heads predict the next
//! symbol, and for notes its velocity and duration.

mod checkpoint;
mod config;
mod generate;
mod net;
pub mod tape;
mod train;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use config::{param_count, param_shapes, ModelConfig, ParamCount, Symbol, V1, V2, V3};
pub use generate::{SamplingConfig, MAX_GENERATED_BARS, MAX_RETRIES};
pub use net::{
    annotate, bar_mask, causal_mask, DecoderOut, Dropout, EncoderOut, Model, SegmentMemory, Step, StepState, INIT_STD,
};
pub use train::{learning_rate, train, AdamState, Label, PieceData, SegmentPass, TrainConfig, TrainReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("non-finite loss at step {step} ({detail})")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("no grammar-valid sample after {} tries at step {step}", MAX_RETRIES)]
    RetryExhausted { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
