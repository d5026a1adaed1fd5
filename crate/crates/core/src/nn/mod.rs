//! Desk-scale trainable codec: gradient tape, model, discriminators,
//! quantization bridge, optimizer and training loop.

mod checkpoint;
mod disc;
mod gradcheck;
mod graph;
mod model;
mod optim;
mod params;
mod tensor;
mod train;
mod vq;

use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use disc::{disc_spectrogram, discriminator_forward, DiscOutput};
pub use gradcheck::{grad_check, grad_check_graph, relative_error, GRAD_CHECK_FLOOR};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use model::{EncodedAudio, ModelConfig, ToyCodecModel};
pub use optim::{adam_step, AdamHyper, AdamState};
pub use params::{Binding, ParamStore, Parameter};
pub use tensor::Tensor;
pub use train::{synthetic_guidance, train_step, LossRecord, TrainConfig, TrainState};
pub use vq::{quantization_loss, vq_bridge, VqOutputs};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Quantizer(#[from] crate::quantizer::QuantizerError),
    #[error(transparent)]
    Codebook(#[from] crate::codebook::CodebookError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
