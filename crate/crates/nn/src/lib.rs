//! A small reverse-mode autodiff kernel and the SwapTransformer model:
//! token embedding, positional encoding, encoder blocks, the swap stack,
//! a convolutional raster encoder, four prediction heads, their losses and
//! Adam.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use graph::{ConvGeom, Gradients, Graph, Var};
pub use layers::{positional_encoding, swap_forward, EncoderBlock, EncoderStack, Linear, Mlp, VisionEncoder};
pub use loss::bezier_weights;
pub use model::{
    argmax, Ablation, Batch, HeadOutputs, LossBreakdown, Model, ModelConfig, CAR_SLOTS, FUTURE_STEPS, LANE_CLASSES,
    RASTER_PIXELS,
};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
}
