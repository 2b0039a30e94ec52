//! Grounding network, adapters, loss and checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod lora;
pub mod loss;
pub mod network;
pub mod params;
pub mod tokenizer;

pub use checkpoint::{
    Checkpoint, EpochRecord, OptimizerState, Provenance, ResumePoint, RunRecord, Stage,
};
pub use config::{LoraConfig, ModelConfig, Vocab};
pub use loss::{grounding_loss, grounding_loss_scalar};
pub use network::{AdapterState, Grounding, GroundingModel, PreparedBatch};
pub use params::{Array, ParamStore};
pub use tokenizer::{tokenize, Tokenized};
