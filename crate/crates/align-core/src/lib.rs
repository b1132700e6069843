//! Motion-text alignment toolkit.
//!
//! Trains a transformer pose encoder to project skeleton sequences into the
//! embedding space of a frozen text encoder, and evaluates the result on
//! action recognition, zero-shot synonym transfer, attribute classification
//! and description-based retrieval.

pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod numeric;
pub mod objectives;
pub mod synthetic;
pub mod textbridge;
pub mod trainer;

pub use dataset::{
    AttributeManifest, AttributeVector, DatasetSplit, Label, LabeledSample, PoseSequence,
    WINDOW_LEN,
};
pub use encoder::{EncoderConfig, EncoderParams, MetricMode};
pub use error::{CoreError, Result};
pub use eval::{RetrievalIndex, RetrievalMethod};
pub use geometry::{Rot6D, RotationMatrix};
pub use numeric::{adamw_step, AdamWHyper, AdamWState, Graph, NodeId, Tensor};
pub use textbridge::{CaptionRecord, CaptionStore, EmbeddingProvider, EmbeddingVector};
pub use trainer::{Checkpoint, Objective, TrainConfig};
