//! Fine-grained re-identification head: a dual-branch embedding model over
//! backbone feature maps, its seven-term training objective, a deterministic
//! trainer with a toy convolutional backbone, retrieval metrics with
//! k-reciprocal re-ranking, and the binary tensor-archive / manifest /
//! config formats the CLI speaks.

pub mod archive;
pub mod autograd;
pub mod backbone;
pub mod config;
pub mod error;
pub mod eval;
pub mod head;
pub mod losses;
pub mod manifest;
pub mod overlay;
pub mod params;
pub mod pipeline;
pub mod rerank;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Tensor};
