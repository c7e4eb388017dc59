//! Few-shot classification with adaptive cross-modal prototypes.
//!
//! Category prototypes are convex combinations of a visual centroid and a
//! transformed label embedding, weighted by a learned per-category
//! coefficient. The crate carries everything needed to train and evaluate
//! such models at desk scale: a small reverse-mode differentiation engine,
//! word-embedding and dataset ingestion, episodic sampling, the model and
//! its baselines, and the training and evaluation loops.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod embedding;
pub mod episode;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod plot;
pub mod prototype;
pub mod report;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Am3Model, ConditioningMode, ModelConfig, PrototypeRule};
pub use prototype::Distance;
pub use tensor::Tensor;
