//! Convolutional transformer neural collaborative filtering (CTNCF) for
//! implicit-feedback recommendation, built on a small reverse-mode tensor
//! library, with comparison baselines, MovieLens/Amazon ingestion, training,
//! top-k evaluation and sweep/ablation experiment drivers.

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod params;
pub mod plot;
pub mod recommender;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use model::{Ctncf, HyperParams, MfMode};
pub use params::{ParamId, ParamStore, RegGroup};
pub use recommender::{AnyModel, ModelConfig, ModelKind, Scorer, Trainable};
pub use tensor::Tensor;
