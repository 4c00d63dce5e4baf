//! Hierarchical adversarially learned inference at desk scale: Gaussian
//! Markov kernels over a latent hierarchy, the networks that parameterize
//! them, adversarial training against a joint discriminator, and post-hoc
//! latent operations.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod hierarchy;
pub mod latent;
pub mod networks;
pub mod trainer;

pub use config::{Config, LayerSpec, ModelConfig, NetSpec, Norm, Shape3, TrainConfig};
pub use data::Dataset;
pub use error::{HaliError, Result};
pub use hierarchy::{Draw, GaussianKernel, LatentSample, Provenance, SIGMA_FLOOR};
pub use networks::{Ctx, Group, Model, ParamStore};
pub use trainer::{MetricsRecord, TrainData, Trainer};
