//! Multi-view fusion transformer, prototypes, view scoring and logit aggregation.

mod block;
mod config;
mod model;
mod prototypes;

pub use block::FusionBlock;
pub use config::{AblationFlags, ContextMode, ModelConfig, Pooling};
pub use model::{aggregate, argmax, build_model, ForwardOutput, ModelInput, ViewRefer};
pub use prototypes::{
    inject_context, pool_views, view_guided_context, view_scores, PrototypeBank, COSINE_EPS,
};
