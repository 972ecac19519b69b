//! Domain-free domain generalization: class-conditional soft-label
//! alignment and saliency-guided masking, trained on a small reverse-mode
//! autodiff engine.
//!
//! Training code only ever sees [`data::TrainView`], which carries inputs and
//! labels but no domain tags.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod losses;
pub mod masking;
pub mod models;
pub mod rng;
pub mod saliency;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use models::Model;
pub use trainer::{train, StrategyMode, TrainConfig};
