//! Continual active learning over a drifting stream with pseudo-context
//! detection and a bounded rehearsal memory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod al_policy;
pub mod clustering;
pub mod error;
pub mod harness;
pub mod learner;
pub mod memory;
pub mod metrics;
pub mod pc;
pub mod rng;
pub mod scalar;
pub mod stream;
pub mod types;
pub mod vector;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases.
pub mod f64 {
    pub type Sample = crate::types::Sample<f64>;
    pub type LabeledSample = crate::types::LabeledSample<f64>;
    pub type StyleEmbedding = crate::types::StyleEmbedding<f64>;
    pub type TaskModel = crate::learner::TaskModel<f64>;
    pub type RehearsalMemory = crate::memory::RehearsalMemory<f64>;
    pub type PseudoContext = crate::pc::PseudoContext<f64>;
    pub type StreamData = crate::stream::StreamData<f64>;
}

/// Single-precision aliases.
pub mod f32 {
    pub type Sample = crate::types::Sample<f32>;
    pub type LabeledSample = crate::types::LabeledSample<f32>;
    pub type StyleEmbedding = crate::types::StyleEmbedding<f32>;
    pub type TaskModel = crate::learner::TaskModel<f32>;
    pub type RehearsalMemory = crate::memory::RehearsalMemory<f32>;
    pub type PseudoContext = crate::pc::PseudoContext<f32>;
    pub type StreamData = crate::stream::StreamData<f32>;
}
