use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Real;

/// One stream item.
///
/// `true_label` and `context_tag` are ground truth. Only the oracle and the
/// evaluator read them; the selection path works from `features` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub id: u64,
    pub features: Vec<T>,
    pub true_label: usize,
    pub context_tag: usize,
    pub stream_index: usize,
}

impl<T: Real> Sample<T> {
    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// A sample after the oracle revealed its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample<T> {
    pub sample: Sample<T>,
    pub label: usize,
    pub annotation_time: usize,
}

impl<T: Real> LabeledSample<T> {
    pub fn id(&self) -> u64 {
        self.sample.id
    }

    pub fn features(&self) -> &[T] {
        &self.sample.features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding<T> {
    pub values: Vec<T>,
}

impl<T: Real> StyleEmbedding<T> {
    pub fn new(values: Vec<T>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn distance(&self, other: &StyleEmbedding<T>) -> Result<T> {
        crate::vector::euclidean_distance(&self.values, &other.values)
    }
}

/// Annotation budget. `used <= beta` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    beta: usize,
    used: usize,
}

impl Budget {
    pub fn new(beta: usize) -> Self {
        Self { beta, used: 0 }
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.beta - self.used
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.beta
    }

    /// Consumes one annotation. Returns `false` (and leaves the budget
    /// untouched) if nothing is left.
    pub fn try_consume(&mut self) -> bool {
        if self.exhausted() {
            false
        } else {
            self.used += 1;
            true
        }
    }
}
