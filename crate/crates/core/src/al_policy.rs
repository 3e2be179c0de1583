//! Annotate-or-discard decisions for samples that fall into a known
//! pseudo-context.

use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::TaskModel;
use crate::pc::PseudoContext;
use crate::scalar::Real;
use crate::types::{Budget, LabeledSample, Sample};

pub const DEFAULT_PERF_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlPolicy {
    /// Annotate while the model's accuracy on the context's stored samples
    /// is below the threshold; once reached, the context is latched complete.
    Perf { threshold: f64 },
    /// Annotate when normalized predictive entropy reaches `u_th`.
    UncertaintyThreshold { u_th: f64 },
}

impl Default for AlPolicy {
    fn default() -> Self {
        AlPolicy::Perf {
            threshold: DEFAULT_PERF_THRESHOLD,
        }
    }
}

impl fmt::Display for AlPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlPolicy::Perf { threshold } => write!(f, "perf:{threshold}"),
            AlPolicy::UncertaintyThreshold { u_th } => write!(f, "uth:{u_th}"),
        }
    }
}

impl AlPolicy {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            AlPolicy::Perf { threshold } => ("perf threshold", threshold),
            AlPolicy::UncertaintyThreshold { u_th } => ("uncertainty threshold", u_th),
        };
        if (0.0..=1.0).contains(&v) {
            Ok(())
        } else {
            Err(Error::Config(format!("{name} {v} outside [0, 1]")))
        }
    }

    /// Parses `perf`, `perf:<thr>` or `uth:<u>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s, None),
        };
        let num = |a: &str| {
            a.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad policy threshold {a:?}")))
        };
        let p = match (kind.to_ascii_lowercase().as_str(), arg) {
            ("perf", None) => AlPolicy::default(),
            ("perf", Some(a)) => AlPolicy::Perf { threshold: num(a)? },
            ("uth" | "uncertainty", Some(a)) => AlPolicy::UncertaintyThreshold { u_th: num(a)? },
            _ => return Err(Error::Config(format!("unknown AL policy {s:?}"))),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Annotate,
    Discard,
}

/// Decides whether `sample`, assigned to `pc`, goes to the oracle. The
/// caller charges the budget after labeling. A Perf decision may latch
/// `pc.complete`.
pub fn decide<T: Real, L: Borrow<LabeledSample<T>>>(
    policy: &AlPolicy,
    sample: &Sample<T>,
    pc: &mut PseudoContext<T>,
    pc_members: &[L],
    model: &TaskModel<T>,
    budget: &Budget,
) -> Result<Decision> {
    if budget.exhausted() {
        return Ok(Decision::Discard);
    }
    match *policy {
        AlPolicy::UncertaintyThreshold { u_th } => {
            let u = model.uncertainty(&sample.features)?.as_f64();
            Ok(if u >= u_th {
                Decision::Annotate
            } else {
                Decision::Discard
            })
        }
        AlPolicy::Perf { threshold } => {
            if pc.complete {
                return Ok(Decision::Discard);
            }
            if pc_members.is_empty() || model.accuracy(pc_members)? < threshold {
                Ok(Decision::Annotate)
            } else {
                pc.complete = true;
                Ok(Decision::Discard)
            }
        }
    }
}
