//! Run reports, seed aggregation and their text / JSONL renderings.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::memory::SnapshotRecord;
use crate::metrics::PerformanceMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub matrix: PerformanceMatrix,
    pub bwt: f64,
    pub fwt: f64,
    pub task_metric: f64,
    pub il_score: f64,
    pub label_counter: usize,
    /// Optimizer steps taken, base training included.
    pub train_counter: usize,
    pub n_pcs: usize,
    /// Annotations charged to each pseudo-context, by pc id.
    pub pc_annotations: Vec<usize>,
    pub memory: Vec<SnapshotRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub bwt: MeanStd,
    pub fwt: MeanStd,
    pub task_metric: MeanStd,
    pub il_score: MeanStd,
    pub label_counter: MeanStd,
    pub train_counter: MeanStd,
    pub n_pcs: MeanStd,
}

impl Aggregate {
    pub fn of(seeds: &[SeedReport]) -> Self {
        let col = |f: &dyn Fn(&SeedReport) -> f64| MeanStd::of(&seeds.iter().map(f).collect::<Vec<_>>());
        Self {
            bwt: col(&|s| s.bwt),
            fwt: col(&|s| s.fwt),
            task_metric: col(&|s| s.task_metric),
            il_score: col(&|s| s.il_score),
            label_counter: col(&|s| s.label_counter as f64),
            train_counter: col(&|s| s.train_counter as f64),
            n_pcs: col(&|s| s.n_pcs as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

impl RunReport {
    pub fn new(name: impl Into<String>, seeds: Vec<SeedReport>) -> Self {
        let aggregate = Aggregate::of(&seeds);
        Self {
            name: name.into(),
            seeds,
            aggregate,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run {}", self.name);
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>5}",
            "seed", "BWT", "FWT", "metric", "IL", "labels", "steps", "PCs"
        );
        for s in &self.seeds {
            let _ = writeln!(
                out,
                "{:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7} {:>5}",
                s.seed, s.bwt, s.fwt, s.task_metric, s.il_score, s.label_counter, s.train_counter, s.n_pcs
            );
        }
        let a = &self.aggregate;
        let pm = |m: &MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
        let _ = writeln!(
            out,
            "mean   BWT {}  FWT {}  metric {}  IL {}  labels {}  steps {}  PCs {}",
            pm(&a.bwt),
            pm(&a.fwt),
            pm(&a.task_metric),
            pm(&a.il_score),
            pm(&a.label_counter),
            pm(&a.train_counter),
            pm(&a.n_pcs)
        );
        out
    }

    /// One JSON object per seed, then one for the aggregate.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.seeds {
            let line = serde_json::json!({ "run": self.name, "kind": "seed", "report": s });
            writeln!(w, "{line}")?;
        }
        let line = serde_json::json!({ "run": self.name, "kind": "aggregate", "report": self.aggregate });
        writeln!(w, "{line}")?;
        Ok(())
    }
}
