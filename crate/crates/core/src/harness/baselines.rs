//! Non-continual reference runs: sequential fine-tuning and
//! leave-one-context-out transfer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::pipeline::{base_classes, data_for_seed, evaluate, finish_report, INIT_SCALE};
use super::report::{MeanStd, RunReport, SeedReport};
use crate::error::{Error, Result};
use crate::learner::TaskModel;
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::stream::{oracle_label, StreamData};
use crate::types::LabeledSample;

/// Fully labeled training data per context position; the base set joins
/// the first context.
fn labeled_contexts<T: Real>(data: &StreamData<T>) -> Vec<Vec<LabeledSample<T>>> {
    let mut out: Vec<Vec<LabeledSample<T>>> = vec![Vec::new(); data.n_contexts()];
    out[0].extend(data.base.iter().cloned());
    for s in &data.stream {
        let pos = data
            .context_order
            .iter()
            .position(|&c| c == s.context_tag)
            .expect("stream context listed in order");
        out[pos].push(oracle_label(s, s.stream_index));
    }
    out
}

fn ensure_head<T: Real>(model: &mut TaskModel<T>, batch: &[LabeledSample<T>]) -> Result<()> {
    for l in batch {
        if !model.knows(l.label) {
            model.expand_head(l.label)?;
        }
    }
    Ok(())
}

/// Trains on each context in turn for `base_epochs`, filling one matrix row
/// after each. No memory, no budget.
pub fn seqfinetune_seed<T: Real>(cfg: &RunConfig, seed: u64, data: &StreamData<T>) -> Result<SeedReport> {
    cfg.train.validate()?;
    if data.n_contexts() < 2 {
        return Err(Error::InvalidArgument("sequential fine-tuning needs at least two contexts".into()));
    }
    let root = RngStream::new(seed);
    let dim = data.feature_dim();
    let mut model = TaskModel::random_init(dim, &base_classes(&data.base), INIT_SCALE, &mut root.derive("init"))?;
    let untrained = model.clone();
    let mut rng = root.derive("training");
    let mut steps = 0;
    let mut labels = 0;
    let mut rows = Vec::new();
    for ctx in labeled_contexts(data) {
        labels += ctx.len();
        if !ctx.is_empty() {
            ensure_head(&mut model, &ctx)?;
            steps += model.train(&ctx, &cfg.train, cfg.train.base_epochs, &mut rng)?;
        }
        rows.push(data.test.iter().map(|t| evaluate(&model, t, cfg.metric)).collect::<Result<Vec<_>>>()?);
    }
    finish_report(seed, rows, &untrained, data, cfg.metric, (labels, steps, 1), vec![labels], Vec::new())
}

pub fn run_seqfinetune<T: Real>(cfg: &RunConfig) -> Result<RunReport> {
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            let data = data_for_seed::<T>(cfg, s)?;
            seqfinetune_seed(cfg, s, &data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport::new("seqfinetune", seeds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEvalReport {
    /// Per seed, per held-out context position: metric minus untrained
    /// metric.
    pub rounds: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Over all rounds of all seeds.
    pub fwt: MeanStd,
}

/// One round per context: train a fresh model on the others jointly and
/// score the held-out one against an untrained model.
pub fn contexteval_seed<T: Real>(cfg: &RunConfig, seed: u64, data: &StreamData<T>) -> Result<Vec<f64>> {
    cfg.train.validate()?;
    let c = data.n_contexts();
    if c < 2 {
        return Err(Error::InvalidArgument("context evaluation needs at least two contexts".into()));
    }
    let contexts = labeled_contexts(data);
    let root = RngStream::new(seed);
    let dim = data.feature_dim();
    (0..c)
        .map(|held| {
            let round = root.derive(&format!("round-{held}"));
            let train: Vec<&LabeledSample<T>> = contexts
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .flat_map(|(_, v)| v.iter())
                .collect();
            let mut classes: Vec<usize> = train.iter().map(|l| l.label).collect();
            classes.sort_unstable();
            classes.dedup();
            let mut model = TaskModel::random_init(dim, &classes, INIT_SCALE, &mut round.derive("init"))?;
            let before = evaluate(&model, &data.test[held], cfg.metric)?;
            if !train.is_empty() {
                model.train(&train, &cfg.train, cfg.train.base_epochs, &mut round.derive("training"))?;
            }
            Ok(evaluate(&model, &data.test[held], cfg.metric)? - before)
        })
        .collect()
}

impl ContextEvalReport {
    /// One JSON object per seed, then the overall mean.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for (seed, rounds) in self.seeds.iter().zip(&self.rounds) {
            writeln!(w, "{}", serde_json::json!({ "kind": "seed", "seed": seed, "rounds": rounds }))?;
        }
        writeln!(w, "{}", serde_json::json!({ "kind": "aggregate", "fwt": self.fwt }))?;
        Ok(())
    }
}

pub fn run_contexteval<T: Real>(cfg: &RunConfig) -> Result<ContextEvalReport> {
    let rounds = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            let data = data_for_seed::<T>(cfg, s)?;
            contexteval_seed(cfg, s, &data)
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = rounds.iter().flatten().copied().collect();
    Ok(ContextEvalReport {
        fwt: MeanStd::of(&all),
        rounds,
        seeds: cfg.seeds.clone(),
    })
}
