//! The streaming loop: embed, assign, annotate, store, retrain, evaluate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Runner, TaskMetric};
use super::report::{RunReport, SeedReport};
use crate::al_policy::{decide, AlPolicy, Decision};
use crate::error::{Error, Result};
use crate::learner::TaskModel;
use crate::memory::{MemoryEvent, MemoryMode, PruningStrategy, RehearsalMemory};
use crate::metrics::{bwt, dice, f1_macro, fwt, il_score, PerformanceMatrix};
use crate::pc::{assign, Assignment, Embedder, OutlierMemory, PseudoContext};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::stream::{generate, load_dir, oracle_label, StreamData};
use crate::types::{Budget, LabeledSample, Sample, StyleEmbedding};

/// Standard deviation of the initial head weights.
pub const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Annotation { stream_index: usize, pc: usize, sample_id: u64 },
    PcCreated { stream_index: usize, pc: usize, members: Vec<u64> },
    Training { stream_index: usize, steps: usize, memory_size: usize },
    Memory(MemoryEvent),
}

/// Metric of `model` on `test`, over the labels occurring in the truth or
/// the predictions. An empty head scores 0.
pub fn evaluate<T: Real>(model: &TaskModel<T>, test: &[Sample<T>], metric: TaskMetric) -> Result<f64> {
    if model.n_classes() == 0 || test.is_empty() {
        return Ok(0.0);
    }
    let mut pred = Vec::with_capacity(test.len());
    for s in test {
        pred.push(model.predict(&s.features)?.expect("non-empty head"));
    }
    let truth: Vec<usize> = test.iter().map(|s| s.true_label).collect();
    let mut classes: Vec<usize> = pred.iter().chain(&truth).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    match metric {
        TaskMetric::F1 => f1_macro(&pred, &truth, &classes),
        TaskMetric::Dice => dice(&pred, &truth, &classes, &[]),
        TaskMetric::Accuracy => {
            Ok(pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / test.len() as f64)
        }
    }
}

fn matrix_row<T: Real>(model: &TaskModel<T>, data: &StreamData<T>, metric: TaskMetric) -> Result<Vec<f64>> {
    data.test.iter().map(|t| evaluate(model, t, metric)).collect()
}

/// Assembles a seed report from the filled matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_report<T: Real>(
    seed: u64,
    rows: Vec<Vec<f64>>,
    baseline: &TaskModel<T>,
    data: &StreamData<T>,
    metric: TaskMetric,
    counters: (usize, usize, usize),
    pc_annotations: Vec<usize>,
    memory: Vec<crate::memory::SnapshotRecord>,
) -> Result<SeedReport> {
    let baselines = matrix_row(baseline, data, metric)?;
    let matrix = PerformanceMatrix::new(rows, baselines)?;
    let b = bwt(&matrix)?;
    let f = fwt(&matrix)?;
    let task_metric = matrix.final_average();
    let il = il_score(task_metric, b, f)?;
    let (label_counter, train_counter, n_pcs) = counters;
    Ok(SeedReport {
        seed,
        matrix,
        bwt: b,
        fwt: f,
        task_metric,
        il_score: il,
        label_counter,
        train_counter,
        n_pcs,
        pc_annotations,
        memory,
    })
}

/// Data for one seed: loaded once from disk, or generated per seed.
pub fn data_for_seed<T: Real>(cfg: &RunConfig, seed: u64) -> Result<StreamData<T>> {
    match &cfg.data_dir {
        Some(dir) => load_dir(dir),
        None => {
            let mut s = cfg.stream.clone();
            s.seed = cfg.data_seed.unwrap_or(seed);
            generate(&s)
        }
    }
}

/// Classes present in the base set, ascending.
pub(crate) fn base_classes<T: Real>(base: &[LabeledSample<T>]) -> Vec<usize> {
    let mut c: Vec<usize> = base.iter().map(|l| l.label).collect();
    c.sort_unstable();
    c.dedup();
    c
}

struct State<'a, T> {
    cfg: &'a RunConfig,
    model: TaskModel<T>,
    memory: RehearsalMemory<T>,
    pcs: Vec<PseudoContext<T>>,
    outliers: OutlierMemory<T>,
    budget: Budget,
    label_counter: usize,
    train_counter: usize,
    since_train: usize,
    pc_annotations: Vec<usize>,
    journal_seen: usize,
    events: Vec<Event>,
    prune_rng: RngStream,
    train_rng: RngStream,
}

impl<T: Real> State<'_, T> {
    fn drain_journal(&mut self) {
        let j = self.memory.journal();
        self.events.extend(j[self.journal_seen..].iter().map(|e| Event::Memory(*e)));
        self.journal_seen = j.len();
    }

    fn annotate(&mut self, sample: &Sample<T>, embedding: StyleEmbedding<T>, pc: usize, now: usize) -> Result<()> {
        if !self.budget.try_consume() {
            return Err(Error::InvariantBreach {
                index: now,
                msg: "annotation requested with an exhausted budget".into(),
            });
        }
        self.label_counter += 1;
        self.pc_annotations[pc] += 1;
        let labeled = oracle_label(sample, now);
        if !self.model.knows(labeled.label) {
            self.model.expand_head(labeled.label)?;
        }
        self.events.push(Event::Annotation {
            stream_index: now,
            pc,
            sample_id: sample.id,
        });
        self.memory
            .insert(labeled, embedding, pc, now, Some(&self.model), &mut self.prune_rng)?;
        self.since_train += 1;
        self.drain_journal();
        Ok(())
    }

    fn train(&mut self, now: usize) -> Result<()> {
        let batch = self.memory.all_labeled();
        if batch.is_empty() {
            return Ok(());
        }
        let steps = self
            .model
            .train(&batch, &self.cfg.train, self.cfg.train.rehearsal_epochs, &mut self.train_rng)?;
        self.events.push(Event::Training {
            stream_index: now,
            steps,
            memory_size: batch.len(),
        });
        self.train_counter += steps;
        self.since_train = 0;
        Ok(())
    }

    fn check(&self, now: usize) -> Result<()> {
        let breach = |msg: String| Err(Error::InvariantBreach { index: now, msg });
        if self.budget.used() > self.cfg.beta || self.label_counter > self.cfg.beta {
            return breach(format!("{} labels exceed budget {}", self.label_counter, self.cfg.beta));
        }
        if self.label_counter != self.budget.used() {
            return breach("label counter and budget disagree".into());
        }
        self.memory
            .check_invariants()
            .or_else(breach)
    }

    fn step(&mut self, embedder: &Embedder<T>, sample: &Sample<T>) -> Result<()> {
        let now = sample.stream_index;
        let embedding = embedder.embed(sample)?;
        match assign(&embedding, &self.pcs, T::lit(self.cfg.pd_threshold))? {
            Assignment::Known(pc) => {
                self.pcs[pc].absorb(&embedding)?;
                let members: Vec<&LabeledSample<T>> = self.memory.items(pc).iter().map(|it| &it.labeled).collect();
                let decision = decide(
                    &self.cfg.policy,
                    sample,
                    &mut self.pcs[pc],
                    &members,
                    &self.model,
                    &self.budget,
                )?;
                if decision == Decision::Annotate {
                    self.annotate(sample, embedding, pc, now)?;
                }
            }
            Assignment::Outlier => {
                let found = self.outliers.step(sample.clone(), embedding, now)?;
                if let Some(members) = found {
                    // without budget the members cannot be labeled, so no
                    // context is opened for them
                    if !self.budget.exhausted() {
                        let pc = self.pcs.len();
                        self.memory.on_new_pc(pc, Some(&self.model), &mut self.prune_rng)?;
                        self.drain_journal();
                        self.pcs
                            .push(PseudoContext::from_members(pc, members.iter().map(|m| &m.embedding))?);
                        self.pc_annotations.push(0);
                        self.events.push(Event::PcCreated {
                            stream_index: now,
                            pc,
                            members: members.iter().map(|m| m.sample.id).collect(),
                        });
                        for m in members {
                            if self.budget.exhausted() {
                                break;
                            }
                            self.annotate(&m.sample, m.embedding, pc, now)?;
                        }
                        self.train(now)?;
                    }
                }
            }
        }
        if self.since_train > self.cfg.train.retrain_patience {
            self.train(now)?;
        }
        self.check(now)
    }
}

/// Outcome of one seed: the report plus the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub report: SeedReport,
    pub events: Vec<Event>,
    /// Base-initialised memory journal length; events before it are the
    /// initial fill.
    pub initial_events: usize,
}

/// Runs the pipeline for one seed on prepared data.
pub fn run_seed_on<T: Real>(cfg: &RunConfig, seed: u64, data: &StreamData<T>) -> Result<SeedRun> {
    cfg.validate()?;
    let root = RngStream::new(seed);
    let dim = data.feature_dim();
    let embedder: Embedder<T> = cfg.embedder.build(dim);
    let classes = base_classes(&data.base);
    let mut model = TaskModel::random_init(dim, &classes, INIT_SCALE, &mut root.derive("init"))?;
    let untrained = model.clone();
    let mut train_rng = root.derive("training");
    let base_steps = model.train(&data.base, &cfg.train, cfg.train.base_epochs, &mut train_rng)?;

    let base_emb = data
        .base
        .iter()
        .map(|l| embedder.embed(&l.sample))
        .collect::<Result<Vec<_>>>()?;
    let mut prune_rng = root.derive("pruning");
    let memory = RehearsalMemory::init_from_base(&data.base, &base_emb, cfg.memory.clone(), &mut prune_rng)?;
    let pc0 = PseudoContext::from_members(0, base_emb.iter())?;
    let initial_events = memory.journal().len();
    let mut st = State {
        cfg,
        model,
        events: memory.journal().iter().map(|e| Event::Memory(*e)).collect(),
        journal_seen: initial_events,
        memory,
        pcs: vec![pc0],
        outliers: OutlierMemory::new(cfg.max_age, T::lit(cfg.d_new), cfg.m_new)?,
        budget: Budget::new(cfg.beta),
        label_counter: 0,
        train_counter: base_steps,
        since_train: 0,
        pc_annotations: vec![0],
        prune_rng,
        train_rng,
    };
    st.check(0)?;

    let mut ends = data.boundaries();
    ends.push(data.stream.len());
    let mut rows = Vec::with_capacity(ends.len());
    let mut next_end = 0;
    for (i, sample) in data.stream.iter().enumerate() {
        st.step(&embedder, sample)?;
        if i + 1 == ends[next_end] {
            rows.push(matrix_row(&st.model, data, cfg.metric)?);
            next_end += 1;
        }
    }
    let report = finish_report(
        seed,
        rows,
        &untrained,
        data,
        cfg.metric,
        (st.label_counter, st.train_counter, st.pcs.len()),
        st.pc_annotations,
        st.memory.snapshot(),
    )?;
    Ok(SeedRun {
        report,
        events: st.events,
        initial_events,
    })
}

pub fn run_seed<T: Real>(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    let data = data_for_seed::<T>(cfg, seed)?;
    run_seed_on(cfg, seed, &data)
}

fn run_all<T: Real>(cfg: &RunConfig, name: String) -> Result<RunReport> {
    cfg.validate()?;
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed::<T>(cfg, s).map(|r| r.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport::new(name, seeds))
}

/// Runs every configured seed (in parallel) through the pipeline.
pub fn run_rbaca<T: Real>(cfg: &RunConfig) -> Result<RunReport> {
    let name = cfg.preset.clone().unwrap_or_else(|| "rbaca".into());
    run_all::<T>(cfg, name)
}

/// The configuration restricted to static memory with closest-embedding
/// replacement and the performance policy.
pub fn casa_restrict(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.runner = Runner::Casa;
    c.memory.mode = MemoryMode::Static {
        capacity: cfg.memory.mode.total_bound(),
    };
    c.memory.pruning = PruningStrategy::LruClosest;
    if !matches!(c.policy, AlPolicy::Perf { .. }) {
        c.policy = AlPolicy::default();
    }
    c
}

pub fn run_casa_config<T: Real>(cfg: &RunConfig) -> Result<RunReport> {
    let name = cfg.preset.clone().unwrap_or_else(|| "casa".into());
    run_all::<T>(&casa_restrict(cfg), name)
}

/// Dispatches on `cfg.runner`.
pub fn run_configured<T: Real>(cfg: &RunConfig) -> Result<RunReport> {
    match cfg.runner {
        Runner::Rbaca => run_rbaca::<T>(cfg),
        Runner::Casa => run_casa_config::<T>(cfg),
    }
}
