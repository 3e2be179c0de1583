//! Run configuration, the `key = value` file format and named presets.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. A `preset` line, if present, is applied first and later keys
//! override it. Recognised keys:
//!
//! | key | value |
//! |-----|-------|
//! | `preset` | a preset name, see [`preset_names`] |
//! | `runner` | `rbaca` or `casa` |
//! | `scenario` | `domain` or `class` |
//! | `contexts`, `samples_per_context`, `base_size`, `val_per_context`, `test_per_context`, `n_classes`, `feature_dim` | integers |
//! | `context_order` | comma-separated permutation |
//! | `context_shift`, `class_sep`, `noise_std` | reals |
//! | `data_seed` | integer; when absent each run seed also seeds the data |
//! | `data_dir` | directory with `base.csv`, `stream.csv`, `val.csv`, `test.csv` |
//! | `embedder` | `identity`, `summary` or `projection:<out_dim>:<seed>` |
//! | `pd_threshold`, `d_new` | positive reals |
//! | `m_new`, `max_age` | integers |
//! | `memory` | `static:<K_M>` or `dynamic:<k>:<i>[:<max_system>]` |
//! | `pruning` | `lru`, `lru-closest`, `kmeans`, `gmm`, `dbscan`, `uncertainty`, `egl`, `ku`, `eglgmm` |
//! | `kmeans_clusters`, `gmm_components`, `dbscan_min_pts` | integers |
//! | `dbscan_eps` | real |
//! | `policy` | `perf`, `perf:<threshold>` or `uth:<u_th>` |
//! | `beta` | integer |
//! | `batch_size`, `base_epochs`, `rehearsal_epochs`, `retrain_patience` | integers |
//! | `learning_rate` | real |
//! | `metric` | `f1`, `dice` or `accuracy` |
//! | `seeds` | comma-separated integers |

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::al_policy::AlPolicy;
use crate::error::{Error, Result};
use crate::learner::TrainSettings;
use crate::memory::{MemoryConfig, MemoryMode, PruneParams, PruningStrategy, DEFAULT_MAX_SYSTEM};
use crate::pc::Embedder;
use crate::scalar::Real;
use crate::stream::{Scenario, StreamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Runner {
    Rbaca,
    Casa,
}

impl Runner {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rbaca" => Ok(Runner::Rbaca),
            "casa" => Ok(Runner::Casa),
            _ => Err(Error::Config(format!("unknown runner {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedderKind {
    Identity,
    SummaryStats,
    RandomProjection { out_dim: usize, seed: u64 },
}

impl EmbedderKind {
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        match parts.as_slice() {
            ["identity"] => Ok(EmbedderKind::Identity),
            ["summary"] | ["summary_stats"] => Ok(EmbedderKind::SummaryStats),
            ["projection", out, seed] => Ok(EmbedderKind::RandomProjection {
                out_dim: parse_num(out, "projection dimension")?,
                seed: parse_num(seed, "projection seed")?,
            }),
            _ => Err(Error::Config(format!("unknown embedder {s:?}"))),
        }
    }

    pub fn build<T: Real>(&self, in_dim: usize) -> Embedder<T> {
        match *self {
            EmbedderKind::Identity => Embedder::identity(in_dim),
            EmbedderKind::SummaryStats => Embedder::summary_stats(in_dim),
            EmbedderKind::RandomProjection { out_dim, seed } => Embedder::random_projection(in_dim, out_dim, seed),
        }
    }
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedderKind::Identity => write!(f, "identity"),
            EmbedderKind::SummaryStats => write!(f, "summary"),
            EmbedderKind::RandomProjection { out_dim, seed } => write!(f, "projection:{out_dim}:{seed}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskMetric {
    F1,
    Dice,
    Accuracy,
}

impl TaskMetric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1" => Ok(TaskMetric::F1),
            "dice" => Ok(TaskMetric::Dice),
            "accuracy" => Ok(TaskMetric::Accuracy),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub runner: Runner,
    pub stream: StreamConfig,
    /// Fixed data seed; `None` seeds the data with each run seed.
    pub data_seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub embedder: EmbedderKind,
    pub pd_threshold: f64,
    pub d_new: f64,
    pub m_new: usize,
    pub max_age: usize,
    pub memory: MemoryConfig,
    pub policy: AlPolicy,
    pub beta: usize,
    pub train: TrainSettings,
    pub metric: TaskMetric,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            runner: Runner::Rbaca,
            stream: StreamConfig::default(),
            data_seed: None,
            data_dir: None,
            embedder: EmbedderKind::Identity,
            pd_threshold: 2.0,
            d_new: 2.0,
            m_new: 5,
            max_age: 200,
            memory: MemoryConfig::new(MemoryMode::Static { capacity: 200 }, PruningStrategy::Lru),
            policy: AlPolicy::default(),
            beta: 430,
            train: TrainSettings::default(),
            metric: TaskMetric::F1,
            seeds: vec![1, 2, 3],
        }
    }
}

fn parse_num<N: std::str::FromStr>(s: &str, what: &str) -> Result<N> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad {what} {s:?}")))
}

fn parse_list<N: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<N>> {
    s.split(',').map(|x| parse_num(x, what)).collect()
}

pub fn parse_memory_mode(s: &str) -> Result<MemoryMode> {
    let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
    let mode = match parts.as_slice() {
        ["static", cap] => MemoryMode::Static {
            capacity: parse_num(cap, "memory capacity")?,
        },
        ["dynamic", k, i] => MemoryMode::Dynamic {
            k: parse_num(k, "k")?,
            dm_i: parse_num(i, "dm_i")?,
            max_system: DEFAULT_MAX_SYSTEM,
        },
        ["dynamic", k, i, max] => MemoryMode::Dynamic {
            k: parse_num(k, "k")?,
            dm_i: parse_num(i, "dm_i")?,
            max_system: parse_num(max, "max_system")?,
        },
        _ => return Err(Error::Config(format!("bad memory mode {s:?}"))),
    };
    mode.validate()?;
    Ok(mode)
}

pub fn format_memory_mode(m: &MemoryMode) -> String {
    match *m {
        MemoryMode::Static { capacity } => format!("static:{capacity}"),
        MemoryMode::Dynamic { k, dm_i, max_system } => format!("dynamic:{k}:{dm_i}:{max_system}"),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dir.is_none() {
            self.stream.validate()?;
        }
        if !(self.pd_threshold > 0.0) || !(self.d_new > 0.0) {
            return Err(Error::Config("pd_threshold and d_new must be positive".into()));
        }
        if self.m_new == 0 {
            return Err(Error::Config("m_new must be positive".into()));
        }
        self.memory.mode.validate()?;
        self.policy.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let EmbedderKind::RandomProjection { out_dim: 0, .. } = self.embedder {
            return Err(Error::Config("projection dimension must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.stream;
        let p: &mut PruneParams = &mut self.memory.params;
        match key.trim() {
            "preset" => *self = preset(v)?,
            "runner" => self.runner = Runner::parse(v)?,
            "scenario" => s.scenario = Scenario::parse(v)?,
            "contexts" => {
                s.n_contexts = parse_num(v, key)?;
                s.context_order = (0..s.n_contexts).collect();
            }
            "context_order" => s.context_order = parse_list(v, key)?,
            "samples_per_context" => s.samples_per_context = parse_num(v, key)?,
            "base_size" => s.base_size = parse_num(v, key)?,
            "val_per_context" => s.val_per_context = parse_num(v, key)?,
            "test_per_context" => s.test_per_context = parse_num(v, key)?,
            "n_classes" => s.n_classes = parse_num(v, key)?,
            "feature_dim" => s.feature_dim = parse_num(v, key)?,
            "context_shift" => s.context_shift = parse_num(v, key)?,
            "class_sep" => s.class_sep = parse_num(v, key)?,
            "noise_std" => s.noise_std = parse_num(v, key)?,
            "data_seed" => self.data_seed = Some(parse_num(v, key)?),
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "embedder" => self.embedder = EmbedderKind::parse(v)?,
            "pd_threshold" => self.pd_threshold = parse_num(v, key)?,
            "d_new" => self.d_new = parse_num(v, key)?,
            "m_new" => self.m_new = parse_num(v, key)?,
            "max_age" => self.max_age = parse_num(v, key)?,
            "memory" => self.memory.mode = parse_memory_mode(v)?,
            "pruning" => {
                self.memory.pruning =
                    PruningStrategy::parse(v).ok_or_else(|| Error::Config(format!("unknown pruning {v:?}")))?
            }
            "kmeans_clusters" => p.kmeans_clusters = parse_num(v, key)?,
            "gmm_components" => p.gmm_components = parse_num(v, key)?,
            "dbscan_eps" => p.dbscan_eps = parse_num(v, key)?,
            "dbscan_min_pts" => p.dbscan_min_pts = parse_num(v, key)?,
            "policy" => self.policy = AlPolicy::parse(v)?,
            "beta" => self.beta = parse_num(v, key)?,
            "batch_size" => self.train.batch_size = parse_num(v, key)?,
            "learning_rate" => self.train.learning_rate = parse_num(v, key)?,
            "base_epochs" => self.train.base_epochs = parse_num(v, key)?,
            "rehearsal_epochs" => self.train.rehearsal_epochs = parse_num(v, key)?,
            "retrain_patience" => self.train.retrain_patience = parse_num(v, key)?,
            "metric" => self.metric = TaskMetric::parse(v)?,
            "seeds" => self.seeds = parse_list(v, key)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        // the preset goes first so that other keys override it
        entries.sort_by_key(|(_, k, _)| k != "preset");
        for (line, k, v) in entries {
            cfg.set(&k, &v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, path)
    }

    /// Serialises to the file format; `parse_str` reads it back unchanged.
    /// The preset line comes first and every other key overrides it.
    pub fn to_config_string(&self) -> String {
        let s = &self.stream;
        let p = &self.memory.params;
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        if let Some(name) = &self.preset {
            out.push_str(&format!("preset = {name}\n"));
        }
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("runner", format!("{:?}", self.runner).to_ascii_lowercase());
        kv("scenario", s.scenario.name().into());
        kv("contexts", s.n_contexts.to_string());
        kv("context_order", join(&s.context_order));
        kv("samples_per_context", s.samples_per_context.to_string());
        kv("base_size", s.base_size.to_string());
        kv("val_per_context", s.val_per_context.to_string());
        kv("test_per_context", s.test_per_context.to_string());
        kv("n_classes", s.n_classes.to_string());
        kv("feature_dim", s.feature_dim.to_string());
        kv("context_shift", s.context_shift.to_string());
        kv("class_sep", s.class_sep.to_string());
        kv("noise_std", s.noise_std.to_string());
        if let Some(d) = self.data_seed {
            kv("data_seed", d.to_string());
        }
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        kv("embedder", self.embedder.to_string());
        kv("pd_threshold", self.pd_threshold.to_string());
        kv("d_new", self.d_new.to_string());
        kv("m_new", self.m_new.to_string());
        kv("max_age", self.max_age.to_string());
        kv("memory", format_memory_mode(&self.memory.mode));
        kv("pruning", self.memory.pruning.name().into());
        kv("kmeans_clusters", p.kmeans_clusters.to_string());
        kv("gmm_components", p.gmm_components.to_string());
        kv("dbscan_eps", p.dbscan_eps.to_string());
        kv("dbscan_min_pts", p.dbscan_min_pts.to_string());
        kv("policy", self.policy.to_string());
        kv("beta", self.beta.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("learning_rate", self.train.learning_rate.to_string());
        kv("base_epochs", self.train.base_epochs.to_string());
        kv("rehearsal_epochs", self.train.rehearsal_epochs.to_string());
        kv("retrain_patience", self.train.retrain_patience.to_string());
        kv(
            "metric",
            match self.metric {
                TaskMetric::F1 => "f1",
                TaskMetric::Dice => "dice",
                TaskMetric::Accuracy => "accuracy",
            }
            .into(),
        );
        kv("seeds", self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        out
    }
}

/// Desk-scale base: the default five-context synthetic stream with
/// pipeline constants calibrated to its blob spread.
pub fn desk_base() -> RunConfig {
    let mut cfg = RunConfig {
        embedder: EmbedderKind::Identity,
        pd_threshold: 5.0,
        d_new: 3.5,
        m_new: 8,
        max_age: 200,
        beta: 200,
        ..RunConfig::default()
    };
    cfg.train.learning_rate = 0.01;
    cfg.train.base_epochs = 30;
    cfg.train.rehearsal_epochs = 3;
    cfg.memory.params.dbscan_eps = 2.0;
    cfg.memory.params.dbscan_min_pts = 3;
    cfg
}

struct TableRow {
    name: &'static str,
    beta: usize,
    k_m: usize,
    k: usize,
    dynamic: bool,
    pruning: PruningStrategy,
    u_th: Option<f64>,
}

const fn row(
    name: &'static str,
    beta: usize,
    k_m: usize,
    k: usize,
    dynamic: bool,
    pruning: PruningStrategy,
    u_th: Option<f64>,
) -> TableRow {
    TableRow {
        name,
        beta,
        k_m,
        k,
        dynamic,
        pruning,
        u_th,
    }
}

use PruningStrategy as P;

const SEG_ROWS: [TableRow; 18] = [
    row("R11", 108, 160, 40, true, P::KMeans, None),
    row("R41", 430, 200, 40, false, P::Dbscan, None),
    row("R81", 860, 200, 40, false, P::Lru, None),
    row("R12", 108, 582, 97, true, P::KU, Some(0.0225)),
    row("R42", 430, 388, 97, true, P::KU, None),
    row("R82", 860, 388, 97, true, P::Egl, None),
    row("R13", 108, 2000, 333, false, P::Dbscan, Some(0.02)),
    row("R43", 430, 2000, 400, true, P::KU, None),
    row("R83", 860, 2400, 400, true, P::Lru, None),
    row("C11", 108, 200, 50, false, P::LruClosest, None),
    row("C41", 430, 200, 33, false, P::LruClosest, None),
    row("C81", 860, 200, 40, false, P::LruClosest, None),
    row("C12", 108, 485, 121, false, P::LruClosest, None),
    row("C42", 430, 485, 97, false, P::LruClosest, None),
    row("C82", 860, 485, 80, false, P::LruClosest, None),
    row("C13", 108, 2000, 500, false, P::LruClosest, None),
    row("C43", 430, 2000, 333, false, P::LruClosest, None),
    row("C83", 860, 2000, 285, false, P::LruClosest, None),
];

const CLS_ROWS: [TableRow; 18] = [
    row("R11", 108, 200, 50, false, P::Egl, None),
    row("R41", 430, 160, 40, true, P::EglGmm, Some(0.02)),
    row("R81", 860, 120, 40, true, P::KMeans, Some(0.02)),
    row("R12", 108, 291, 97, true, P::Lru, None),
    row("R42", 430, 485, 97, true, P::Egl, None),
    row("R82", 860, 485, 121, false, P::KMeans, None),
    row("R13", 108, 2000, 666, false, P::Uncertainty, Some(0.0225)),
    row("R43", 430, 2000, 400, false, P::Egl, Some(0.02)),
    row("R83", 860, 2000, 400, false, P::Egl, None),
    row("C11", 108, 200, 50, false, P::LruClosest, None),
    row("C41", 430, 200, 40, false, P::LruClosest, None),
    row("C81", 860, 200, 40, false, P::LruClosest, None),
    row("C12", 108, 485, 161, false, P::LruClosest, None),
    row("C42", 430, 485, 121, false, P::LruClosest, None),
    row("C82", 860, 485, 97, false, P::LruClosest, None),
    row("C13", 108, 2000, 666, false, P::LruClosest, None),
    row("C43", 430, 2000, 400, false, P::LruClosest, None),
    row("C83", 860, 2000, 333, false, P::LruClosest, None),
];

fn table_preset(name: &str, rows: &[TableRow], scenario: Scenario, metric: TaskMetric) -> Option<RunConfig> {
    let r = rows.iter().find(|r| r.name.eq_ignore_ascii_case(name))?;
    let mut cfg = desk_base();
    cfg.stream.scenario = scenario;
    cfg.metric = metric;
    cfg.beta = r.beta;
    cfg.memory.mode = if r.dynamic {
        MemoryMode::Dynamic {
            k: r.k,
            dm_i: 3,
            max_system: r.k_m,
        }
    } else {
        MemoryMode::Static { capacity: r.k_m }
    };
    cfg.memory.pruning = r.pruning;
    cfg.policy = match r.u_th {
        Some(u_th) => AlPolicy::UncertaintyThreshold { u_th },
        None => AlPolicy::default(),
    };
    cfg.runner = if r.name.starts_with('C') { Runner::Casa } else { Runner::Rbaca };
    Some(cfg)
}

/// Every accepted preset name.
pub fn preset_names() -> Vec<String> {
    let mut v: Vec<String> = ["desk-dm3-kmeans-perf", "desk-static-dbscan-uth", "desk-casa"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for r in &SEG_ROWS {
        v.push(r.name.to_string());
        v.push(format!("seg-{}", r.name));
    }
    for r in &CLS_ROWS {
        v.push(format!("cls-{}", r.name));
    }
    v
}

/// Looks up a preset. Bare table names (`R41`, `C11`) refer to the
/// segmentation grid; `cls-` names to the Class-IL classification grid.
pub fn preset(name: &str) -> Result<RunConfig> {
    let lower = name.trim().to_ascii_lowercase();
    let mut cfg = match lower.as_str() {
        "desk-dm3-kmeans-perf" => {
            let mut c = desk_base();
            c.memory.mode = MemoryMode::Dynamic {
                k: 40,
                dm_i: 3,
                max_system: 200,
            };
            c.memory.pruning = PruningStrategy::KMeans;
            c
        }
        "desk-static-dbscan-uth" => {
            let mut c = desk_base();
            c.memory.pruning = PruningStrategy::Dbscan;
            c.policy = AlPolicy::UncertaintyThreshold { u_th: 0.3 };
            c
        }
        "desk-casa" => {
            let mut c = desk_base();
            c.runner = Runner::Casa;
            c.memory.pruning = PruningStrategy::LruClosest;
            c
        }
        _ => {
            let found = if let Some(rest) = lower.strip_prefix("cls-") {
                table_preset(rest, &CLS_ROWS, Scenario::ClassIL, TaskMetric::F1)
            } else {
                let rest = lower.strip_prefix("seg-").unwrap_or(&lower);
                table_preset(rest, &SEG_ROWS, Scenario::DomainIL, TaskMetric::Dice)
            };
            found.ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?
        }
    };
    cfg.preset = Some(name.trim().to_string());
    Ok(cfg)
}
