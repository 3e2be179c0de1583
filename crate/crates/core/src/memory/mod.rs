//! Rehearsal memory: labeled samples stored per pseudo-context under a
//! static or dynamic capacity rule.
//!
//! Static mode holds at most `capacity` items in total, split evenly
//! (`floor(capacity / #contexts)`) among contexts; every new context
//! triggers a rebalance. Dynamic mode `DM-i` starts with a pool of `i * k`
//! items that is rebalanced over the first `i - 1` new contexts, after
//! which each further context receives its own `k` slots without touching
//! the others, until `max_system` would be exceeded.

pub mod prune;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::TaskModel;
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::types::{LabeledSample, StyleEmbedding};
use crate::vector::squared_distance_unchecked;

pub use prune::{allocate_quotas, select, PruneParams, PruningStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemoryMode {
    Static { capacity: usize },
    Dynamic { k: usize, dm_i: usize, max_system: usize },
}

pub const DEFAULT_MAX_SYSTEM: usize = 4096;

impl MemoryMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MemoryMode::Static { capacity: 0 } => {
                Err(Error::Config("static memory capacity must be positive".into()))
            }
            MemoryMode::Dynamic { k, dm_i, max_system } if k == 0 || dm_i == 0 || max_system < k => Err(
                Error::Config("dynamic memory needs k >= 1, dm_i >= 1 and max_system >= k".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Capacity of the base context right after initialisation.
    pub fn initial_capacity(&self) -> usize {
        match *self {
            MemoryMode::Static { capacity } => capacity,
            MemoryMode::Dynamic { k, dm_i, max_system } => (k * dm_i).min(max_system),
        }
    }

    /// Hard bound on the total number of stored items.
    pub fn total_bound(&self) -> usize {
        match *self {
            MemoryMode::Static { capacity } => capacity,
            MemoryMode::Dynamic { max_system, .. } => max_system,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub mode: MemoryMode,
    pub pruning: PruningStrategy,
    pub params: PruneParams,
}

impl MemoryConfig {
    pub fn new(mode: MemoryMode, pruning: PruningStrategy) -> Self {
        Self {
            mode,
            pruning,
            params: PruneParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem<T> {
    pub labeled: LabeledSample<T>,
    pub embedding: StyleEmbedding<T>,
    pub last_used: usize,
}

impl<T: Real> MemoryItem<T> {
    pub fn id(&self) -> u64 {
        self.labeled.id()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slot<T> {
    capacity: usize,
    items: Vec<MemoryItem<T>>,
}

/// Journal entry; replaying the journal reproduces the stored ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemoryEvent {
    Insert { pc: usize, sample_id: u64 },
    Evict { pc: usize, sample_id: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub pc_id: usize,
    pub sample_id: u64,
    pub label: usize,
    pub last_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RehearsalMemory<T> {
    slots: BTreeMap<usize, Slot<T>>,
    config: MemoryConfig,
    pcs_created: usize,
    /// Set once a dynamic memory had to fall back to an even split of
    /// `max_system`.
    saturated: bool,
    journal: Vec<MemoryEvent>,
}

impl<T: Real> RehearsalMemory<T> {
    /// Stores a uniform random subset of `base` under context 0.
    pub fn init_from_base(
        base: &[LabeledSample<T>],
        embeddings: &[StyleEmbedding<T>],
        config: MemoryConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::EmptyInput("base training set"));
        }
        if base.len() != embeddings.len() {
            return Err(Error::DimensionMismatch {
                expected: base.len(),
                found: embeddings.len(),
            });
        }
        config.mode.validate()?;
        let capacity = config.mode.initial_capacity();
        let chosen = rng.sample_indices(base.len(), capacity);
        let mut journal = Vec::with_capacity(chosen.len());
        let items = chosen
            .into_iter()
            .map(|i| {
                journal.push(MemoryEvent::Insert {
                    pc: 0,
                    sample_id: base[i].id(),
                });
                MemoryItem {
                    labeled: base[i].clone(),
                    embedding: embeddings[i].clone(),
                    last_used: base[i].annotation_time,
                }
            })
            .collect();
        let mut slots = BTreeMap::new();
        slots.insert(0, Slot { capacity, items });
        Ok(Self {
            slots,
            config,
            pcs_created: 0,
            saturated: false,
            journal,
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn pcs_created(&self) -> usize {
        self.pcs_created
    }

    pub fn pc_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.keys().copied()
    }

    pub fn n_pcs(&self) -> usize {
        self.slots.len()
    }

    pub fn capacity_of(&self, pc: usize) -> Option<usize> {
        self.slots.get(&pc).map(|s| s.capacity)
    }

    pub fn items(&self, pc: usize) -> &[MemoryItem<T>] {
        self.slots.get(&pc).map(|s| s.items.as_slice()).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(|s| s.items.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every stored sample, context by context.
    pub fn all_labeled(&self) -> Vec<&LabeledSample<T>> {
        self.slots
            .values()
            .flat_map(|s| s.items.iter().map(|it| &it.labeled))
            .collect()
    }

    pub fn journal(&self) -> &[MemoryEvent] {
        &self.journal
    }

    /// Registers a new context, shrinking the existing ones as the mode
    /// requires.
    pub fn on_new_pc(&mut self, new_pc: usize, model: Option<&TaskModel<T>>, rng: &mut RngStream) -> Result<()> {
        if self.slots.contains_key(&new_pc) {
            return Err(Error::DuplicatePc(new_pc));
        }
        let n_after = self.slots.len() + 1;
        let new_capacity = match self.config.mode {
            MemoryMode::Static { capacity } => {
                let target = capacity / n_after;
                self.rebalance(target, model, rng)?;
                target
            }
            MemoryMode::Dynamic { k, dm_i, max_system } => {
                self.pcs_created += 1;
                if self.saturated {
                    let target = max_system / n_after;
                    self.rebalance(target, model, rng)?;
                    target
                } else if self.pcs_created < dm_i {
                    let target = self.config.mode.initial_capacity() / n_after;
                    self.rebalance(target, model, rng)?;
                    target
                } else {
                    let allocated: usize = self.slots.values().map(|s| s.capacity).sum();
                    if allocated + k <= max_system {
                        k
                    } else {
                        self.saturated = true;
                        let target = max_system / n_after;
                        self.rebalance(target, model, rng)?;
                        target
                    }
                }
            }
        };
        self.slots.insert(
            new_pc,
            Slot {
                capacity: new_capacity,
                items: Vec::new(),
            },
        );
        Ok(())
    }

    fn rebalance(&mut self, target: usize, model: Option<&TaskModel<T>>, rng: &mut RngStream) -> Result<()> {
        let pcs: Vec<usize> = self.slots.keys().copied().collect();
        for pc in pcs {
            let slot = self.slots.get_mut(&pc).expect("listed key");
            slot.capacity = target;
            if slot.items.len() > target {
                let keep = select(&slot.items, target, self.config.pruning, &self.config.params, model, rng)?;
                let old = std::mem::take(&mut slot.items);
                retain_indices(pc, old, &keep, &mut slot.items, &mut self.journal);
            }
        }
        Ok(())
    }

    /// Stores `labeled` under `pc`. When the slot is full the retained set
    /// is re-selected by the pruning rule over the stored items plus the
    /// new one, so the new item may itself be rejected. Returns whether it
    /// was kept.
    pub fn insert(
        &mut self,
        labeled: LabeledSample<T>,
        embedding: StyleEmbedding<T>,
        pc: usize,
        now: usize,
        model: Option<&TaskModel<T>>,
        rng: &mut RngStream,
    ) -> Result<bool> {
        let strategy = self.config.pruning;
        let slot = self.slots.get_mut(&pc).ok_or(Error::UnknownPc(pc))?;
        let item = MemoryItem {
            labeled,
            embedding,
            last_used: now,
        };
        let id = item.id();
        if slot.capacity == 0 {
            return Ok(false);
        }
        if slot.items.len() < slot.capacity {
            slot.items.push(item);
            self.journal.push(MemoryEvent::Insert { pc, sample_id: id });
            return Ok(true);
        }
        if strategy == PruningStrategy::LruClosest {
            let mut closest = 0;
            let mut best = (T::infinity(), u64::MAX);
            for (i, it) in slot.items.iter().enumerate() {
                let d = squared_distance_unchecked(it.embedding.as_slice(), item.embedding.as_slice());
                if d < best.0 || (d == best.0 && it.id() < best.1) {
                    best = (d, it.id());
                    closest = i;
                }
            }
            let old = std::mem::replace(&mut slot.items[closest], item);
            self.journal.push(MemoryEvent::Evict {
                pc,
                sample_id: old.id(),
            });
            self.journal.push(MemoryEvent::Insert { pc, sample_id: id });
            return Ok(true);
        }

        let mut candidates = std::mem::take(&mut slot.items);
        candidates.push(item);
        let keep = select(&candidates, slot.capacity, strategy, &self.config.params, model, rng)?;
        let kept_new = keep.last() == Some(&(candidates.len() - 1));
        let n_old = candidates.len() - 1;
        let mut kept = Vec::with_capacity(keep.len());
        for (i, it) in candidates.into_iter().enumerate() {
            if keep.binary_search(&i).is_ok() {
                kept.push(it);
            } else if i < n_old {
                self.journal.push(MemoryEvent::Evict {
                    pc,
                    sample_id: it.id(),
                });
            }
        }
        slot.items = kept;
        if kept_new {
            self.journal.push(MemoryEvent::Insert { pc, sample_id: id });
        }
        Ok(kept_new)
    }

    /// Checks the capacity invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let total = self.len();
        let bound = self.config.mode.total_bound();
        if total > bound {
            return Err(format!("memory holds {total} items, bound is {bound}"));
        }
        let allocated: usize = self.slots.values().map(|s| s.capacity).sum();
        if allocated > bound {
            return Err(format!("allocated capacity {allocated} exceeds bound {bound}"));
        }
        for (pc, slot) in &self.slots {
            if slot.items.len() > slot.capacity {
                return Err(format!(
                    "context {pc} holds {} items over its capacity {}",
                    slot.items.len(),
                    slot.capacity
                ));
            }
        }
        let n = self.slots.len();
        match self.config.mode {
            MemoryMode::Static { capacity } if n > 1 => {
                let even = capacity / n;
                if let Some((pc, s)) = self.slots.iter().find(|(_, s)| s.capacity > even) {
                    return Err(format!("context {pc} capacity {} exceeds even share {even}", s.capacity));
                }
            }
            MemoryMode::Dynamic { k, dm_i, .. } if self.pcs_created + 1 >= dm_i => {
                if let Some((pc, s)) = self.slots.iter().find(|(_, s)| s.items.len() > k) {
                    return Err(format!("context {pc} holds {} items over k = {k}", s.items.len()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<SnapshotRecord> {
        self.slots
            .iter()
            .flat_map(|(&pc, s)| {
                s.items.iter().map(move |it| SnapshotRecord {
                    pc_id: pc,
                    sample_id: it.id(),
                    label: it.labeled.label,
                    last_used: it.last_used,
                })
            })
            .collect()
    }
}

fn retain_indices<T: Real>(
    pc: usize,
    old: Vec<MemoryItem<T>>,
    keep: &[usize],
    out: &mut Vec<MemoryItem<T>>,
    journal: &mut Vec<MemoryEvent>,
) {
    for (i, it) in old.into_iter().enumerate() {
        if keep.binary_search(&i).is_ok() {
            out.push(it);
        } else {
            journal.push(MemoryEvent::Evict {
                pc,
                sample_id: it.id(),
            });
        }
    }
}

/// Stored sample ids per context after applying `events` in order.
pub fn replay_journal(events: &[MemoryEvent]) -> BTreeMap<usize, BTreeSet<u64>> {
    let mut state: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
    for e in events {
        match *e {
            MemoryEvent::Insert { pc, sample_id } => {
                state.entry(pc).or_default().insert(sample_id);
            }
            MemoryEvent::Evict { pc, sample_id } => {
                state.entry(pc).or_default().remove(&sample_id);
            }
        }
    }
    state.retain(|_, ids| !ids.is_empty());
    state
}

/// Writes the snapshot as `pc_id,sample_id,label,last_used` lines under a
/// header row.
pub fn write_snapshot<W: Write>(records: &[SnapshotRecord], mut w: W) -> Result<()> {
    writeln!(w, "pc_id,sample_id,label,last_used")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.pc_id, r.sample_id, r.label, r.last_used)?;
    }
    Ok(())
}
