//! Pseudo-context detection: fixed style embedders, nearest-centroid
//! assignment against a distance threshold, and the outlier memory that
//! spawns new pseudo-contexts from dense neighbourhoods.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::types::{Sample, StyleEmbedding};
use crate::vector::distance_unchecked;

impl<T> AsRef<[T]> for StyleEmbedding<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

/// Deterministic map from raw features to a style embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Embedder<T> {
    Identity { dim: usize },
    /// Fixed Gaussian matrix (`out_dim × in_dim`, row-major) scaled by
    /// `1/sqrt(out_dim)`.
    RandomProjection {
        in_dim: usize,
        out_dim: usize,
        seed: u64,
        matrix: Vec<Vec<T>>,
    },
    /// `[mean, std, min, max, median]` of the feature vector.
    SummaryStats { dim: usize },
}

impl<T: Real> Embedder<T> {
    pub fn identity(dim: usize) -> Self {
        Embedder::Identity { dim }
    }

    pub fn summary_stats(dim: usize) -> Self {
        Embedder::SummaryStats { dim }
    }

    /// Projection matrix drawn row by row from `RngStream::new(seed)`.
    pub fn random_projection(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed);
        let matrix = (0..out_dim)
            .map(|_| (0..in_dim).map(|_| T::lit(rng.gaussian())).collect())
            .collect();
        Embedder::RandomProjection {
            in_dim,
            out_dim,
            seed,
            matrix,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Embedder::Identity { dim } | Embedder::SummaryStats { dim } => *dim,
            Embedder::RandomProjection { in_dim, .. } => *in_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Embedder::Identity { dim } => *dim,
            Embedder::SummaryStats { .. } => 5,
            Embedder::RandomProjection { out_dim, .. } => *out_dim,
        }
    }

    pub fn embed_features(&self, features: &[T]) -> Result<StyleEmbedding<T>> {
        check_dim(self.input_dim(), features.len())?;
        let values = match self {
            Embedder::Identity { .. } => features.to_vec(),
            Embedder::RandomProjection { out_dim, matrix, .. } => {
                let scale = T::one() / T::from_count(*out_dim).sqrt();
                matrix
                    .iter()
                    .map(|row| crate::vector::dot(row, features) * scale)
                    .collect()
            }
            Embedder::SummaryStats { .. } => summary_stats(features)?,
        };
        Ok(StyleEmbedding::new(values))
    }

    pub fn embed(&self, sample: &Sample<T>) -> Result<StyleEmbedding<T>> {
        self.embed_features(&sample.features)
    }
}

fn summary_stats<T: Real>(x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::EmptyInput("features"));
    }
    let n = T::from_count(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / T::lit(2.0)
    };
    Ok(vec![mean, var.sqrt(), sorted[0], sorted[sorted.len() - 1], median])
}

/// A detected context: a running-mean centroid over assigned embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoContext<T> {
    pub pc_id: usize,
    pub centroid: StyleEmbedding<T>,
    pub member_count: usize,
    /// Completion latch used by the performance-driven annotation policy.
    pub complete: bool,
}

impl<T: Real> PseudoContext<T> {
    /// Context seeded from a set of embeddings (their mean).
    pub fn from_members<'a, I>(pc_id: usize, embeddings: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a StyleEmbedding<T>>,
    {
        let mut it = embeddings.into_iter();
        let first = it.next().ok_or(Error::EmptyInput("pseudo-context members"))?;
        let mut pc = PseudoContext {
            pc_id,
            centroid: first.clone(),
            member_count: 1,
            complete: false,
        };
        for e in it {
            pc.absorb(e)?;
        }
        Ok(pc)
    }

    /// Running-mean update: `c += (e - c) / n`.
    pub fn absorb(&mut self, embedding: &StyleEmbedding<T>) -> Result<()> {
        check_dim(self.centroid.dim(), embedding.dim())?;
        self.member_count += 1;
        let n = T::from_count(self.member_count);
        for (c, &e) in self.centroid.values.iter_mut().zip(&embedding.values) {
            *c += (e - *c) / n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assignment {
    Known(usize),
    Outlier,
}

/// Nearest centroid if it lies strictly closer than `pd_threshold`;
/// otherwise `Outlier`. Equal distances go to the smaller `pc_id`.
pub fn assign<T: Real>(
    embedding: &StyleEmbedding<T>,
    pcs: &[PseudoContext<T>],
    pd_threshold: T,
) -> Result<Assignment> {
    if !(pd_threshold > T::zero()) {
        return Err(Error::InvalidArgument("pd_threshold must be positive".into()));
    }
    let mut best: Option<(T, usize)> = None;
    for pc in pcs {
        let d = embedding.distance(&pc.centroid)?;
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && pc.pc_id < bid),
        };
        if better {
            best = Some((d, pc.pc_id));
        }
    }
    Ok(match best {
        Some((d, id)) if d < pd_threshold => Assignment::Known(id),
        _ => Assignment::Outlier,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierEntry<T> {
    pub sample: Sample<T>,
    pub embedding: StyleEmbedding<T>,
    pub stream_index: usize,
}

/// Holding area for samples far from every known context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierMemory<T> {
    entries: Vec<OutlierEntry<T>>,
    pub max_age: usize,
    pub d_new: T,
    pub m_new: usize,
}

impl<T: Real> OutlierMemory<T> {
    pub fn new(max_age: usize, d_new: T, m_new: usize) -> Result<Self> {
        if !(d_new > T::zero()) || m_new == 0 {
            return Err(Error::InvalidArgument("d_new and m_new must be positive".into()));
        }
        Ok(Self {
            entries: Vec::new(),
            max_age,
            d_new,
            m_new,
        })
    }

    pub fn entries(&self) -> &[OutlierEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds an outlier, ages out stale entries, and extracts the densest
    /// neighbourhood holding at least `m_new` entries (anchor included)
    /// within `d_new` of its anchor. Ties go to the anchor with the lowest
    /// stream index. Extracted members are returned in stream order.
    pub fn step(
        &mut self,
        sample: Sample<T>,
        embedding: StyleEmbedding<T>,
        now: usize,
    ) -> Result<Option<Vec<OutlierEntry<T>>>> {
        if let Some(e) = self.entries.first() {
            check_dim(e.embedding.dim(), embedding.dim())?;
        }
        self.entries.push(OutlierEntry {
            sample,
            embedding,
            stream_index: now,
        });
        let max_age = self.max_age;
        self.entries
            .retain(|e| now.saturating_sub(e.stream_index) <= max_age);

        let mut best: Option<(usize, usize, Vec<usize>)> = None; // (size, anchor index, members)
        for (a, anchor) in self.entries.iter().enumerate() {
            let members: Vec<usize> = self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    distance_unchecked(&anchor.embedding.values, &e.embedding.values) <= self.d_new
                })
                .map(|(i, _)| i)
                .collect();
            if members.len() < self.m_new {
                continue;
            }
            let better = match &best {
                None => true,
                Some((size, anchor_idx, _)) => {
                    members.len() > *size
                        || (members.len() == *size
                            && anchor.stream_index < self.entries[*anchor_idx].stream_index)
                }
            };
            if better {
                best = Some((members.len(), a, members));
            }
        }

        let Some((_, _, members)) = best else {
            return Ok(None);
        };
        let mut taken = Vec::with_capacity(members.len());
        let mut keep = Vec::with_capacity(self.entries.len() - members.len());
        for (i, e) in std::mem::take(&mut self.entries).into_iter().enumerate() {
            if members.binary_search(&i).is_ok() {
                taken.push(e);
            } else {
                keep.push(e);
            }
        }
        self.entries = keep;
        Ok(Some(taken))
    }
}
