//! Retention rules applied when a memory slot must shrink.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::MemoryItem;
use crate::clustering::{dbscan, gmm_fit, kmeans, ClusterResult};
use crate::error::{Error, Result};
use crate::learner::TaskModel;
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::vector::distance_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PruningStrategy {
    /// Keep the most recently used items.
    Lru,
    /// LRU on rebalance, but a full slot admits a new item by replacing the
    /// stored item with the closest embedding.
    LruClosest,
    KMeans,
    Gmm,
    Dbscan,
    Uncertainty,
    Egl,
    /// K-means proximity half plus uncertainty half per cluster.
    KU,
    /// GMM proximity half plus EGL half per cluster.
    EglGmm,
}

impl PruningStrategy {
    pub const ALL: [PruningStrategy; 9] = [
        PruningStrategy::Lru,
        PruningStrategy::LruClosest,
        PruningStrategy::KMeans,
        PruningStrategy::Gmm,
        PruningStrategy::Dbscan,
        PruningStrategy::Uncertainty,
        PruningStrategy::Egl,
        PruningStrategy::KU,
        PruningStrategy::EglGmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PruningStrategy::Lru => "lru",
            PruningStrategy::LruClosest => "lru-closest",
            PruningStrategy::KMeans => "kmeans",
            PruningStrategy::Gmm => "gmm",
            PruningStrategy::Dbscan => "dbscan",
            PruningStrategy::Uncertainty => "uncertainty",
            PruningStrategy::Egl => "egl",
            PruningStrategy::KU => "ku",
            PruningStrategy::EglGmm => "eglgmm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL.into_iter().find(|p| p.name() == s).or(match s.as_str() {
            "k-means" => Some(PruningStrategy::KMeans),
            "egl-gmm" => Some(PruningStrategy::EglGmm),
            _ => None,
        })
    }

    /// Whether the rule scores items through the task model.
    pub fn needs_model(self) -> bool {
        matches!(
            self,
            PruningStrategy::Uncertainty | PruningStrategy::Egl | PruningStrategy::KU | PruningStrategy::EglGmm
        )
    }
}

impl std::fmt::Display for PruningStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Clustering hyperparameters for the distribution-based rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneParams {
    pub kmeans_clusters: usize,
    pub gmm_components: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub var_floor: f64,
}

impl Default for PruneParams {
    fn default() -> Self {
        Self {
            kmeans_clusters: 5,
            gmm_components: 5,
            dbscan_eps: 0.1,
            dbscan_min_pts: 3,
            max_iter: 100,
            tol: 1e-6,
            var_floor: 1e-6,
        }
    }
}

/// Indices (ascending) of the items retained when `items` is cut to
/// `target`. Returns every index when `target >= items.len()`.
pub fn select<T: Real>(
    items: &[MemoryItem<T>],
    target: usize,
    strategy: PruningStrategy,
    params: &PruneParams,
    model: Option<&TaskModel<T>>,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    if target >= items.len() {
        return Ok((0..items.len()).collect());
    }
    if target == 0 {
        return Ok(Vec::new());
    }
    let mut keep = match strategy {
        PruningStrategy::Lru | PruningStrategy::LruClosest => by_recency(items, target),
        PruningStrategy::Uncertainty | PruningStrategy::Egl => {
            let scores = informativeness(items, strategy, model)?;
            top_scored(items, &(0..items.len()).collect::<Vec<_>>(), &scores, target)
        }
        PruningStrategy::KMeans | PruningStrategy::Gmm | PruningStrategy::Dbscan => {
            match cluster(items, strategy, params, rng)? {
                Some(clusters) => proximity_selection(items, &clusters, target),
                None => by_recency(items, target),
            }
        }
        PruningStrategy::KU | PruningStrategy::EglGmm => {
            let scores = informativeness(items, strategy, model)?;
            let clusters = cluster(items, strategy, params, rng)?
                .expect("k-means and GMM always produce clusters");
            hybrid_selection(items, &clusters, &scores, target)
        }
    };
    keep.sort_unstable();
    debug_assert_eq!(keep.len(), target);
    Ok(keep)
}

/// Largest-remainder apportionment of `target` across groups of the given
/// sizes, proportional to size. Remainder ties go to the lower group index.
pub fn allocate_quotas(target: usize, sizes: &[usize]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let target = target.min(total);
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| target * s / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // remainder of group i is (target * s_i) mod total; compare exactly in integers
    order.sort_by(|&a, &b| {
        let ra = (target * sizes[a]) % total;
        let rb = (target * sizes[b]) % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &g in order.iter().take(target - assigned) {
        quotas[g] += 1;
    }
    quotas
}

fn cmp_desc_then_id<T: PartialOrd>(a: (T, u64), b: (T, u64)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

fn by_recency<T: Real>(items: &[MemoryItem<T>], target: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| cmp_desc_then_id((items[a].last_used, items[a].id()), (items[b].last_used, items[b].id())));
    idx.truncate(target);
    idx
}

fn informativeness<T: Real>(
    items: &[MemoryItem<T>],
    strategy: PruningStrategy,
    model: Option<&TaskModel<T>>,
) -> Result<Vec<T>> {
    let model = model.ok_or(Error::EmptyHead)?;
    if model.n_classes() == 0 {
        return Err(Error::EmptyHead);
    }
    items
        .iter()
        .map(|it| match strategy {
            PruningStrategy::Uncertainty | PruningStrategy::KU => model.uncertainty(it.labeled.features()),
            _ => model.egl(it.labeled.features()),
        })
        .collect()
}

fn top_scored<T: Real>(items: &[MemoryItem<T>], pool: &[usize], scores: &[T], n: usize) -> Vec<usize> {
    let mut idx = pool.to_vec();
    idx.sort_by(|&a, &b| cmp_desc_then_id((scores[a], items[a].id()), (scores[b], items[b].id())));
    idx.truncate(n);
    idx
}

fn nearest_to<T: Real>(items: &[MemoryItem<T>], pool: &[usize], centroid: &[T], n: usize) -> Vec<usize> {
    let mut keyed: Vec<(T, u64, usize)> = pool
        .iter()
        .map(|&i| (distance_unchecked(items[i].embedding.as_slice(), centroid), items[i].id(), i))
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(n).map(|(_, _, i)| i).collect()
}

/// Clusters the item embeddings. `None` means DBSCAN labelled everything
/// as noise.
fn cluster<T: Real>(
    items: &[MemoryItem<T>],
    strategy: PruningStrategy,
    params: &PruneParams,
    rng: &mut RngStream,
) -> Result<Option<ClusterResult<T>>> {
    let points: Vec<&[T]> = items.iter().map(|it| it.embedding.as_slice()).collect();
    let result = match strategy {
        PruningStrategy::KMeans | PruningStrategy::KU => kmeans(
            &points,
            params.kmeans_clusters.min(points.len()),
            rng,
            params.max_iter,
            T::lit(params.tol),
        )?,
        PruningStrategy::Gmm | PruningStrategy::EglGmm => gmm_fit(
            &points,
            params.gmm_components.min(points.len()),
            rng,
            params.max_iter,
            T::lit(params.tol),
            T::lit(params.var_floor),
        )?
        .to_cluster_result(),
        PruningStrategy::Dbscan => {
            let r = dbscan(&points, T::lit(params.dbscan_eps), params.dbscan_min_pts)?;
            if r.n_clusters() == 0 {
                return Ok(None);
            }
            r
        }
        _ => unreachable!("not a clustering strategy"),
    };
    Ok(Some(result))
}

/// Clusters with their centroids, ordered by lowest member index (empty
/// clusters last), so quota ties do not depend on cluster numbering.
fn canonical_groups<T: Real>(clusters: &ClusterResult<T>) -> (Vec<Vec<usize>>, Vec<&[T]>) {
    let mut paired: Vec<(Vec<usize>, &[T])> = clusters
        .members()
        .into_iter()
        .zip(clusters.centroids.iter().map(Vec::as_slice))
        .collect();
    paired.sort_by_key(|(g, _)| g.first().copied().unwrap_or(usize::MAX));
    paired.into_iter().unzip()
}

fn proximity_selection<T: Real>(items: &[MemoryItem<T>], clusters: &ClusterResult<T>, target: usize) -> Vec<usize> {
    let (groups, centroids) = canonical_groups(clusters);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quotas = allocate_quotas(target, &sizes);
    let mut keep = Vec::with_capacity(target);
    for ((g, &q), c) in groups.iter().zip(&quotas).zip(centroids) {
        keep.extend(nearest_to(items, g, c, q));
    }
    let missing = target - keep.len();
    if missing > 0 {
        // residual pool: noise points ranked by distance to their closest centroid
        let noise = clusters.noise();
        let mut keyed: Vec<(T, u64, usize)> = noise
            .iter()
            .map(|&i| {
                let d = clusters
                    .centroids
                    .iter()
                    .map(|c| distance_unchecked(items[i].embedding.as_slice(), c))
                    .fold(T::infinity(), |m, d| m.min(d));
                (d, items[i].id(), i)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        keep.extend(keyed.into_iter().take(missing).map(|(_, _, i)| i));
    }
    keep
}

fn hybrid_selection<T: Real>(
    items: &[MemoryItem<T>],
    clusters: &ClusterResult<T>,
    scores: &[T],
    target: usize,
) -> Vec<usize> {
    let (groups, centroids) = canonical_groups(clusters);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quotas = allocate_quotas(target, &sizes);
    let mut keep = Vec::with_capacity(target);
    for ((g, &q), c) in groups.iter().zip(&quotas).zip(centroids) {
        let near = nearest_to(items, g, c, q.div_ceil(2));
        let rest: Vec<usize> = g.iter().copied().filter(|i| !near.contains(i)).collect();
        keep.extend(top_scored(items, &rest, scores, q / 2));
        keep.extend(near);
    }
    keep
}
