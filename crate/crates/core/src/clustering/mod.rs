//! Clustering kernels used by memory pruning: Lloyd's k-means with
//! k-means++ seeding, diagonal-covariance Gaussian mixtures fitted by EM,
//! and DBSCAN.

mod dbscan;
mod gmm;
mod kmeans;

pub use dbscan::dbscan;
pub use gmm::{gmm_fit, gmm_fit_from, GmmModel, GmmParams};
pub use kmeans::kmeans;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Output shared by all clustering kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult<T> {
    /// Cluster index per point; `None` marks DBSCAN noise.
    pub assignments: Vec<Option<usize>>,
    pub centroids: Vec<Vec<T>>,
    /// K-means inertia or GMM log-likelihood per iteration. Empty for DBSCAN.
    pub objective_trace: Vec<T>,
}

impl<T: Real> ClusterResult<T> {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Point indices grouped by cluster, each group in ascending index order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.centroids.len()];
        for (i, a) in self.assignments.iter().enumerate() {
            if let Some(c) = a {
                groups[*c].push(i);
            }
        }
        groups
    }

    pub fn noise(&self) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.is_none().then_some(i))
            .collect()
    }
}

pub(crate) fn validate_points<T: Real, P: AsRef<[T]>>(points: &[P]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptyInput("points"))?;
    let dim = first.as_ref().len();
    for p in points {
        check_dim(dim, p.as_ref().len())?;
    }
    Ok(dim)
}
