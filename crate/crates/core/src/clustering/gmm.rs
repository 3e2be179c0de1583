use serde::{Deserialize, Serialize};

use super::{kmeans, validate_points, ClusterResult};
use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::vector::log_sum_exp;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub variances: Vec<Vec<T>>,
    /// Posterior component probabilities per fitted point.
    pub responsibilities: Vec<Vec<T>>,
    pub log_likelihood_trace: Vec<T>,
}

impl<T: Real> GmmModel<T> {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn log_likelihood(&self) -> T {
        self.log_likelihood_trace
            .last()
            .copied()
            .unwrap_or(T::neg_infinity())
    }

    /// Hard assignment (highest responsibility, ties to the lower component)
    /// with the means as centroids.
    pub fn to_cluster_result(&self) -> ClusterResult<T> {
        let assignments = self
            .responsibilities
            .iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                Some(best)
            })
            .collect();
        ClusterResult {
            assignments,
            centroids: self.means.clone(),
            objective_trace: self.log_likelihood_trace.clone(),
        }
    }
}

/// Fits a mixture by EM, initialised from k-means on the same points.
///
/// Initial means are the k-means centroids, initial weights the cluster
/// proportions, initial variances the per-cluster variances (the global
/// variance for clusters with fewer than two points), all floored at
/// `var_floor`.
pub fn gmm_fit<T: Real, P: AsRef<[T]>>(
    points: &[P],
    n_components: usize,
    rng: &mut RngStream,
    max_iter: usize,
    tol: T,
    var_floor: T,
) -> Result<GmmModel<T>> {
    let dim = validate_points(points)?;
    if n_components == 0 {
        return Err(Error::InvalidArgument("n_components must be positive".into()));
    }
    if points.len() < n_components {
        return Err(Error::InvalidArgument(format!(
            "{} points cannot support {} mixture components",
            points.len(),
            n_components
        )));
    }
    if !(var_floor > T::zero()) {
        return Err(Error::InvalidArgument("var_floor must be positive".into()));
    }

    let km = kmeans(points, n_components, rng, 100, T::lit(1e-10))?;
    let groups = km.members();
    let n = T::from_count(points.len());
    let global = column_variance(points, &(0..points.len()).collect::<Vec<_>>(), dim);
    let mut weights = Vec::with_capacity(n_components);
    let mut variances = Vec::with_capacity(n_components);
    for (j, g) in groups.iter().enumerate() {
        weights.push(T::from_count(g.len()) / n);
        let v = if g.len() >= 2 {
            column_variance_about(points, g, &km.centroids[j])
        } else {
            global.clone()
        };
        variances.push(v.into_iter().map(|x| x.max(var_floor)).collect());
    }
    let init = GmmParams {
        weights,
        means: km.centroids,
        variances,
    };
    gmm_fit_from(points, init, max_iter, tol, var_floor)
}

/// Starting point for [`gmm_fit_from`].
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub variances: Vec<Vec<T>>,
}

/// EM from explicit initial parameters.
///
/// Each iteration runs an E-step (recording the log-likelihood of the
/// current parameters) followed by an M-step; it stops once the
/// log-likelihood gain falls below `tol` or after `max_iter` iterations. A
/// final E-step refreshes the responsibilities against the returned
/// parameters.
pub fn gmm_fit_from<T: Real, P: AsRef<[T]>>(
    points: &[P],
    init: GmmParams<T>,
    max_iter: usize,
    tol: T,
    var_floor: T,
) -> Result<GmmModel<T>> {
    let dim = validate_points(points)?;
    let k = init.weights.len();
    if k == 0 || init.means.len() != k || init.variances.len() != k {
        return Err(Error::InvalidArgument("inconsistent mixture parameters".into()));
    }
    for (m, v) in init.means.iter().zip(&init.variances) {
        check_dim(dim, m.len())?;
        check_dim(dim, v.len())?;
    }
    let GmmParams {
        mut weights,
        mut means,
        mut variances,
    } = init;
    let mut resp = vec![vec![T::zero(); k]; points.len()];
    let mut trace: Vec<T> = Vec::new();

    for _ in 0..max_iter {
        let ll = e_step(points, &weights, &means, &variances, &mut resp);
        let converged = trace.last().is_some_and(|&prev| ll - prev < tol);
        trace.push(ll);
        if converged {
            break;
        }
        m_step(points, &resp, var_floor, &mut weights, &mut means, &mut variances);
    }
    let ll = e_step(points, &weights, &means, &variances, &mut resp);
    if trace.last() != Some(&ll) {
        trace.push(ll);
    }

    Ok(GmmModel {
        weights,
        means,
        variances,
        responsibilities: resp,
        log_likelihood_trace: trace,
    })
}

fn log_gaussian_diag<T: Real>(x: &[T], mean: &[T], var: &[T]) -> T {
    let ln_tau = T::lit(std::f64::consts::TAU.ln());
    let half = T::lit(0.5);
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((&xi, &mi), &vi)| {
            let d = xi - mi;
            -half * (ln_tau + vi.ln() + d * d / vi)
        })
        .sum()
}

fn e_step<T: Real, P: AsRef<[T]>>(
    points: &[P],
    weights: &[T],
    means: &[Vec<T>],
    variances: &[Vec<T>],
    resp: &mut [Vec<T>],
) -> T {
    let k = weights.len();
    let mut total = T::zero();
    let mut logp = vec![T::zero(); k];
    for (p, r) in points.iter().zip(resp.iter_mut()) {
        for j in 0..k {
            logp[j] = if weights[j] > T::zero() {
                weights[j].ln() + log_gaussian_diag(p.as_ref(), &means[j], &variances[j])
            } else {
                T::neg_infinity()
            };
        }
        let lse = log_sum_exp(&logp);
        total += lse;
        for j in 0..k {
            r[j] = (logp[j] - lse).exp();
        }
    }
    total
}

fn m_step<T: Real, P: AsRef<[T]>>(
    points: &[P],
    resp: &[Vec<T>],
    var_floor: T,
    weights: &mut [T],
    means: &mut [Vec<T>],
    variances: &mut [Vec<T>],
) {
    let n = T::from_count(points.len());
    let dim = means[0].len();
    for j in 0..weights.len() {
        let nk: T = resp.iter().map(|r| r[j]).sum();
        weights[j] = nk / n;
        if !(nk > T::zero()) {
            // component collapsed; it carries no mass and keeps its shape
            continue;
        }
        let mut mean = vec![T::zero(); dim];
        for (p, r) in points.iter().zip(resp) {
            for (m, &x) in mean.iter_mut().zip(p.as_ref()) {
                *m += r[j] * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![T::zero(); dim];
        for (p, r) in points.iter().zip(resp) {
            for ((v, &x), &m) in var.iter_mut().zip(p.as_ref()).zip(&mean) {
                let d = x - m;
                *v += r[j] * d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / nk).max(var_floor));
        means[j] = mean;
        variances[j] = var;
    }
}

fn column_variance<T: Real, P: AsRef<[T]>>(points: &[P], idx: &[usize], dim: usize) -> Vec<T> {
    let mean = crate::vector::mean_of(idx.iter().map(|&i| points[i].as_ref()), dim);
    column_variance_about(points, idx, &mean)
}

fn column_variance_about<T: Real, P: AsRef<[T]>>(points: &[P], idx: &[usize], mean: &[T]) -> Vec<T> {
    let mut var = vec![T::zero(); mean.len()];
    for &i in idx {
        for ((v, &x), &m) in var.iter_mut().zip(points[i].as_ref()).zip(mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let n = T::from_count(idx.len().max(1));
    var.iter_mut().for_each(|v| *v /= n);
    var
}
