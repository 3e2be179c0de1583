use super::{validate_points, ClusterResult};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::vector::{distance_unchecked, squared_distance_unchecked};

/// Lloyd's algorithm seeded with k-means++.
///
/// `k` is clamped to the number of points. Iteration stops once the largest
/// centroid displacement drops below `tol` or after `max_iter` rounds. The
/// trace records the inertia after every assignment step, including a final
/// one against the returned centroids, so it is non-increasing.
pub fn kmeans<T: Real, P: AsRef<[T]>>(
    points: &[P],
    k: usize,
    rng: &mut RngStream,
    max_iter: usize,
    tol: T,
) -> Result<ClusterResult<T>> {
    let dim = validate_points(points)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let k = k.min(points.len());
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignments = vec![0usize; points.len()];
    let mut trace = Vec::new();

    for _ in 0..max_iter {
        trace.push(assign(points, &centroids, &mut assignments));
        let updated = update(points, &centroids, &assignments, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| distance_unchecked(a, b))
            .fold(T::zero(), |m, d| m.max(d));
        centroids = updated;
        if shift < tol {
            break;
        }
    }
    trace.push(assign(points, &centroids, &mut assignments));

    Ok(ClusterResult {
        assignments: assignments.into_iter().map(Some).collect(),
        centroids,
        objective_trace: trace,
    })
}

fn seed_plus_plus<T: Real, P: AsRef<[T]>>(points: &[P], k: usize, rng: &mut RngStream) -> Vec<Vec<T>> {
    let mut centroids: Vec<Vec<T>> = Vec::with_capacity(k);
    let first = rng.below(points.len());
    centroids.push(points[first].as_ref().to_vec());
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance_unchecked(p.as_ref(), &centroids[0]).as_f64())
        .collect();
    while centroids.len() < k {
        let pick = rng.weighted_index(&nearest);
        let c = points[pick].as_ref().to_vec();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance_unchecked(p.as_ref(), &c).as_f64());
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest-centroid assignment (ties to the lower index). Returns inertia.
fn assign<T: Real, P: AsRef<[T]>>(points: &[P], centroids: &[Vec<T>], out: &mut [usize]) -> T {
    let mut inertia = T::zero();
    for (slot, p) in out.iter_mut().zip(points) {
        let (best, d) = nearest_centroid(p.as_ref(), centroids);
        *slot = best;
        inertia += d;
    }
    inertia
}

pub(crate) fn nearest_centroid<T: Real>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance_unchecked(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Mean update. An empty cluster is reseeded at the point lying farthest
/// from its current centroid (each such point used at most once).
fn update<T: Real, P: AsRef<[T]>>(
    points: &[P],
    centroids: &[Vec<T>],
    assignments: &[usize],
    dim: usize,
) -> Vec<Vec<T>> {
    let k = centroids.len();
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    let mut taken = vec![false; points.len()];
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        if counts[j] > 0 {
            let n = T::from_count(counts[j]);
            out.push(sums[j].iter().map(|&s| s / n).collect());
            continue;
        }
        let mut far = None;
        let mut far_d = T::neg_infinity();
        for (i, (p, &a)) in points.iter().zip(assignments).enumerate() {
            if taken[i] {
                continue;
            }
            let d = squared_distance_unchecked(p.as_ref(), &centroids[a]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => {
                taken[i] = true;
                out.push(points[i].as_ref().to_vec());
            }
            None => out.push(centroids[j].clone()),
        }
    }
    out
}
