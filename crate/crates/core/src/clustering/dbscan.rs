use std::collections::VecDeque;

use super::{validate_points, ClusterResult};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::vector::{mean_of, squared_distance_unchecked};

/// Density-based clustering.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within distance `eps`. Points are scanned in index order; a border point
/// belongs to the first cluster that reaches it. Centroids are the member
/// means; noise is excluded from them.
pub fn dbscan<T: Real, P: AsRef<[T]>>(points: &[P], eps: T, min_pts: usize) -> Result<ClusterResult<T>> {
    let dim = validate_points(points)?;
    if !(eps > T::zero()) || min_pts == 0 {
        return Err(Error::InvalidArgument("eps and min_pts must be positive".into()));
    }
    let eps2 = eps * eps;
    let n = points.len();
    let neighbours = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| squared_distance_unchecked(points[i].as_ref(), points[j].as_ref()) <= eps2)
            .collect()
    };

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut n_clusters = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = neighbours(i);
        if seeds.len() < min_pts {
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        labels[i] = Some(c);
        let mut queue: VecDeque<usize> = seeds.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(c);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbours(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
    }

    let centroids = (0..n_clusters)
        .map(|c| {
            mean_of(
                (0..n).filter(|&i| labels[i] == Some(c)).map(|i| points[i].as_ref()),
                dim,
            )
        })
        .collect();
    Ok(ClusterResult {
        assignments: labels,
        centroids,
        objective_trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coincident_points_form_one_cluster() {
        let p = vec![vec![1.0, 1.0]; 5];
        let r = dbscan(&p, 0.1, 3).unwrap();
        assert_eq!(r.assignments, vec![Some(0); 5]);
        assert_eq!(r.centroids, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn isolated_points_are_noise() {
        let p = vec![vec![0.0, 0.0], vec![100.0, 0.0]];
        let r = dbscan(&p, 0.1, 3).unwrap();
        assert_eq!(r.assignments, vec![None, None]);
        assert!(r.centroids.is_empty());
    }

    #[test]
    fn border_point_goes_to_first_discovering_cluster() {
        // Two cores on each side; point 2 is within eps of both groups.
        let p: Vec<Vec<f64>> = vec![
            vec![0.0],
            vec![0.5],
            vec![1.5],
            vec![2.5],
            vec![3.0],
        ];
        let r = dbscan(&p, 1.0, 2).unwrap();
        // 0,1 core; 2 reached from 1 (distance 1.0) -> cluster 0.
        // 2's own neighbourhood {1,2,3} is core too, so 3,4 join cluster 0.
        assert_eq!(r.assignments, vec![Some(0); 5]);

        let r = dbscan(&p, 1.0, 3).unwrap();
        // cores need 3 points: 1 ({0,1,2}), 2 ({1,2,3}), 3 ({2,3,4})
        assert_eq!(r.assignments, vec![Some(0); 5]);

        let q: Vec<Vec<f64>> = [0.0, 0.1, 0.2, 0.45, 1.1, 1.75, 2.0, 2.1, 2.2]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let r = dbscan(&q, 0.7, 4).unwrap();
        // point 4 has only 3 neighbours, so it is a border of both groups;
        // the left cluster reaches it first
        let want: Vec<Option<usize>> = [0, 0, 0, 0, 0, 1, 1, 1, 1].iter().map(|&c| Some(c)).collect();
        assert_eq!(r.assignments, want);
    }

    proptest! {
        #[test]
        fn translation_and_scaling_invariance(
            raw in prop::collection::vec((-40i32..40, -40i32..40), 1..25),
            shift in (-20i32..20, -20i32..20),
            eps_k in 1i32..12,
            min_pts in 1usize..5,
        ) {
            // dyadic coordinates and an off-grid eps keep every distance comparison exact
            let p: Vec<Vec<f64>> = raw.iter().map(|&(x, y)| vec![x as f64 / 8.0, y as f64 / 8.0]).collect();
            let eps = (eps_k as f64 + 0.5) / 8.0;
            let base = dbscan(&p, eps, min_pts).unwrap();
            let moved: Vec<Vec<f64>> = p.iter().map(|v| vec![v[0] + shift.0 as f64, v[1] + shift.1 as f64]).collect();
            prop_assert_eq!(&dbscan(&moved, eps, min_pts).unwrap().assignments, &base.assignments);
            let scaled: Vec<Vec<f64>> = p.iter().map(|v| vec![v[0] * 4.0, v[1] * 4.0]).collect();
            prop_assert_eq!(&dbscan(&scaled, eps * 4.0, min_pts).unwrap().assignments, &base.assignments);
        }
    }
}
