//! Lloyd's k-means on ground positions, with an optional equal-capacity
//! repair used to place drones over fixed-size user clusters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Point>,
    /// Cluster index of every input point.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after every Lloyd update.
    pub objective_history: Vec<f64>,
}

fn sq_dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &Point, centroids: &[Point]) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate().skip(1) {
        if sq_dist(p, c) < sq_dist(p, &centroids[best]) {
            best = j;
        }
    }
    best
}

pub fn objective(points: &[Point], centroids: &[Point], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn means(points: &[Point], assignment: &[usize], previous: &[Point]) -> Vec<Point> {
    let k = previous.len();
    let mut sums = vec![[0.0, 0.0]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        counts[a] += 1;
    }
    (0..k)
        .map(|j| match counts[j] {
            0 => previous[j],
            c => [sums[j][0] / c as f64, sums[j][1] / c as f64],
        })
        .collect()
}

/// k-means++ seeding.
fn seed_centroids(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next]);
    }
    centroids
}

/// Plain Lloyd iteration from a k-means++ start. An empty cluster is re-seeded
/// at the point farthest from its current centroid.
pub fn lloyd(points: &[Point], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || k > points.len() {
        return Err(Error::Validation(format!(
            "k-means needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut history = Vec::new();

    for _ in 0..MAX_ITERATIONS {
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centroids[assignment[a]]);
                        let db = sq_dist(&points[b], &centroids[assignment[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("k <= n leaves a cluster with two points");
                counts[assignment[far]] -= 1;
                assignment[far] = j;
                counts[j] = 1;
            }
        }
        centroids = means(points, &assignment, &centroids);
        history.push(objective(points, &centroids, &assignment));
        let next: Vec<usize> = points
            .iter()
            .zip(&assignment)
            .map(|(p, &a)| {
                // keep the current cluster on exact ties so the loop terminates
                let b = nearest(p, &centroids);
                if sq_dist(p, &centroids[b]) < sq_dist(p, &centroids[a]) {
                    b
                } else {
                    a
                }
            })
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(Clustering {
        centroids,
        assignment,
        objective_history: history,
    })
}

/// Moves users out of clusters above `capacity` into under-full clusters,
/// one user at a time, always picking the move with the smallest increase in
/// distance. Centroids are recomputed as the means of the repaired clusters.
pub fn repair_capacity(points: &[Point], clustering: &mut Clustering, capacity: usize) -> Result<()> {
    let k = clustering.centroids.len();
    if k * capacity < points.len() {
        return Err(Error::Validation(format!(
            "{k} clusters of capacity {capacity} cannot hold {} points",
            points.len()
        )));
    }
    let centroids = clustering.centroids.clone();
    let assignment = &mut clustering.assignment;
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    let dist = |i: usize, j: usize| sq_dist(&points[i], &centroids[j]).sqrt();
    while counts.iter().any(|&c| c > capacity) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..points.len() {
            let own = assignment[i];
            if counts[own] <= capacity {
                continue;
            }
            for j in 0..k {
                if counts[j] >= capacity {
                    continue;
                }
                let cost = dist(i, j) - dist(i, own);
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("an under-full cluster exists while another overflows");
        counts[assignment[i]] -= 1;
        counts[j] += 1;
        assignment[i] = j;
    }
    clustering.centroids = means(points, assignment, &centroids);
    Ok(())
}

/// Lloyd clustering followed by the capacity repair when `capacity` is given.
pub fn kmeans_placement(points: &[Point], k: usize, seed: u64, capacity: Option<usize>) -> Result<Clustering> {
    let mut clustering = lloyd(points, k, seed)?;
    if let Some(cap) = capacity {
        repair_capacity(points, &mut clustering, cap)?;
    }
    Ok(clustering)
}
