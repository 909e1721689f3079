//! Lloyd's k-means with k-means++ seeding and a best-of-restarts harness.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::exec;
use crate::seeding;

/// Final clustering: per-point assignment, the centroids, and the total
/// squared distance to assigned centroids.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

/// Symmetric matrix of squared distances between cluster centres.
#[derive(Debug, Clone)]
pub struct TopicDistanceMatrix {
    pub centroids: Vec<Vec<f64>>,
    pub distances: Vec<Vec<f64>>,
}

impl TopicDistanceMatrix {
    pub fn from_centroids(centroids: &[Vec<f64>]) -> Self {
        assert!(centroids.len() >= 2, "need at least two centroids");
        let k = centroids.len();
        let mut distances = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..k {
                distances[a][b] = squared_distance(&centroids[a], &centroids[b]);
            }
        }
        TopicDistanceMatrix {
            centroids: centroids.to_vec(),
            distances,
        }
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// CSV with topic ids as header row and column, six decimals.
    pub fn to_csv(&self) -> String {
        let k = self.distances.len();
        let mut out = String::from("topic");
        for b in 1..=k {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
        for (a, row) in self.distances.iter().enumerate() {
            out.push_str(&(a + 1).to_string());
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from k-means++ seeding. Converges when assignments
/// stabilize or after `max_iter` passes; an emptied cluster is re-seeded
/// to the point farthest from its assigned centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<KmeansResult> {
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be >= 1".into()));
    }
    let dim = points[0].len();
    assert!(points.iter().all(|p| p.len() == dim), "ragged point set");

    let mut centroids = plus_plus_seeds(points, k, seed);
    let mut assignments = assign(points, &centroids);
    for _ in 0..max_iter {
        centroids = recompute_centroids(points, &assignments, k, dim);
        fix_empty_clusters(points, &mut centroids, &assignments);
        let next = assign(points, &centroids);
        let converged = next
            .iter()
            .zip(&assignments)
            .all(|(a, b)| a.0 == b.0);
        assignments = next;
        if converged {
            break;
        }
    }
    let inertia = assignments.iter().map(|a| a.1).sum();
    Ok(KmeansResult {
        assignments: assignments.into_iter().map(|a| a.0).collect(),
        centroids,
        inertia,
    })
}

/// Run `restarts` seeded attempts and keep the lowest inertia.
pub fn kmeans_best_of(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    restarts: usize,
    seed: u64,
) -> Result<KmeansResult> {
    assert!(restarts >= 1, "need at least one restart");
    let mut best: Option<KmeansResult> = None;
    for r in 0..restarts {
        let result = kmeans(points, k, max_iter, seeding::mix(seed, "kmeans-restart", r as u64))?;
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart ran"))
}

/// Assign every point to its nearest centroid (first index on ties).
/// Runs data-parallel; results come back in point order.
pub fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    exec::map(points, |p| nearest(p, centroids))
}

/// Sequential reference for the assignment step, used by the benches.
pub fn assign_seq(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    exec::map_seq(points, |p| nearest(p, centroids))
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn recompute_centroids(
    points: &[Vec<f64>],
    assignments: &[(usize, f64)],
    k: usize,
    dim: usize,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (point, &(c, _)) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(point) {
            *s += v;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            sum.iter_mut().for_each(|s| *s /= count as f64);
        } else {
            sum.iter_mut().for_each(|s| *s = f64::NAN); // re-seeded below
        }
    }
    sums
}

fn fix_empty_clusters(
    points: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assignments: &[(usize, f64)],
) {
    for c in 0..centroids.len() {
        if centroids[c].iter().all(|v| v.is_finite()) {
            continue;
        }
        let farthest = assignments
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i)
            .expect("non-empty point set");
        centroids[c] = points[farthest].clone();
    }
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeding::stream(seed, "kmeans-init", 0);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| squared_distance(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }
    centroids
}
