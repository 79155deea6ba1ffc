//! Lloyd's K-means with k-means++ seeding, single-point transfer refinement
//! and random restarts.

use rand::Rng;

use crate::rng::{self, purpose};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansOptions {
    pub k: usize,
    pub max_iters: usize,
    /// Independent k-means++ initializations; the lowest SSE wins.
    pub restarts: usize,
    /// Follow each Lloyd fixpoint with single-point transfers.
    pub refine: bool,
    pub seed: u64,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 100,
            restarts: 5,
            refine: true,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    /// SSE after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

pub fn sse(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
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
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn update(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments.iter()) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        }
    }
    // Empty clusters take the point farthest from its current centroid.
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let far = (0..points.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centroids[assignments[a]]);
                let db = sq_dist(&points[b], &centroids[assignments[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            });
        if let Some(i) = far {
            counts[assignments[i]] -= 1;
            assignments[i] = j;
            counts[j] = 1;
            centroids[j] = points[i].clone();
        }
    }
}

/// Moves single points between clusters while that lowers the SSE once the
/// shift of both centroids is counted. Lloyd stops at any partition where
/// every point is nearest its own centroid; such a move can still pay off.
/// Returns whether anything moved.
fn transfer(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut moved = false;
    let mut improved = true;
    while improved {
        improved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(p, &centroids[a]);
            let best = (0..k)
                .filter(|&b| b != a)
                .map(|b| {
                    let nb = counts[b] as f64;
                    (b, nb / (nb + 1.0) * sq_dist(p, &centroids[b]))
                })
                .min_by(|x, y| x.1.total_cmp(&y.1));
            let Some((b, addition)) = best else { continue };
            if addition < removal - 1e-12 * removal.max(1.0) {
                let nb = counts[b] as f64;
                for (c, x) in centroids[a].iter_mut().zip(p) {
                    *c = (na * *c - x) / (na - 1.0);
                }
                for (c, x) in centroids[b].iter_mut().zip(p) {
                    *c = (nb * *c + x) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                assignments[i] = b;
                improved = true;
                moved = true;
            }
        }
    }
    moved
}

fn lloyd(points: &[Vec<f64>], opts: &KMeansOptions, rng: &mut impl Rng) -> KMeans {
    let mut centroids = plus_plus_init(points, opts.k, rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut history = vec![sse(points, &centroids, &assignments)];
    let mut converged = false;
    for _ in 0..opts.max_iters {
        update(points, &mut assignments, &mut centroids);
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let value = sse(points, &centroids, &next);
        let last = *history.last().expect("non-empty");
        debug_assert!(
            value <= last + 1e-12 * last.max(1.0),
            "SSE increased from {last} to {value}"
        );
        history.push(value);
        let done = next == assignments;
        assignments = next;
        if done {
            if opts.refine && transfer(points, &mut assignments, &mut centroids) {
                // Exact means again before Lloyd resumes.
                update(points, &mut assignments, &mut centroids);
                history.push(sse(points, &centroids, &assignments));
                continue;
            }
            converged = true;
            break;
        }
    }
    if !converged {
        update(points, &mut assignments, &mut centroids);
    }
    let sse = sse(points, &centroids, &assignments);
    KMeans {
        centroids,
        assignments,
        sse,
        history,
        converged,
    }
}

/// Clusters `points` into `opts.k` centroids. Deterministic given the seed.
pub fn kmeans(points: &[Vec<f64>], opts: KMeansOptions) -> Result<KMeans> {
    if opts.k == 0 || points.len() < opts.k {
        return Err(Error::TooFewPoints {
            points: points.len(),
            k: opts.k,
        });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Data("k-means points differ in dimension".into()));
    }
    let mut best: Option<KMeans> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = rng::stream(opts.seed, &[purpose::KMEANS, restart as u64]);
        let run = lloyd(points, &opts, &mut rng);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![-1.0, 4.0]];
        let km = kmeans(&pts, KMeansOptions::new(1, 0)).unwrap();
        assert!((km.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((km.centroids[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rectangle_splits_along_the_long_axis() {
        // Long axis x: the optimal pair is the midpoints of the short edges.
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let km = kmeans(&pts, KMeansOptions::new(2, 3)).unwrap();
        let mut c = km.centroids.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        assert!((km.sse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_points_become_centroids() {
        let pts = vec![vec![0.0], vec![5.0], vec![9.0]];
        let km = kmeans(&pts, KMeansOptions::new(3, 1)).unwrap();
        assert_eq!(km.sse, 0.0);
        let mut c: Vec<f64> = km.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 5.0, 9.0]);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = vec![vec![0.0]];
        assert!(matches!(
            kmeans(&pts, KMeansOptions::new(2, 0)),
            Err(Error::TooFewPoints { points: 1, k: 2 })
        ));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![1.0]; 4];
        let km = kmeans(&pts, KMeansOptions::new(2, 0)).unwrap();
        assert_eq!(km.sse, 0.0);
        assert_eq!(km.centroids.len(), 2);
    }
}
