#![allow(dead_code)]

use sarb::data::{generate, generate_split, Dataset, DatasetSpec, Split};
use sarb::trainer::{Prepared, TrainConfig};

/// A configuration small enough to train in well under a second.
pub fn small_config() -> TrainConfig {
    let mut config = TrainConfig {
        dataset: DatasetSpec {
            samples: 96,
            categories: 4,
            height: 2,
            width: 2,
            dim: 6,
            ..DatasetSpec::default()
        },
        test_samples: 64,
        epochs: 4,
        batch_size: 8,
        blend_start: 1,
        proto_refresh: 2,
        k: 2,
        proportions: vec![0.3, 0.7],
        seeds: vec![0, 1],
        ..TrainConfig::default()
    };
    config.adam.lr = 1e-3;
    config
}

pub fn prepared(config: &TrainConfig) -> Prepared {
    Prepared {
        train: generate(&config.dataset).unwrap(),
        test: generate_split(&config.dataset, Split::Test, config.test_samples).unwrap(),
    }
}

pub fn dataset(spec: &DatasetSpec) -> Dataset {
    generate(spec).unwrap()
}

/// Average precision by pairwise rank counting: an item outranks another
/// when its score is higher, or equal and it comes first.
pub fn ap_oracle(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| positive[i]).collect();
    if positives.is_empty() {
        return None;
    }
    let total: f64 = positives
        .iter()
        .map(|&i| {
            let rank = 1 + (0..scores.len()).filter(|&j| ahead(j, i)).count();
            let hits = 1 + positives.iter().filter(|&&j| ahead(j, i)).count();
            hits as f64 / rank as f64
        })
        .sum();
    Some(total / positives.len() as f64)
}

/// Lowest SSE over every assignment of `points` into `k` non-empty clusters.
pub fn brute_force_sse(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    loop {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        if counts.iter().all(|&c| c > 0) {
            let sse: f64 = points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| {
                    p.iter()
                        .zip(&sums[l])
                        .map(|(x, s)| (x - s / counts[l] as f64).powi(2))
                        .sum::<f64>()
                })
                .sum();
            best = best.min(sse);
        }
        // Next assignment in base-k counting order.
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}
