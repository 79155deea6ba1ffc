mod common;

use proptest::prelude::*;
use sarb::labels::LabelMatrix;
use sarb::numerics::{Tape, Tensor};
use sarb::plrb::{admits, contrastive_batch, contrastive_pair, kmeans, KMeansOptions, PairPolicy, PrototypeBank};
use sarb::Error;

fn points(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lloyd_invariants(pts in points(30, 3), k in 1usize..5, seed in any::<u64>()) {
        let km = kmeans(&pts, KMeansOptions::new(k, seed)).unwrap();
        prop_assert_eq!(km.centroids.len(), k);
        prop_assert!(km.history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let dist = |p: &[f64], c: &[f64]| p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let sse: f64 = pts.iter().zip(&km.assignments).map(|(p, &a)| dist(p, &km.centroids[a])).sum();
        prop_assert!((sse - km.sse).abs() <= 1e-9 * (1.0 + sse));
        if km.converged {
            for (p, &a) in pts.iter().zip(&km.assignments) {
                let own = dist(p, &km.centroids[a]);
                prop_assert!(km.centroids.iter().all(|c| own <= dist(p, c) + 1e-9));
            }
            for (j, centroid) in km.centroids.iter().enumerate() {
                let members: Vec<&Vec<f64>> = pts.iter().zip(&km.assignments).filter(|(_, &a)| a == j).map(|(p, _)| p).collect();
                prop_assert!(!members.is_empty());
                for (axis, &value) in centroid.iter().enumerate() {
                    let mean = members.iter().map(|p| p[axis]).sum::<f64>() / members.len() as f64;
                    prop_assert!((mean - value).abs() < 1e-9);
                }
            }
        }
        prop_assert_eq!(&km, &kmeans(&pts, KMeansOptions::new(k, seed)).unwrap());
    }

    #[test]
    fn sse_is_bounded_by_the_brute_force_optimum(pts in points(8, 2), seed in any::<u64>()) {
        let km = kmeans(&pts, KMeansOptions::new(2, seed)).unwrap();
        let best = common::brute_force_sse(&pts, 2);
        prop_assert!(km.sse >= best * (1.0 - 1e-9) - 1e-9, "{} vs {}", km.sse, best);
        prop_assert!(km.sse <= common::brute_force_sse(&pts, 1) + 1e-9);
    }

    #[test]
    fn refinement_never_ends_above_plain_lloyd(pts in points(12, 2), seed in any::<u64>()) {
        let refined = kmeans(&pts, KMeansOptions::new(3, seed)).unwrap();
        let plain = kmeans(&pts, KMeansOptions { refine: false, ..KMeansOptions::new(3, seed) }).unwrap();
        prop_assert!(refined.sse <= plain.sse + 1e-9);
    }

    #[test]
    fn contrastive_batch_is_the_mean_of_admitted_pairs(
        reps in prop::collection::vec(-2.0..2.0f64, 4 * 2 * 3),
        labels in prop::collection::vec(prop_oneof![Just(1.0), Just(-1.0), Just(0.0)], 4 * 2),
        literal in any::<bool>(),
    ) {
        let (b, c, d) = (4, 2, 3);
        let policy = if literal { PairPolicy::Literal } else { PairPolicy::KnownOnly };
        let lm = LabelMatrix::new(b, c, labels.clone()).unwrap();
        let mut tape = Tape::no_grad();
        let x = tape.constant(Tensor::new(vec![b, c, d], reps.clone()).unwrap());
        let out = contrastive_batch(&mut tape, x, &lm, policy).unwrap();
        let mut terms = Vec::new();
        for j in 0..c {
            for n in 0..b {
                for m in (0..b).filter(|&m| m != n) {
                    let (y_n, y_m) = (labels[n * c + j], labels[m * c + j]);
                    if admits(policy, y_n, y_m) {
                        let row = |i: usize| &reps[(i * c + j) * d..(i * c + j + 1) * d];
                        terms.push(contrastive_pair(row(n), row(m), y_n, y_m));
                    }
                }
            }
        }
        prop_assert_eq!(out.terms, terms.len());
        let expect = if terms.is_empty() { 0.0 } else { terms.iter().sum::<f64>() / terms.len() as f64 };
        let got = tape.value(out.loss).data()[0];
        prop_assert!((got - expect).abs() < 1e-12);
        prop_assert!((0.0..=2.0).contains(&got));
    }
}

#[test]
fn too_few_points_is_an_error() {
    let pts = vec![vec![0.0], vec![1.0]];
    assert!(matches!(
        kmeans(&pts, KMeansOptions::new(3, 0)),
        Err(Error::TooFewPoints { points: 2, k: 3 })
    ));
}

#[test]
fn bank_marks_categories_with_too_few_positives() {
    // Category 0 has three known positives, category 1 only one.
    let labels = LabelMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0], vec![1.0, -1.0], vec![-1.0, -1.0]]).unwrap();
    let reps = Tensor::new(vec![4, 2, 1], vec![1.0, 5.0, 2.0, 6.0, 9.0, 7.0, 4.0, 8.0]).unwrap();
    let bank = PrototypeBank::from_reps(&reps, &labels, 2, 0, 3).unwrap();
    assert_eq!(bank.valid, vec![true, false]);
    assert_eq!(bank.built_at_epoch, 3);
    let mut protos = [bank.prototype(0, 0)[0], bank.prototype(0, 1)[0]];
    protos.sort_by(f64::total_cmp);
    assert_eq!(protos, [1.5, 9.0]);
    assert_eq!(bank.prototype(1, 0), &[0.0]);
}
