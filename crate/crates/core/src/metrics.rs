//! Multi-label evaluation: per-category average precision, mAP and the
//! overall / per-class precision, recall and F1.

use crate::labels::LabelMatrix;
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Non-interpolated AP: precision at the rank of every positive, averaged
/// over positives. Scores are ranked descending; ties keep input order.
/// `None` when there is no positive.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CategoryCounts {
    /// True positives.
    pub correct: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

fn check_shapes(scores: &Tensor, labels: &LabelMatrix) -> Result<()> {
    if scores.shape() != [labels.rows(), labels.cols()] {
        return Err(Error::Data(format!(
            "scores {:?} do not match labels {}x{}",
            scores.shape(),
            labels.rows(),
            labels.cols()
        )));
    }
    if labels.values().iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Data("evaluation labels must be fully known".into()));
    }
    Ok(())
}

/// A prediction is positive when its score exceeds `threshold`.
pub fn classification_counts(scores: &Tensor, labels: &LabelMatrix, threshold: f64) -> Result<Vec<CategoryCounts>> {
    check_shapes(scores, labels)?;
    let c = labels.cols();
    let mut counts = vec![CategoryCounts::default(); c];
    for (i, (&s, &y)) in scores.data().iter().zip(labels.values()).enumerate() {
        let entry = &mut counts[i % c];
        let predicted = s > threshold;
        let actual = y == 1.0;
        entry.predicted += usize::from(predicted);
        entry.ground_truth += usize::from(actual);
        entry.correct += usize::from(predicted && actual);
    }
    Ok(counts)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricFlags {
    /// No prediction exceeded the threshold, so OP is reported as 0.
    pub no_predictions: bool,
    /// Excluded from mAP and the per-class means.
    pub categories_without_positives: Vec<usize>,
    /// Included in CP with precision 0.
    pub categories_without_predictions: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub per_category_ap: Vec<Option<f64>>,
    pub map: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub threshold: f64,
    pub known_proportion: f64,
    pub counts: Vec<CategoryCounts>,
    pub flags: MetricFlags,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Overall and per-class precision/recall/F1 from per-category counts.
/// The mAP fields are left at zero; see [`evaluate`].
pub fn aggregate(counts: &[CategoryCounts]) -> MetricReport {
    let (mut correct, mut predicted, mut truth) = (0, 0, 0);
    for c in counts {
        correct += c.correct;
        predicted += c.predicted;
        truth += c.ground_truth;
    }
    let mut flags = MetricFlags {
        no_predictions: predicted == 0,
        ..MetricFlags::default()
    };
    let op = ratio(correct, predicted);
    let or = ratio(correct, truth);
    let (mut cp_sum, mut cr_sum, mut included) = (0.0, 0.0, 0usize);
    for (i, c) in counts.iter().enumerate() {
        if c.ground_truth == 0 {
            flags.categories_without_positives.push(i);
            continue;
        }
        if c.predicted == 0 {
            flags.categories_without_predictions.push(i);
        }
        cp_sum += ratio(c.correct, c.predicted);
        cr_sum += ratio(c.correct, c.ground_truth);
        included += 1;
    }
    let (cp, cr) = if included == 0 {
        (0.0, 0.0)
    } else {
        (cp_sum / included as f64, cr_sum / included as f64)
    };
    MetricReport {
        op,
        or,
        of1: harmonic(op, or),
        cp,
        cr,
        cf1: harmonic(cp, cr),
        counts: counts.to_vec(),
        flags,
        ..MetricReport::default()
    }
}

/// Full report for `N x C` scores against fully known labels.
pub fn evaluate(scores: &Tensor, labels: &LabelMatrix, threshold: f64, known_proportion: f64) -> Result<MetricReport> {
    let counts = classification_counts(scores, labels, threshold)?;
    let (n, c) = (labels.rows(), labels.cols());
    let per_category_ap: Vec<Option<f64>> = (0..c)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| scores.data()[i * c + j]).collect();
            let pos: Vec<bool> = (0..n).map(|i| labels.get(i, j) == 1.0).collect();
            average_precision(&col, &pos)
        })
        .collect();
    let aps: Vec<f64> = per_category_ap.iter().flatten().copied().collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    Ok(MetricReport {
        per_category_ap,
        map,
        threshold,
        known_proportion,
        ..aggregate(&counts)
    })
}
