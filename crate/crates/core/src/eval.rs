//! Classification and detection metrics plus a small timing harness.

use std::collections::HashMap;
use std::hash::Hash;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hea::ClassLabel;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_ladder() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.x_min <= self.x_max && self.y_min <= self.y_max {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("malformed box {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union; 0 when the union has no area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// One box with its class and confidence, predicted or ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: ClassLabel,
    pub score: f64,
    pub image_id: String,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidArgument(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Ratios derived from a [`CountTable`]. `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub misclassification: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(t: &CountTable) -> ClassificationMetrics {
    let precision = ratio(t.tp, t.tp + t.fp);
    let recall = ratio(t.tp, t.tp + t.fn_);
    let accuracy = ratio(t.tp + t.tn, t.tp + t.tn + t.fp + t.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ClassificationMetrics {
        precision,
        recall,
        accuracy,
        f1,
        misclassification: accuracy.map(|a| 1.0 - a),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix<T> {
    pub labels: Vec<T>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized counts; all-zero rows stay zero.
    pub normalized: Vec<Vec<f64>>,
}

impl<T> ConfusionMatrix<T> {
    /// One-vs-rest counts for class `k`.
    pub fn count_table(&self, k: usize) -> CountTable {
        let n = self.labels.len();
        let mut t = CountTable::default();
        for i in 0..n {
            for j in 0..n {
                let c = self.counts[i][j];
                match (i == k, j == k) {
                    (true, true) => t.tp += c,
                    (true, false) => t.fn_ += c,
                    (false, true) => t.fp += c,
                    (false, false) => t.tn += c,
                }
            }
        }
        t
    }
}

pub fn confusion<T: Eq + Hash + Clone + std::fmt::Debug>(
    true_labels: &[T],
    predicted_labels: &[T],
    labels: &[T],
) -> Result<ConfusionMatrix<T>> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::LengthMismatch {
            expected: true_labels.len(),
            actual: predicted_labels.len(),
        });
    }
    let index: HashMap<&T, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let lookup = |l: &T| {
        index.get(l).copied().ok_or_else(|| Error::UnknownLabel {
            task: "confusion".into(),
            label: format!("{l:?}"),
        })
    };
    let n = labels.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (t, p) in true_labels.iter().zip(predicted_labels) {
        counts[lookup(t)?][lookup(p)?] += 1;
    }
    let normalized = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if total == 0 {
                        0.0
                    } else {
                        c as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
        normalized,
    })
}

/// Detections of one class in descending score order, each flagged as a
/// true positive or not.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub num_ground_truth: usize,
    pub scores: Vec<f64>,
    pub true_positive: Vec<bool>,
}

/// Greedy one-to-one matching at `iou_threshold`.
///
/// Detections are visited by descending score (input order breaks ties).
/// Each takes the unmatched same-class, same-image ground truth with the
/// highest IoU at or above the threshold; equal IoUs go to the lowest ground
/// truth index.
pub fn match_detections(
    detections: &[DetectionRecord],
    ground_truth: &[DetectionRecord],
    class: ClassLabel,
    iou_threshold: f64,
) -> MatchOutcome {
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut num_ground_truth = 0;
    for (g, rec) in ground_truth.iter().enumerate() {
        if rec.label == class {
            by_image.entry(rec.image_id.as_str()).or_default().push(g);
            num_ground_truth += 1;
        }
    }
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&d| detections[d].label == class)
        .collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));

    let mut taken = vec![false; ground_truth.len()];
    let mut scores = Vec::with_capacity(order.len());
    let mut true_positive = Vec::with_capacity(order.len());
    for d in order {
        let det = &detections[d];
        let mut best: Option<(usize, f64)> = None;
        if let Some(candidates) = by_image.get(det.image_id.as_str()) {
            for &g in candidates {
                if taken[g] {
                    continue;
                }
                let overlap = iou(&det.bbox, &ground_truth[g].bbox);
                if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        scores.push(det.score);
        true_positive.push(best.is_some());
    }
    MatchOutcome {
        num_ground_truth,
        scores,
        true_positive,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

impl MatchOutcome {
    /// Precision/recall after each detection. Empty without ground truth.
    pub fn pr_curve(&self) -> Vec<PrPoint> {
        if self.num_ground_truth == 0 {
            return Vec::new();
        }
        let mut tp = 0usize;
        self.true_positive
            .iter()
            .zip(&self.scores)
            .enumerate()
            .map(|(k, (&hit, &score))| {
                tp += hit as usize;
                PrPoint {
                    score,
                    recall: tp as f64 / self.num_ground_truth as f64,
                    precision: tp as f64 / (k + 1) as f64,
                }
            })
            .collect()
    }

    /// All-points interpolated area under the precision/recall staircase.
    pub fn average_precision(&self) -> Option<f64> {
        if self.num_ground_truth == 0 {
            return None;
        }
        let curve = self.pr_curve();
        let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
        for k in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[k] = envelope[k].max(envelope[k + 1]);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (k, point) in curve.iter().enumerate() {
            if self.true_positive[k] {
                ap += (point.recall - prev_recall) * envelope[k];
                prev_recall = point.recall;
            }
        }
        Some(ap)
    }

    /// Recall with every detection kept.
    pub fn recall(&self) -> Option<f64> {
        (self.num_ground_truth > 0).then(|| {
            self.true_positive.iter().filter(|&&t| t).count() as f64 / self.num_ground_truth as f64
        })
    }
}

/// AP of `class` at one IoU threshold; `None` without ground truth.
pub fn average_precision(
    detections: &[DetectionRecord],
    ground_truth: &[DetectionRecord],
    class: ClassLabel,
    iou_threshold: f64,
) -> Result<Option<f64>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "IoU threshold {iou_threshold} outside (0, 1]"
        )));
    }
    Ok(match_detections(detections, ground_truth, class, iou_threshold).average_precision())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCell {
    pub label: ClassLabel,
    pub ap: Option<f64>,
    pub ar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub iou_threshold: f64,
    pub classes: Vec<ClassCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map: Option<f64>,
    pub mar: Option<f64>,
    pub per_threshold: Vec<ThresholdRow>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// AP and AR for every class on the IoU ladder, averaged over the defined
/// class/threshold cells.
pub fn map_mar(
    detections: &[DetectionRecord],
    ground_truth: &[DetectionRecord],
    classes: &[ClassLabel],
) -> MapReport {
    let per_threshold: Vec<ThresholdRow> = iou_ladder()
        .into_iter()
        .map(|t| ThresholdRow {
            iou_threshold: t,
            classes: classes
                .iter()
                .map(|&label| {
                    let m = match_detections(detections, ground_truth, label, t);
                    ClassCell {
                        label,
                        ap: m.average_precision(),
                        ar: m.recall(),
                    }
                })
                .collect(),
        })
        .collect();
    let cells = || per_threshold.iter().flat_map(|r| r.classes.iter());
    MapReport {
        map: mean_defined(cells().map(|c| c.ap)),
        mar: mean_defined(cells().map(|c| c.ar)),
        per_threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub repeat: usize,
    pub fps: f64,
    pub inference_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub inputs: usize,
    pub rows: Vec<BenchRow>,
    pub mean_fps: f64,
    pub mean_inference_ms: f64,
}

/// Times `workload` over every input, `repeats` times.
pub fn bench<I>(inputs: &[I], repeats: usize, mut workload: impl FnMut(&I)) -> Result<BenchReport> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("bench batch"));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let n = inputs.len() as f64;
    let rows: Vec<BenchRow> = (0..repeats)
        .map(|repeat| {
            let start = Instant::now();
            for input in inputs {
                workload(std::hint::black_box(input));
            }
            let secs = start.elapsed().as_secs_f64();
            BenchRow {
                repeat: repeat + 1,
                fps: if secs > 0.0 { n / secs } else { f64::INFINITY },
                inference_ms: secs * 1000.0 / n,
            }
        })
        .collect();
    let r = rows.len() as f64;
    Ok(BenchReport {
        inputs: inputs.len(),
        mean_fps: rows.iter().map(|x| x.fps).sum::<f64>() / r,
        mean_inference_ms: rows.iter().map(|x| x.inference_ms).sum::<f64>() / r,
        rows,
    })
}
