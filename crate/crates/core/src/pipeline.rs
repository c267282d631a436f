//! End-to-end guided inference: GAM expansion, stub classification heads,
//! hierarchical elimination, masked stub detection and VCVA.
//!
//! The heads are seeded linear projections of spatially pooled GAM features
//! followed by a softmax. They carry no learned information; they exist so
//! that every stage runs on real data flow.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::attention::EnsembleParams;
use crate::error::{Error, Result};
use crate::eval::{BoundingBox, DetectionRecord};
use crate::fmap::{derive_seed, spatial_avg_pool, FeatureMap, Rotation, SeededWeights};
use crate::gam::{gam_generate, gam_stack, DEFAULT_F_RATE, MULTI_VARIED_COUNT};
use crate::hea::{
    apply_mask, argmax, refine_class_instances, refine_stage1, ClassLabel, RefinementResult, TaskId,
};
use crate::vcva::{
    vcva_stack, ChannelWeights, SeverityLevel, SeverityThresholds, SeverityVerdict, VcvaConfig,
};

const STREAM_HEADS: u64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Ensemble scalars; the ensemble seed is replaced by `seed`.
    pub ensemble: EnsembleParams,
    pub rotation: Rotation,
    pub f_rate: f32,
    pub grid_spacing: f64,
    /// Gate width; `None` uses the mean absolute channel weight.
    pub epsilon: Option<f64>,
    pub thresholds: SeverityThresholds,
    pub strict_hea: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            ensemble: EnsembleParams::default(),
            rotation: Rotation::default(),
            f_rate: DEFAULT_F_RATE,
            grid_spacing: 1.0,
            epsilon: None,
            thresholds: SeverityThresholds::default(),
            strict_hea: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        if !(self.f_rate > 0.0 && self.f_rate < 1.0) {
            return Err(Error::BadRate(self.f_rate));
        }
        if !(self.grid_spacing.is_finite() && self.grid_spacing > 0.0) {
            return Err(Error::BadSpacing(self.grid_spacing));
        }
        if let Some(e) = self.epsilon {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::BadEpsilon(e));
            }
        }
        self.thresholds.validate()
    }

    fn vcva(&self) -> VcvaConfig {
        VcvaConfig {
            grid_spacing: self.grid_spacing,
            epsilon: self.epsilon,
            thresholds: self.thresholds,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcvaSummary {
    pub score: f64,
    pub level: SeverityLevel,
    pub v_total: f64,
}

impl VcvaSummary {
    pub fn verdict(&self) -> SeverityVerdict {
        SeverityVerdict {
            score: self.score,
            level: self.level,
        }
    }
}

/// Everything the pipeline predicts for one input.
///
/// `scores` holds one vector per task in vocabulary order. On disk each
/// vector becomes an object keyed by class name.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDocument {
    pub image_id: String,
    pub scores: IndexMap<TaskId, Vec<f64>>,
    pub detections: Vec<DetectionRecord>,
    pub refinement: RefinementResult,
    pub vcva: VcvaSummary,
}

impl PredictionDocument {
    pub fn scores_for(&self, task: TaskId) -> Option<&[f64]> {
        self.scores.get(&task).map(Vec::as_slice)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Seeded linear head over a pooled feature vector.
fn stub_head(features: &[f32], task: TaskId, seed: u64) -> Vec<f64> {
    let n = task.class_count();
    let stream = STREAM_HEADS + TaskId::ALL.iter().position(|&t| t == task).unwrap_or(0) as u64;
    let w = SeededWeights::generate(derive_seed(seed, stream), n * features.len());
    let logits: Vec<f64> = (0..n)
        .map(|k| {
            let row = &w.values()[k * features.len()..(k + 1) * features.len()];
            row.iter()
                .zip(features)
                .map(|(&a, &x)| a as f64 * x as f64)
                .sum()
        })
        .collect();
    softmax(&logits)
}

fn top_label(task: TaskId, scores: &[f64]) -> Result<ClassLabel> {
    let k = argmax(scores).ok_or(Error::EmptyInput("score vector"))?;
    Ok(ClassLabel::from_index(task, k).expect("argmax within vocabulary"))
}

/// Runs the guided pipeline on one input map.
pub fn run_pipeline(
    image_id: &str,
    input: &FeatureMap,
    config: &PipelineConfig,
) -> Result<PredictionDocument> {
    config.validate()?;
    let params = EnsembleParams {
        seed: config.seed,
        ..config.ensemble
    };
    let set = gam_generate(input, &params, config.rotation, config.f_rate)?;
    let stack = gam_stack(&set, input, false, 0)?;
    let pooled = spatial_avg_pool(&stack);
    let features = pooled.data();

    let head = |task| stub_head(features, task, config.seed);
    let task1 = head(TaskId::Task1);
    let raw5 = head(TaskId::Task5);
    let raw6 = head(TaskId::Task6);
    let raw7 = head(TaskId::Task7);
    let raw8 = head(TaskId::Task8);

    // Collapse mode is read after the scene-level mask, so a strict run
    // only fails if the masked argmax itself is inadmissible.
    let t1 = top_label(TaskId::Task1, &task1)?;
    let (stage1_task5, _) = refine_stage1(t1)?;
    let t5 = top_label(TaskId::Task5, &apply_mask(&raw5, &stage1_task5, true)?)?;
    let refinement = refine_class_instances(t1, t5, config.strict_hea)?;

    let task5 = apply_mask(&raw5, &refinement.task5, true)?;
    let task6 = apply_mask(&raw6, &refinement.task6, true)?;
    let task7 = apply_mask(&raw7, &refinement.task7, true)?;
    let task8 = apply_mask(&raw8, &refinement.task8, true)?;

    let whole = BoundingBox::new(0.0, 0.0, input.width() as f64, input.height() as f64)?;
    let detections = [(TaskId::Task7, &task7), (TaskId::Task8, &task8)]
        .into_iter()
        .map(|(task, scores)| {
            let label = top_label(task, scores)?;
            Ok(DetectionRecord {
                bbox: whole,
                label,
                score: scores[label.index()],
                image_id: image_id.to_owned(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let c = input.channels();
    let groups = (0..=MULTI_VARIED_COUNT)
        .map(|g| stack.slice_channels(g * c..(g + 1) * c))
        .collect::<Result<Vec<_>>>()?;
    let out = vcva_stack(&groups, &ChannelWeights::uniform(c), &config.vcva())?;

    let mut scores = IndexMap::new();
    scores.insert(TaskId::Task1, task1);
    scores.insert(TaskId::Task5, task5);
    scores.insert(TaskId::Task6, task6);
    scores.insert(TaskId::Task7, task7);
    scores.insert(TaskId::Task8, task8);

    Ok(PredictionDocument {
        image_id: image_id.to_owned(),
        scores,
        detections,
        refinement,
        vcva: VcvaSummary {
            score: out.verdict.score,
            level: out.verdict.level,
            v_total: out.grid.v_total(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(seed: u64) -> FeatureMap {
        let w = SeededWeights::generate(seed, 2 * 12 * 10);
        FeatureMap::new(2, 12, 10, w.values().iter().map(|v| v * 10.0).collect()).unwrap()
    }

    #[test]
    fn deterministic() {
        let cfg = PipelineConfig::default();
        let a = run_pipeline("x", &input(1), &cfg).unwrap();
        let b = run_pipeline("x", &input(1), &cfg).unwrap();
        assert_eq!(a, b);
        let other = PipelineConfig { seed: 9, ..cfg };
        assert_ne!(a, run_pipeline("x", &input(1), &other).unwrap());
    }

    #[test]
    fn masks_follow_refinement() {
        for seed in 0..20 {
            let cfg = PipelineConfig {
                seed,
                strict_hea: true,
                ..PipelineConfig::default()
            };
            let doc = run_pipeline("img", &input(seed + 100), &cfg).unwrap();
            for task in [TaskId::Task5, TaskId::Task6, TaskId::Task7, TaskId::Task8] {
                let allowed = doc.refinement.set_for(task).unwrap();
                let scores = doc.scores_for(task).unwrap();
                for (k, &s) in scores.iter().enumerate() {
                    assert_eq!(s == 0.0, !allowed.contains_index(k), "{task} {k}");
                }
                assert!((scores.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
            assert_eq!(doc.detections.len(), 2);
            assert!((0.0..=1.0).contains(&doc.vcva.score));
        }
    }

    #[test]
    fn config_json_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.f_rate, DEFAULT_F_RATE);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sead": 4}"#).is_err());
        let bad = PipelineConfig {
            f_rate: 1.5,
            ..PipelineConfig::default()
        };
        assert!(run_pipeline("x", &input(0), &bad).is_err());
    }
}
