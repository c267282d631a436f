//! Attention-driven feature synthesis, hierarchical label elimination and
//! volumetric damage quantification for structural inspection imagery.
//!
//! The crate is organised bottom-up:
//!
//! - [`fmap`]: feature maps, rotations, pooling and small seeded convolutions.
//! - [`attention`]: channel/spatial attention stubs and their explicit ensemble.
//! - [`gam`]: the six multi-varied maps built from a refined pair.
//! - [`hea`]: the task taxonomy and class elimination between tasks.
//! - [`vcva`]: heatmaps, voxelization and severity scoring.
//! - [`eval`]: IoU, classification metrics, AP/AR and a timing harness.
//! - [`perturb`]: seeded robustness corruptions and label noise.
//! - [`io`] and [`pipeline`]: file formats and the end-to-end run.

pub mod attention;
pub mod error;
pub mod eval;
pub mod fmap;
pub mod gam;
pub mod hea;
pub mod io;
pub mod perturb;
pub mod pipeline;
pub mod vcva;

pub use attention::{EnsembleParams, RefinedPair};
pub use error::{Error, Result};
pub use eval::{
    BoundingBox, ClassificationMetrics, ConfusionMatrix, CountTable, DetectionRecord, MapReport,
};
pub use fmap::{Angle, Direction, FeatureMap, Rotation, SeededWeights, Shape};
pub use gam::{MultiVariedSet, DEFAULT_F_RATE};
pub use hea::{ClassLabel, RefinementResult, TaskClassSet, TaskId};
pub use perturb::{LabelNoiseSpec, PerturbKind, PerturbSpec, Tier};
pub use pipeline::{PipelineConfig, PredictionDocument, VcvaSummary};
pub use vcva::{
    ChannelWeights, HeatMap, SeverityLevel, SeverityThresholds, SeverityVerdict, VolumetricGrid,
    Voxel,
};
