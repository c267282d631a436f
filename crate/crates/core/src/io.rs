//! File formats: FMAP binary maps, prediction and detection JSON, voxel CSV
//! with a JSON sidecar, the taxonomy dump and PGM/PPM demo images.
//!
//! Every writer goes through a temporary file in the target directory that
//! is renamed into place, so readers never observe a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::eval::{BoundingBox, DetectionRecord};
use crate::fmap::FeatureMap;
use crate::hea::{ClassLabel, RefinementResult, TaskClassSet, TaskId};
use crate::pipeline::{PredictionDocument, VcvaSummary};
use crate::vcva::{SeverityVerdict, VolumetricGrid, Voxel};

pub const FMAP_MAGIC: [u8; 4] = *b"FMAP";
pub const FMAP_VERSION: u32 = 1;
/// Magic, version and three extents.
pub const FMAP_HEADER_LEN: usize = 20;

const SCORE_SUM_TOLERANCE: f64 = 1e-6;

/// Writes `bytes` to `path` via a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// FMAP

pub fn encode_fmap(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(FMAP_HEADER_LEN + 4 * map.data().len());
    out.extend_from_slice(&FMAP_MAGIC);
    out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    for extent in [map.channels(), map.height(), map.width()] {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            expected: FMAP_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if magic != FMAP_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: FMAP_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = le_u32(bytes, 4);
    if version != FMAP_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let (c, h, w) = (
        le_u32(bytes, 8) as usize,
        le_u32(bytes, 12) as usize,
        le_u32(bytes, 16) as usize,
    );
    let count = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::Shape(format!("{c}x{h}x{w} overflows")))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(FMAP_HEADER_LEN))
        .ok_or_else(|| Error::Shape(format!("{c}x{h}x{w} overflows")))?;
    if bytes.len() != expected {
        if bytes.len() < expected {
            return Err(Error::TruncatedFile {
                expected,
                actual: bytes.len(),
            });
        }
        return Err(Error::Shape(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let data = bytes[FMAP_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    FeatureMap::new(c, h, w, data)
}

pub fn save_fmap(map: &FeatureMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_fmap(map))
}

pub fn load_fmap(path: &Path) -> Result<FeatureMap> {
    decode_fmap(&read(path)?)
}

// ---------------------------------------------------------------------------
// JSON documents

/// Parses `text`, rejecting unknown keys when `strict` is set.
fn parse_json<T: DeserializeOwned>(path: &Path, text: &str, strict: bool) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let mut unknown = Vec::new();
    let value = if strict {
        serde_ignored::deserialize(&mut de, |p| unknown.push(p.to_string()))
    } else {
        T::deserialize(&mut de)
    }
    .map_err(|e| Error::parse(path, e))?;
    de.end().map_err(|e| Error::parse(path, e))?;
    if let Some(first) = unknown.first() {
        return Err(Error::parse(path, format!("unknown key at {first}")));
    }
    Ok(value)
}

/// Reads a JSON file into `T` with no unknown-key policy beyond `T`'s own.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(path, &read_string(path)?, false)
}

pub fn save_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn parse_task(name: &str) -> Result<TaskId> {
    name.parse()
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRepr {
    task: String,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRepr {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    label: LabelRepr,
    score: f64,
    image_id: String,
}

impl DetectionRepr {
    fn from_record(r: &DetectionRecord) -> Self {
        DetectionRepr {
            bbox: r.bbox,
            label: LabelRepr {
                task: r.label.task().as_str().to_owned(),
                name: r.label.name().to_owned(),
            },
            score: r.score,
            image_id: r.image_id.clone(),
        }
    }

    fn into_record(self) -> Result<DetectionRecord> {
        let record = DetectionRecord {
            bbox: self.bbox,
            label: ClassLabel::new(parse_task(&self.label.task)?, &self.label.name)?,
            score: self.score,
            image_id: self.image_id,
        };
        record.validate()?;
        Ok(record)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRepr {
    image_id: String,
    scores: IndexMap<String, IndexMap<String, f64>>,
    detections: Vec<DetectionRepr>,
    refinement: IndexMap<String, Vec<String>>,
    vcva: VcvaSummary,
}

impl DocumentRepr {
    fn from_document(doc: &PredictionDocument) -> Self {
        let scores = doc
            .scores
            .iter()
            .map(|(task, values)| {
                let named = task
                    .vocabulary()
                    .iter()
                    .zip(values)
                    .map(|(n, &v)| ((*n).to_owned(), v))
                    .collect();
                (task.as_str().to_owned(), named)
            })
            .collect();
        let refinement = doc
            .refinement
            .sets()
            .into_iter()
            .map(|s| {
                let names = s.names().into_iter().map(str::to_owned).collect();
                (s.task().as_str().to_owned(), names)
            })
            .collect();
        DocumentRepr {
            image_id: doc.image_id.clone(),
            scores,
            detections: doc
                .detections
                .iter()
                .map(DetectionRepr::from_record)
                .collect(),
            refinement,
            vcva: doc.vcva,
        }
    }

    fn into_document(self) -> Result<PredictionDocument> {
        let mut scores = IndexMap::new();
        for (task_name, named) in self.scores {
            let task = parse_task(&task_name)?;
            let mut values = vec![0.0; task.class_count()];
            for (label, v) in named {
                let k = ClassLabel::new(task, &label)?.index();
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "{task} score for {label} must be finite and >= 0, got {v}"
                    )));
                }
                values[k] = v;
            }
            let sum: f64 = values.iter().sum();
            if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "{task} scores sum to {sum}, expected 1"
                )));
            }
            if scores.insert(task, values).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate scores for {task}"
                )));
            }
        }

        let mut sets: IndexMap<TaskId, TaskClassSet> = IndexMap::new();
        for (task_name, names) in self.refinement {
            let task = parse_task(&task_name)?;
            sets.insert(task, TaskClassSet::from_names(task, &names)?);
        }
        let take = |task: TaskId| {
            sets.get(&task)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("refinement is missing {task}")))
        };
        let refinement = RefinementResult {
            task5: take(TaskId::Task5)?,
            task6: take(TaskId::Task6)?,
            task7: take(TaskId::Task7)?,
            task8: take(TaskId::Task8)?,
        };
        if let Some(extra) = sets.keys().find(|t| **t == TaskId::Task1) {
            return Err(Error::InvalidArgument(format!("{extra} has no refinement")));
        }

        Ok(PredictionDocument {
            image_id: self.image_id,
            scores,
            detections: self
                .detections
                .into_iter()
                .map(DetectionRepr::into_record)
                .collect::<Result<_>>()?,
            refinement,
            vcva: self.vcva,
        })
    }
}

impl Serialize for PredictionDocument {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        DocumentRepr::from_document(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PredictionDocument {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        DocumentRepr::deserialize(deserializer)?
            .into_document()
            .map_err(serde::de::Error::custom)
    }
}

pub fn predictions_to_json(docs: &[PredictionDocument]) -> Result<String> {
    let repr: Vec<DocumentRepr> = docs.iter().map(DocumentRepr::from_document).collect();
    serde_json::to_string_pretty(&repr).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Parses a prediction array. Label and task names are checked against the
/// taxonomy and reported as [`Error::UnknownLabel`] / [`Error::UnknownTask`].
pub fn predictions_from_json(text: &str, strict: bool) -> Result<Vec<PredictionDocument>> {
    let repr: Vec<DocumentRepr> = parse_json(Path::new("<memory>"), text, strict)?;
    repr.into_iter().map(DocumentRepr::into_document).collect()
}

pub fn save_predictions(docs: &[PredictionDocument], path: &Path) -> Result<()> {
    let mut text = predictions_to_json(docs)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_predictions(path: &Path, strict: bool) -> Result<Vec<PredictionDocument>> {
    let repr: Vec<DocumentRepr> = parse_json(path, &read_string(path)?, strict)?;
    repr.into_iter().map(DocumentRepr::into_document).collect()
}

pub fn save_detections(records: &[DetectionRecord], path: &Path) -> Result<()> {
    let repr: Vec<DetectionRepr> = records.iter().map(DetectionRepr::from_record).collect();
    save_json(&repr, path)
}

pub fn load_detections(path: &Path, strict: bool) -> Result<Vec<DetectionRecord>> {
    let repr: Vec<DetectionRepr> = parse_json(path, &read_string(path)?, strict)?;
    repr.into_iter().map(DetectionRepr::into_record).collect()
}

// ---------------------------------------------------------------------------
// Voxels

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSidecar {
    pub v_total: f64,
    pub grid_spacing: f64,
    pub epsilon: f64,
    pub severity: Option<SeverityVerdict>,
    /// `[rows, cols, depth]` of the index space.
    pub extent: [usize; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct VoxelRow {
    a: u32,
    b: u32,
    c: u32,
    x: f64,
    y: f64,
    z: f64,
    value: f32,
}

/// Sidecar path for a voxel CSV: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes one CSV row per voxel in `(c, b, a)` order plus the JSON sidecar.
pub fn export_voxels(
    grid: &VolumetricGrid,
    severity: Option<SeverityVerdict>,
    path: &Path,
) -> Result<()> {
    let mut voxels: Vec<Voxel> = grid.voxels().to_vec();
    voxels.sort_by_key(|v| (v.c, v.b, v.a));
    // Header written by hand so an empty grid still gets one.
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    writer
        .write_record(["a", "b", "c", "x", "y", "z", "value"])
        .map_err(|e| Error::parse(path, e))?;
    for v in &voxels {
        let (x, y, z) = v.position(grid.grid_spacing());
        writer
            .serialize(VoxelRow {
                a: v.a,
                b: v.b,
                c: v.c,
                x,
                y,
                z,
                value: v.value,
            })
            .map_err(|e| Error::parse(path, e))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::parse(path, e))?;
    let (rows, cols, depth) = grid.extent();
    let sidecar = VoxelSidecar {
        v_total: grid.v_total(),
        grid_spacing: grid.grid_spacing(),
        epsilon: grid.epsilon(),
        severity,
        extent: [rows, cols, depth],
    };
    write_atomic(path, &bytes)?;
    save_json(&sidecar, &sidecar_path(path))
}

/// Reads a voxel CSV and its sidecar back into a grid.
pub fn import_voxels(path: &Path) -> Result<(VolumetricGrid, VoxelSidecar)> {
    let sidecar: VoxelSidecar = parse_json(
        &sidecar_path(path),
        &read_string(&sidecar_path(path))?,
        true,
    )?;
    let bytes = read(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["a", "b", "c", "x", "y", "z", "value"] {
        return Err(Error::parse(path, format!("unexpected header {headers:?}")));
    }
    let mut voxels = Vec::new();
    for (line, row) in reader.deserialize::<VoxelRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, format!("row {}: {e}", line + 2)))?;
        voxels.push(Voxel {
            a: row.a,
            b: row.b,
            c: row.c,
            value: row.value,
        });
    }
    let [rows, cols, depth] = sidecar.extent;
    let grid = VolumetricGrid::from_voxels(
        sidecar.grid_spacing,
        sidecar.epsilon,
        (rows, cols, depth),
        voxels,
    )?;
    Ok((grid, sidecar))
}

// ---------------------------------------------------------------------------
// Taxonomy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub description: String,
    pub labels: Vec<String>,
}

/// Every task with its description and labels, in taxonomy order.
pub fn taxonomy() -> IndexMap<String, TaxonomyEntry> {
    TaskId::ALL
        .iter()
        .map(|t| {
            (
                t.as_str().to_owned(),
                TaxonomyEntry {
                    description: t.description().to_owned(),
                    labels: t.vocabulary().iter().map(|s| (*s).to_owned()).collect(),
                },
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Images

/// Loads a PGM (one channel) or PPM (three channels) image scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<FeatureMap> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::parse(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = if img.color().channel_count() == 1 {
        (1, img.into_luma8().into_raw())
    } else {
        (3, img.into_rgb8().into_raw())
    };
    // Interleaved HWC to planar CHW.
    let mut data = vec![0.0f32; channels * h * w];
    for (p, px) in raw.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * h * w + p] = v as f32 / 255.0;
        }
    }
    FeatureMap::new(channels, h, w, data)
}

/// Loads an FMAP file, or a PGM/PPM image by extension.
pub fn load_input(path: &Path) -> Result<FeatureMap> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm" | "ppm" | "pnm" | "pbm") => load_image(path),
        _ => load_fmap(path),
    }
}
