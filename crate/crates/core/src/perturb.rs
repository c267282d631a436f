//! Seeded robustness perturbations: background blending, occlusion,
//! rain/snow overlays and label-noise injection.
//!
//! Every generator is a pure function of its input and seed.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DetectionRecord;
use crate::fmap::FeatureMap;
use crate::hea::ClassLabel;

const MAX_OCCLUDERS: usize = 5;
const STREAK_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Background,
    Occlusion,
    RainSnow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Low,
    Moderate,
    High,
}

impl PerturbKind {
    /// Preset intensity for a tier.
    pub fn tier_intensity(self, tier: Tier) -> f64 {
        match (self, tier) {
            (PerturbKind::Background | PerturbKind::Occlusion, Tier::Low) => 0.2,
            (PerturbKind::Background | PerturbKind::Occlusion, Tier::Moderate) => 0.4,
            (PerturbKind::Background | PerturbKind::Occlusion, Tier::High) => 0.6,
            (PerturbKind::RainSnow, Tier::Low) => 0.005,
            (PerturbKind::RainSnow, Tier::Moderate) => 0.01,
            (PerturbKind::RainSnow, Tier::High) => 0.03,
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerturbKind::Background => "background",
            PerturbKind::Occlusion => "occlusion",
            PerturbKind::RainSnow => "rain_snow",
        })
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(PerturbKind::Background),
            "occlusion" => Ok(PerturbKind::Occlusion),
            "rain_snow" | "rain-snow" => Ok(PerturbKind::RainSnow),
            other => Err(Error::InvalidArgument(format!(
                "unknown perturbation {other:?}"
            ))),
        }
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Tier::Low),
            "moderate" => Ok(Tier::Moderate),
            "high" => Ok(Tier::High),
            other => Err(Error::InvalidArgument(format!("unknown tier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub intensity: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn from_tier(kind: PerturbKind, tier: Tier, seed: u64) -> Self {
        PerturbSpec {
            kind,
            intensity: kind.tier_intensity(tier),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_intensity(self.intensity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelNoiseSpec {
    pub count: usize,
    pub seed: u64,
}

fn check_intensity(intensity: f64) -> Result<()> {
    if intensity > 0.0 && intensity < 1.0 {
        Ok(())
    } else {
        Err(Error::BadIntensity(intensity))
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn target_pixels(intensity: f64, height: usize, width: usize) -> usize {
    ((intensity * (height * width) as f64).round() as usize).min(height * width)
}

/// `(1 − intensity)·image + intensity·background`.
pub fn background_blend(
    image: &FeatureMap,
    background: &FeatureMap,
    intensity: f64,
) -> Result<FeatureMap> {
    check_intensity(intensity)?;
    if image.shape() != background.shape() {
        return Err(Error::dims(image.shape(), background.shape()));
    }
    let a = intensity as f32;
    let data = image
        .data()
        .iter()
        .zip(background.data())
        .map(|(&x, &y)| (1.0 - a) * x + a * y)
        .collect();
    FeatureMap::new(image.channels(), image.height(), image.width(), data)
}

/// Row-major `H×W` mask of occluded pixels.
///
/// The width is cut into up to five vertical strips and each strip receives
/// one block whose area is the strip's share of the pixel budget. A block is
/// a rectangle plus at most one partial row, which makes the covered area
/// exactly `round(intensity·H·W)`.
pub fn occlusion_mask(height: usize, width: usize, intensity: f64, seed: u64) -> Result<Vec<bool>> {
    check_intensity(intensity)?;
    let mut rng = rng(seed);
    let mut mask = vec![false; height * width];
    let target = target_pixels(intensity, height, width);
    if target == 0 {
        return Ok(mask);
    }
    let strips = rng.gen_range(1..=MAX_OCCLUDERS).min(width);
    let bounds: Vec<usize> = (0..=strips).map(|s| s * width / strips).collect();

    // Proportional share per strip; leftovers go to the first strips with room.
    let mut shares: Vec<usize> = (0..strips)
        .map(|s| target * (bounds[s + 1] - bounds[s]) / width)
        .collect();
    let mut left = target - shares.iter().sum::<usize>();
    for s in 0..strips {
        let room = (bounds[s + 1] - bounds[s]) * height - shares[s];
        let extra = room.min(left);
        shares[s] += extra;
        left -= extra;
    }
    debug_assert_eq!(left, 0);

    for s in 0..strips {
        let area = shares[s];
        if area == 0 {
            continue;
        }
        let strip_w = bounds[s + 1] - bounds[s];
        let min_w = area.div_ceil(height).max(1);
        let block_w = rng.gen_range(min_w..=strip_w);
        let full_rows = area / block_w;
        let partial = area % block_w;
        let rows = full_rows + usize::from(partial > 0);
        let top = rng.gen_range(0..=height - rows);
        let left_col = bounds[s] + rng.gen_range(0..=strip_w - block_w);
        for r in 0..rows {
            let cols = if r < full_rows { block_w } else { partial };
            for c in 0..cols {
                mask[(top + r) * width + left_col + c] = true;
            }
        }
    }
    Ok(mask)
}

fn apply_mask(image: &FeatureMap, mask: &[bool], value: f32) -> FeatureMap {
    let plane = image.height() * image.width();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| if mask[k % plane] { value } else { v })
        .collect();
    FeatureMap::new(image.channels(), image.height(), image.width(), data)
        .expect("masked copy of a valid map")
}

/// Zeroes seeded blocks covering `round(intensity·H·W)` pixels.
pub fn occlude(image: &FeatureMap, intensity: f64, seed: u64) -> Result<FeatureMap> {
    let mask = occlusion_mask(image.height(), image.width(), intensity, seed)?;
    Ok(apply_mask(image, &mask, 0.0))
}

/// Row-major `H×W` mask of rain/snow pixels.
///
/// Each draw is either a diagonal three-pixel streak (rain) or a single
/// speck (snow) with equal probability. Drawing stops once exactly
/// `round(intensity·H·W)` distinct pixels are covered; the final streak is
/// truncated if needed.
pub fn rain_snow_mask(height: usize, width: usize, intensity: f64, seed: u64) -> Result<Vec<bool>> {
    check_intensity(intensity)?;
    let mut rng = rng(seed);
    let mut mask = vec![false; height * width];
    let target = target_pixels(intensity, height, width);
    let mut covered = 0;
    while covered < target {
        let i = rng.gen_range(0..height);
        let j = rng.gen_range(0..width);
        let len = if rng.gen_bool(0.5) { STREAK_LEN } else { 1 };
        for step in 0..len {
            let (r, c) = (i + step, j + step);
            if r >= height || c >= width || covered == target {
                break;
            }
            let cell = &mut mask[r * width + c];
            if !*cell {
                *cell = true;
                covered += 1;
            }
        }
    }
    Ok(mask)
}

/// Paints seeded streaks and specks at full brightness (1.0).
pub fn rain_snow(image: &FeatureMap, intensity: f64, seed: u64) -> Result<FeatureMap> {
    let mask = rain_snow_mask(image.height(), image.width(), intensity, seed)?;
    Ok(apply_mask(image, &mask, 1.0))
}

/// Applies `spec` to `image`; `background` is required for blending.
pub fn perturb(
    image: &FeatureMap,
    spec: &PerturbSpec,
    background: Option<&FeatureMap>,
) -> Result<FeatureMap> {
    spec.validate()?;
    match spec.kind {
        PerturbKind::Background => {
            let bg = background.ok_or_else(|| {
                Error::InvalidArgument("background blending needs a background map".into())
            })?;
            background_blend(image, bg, spec.intensity)
        }
        PerturbKind::Occlusion => occlude(image, spec.intensity, spec.seed),
        PerturbKind::RainSnow => rain_snow(image, spec.intensity, spec.seed),
    }
}

/// Relabels exactly `spec.count` distinct records, each to a different class
/// of the same task. Everything else is copied unchanged.
pub fn inject_label_noise(
    annotations: &[DetectionRecord],
    spec: &LabelNoiseSpec,
) -> Result<Vec<DetectionRecord>> {
    if spec.count > annotations.len() {
        return Err(Error::CountTooLarge {
            count: spec.count,
            available: annotations.len(),
        });
    }
    let mut rng = rng(spec.seed);
    let mut out = annotations.to_vec();
    for k in index::sample(&mut rng, annotations.len(), spec.count) {
        let label = out[k].label;
        let n = label.task().class_count();
        let pick = rng.gen_range(0..n - 1);
        let replacement = if pick >= label.index() {
            pick + 1
        } else {
            pick
        };
        out[k].label = ClassLabel::from_index(label.task(), replacement)
            .expect("replacement index within vocabulary");
    }
    Ok(out)
}
