//! Dense `C×H×W` feature maps and the array primitives the attention, GAM and
//! VCVA stages are assembled from.
//!
//! Storage is row-major `(c, i, j)`: channel, then row, then column. Every
//! operation here is a pure function returning a fresh map.

use std::fmt;
use std::ops::Range;

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel/height/width triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: Shape,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Wraps `data` as a `channels×height×width` map. All dimensions must be
    /// positive, the length must match and every value must be finite.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(channels, height, width);
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!("zero-sized dimension in {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FeatureMap { shape, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "zero-sized feature map"
        );
        assert!(value.is_finite());
        let shape = Shape::new(channels, height, width);
        FeatureMap {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds a map by evaluating `f(c, i, j)` at every position.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    // Internal constructor for results already known to be valid.
    fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        FeatureMap { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.shape.height + i) * self.shape.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[self.offset(c, i, j)]
    }

    /// The `H×W` plane of channel `c`.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Copies out the channels in `range`.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<FeatureMap> {
        if range.start >= range.end || range.end > self.shape.channels {
            return Err(Error::Shape(format!(
                "channel range {range:?} invalid for {}",
                self.shape
            )));
        }
        let plane = self.shape.plane();
        let data = self.data[range.start * plane..range.end * plane].to_vec();
        Ok(Self::from_parts(
            Shape::new(range.len(), self.shape.height, self.shape.width),
            data,
        ))
    }

    /// Copies out rows `range` of every channel.
    pub fn rows(&self, range: Range<usize>) -> Result<FeatureMap> {
        let Shape {
            channels,
            height,
            width,
        } = self.shape;
        if range.start >= range.end || range.end > height {
            return Err(Error::Shape(format!(
                "row range {range:?} invalid for {}",
                self.shape
            )));
        }
        let mut data = Vec::with_capacity(channels * range.len() * width);
        for c in 0..channels {
            let start = self.offset(c, range.start, 0);
            data.extend_from_slice(&self.data[start..start + range.len() * width]);
        }
        Ok(Self::from_parts(
            Shape::new(channels, range.len(), width),
            data,
        ))
    }

    /// Copies out columns `range` of every channel.
    pub fn cols(&self, range: Range<usize>) -> Result<FeatureMap> {
        let Shape {
            channels,
            height,
            width,
        } = self.shape;
        if range.start >= range.end || range.end > width {
            return Err(Error::Shape(format!(
                "column range {range:?} invalid for {}",
                self.shape
            )));
        }
        let mut data = Vec::with_capacity(channels * height * range.len());
        for c in 0..channels {
            for i in 0..height {
                let row = self.offset(c, i, 0);
                data.extend_from_slice(&self.data[row + range.start..row + range.end]);
            }
        }
        Ok(Self::from_parts(
            Shape::new(channels, height, range.len()),
            data,
        ))
    }

    /// Places `bottom` beneath `top`. Channel count and width must agree.
    pub fn stack_rows(top: &FeatureMap, bottom: &FeatureMap) -> Result<FeatureMap> {
        if top.channels() != bottom.channels() || top.width() != bottom.width() {
            return Err(Error::dims(top.shape, bottom.shape));
        }
        let (channels, width) = (top.channels(), top.width());
        let height = top.height() + bottom.height();
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            data.extend_from_slice(top.channel(c));
            data.extend_from_slice(bottom.channel(c));
        }
        Ok(Self::from_parts(Shape::new(channels, height, width), data))
    }

    /// Places `right` beside `left`. Channel count and height must agree.
    pub fn stack_cols(left: &FeatureMap, right: &FeatureMap) -> Result<FeatureMap> {
        if left.channels() != right.channels() || left.height() != right.height() {
            return Err(Error::dims(left.shape, right.shape));
        }
        let (channels, height) = (left.channels(), left.height());
        let width = left.width() + right.width();
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                let l = left.offset(c, i, 0);
                let r = right.offset(c, i, 0);
                data.extend_from_slice(&left.data[l..l + left.width()]);
                data.extend_from_slice(&right.data[r..r + right.width()]);
            }
        }
        Ok(Self::from_parts(Shape::new(channels, height, width), data))
    }

    /// Applies `f` to every value. Fails if `f` produces a non-finite value.
    pub fn map_values(&self, f: impl Fn(f32) -> f32) -> Result<FeatureMap> {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        check_finite(&data)?;
        Ok(Self::from_parts(self.shape, data))
    }

    pub fn scale(&self, factor: f32) -> Result<FeatureMap> {
        self.map_values(|v| v * factor)
    }

    pub fn sigmoid(&self) -> FeatureMap {
        Self::from_parts(self.shape, self.data.iter().map(|&v| sigmoid(v)).collect())
    }

    /// Multiplies every channel by the single-channel `mask` of the same
    /// spatial size.
    pub fn broadcast_mul(&self, mask: &FeatureMap) -> Result<FeatureMap> {
        if mask.channels() != 1 || mask.height() != self.height() || mask.width() != self.width() {
            return Err(Error::dims(
                Shape::new(1, self.height(), self.width()),
                mask.shape,
            ));
        }
        let plane = self.shape.plane();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| v * mask.data[k % plane])
            .collect();
        Ok(Self::from_parts(self.shape, data))
    }

    /// Multiplies channel `c` by `gates[c]`; `gates` is a `C×1×1` map.
    pub fn channel_mul(&self, gates: &FeatureMap) -> Result<FeatureMap> {
        if gates.shape != Shape::new(self.channels(), 1, 1) {
            return Err(Error::dims(Shape::new(self.channels(), 1, 1), gates.shape));
        }
        let plane = self.shape.plane();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| v * gates.data[k / plane])
            .collect();
        Ok(Self::from_parts(self.shape, data))
    }
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[inline]
pub(crate) fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Angle {
    #[serde(rename = "90")]
    Deg90,
    #[serde(rename = "180")]
    Deg180,
    #[serde(rename = "270")]
    Deg270,
}

impl Angle {
    pub fn degrees(self) -> u32 {
        match self {
            Angle::Deg90 => 90,
            Angle::Deg180 => 180,
            Angle::Deg270 => 270,
        }
    }

    pub fn from_degrees(deg: u32) -> Option<Self> {
        match deg {
            90 => Some(Angle::Deg90),
            180 => Some(Angle::Deg180),
            270 => Some(Angle::Deg270),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Clockwise,
    Anticlockwise,
}

/// A rigid rotation by a multiple of 90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rotation {
    pub angle: Angle,
    pub direction: Direction,
}

impl Rotation {
    pub const fn new(angle: Angle, direction: Direction) -> Self {
        Rotation { angle, direction }
    }

    pub const fn clockwise(angle: Angle) -> Self {
        Self::new(angle, Direction::Clockwise)
    }

    pub const fn anticlockwise(angle: Angle) -> Self {
        Self::new(angle, Direction::Anticlockwise)
    }

    /// Same angle, opposite direction.
    pub fn inverse(self) -> Self {
        let direction = match self.direction {
            Direction::Clockwise => Direction::Anticlockwise,
            Direction::Anticlockwise => Direction::Clockwise,
        };
        Rotation { direction, ..self }
    }

    /// Number of clockwise quarter turns (1..=3) equivalent to this rotation.
    pub fn quarter_turns_cw(self) -> u32 {
        let q = self.angle.degrees() / 90;
        match self.direction {
            Direction::Clockwise => q,
            Direction::Anticlockwise => 4 - q,
        }
    }

    /// Parses signed degrees: positive is clockwise, e.g. `90`, `-270`.
    pub fn from_signed_degrees(deg: i32) -> Option<Self> {
        let angle = Angle::from_degrees(deg.unsigned_abs())?;
        Some(if deg > 0 {
            Rotation::clockwise(angle)
        } else {
            Rotation::anticlockwise(angle)
        })
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::clockwise(Angle::Deg180)
    }
}

/// Rotates every channel rigidly. Quarter turns swap height and width.
pub fn rotate(map: &FeatureMap, rotation: Rotation) -> FeatureMap {
    let Shape {
        channels,
        height: h,
        width: w,
    } = map.shape();
    let turns = rotation.quarter_turns_cw();
    let out_shape = if turns == 2 {
        Shape::new(channels, h, w)
    } else {
        Shape::new(channels, w, h)
    };
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut data = Vec::with_capacity(map.data.len());
    for c in 0..channels {
        for i in 0..oh {
            for j in 0..ow {
                let (si, sj) = match turns {
                    1 => (h - 1 - j, i),
                    2 => (h - 1 - i, w - 1 - j),
                    _ => (j, w - 1 - i),
                };
                data.push(map.get(c, si, sj));
            }
        }
    }
    FeatureMap::from_parts(out_shape, data)
}

/// Per-pixel mean over channels, `1×H×W`.
pub fn avg_pool_channels(map: &FeatureMap) -> FeatureMap {
    let plane = map.shape.plane();
    let channels = map.channels();
    let data = (0..plane)
        .map(|p| {
            let sum: f64 = (0..channels).map(|c| map.data[c * plane + p] as f64).sum();
            (sum / channels as f64) as f32
        })
        .collect();
    FeatureMap::from_parts(Shape::new(1, map.height(), map.width()), data)
}

/// Per-pixel maximum over channels, `1×H×W`.
pub fn max_pool_channels(map: &FeatureMap) -> FeatureMap {
    let plane = map.shape.plane();
    let channels = map.channels();
    let data = (0..plane)
        .map(|p| {
            (0..channels)
                .map(|c| map.data[c * plane + p])
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    FeatureMap::from_parts(Shape::new(1, map.height(), map.width()), data)
}

/// Per-channel spatial mean, `C×1×1`.
pub fn spatial_avg_pool(map: &FeatureMap) -> FeatureMap {
    let data = (0..map.channels())
        .map(|c| {
            let sum: f64 = map.channel(c).iter().map(|&v| v as f64).sum();
            (sum / map.shape.plane() as f64) as f32
        })
        .collect();
    FeatureMap::from_parts(Shape::new(map.channels(), 1, 1), data)
}

/// Per-channel spatial maximum, `C×1×1`.
pub fn spatial_max_pool(map: &FeatureMap) -> FeatureMap {
    let data = (0..map.channels())
        .map(|c| {
            map.channel(c)
                .iter()
                .copied()
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    FeatureMap::from_parts(Shape::new(map.channels(), 1, 1), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementOp {
    Add,
    Sub,
    Mul,
}

/// `op(alpha·a, beta·b)` elementwise.
pub fn elementwise(
    a: &FeatureMap,
    b: &FeatureMap,
    op: ElementOp,
    alpha: f32,
    beta: f32,
) -> Result<FeatureMap> {
    if a.shape != b.shape {
        return Err(Error::dims(a.shape, b.shape));
    }
    let data: Vec<f32> = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let (x, y) = (alpha * x, beta * y);
            match op {
                ElementOp::Add => x + y,
                ElementOp::Sub => x - y,
                ElementOp::Mul => x * y,
            }
        })
        .collect();
    check_finite(&data)?;
    Ok(FeatureMap::from_parts(a.shape, data))
}

/// Concatenates along the channel axis, preserving input order.
pub fn concat_channels(maps: &[&FeatureMap]) -> Result<FeatureMap> {
    let first = maps.first().ok_or(Error::EmptyInput("concat_channels"))?;
    let (height, width) = (first.height(), first.width());
    let mut channels = 0;
    for m in maps {
        if m.height() != height || m.width() != width {
            return Err(Error::dims(first.shape, m.shape));
        }
        channels += m.channels();
    }
    let mut data = Vec::with_capacity(channels * height * width);
    for m in maps {
        data.extend_from_slice(&m.data);
    }
    Ok(FeatureMap::from_parts(
        Shape::new(channels, height, width),
        data,
    ))
}

/// Deterministic pseudo-trained parameters.
///
/// Values come from a SplitMix64 stream seeded with `seed`; each 64-bit draw
/// keeps its top 24 bits as a uniform `u ∈ [0, 1)` and maps it to
/// `0.2·u − 0.1`. A longer request always extends a shorter one.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededWeights {
    seed: u64,
    values: Vec<f32>,
}

impl SeededWeights {
    pub fn generate(seed: u64, len: usize) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let values = (0..len)
            .map(|_| {
                let u = (rng.next_u64() >> 40) as f64 / (1u64 << 24) as f64;
                (0.2 * u - 0.1) as f32
            })
            .collect();
        SeededWeights { seed, values }
    }

    /// Wraps explicit values (identity kernels, tests).
    pub fn from_values(values: Vec<f32>) -> Self {
        SeededWeights { seed: 0, values }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Derives an independent seed for a named sub-stage from a parent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = SplitMix64::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelSize {
    One,
    Seven,
}

impl KernelSize {
    pub fn side(self) -> usize {
        match self {
            KernelSize::One => 1,
            KernelSize::Seven => 7,
        }
    }
}

/// Stride-1 cross-correlation with zero "same" padding and no bias.
///
/// Kernel layout is `[out][in][ki][kj]`.
pub fn conv_lite(
    map: &FeatureMap,
    kernel: &SeededWeights,
    out_channels: usize,
    kernel_size: KernelSize,
) -> Result<FeatureMap> {
    let Shape {
        channels,
        height,
        width,
    } = map.shape();
    let k = kernel_size.side();
    let expected = out_channels * channels * k * k;
    if kernel.len() != expected || out_channels == 0 {
        return Err(Error::Shape(format!(
            "kernel has {} values, expected {out_channels}x{channels}x{k}x{k} = {expected}",
            kernel.len()
        )));
    }
    let pad = (k - 1) / 2;
    let w = kernel.values();
    let mut data = vec![0.0f32; out_channels * height * width];
    for o in 0..out_channels {
        for i in 0..height {
            for j in 0..width {
                let mut acc = 0.0f32;
                for c in 0..channels {
                    let base = (o * channels + c) * k * k;
                    for ki in 0..k {
                        let Some(si) = (i + ki).checked_sub(pad).filter(|&s| s < height) else {
                            continue;
                        };
                        for kj in 0..k {
                            let Some(sj) = (j + kj).checked_sub(pad).filter(|&s| s < width) else {
                                continue;
                            };
                            acc += w[base + ki * k + kj] * map.get(c, si, sj);
                        }
                    }
                }
                data[(o * height + i) * width + j] = acc;
            }
        }
    }
    check_finite(&data)?;
    Ok(FeatureMap::from_parts(
        Shape::new(out_channels, height, width),
        data,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, |c, i, j| (c * 100 + i * 10 + j) as f32).unwrap()
    }

    fn noise(shape: Shape, seed: u64) -> FeatureMap {
        let w = SeededWeights::generate(seed, shape.len());
        FeatureMap::new(
            shape.channels,
            shape.height,
            shape.width,
            w.values().iter().map(|v| v * 10.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(matches!(
            FeatureMap::new(1, 2, 2, vec![0.0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            FeatureMap::new(1, 1, 2, vec![0.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(FeatureMap::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn rotate_2x2_clockwise() {
        let m = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = rotate(&m, Rotation::clockwise(Angle::Deg90));
        assert_eq!(r.data(), &[3.0, 1.0, 4.0, 2.0]);
        let r = rotate(&m, Rotation::anticlockwise(Angle::Deg90));
        assert_eq!(r.data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn rotate_non_square_swaps_dims() {
        let m = seq(2, 3, 5);
        let r = rotate(&m, Rotation::clockwise(Angle::Deg90));
        assert_eq!(r.shape(), Shape::new(2, 5, 3));
        // top-left of a clockwise turn is the old bottom-left
        assert_eq!(r.get(1, 0, 0), m.get(1, 2, 0));
        let r = rotate(&m, Rotation::clockwise(Angle::Deg180));
        assert_eq!(r.shape(), m.shape());
        assert_eq!(r.get(0, 0, 0), m.get(0, 2, 4));
    }

    #[test]
    fn rotation_inverse_and_involution() {
        let m = seq(2, 4, 7);
        for angle in [Angle::Deg90, Angle::Deg180, Angle::Deg270] {
            for rot in [Rotation::clockwise(angle), Rotation::anticlockwise(angle)] {
                assert_eq!(rotate(&rotate(&m, rot), rot.inverse()), m);
            }
        }
        let half = Rotation::clockwise(Angle::Deg180);
        assert_eq!(rotate(&rotate(&m, half), half), m);
        assert_eq!(
            Rotation::from_signed_degrees(-270)
                .unwrap()
                .quarter_turns_cw(),
            1
        );
        assert!(Rotation::from_signed_degrees(45).is_none());
    }

    #[test]
    fn pooling_constants() {
        let m = concat_channels(&[
            &FeatureMap::filled(1, 3, 3, 1.0),
            &FeatureMap::filled(1, 3, 3, 3.0),
        ])
        .unwrap();
        assert_eq!(avg_pool_channels(&m), FeatureMap::filled(1, 3, 3, 2.0));
        assert_eq!(max_pool_channels(&m), FeatureMap::filled(1, 3, 3, 3.0));
        let single = seq(1, 3, 4);
        assert_eq!(avg_pool_channels(&single), single);
        assert_eq!(max_pool_channels(&single), single);
    }

    #[test]
    fn pooling_matches_scalar_loop() {
        let m = noise(Shape::new(3, 4, 4), 11);
        let avg = avg_pool_channels(&m);
        let max = max_pool_channels(&m);
        for i in 0..4 {
            for j in 0..4 {
                let vals: Vec<f64> = (0..3).map(|c| m.get(c, i, j) as f64).collect();
                let mean = vals.iter().sum::<f64>() / 3.0;
                assert!((avg.get(0, i, j) as f64 - mean).abs() < 1e-6);
                let mx = vals.iter().cloned().fold(f64::MIN, f64::max);
                assert_eq!(max.get(0, i, j) as f64, mx);
            }
        }
    }

    #[test]
    fn elementwise_cases() {
        let a = noise(Shape::new(2, 3, 3), 1);
        let b = noise(Shape::new(2, 3, 3), 2);
        assert_eq!(elementwise(&a, &b, ElementOp::Add, 1.0, 0.0).unwrap(), a);
        assert_eq!(elementwise(&a, &a, ElementOp::Add, 0.5, 0.5).unwrap(), a);
        let prod = elementwise(&a, &b, ElementOp::Mul, 1.0, 1.0).unwrap();
        for k in 0..a.data().len() {
            assert_eq!(prod.data()[k], a.data()[k] * b.data()[k]);
        }
        let c = noise(Shape::new(2, 3, 4), 3);
        assert!(matches!(
            elementwise(&a, &c, ElementOp::Sub, 1.0, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        let huge = FeatureMap::filled(1, 1, 1, f32::MAX);
        assert!(matches!(
            elementwise(&huge, &huge, ElementOp::Mul, 1.0, 1.0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let maps: Vec<FeatureMap> = (0..3)
            .map(|s| noise(Shape::new(s + 1, 4, 3), s as u64))
            .collect();
        let refs: Vec<&FeatureMap> = maps.iter().collect();
        let cat = concat_channels(&refs).unwrap();
        assert_eq!(cat.channels(), 6);
        assert_eq!(cat.slice_channels(0..1).unwrap(), maps[0]);
        assert_eq!(cat.slice_channels(1..3).unwrap(), maps[1]);
        assert_eq!(cat.slice_channels(3..6).unwrap(), maps[2]);
        assert_eq!(concat_channels(&[&maps[0]]).unwrap(), maps[0]);
        assert!(matches!(concat_channels(&[]), Err(Error::EmptyInput(_))));
        let odd = FeatureMap::zeros(1, 5, 3);
        assert!(matches!(
            concat_channels(&[&maps[0], &odd]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conv_identity_and_zero() {
        let m = noise(Shape::new(3, 5, 4), 9);
        let mut ident = vec![0.0f32; 9];
        for c in 0..3 {
            ident[c * 3 + c] = 1.0;
        }
        let out = conv_lite(&m, &SeededWeights::from_values(ident), 3, KernelSize::One).unwrap();
        assert_eq!(out, m);
        let zero = SeededWeights::from_values(vec![0.0; 2 * 3 * 49]);
        let out = conv_lite(&m, &zero, 2, KernelSize::Seven).unwrap();
        assert_eq!(out, FeatureMap::zeros(2, 5, 4));
        let bad = SeededWeights::from_values(vec![0.0; 10]);
        assert!(matches!(
            conv_lite(&m, &bad, 1, KernelSize::One),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_matches_naive_loop() {
        let m = noise(Shape::new(2, 5, 5), 4);
        let k = SeededWeights::generate(77, 3 * 2 * 49);
        let out = conv_lite(&m, &k, 3, KernelSize::Seven).unwrap();
        for o in 0..3 {
            for i in 0..5i64 {
                for j in 0..5i64 {
                    let mut acc = 0.0f64;
                    for c in 0..2 {
                        for di in -3..=3i64 {
                            for dj in -3..=3i64 {
                                let (si, sj) = (i + di, j + dj);
                                if !(0..5).contains(&si) || !(0..5).contains(&sj) {
                                    continue;
                                }
                                let widx =
                                    ((o * 2 + c) * 7 + (di + 3) as usize) * 7 + (dj + 3) as usize;
                                acc += k.values()[widx] as f64
                                    * m.get(c, si as usize, sj as usize) as f64;
                            }
                        }
                    }
                    let got = out.get(o, i as usize, j as usize) as f64;
                    assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn seeded_weights_are_deterministic_and_bounded() {
        let a = SeededWeights::generate(42, 1000);
        let b = SeededWeights::generate(42, 1000);
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| (-0.1..=0.1).contains(v)));
        let short = SeededWeights::generate(42, 10);
        assert_eq!(short.values(), &a.values()[..10]);
        assert_ne!(SeededWeights::generate(43, 10).values(), short.values());
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
    }

    #[test]
    fn rows_cols_stack_round_trip() {
        let m = seq(2, 5, 4);
        let top = m.rows(0..2).unwrap();
        let bottom = m.rows(2..5).unwrap();
        assert_eq!(FeatureMap::stack_rows(&top, &bottom).unwrap(), m);
        let left = m.cols(0..1).unwrap();
        let right = m.cols(1..4).unwrap();
        assert_eq!(FeatureMap::stack_cols(&left, &right).unwrap(), m);
        assert!(m.rows(3..3).is_err());
        assert!(m.cols(0..5).is_err());
    }
}
