//! Volumetric contour visual assessment.
//!
//! A channel-weighted activation heatmap is computed per feature map, each
//! heatmap pixel is placed in a 3-D voxel grid (rows → `a`, columns → `b`,
//! heatmap index → `c`) through a finite-width Dirac gate, and the voxel
//! values are totalled into a volume that is bucketed into a severity level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmap::FeatureMap;

/// Non-negative `H×W` activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl HeatMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "heatmap values must be finite and >= 0, got {v}"
            )));
        }
        Ok(HeatMap {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.width + j]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// Divides by the maximum so values land in `[0, 1]`. An all-zero map is
    /// returned unchanged.
    pub fn normalized(&self) -> HeatMap {
        let max = self.max();
        if max <= 0.0 {
            return self.clone();
        }
        HeatMap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| (v / max).min(1.0)).collect(),
        }
    }
}

/// One weight per channel of the source feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelWeights(pub Vec<f32>);

impl ChannelWeights {
    pub fn uniform(channels: usize) -> Self {
        ChannelWeights(vec![1.0 / channels as f32; channels])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean_abs(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|w| w.abs() as f64).sum::<f64>() / self.0.len() as f64
    }
}

/// `ReLU(Σ_l a_l · A_l[i, j])` at every pixel.
pub fn compute_heatmap(stack: &FeatureMap, weights: &ChannelWeights) -> Result<HeatMap> {
    if weights.len() != stack.channels() {
        return Err(Error::LengthMismatch {
            expected: stack.channels(),
            actual: weights.len(),
        });
    }
    if weights.0.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "channel weights must be finite".into(),
        ));
    }
    let plane = stack.height() * stack.width();
    let values = (0..plane)
        .map(|p| {
            let sum: f64 = weights
                .0
                .iter()
                .enumerate()
                .map(|(l, &a)| a as f64 * stack.channel(l)[p] as f64)
                .sum();
            (sum.max(0.0) as f32).min(f32::MAX)
        })
        .collect();
    HeatMap::new(stack.height(), stack.width(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voxel {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub value: f32,
}

impl Voxel {
    /// Spatial coordinates `(a, b, c) · spacing`.
    pub fn position(&self, spacing: f64) -> (f64, f64, f64) {
        (
            self.a as f64 * spacing,
            self.b as f64 * spacing,
            self.c as f64 * spacing,
        )
    }
}

/// Sparse voxel collection with its total volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumetricGrid {
    grid_spacing: f64,
    epsilon: f64,
    extent: (usize, usize, usize),
    voxels: Vec<Voxel>,
    v_total: f64,
}

impl VolumetricGrid {
    /// An empty grid (no admitted voxels).
    pub fn empty(grid_spacing: f64, epsilon: f64) -> Result<Self> {
        Self::from_voxels(grid_spacing, epsilon, (0, 0, 0), Vec::new())
    }

    /// Rebuilds a grid from stored voxels; `extent` is `(rows, cols, depth)`.
    /// Voxels are kept in `(c, a, b)` order.
    pub fn from_voxels(
        grid_spacing: f64,
        epsilon: f64,
        extent: (usize, usize, usize),
        voxels: Vec<Voxel>,
    ) -> Result<Self> {
        check_spacing(grid_spacing)?;
        check_epsilon(epsilon)?;
        if let Some(v) = voxels
            .iter()
            .find(|v| !(v.value.is_finite() && v.value >= 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "voxel value must be finite and >= 0, got {}",
                v.value
            )));
        }
        let mut voxels = voxels;
        voxels.sort_by_key(|v| (v.c, v.a, v.b));
        let v_total = sum_values(&voxels);
        Ok(VolumetricGrid {
            grid_spacing,
            epsilon,
            extent,
            voxels,
            v_total,
        })
    }

    pub fn grid_spacing(&self) -> f64 {
        self.grid_spacing
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `(rows, cols, depth)` of the index space the voxels live in.
    pub fn extent(&self) -> (usize, usize, usize) {
        self.extent
    }

    pub fn voxels(&self) -> &[Voxel] {
        &self.voxels
    }

    pub fn v_total(&self) -> f64 {
        self.v_total
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Stacks `other` behind `self` along the depth axis.
    pub fn concat(&self, other: &VolumetricGrid) -> Result<VolumetricGrid> {
        if self.grid_spacing != other.grid_spacing || self.epsilon != other.epsilon {
            return Err(Error::InvalidArgument(
                "grids must share spacing and gate width to be concatenated".into(),
            ));
        }
        let offset = self.extent.2 as u32;
        let mut voxels = self.voxels.clone();
        voxels.extend(other.voxels.iter().map(|v| Voxel {
            c: v.c + offset,
            ..*v
        }));
        let extent = (
            self.extent.0.max(other.extent.0),
            self.extent.1.max(other.extent.1),
            self.extent.2 + other.extent.2,
        );
        Self::from_voxels(self.grid_spacing, self.epsilon, extent, voxels)
    }
}

fn sum_values(voxels: &[Voxel]) -> f64 {
    voxels.iter().map(|v| v.value as f64).sum()
}

fn check_spacing(spacing: f64) -> Result<()> {
    if spacing.is_finite() && spacing > 0.0 {
        Ok(())
    } else {
        Err(Error::BadSpacing(spacing))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(Error::BadEpsilon(epsilon))
    }
}

/// Finite approximation of the Dirac delta: admits a sample whose distance to
/// its grid point is strictly below `epsilon`.
#[inline]
pub fn dirac_gate(distance: f64, epsilon: f64) -> bool {
    distance.abs() < epsilon
}

/// Distance from continuous coordinate `x` to its nearest grid point.
#[inline]
fn snap_distance(x: f64, spacing: f64) -> f64 {
    (x - (x / spacing).round() * spacing).abs()
}

/// Places every heatmap pixel in the voxel grid, heatmap `k` at depth `c = k`.
///
/// Pixels sit exactly on grid points, so with `epsilon > 0` every pixel is
/// admitted and with `epsilon = 0` none is.
pub fn voxelize(maps: &[HeatMap], grid_spacing: f64, epsilon: f64) -> Result<VolumetricGrid> {
    check_spacing(grid_spacing)?;
    check_epsilon(epsilon)?;
    let Some(first) = maps.first() else {
        return VolumetricGrid::empty(grid_spacing, epsilon);
    };
    let (h, w) = (first.height, first.width);
    if maps.iter().any(|m| m.height != h || m.width != w) {
        return Err(Error::MixedDims);
    }
    let mut voxels = Vec::new();
    for (k, map) in maps.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                let (x, y, z) = (
                    i as f64 * grid_spacing,
                    j as f64 * grid_spacing,
                    k as f64 * grid_spacing,
                );
                let admitted = dirac_gate(snap_distance(x, grid_spacing), epsilon)
                    && dirac_gate(snap_distance(y, grid_spacing), epsilon)
                    && dirac_gate(snap_distance(z, grid_spacing), epsilon);
                if admitted {
                    voxels.push(Voxel {
                        a: i as u32,
                        b: j as u32,
                        c: k as u32,
                        value: map.get(i, j),
                    });
                }
            }
        }
    }
    VolumetricGrid::from_voxels(grid_spacing, epsilon, (h, w, maps.len()), voxels)
}

/// Sum of every voxel value.
pub fn total_volume(grid: &VolumetricGrid) -> f64 {
    sum_values(grid.voxels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeverityLevel {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityThresholds {
    pub t1: f64,
    pub t2: f64,
}

impl Default for SeverityThresholds {
    fn default() -> Self {
        SeverityThresholds { t1: 0.2, t2: 0.5 }
    }
}

impl SeverityThresholds {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.t1 && self.t1 < self.t2 && self.t2 < 1.0 {
            Ok(())
        } else {
            Err(Error::BadThresholds(self.t1, self.t2))
        }
    }

    pub fn level(&self, score: f64) -> SeverityLevel {
        if score < self.t1 {
            SeverityLevel::Low
        } else if score < self.t2 {
            SeverityLevel::Medium
        } else {
            SeverityLevel::High
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityVerdict {
    /// Normalized volume in `[0, 1]`.
    pub score: f64,
    pub level: SeverityLevel,
}

/// `score = v_total / cell_count`, clamped to `[0, 1]`, then bucketed.
pub fn assess_severity(
    grid: &VolumetricGrid,
    cell_count: usize,
    thresholds: SeverityThresholds,
) -> Result<SeverityVerdict> {
    thresholds.validate()?;
    if cell_count == 0 {
        return Err(Error::BadCellCount);
    }
    let score = (grid.v_total() / cell_count as f64).clamp(0.0, 1.0);
    Ok(SeverityVerdict {
        score,
        level: thresholds.level(score),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VcvaConfig {
    pub grid_spacing: f64,
    /// Gate width; `None` uses the mean absolute channel weight.
    pub epsilon: Option<f64>,
    pub thresholds: SeverityThresholds,
    /// Scale each heatmap by its own maximum before voxelizing.
    pub normalize: bool,
}

impl Default for VcvaConfig {
    fn default() -> Self {
        VcvaConfig {
            grid_spacing: 1.0,
            epsilon: None,
            thresholds: SeverityThresholds::default(),
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcvaOutput {
    pub heatmaps: Vec<HeatMap>,
    pub grid: VolumetricGrid,
    pub verdict: SeverityVerdict,
}

/// Heatmap per feature map, one voxel layer per heatmap, one verdict.
pub fn vcva_stack(
    maps: &[FeatureMap],
    weights: &ChannelWeights,
    config: &VcvaConfig,
) -> Result<VcvaOutput> {
    let first = maps.first().ok_or(Error::EmptyInput("vcva_stack"))?;
    config.thresholds.validate()?;
    let epsilon = config.epsilon.unwrap_or_else(|| weights.mean_abs());
    let raw = maps
        .iter()
        .map(|m| compute_heatmap(m, weights))
        .collect::<Result<Vec<_>>>()?;
    let placed: Vec<HeatMap> = if config.normalize {
        raw.iter().map(HeatMap::normalized).collect()
    } else {
        raw.clone()
    };
    let grid = voxelize(&placed, config.grid_spacing, epsilon)?;
    let cells = maps.len() * first.height() * first.width();
    let verdict = assess_severity(&grid, cells, config.thresholds)?;
    Ok(VcvaOutput {
        heatmaps: raw,
        grid,
        verdict,
    })
}

/// Single-map form: heatmap → grid → verdict.
pub fn vcva_pipeline(
    stack: &FeatureMap,
    weights: &ChannelWeights,
    config: &VcvaConfig,
) -> Result<(HeatMap, VolumetricGrid, SeverityVerdict)> {
    let mut out = vcva_stack(std::slice::from_ref(stack), weights, config)?;
    Ok((out.heatmaps.remove(0), out.grid, out.verdict))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hm(h: usize, w: usize, v: &[f32]) -> HeatMap {
        HeatMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn heatmap_identity_and_clamp() {
        let m = FeatureMap::new(1, 2, 2, vec![-1.0, 2.0, 0.5, -3.0]).unwrap();
        let h = compute_heatmap(&m, &ChannelWeights(vec![1.0])).unwrap();
        assert_eq!(h.values(), &[0.0, 2.0, 0.5, 0.0]);
        let pos = FeatureMap::filled(3, 2, 2, 1.5);
        let h = compute_heatmap(&pos, &ChannelWeights(vec![-1.0, -0.5, -2.0])).unwrap();
        assert!(h.values().iter().all(|&v| v == 0.0));
        assert!(matches!(
            compute_heatmap(&pos, &ChannelWeights(vec![1.0])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn voxelize_two_by_two() {
        let grid = voxelize(&[hm(2, 2, &[1.0, 2.0, 3.0, 4.0])], 1.0, 0.5).unwrap();
        assert_eq!(grid.len(), 4);
        assert_eq!(grid.v_total(), 10.0);
        assert_eq!(total_volume(&grid), 10.0);
        let closed = voxelize(&[hm(2, 2, &[1.0, 2.0, 3.0, 4.0])], 1.0, 0.0).unwrap();
        assert!(closed.is_empty());
        assert_eq!(closed.v_total(), 0.0);
        let zeros = voxelize(&[hm(3, 3, &[0.0; 9]), hm(3, 3, &[0.0; 9])], 0.25, 2.0).unwrap();
        assert_eq!(zeros.v_total(), 0.0);
    }

    #[test]
    fn voxelize_errors() {
        let a = hm(2, 2, &[0.0; 4]);
        let b = hm(2, 3, &[0.0; 6]);
        assert!(matches!(
            voxelize(&[a.clone(), b], 1.0, 1.0),
            Err(Error::MixedDims)
        ));
        assert!(matches!(
            voxelize(std::slice::from_ref(&a), 0.0, 1.0),
            Err(Error::BadSpacing(_))
        ));
        assert!(matches!(
            voxelize(&[a], 1.0, -1.0),
            Err(Error::BadEpsilon(_))
        ));
        assert!(voxelize(&[], 1.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn depth_index_and_coordinates() {
        let grid = voxelize(&[hm(1, 2, &[1.0, 0.0]), hm(1, 2, &[0.5, 0.25])], 0.5, 0.1).unwrap();
        let v = grid.voxels()[3];
        assert_eq!((v.a, v.b, v.c, v.value), (0, 1, 1, 0.25));
        assert_eq!(v.position(0.5), (0.0, 0.5, 0.5));
    }

    #[test]
    fn concat_adds_totals() {
        let g1 = voxelize(&[hm(2, 2, &[1.0, 2.0, 3.0, 4.0])], 1.0, 0.5).unwrap();
        let g2 = voxelize(&[hm(2, 2, &[0.5; 4])], 1.0, 0.5).unwrap();
        let joined = g1.concat(&g2).unwrap();
        assert_eq!(joined.v_total(), g1.v_total() + g2.v_total());
        assert_eq!(joined.extent(), (2, 2, 2));
        assert!(joined.voxels()[4..].iter().all(|v| v.c == 1));
        let empty = VolumetricGrid::empty(1.0, 0.5).unwrap();
        assert_eq!(total_volume(&empty), 0.0);
    }

    #[test]
    fn severity_buckets() {
        let th = SeverityThresholds::default();
        let empty = VolumetricGrid::empty(1.0, 1.0).unwrap();
        let v = assess_severity(&empty, 10, th).unwrap();
        assert_eq!((v.score, v.level), (0.0, SeverityLevel::Low));
        let full = voxelize(&[hm(2, 2, &[1.0; 4])], 1.0, 1.0).unwrap();
        let v = assess_severity(&full, 4, th).unwrap();
        assert_eq!((v.score, v.level), (1.0, SeverityLevel::High));
        let g = voxelize(&[hm(2, 2, &[1.0, 2.0, 3.0, 4.0])], 1.0, 0.5).unwrap();
        let v = assess_severity(&g, 40, th).unwrap();
        assert_eq!((v.score, v.level), (0.25, SeverityLevel::Medium));
        let bad = SeverityThresholds { t1: 0.5, t2: 0.2 };
        assert!(matches!(
            assess_severity(&g, 40, bad),
            Err(Error::BadThresholds(..))
        ));
        assert!(matches!(
            assess_severity(&g, 0, th),
            Err(Error::BadCellCount)
        ));
    }

    #[test]
    fn pipeline_zero_and_identity() {
        let cfg = VcvaConfig::default();
        let z = FeatureMap::zeros(2, 3, 3);
        let (h, g, v) = vcva_pipeline(&z, &ChannelWeights::uniform(2), &cfg).unwrap();
        assert!(h.values().iter().all(|&x| x == 0.0));
        assert_eq!(g.v_total(), 0.0);
        assert_eq!(v.level, SeverityLevel::Low);

        // One positive pixel of four, normalized to 1 → score 0.25.
        let m = FeatureMap::new(1, 2, 2, vec![3.0, -1.0, 0.0, -2.0]).unwrap();
        let (h, g, v) = vcva_pipeline(&m, &ChannelWeights(vec![1.0]), &cfg).unwrap();
        assert_eq!(h.values(), &[3.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.v_total(), 1.0);
        assert_eq!(v.score, 0.25);
        assert_eq!(v.level, SeverityLevel::Medium);
        let again = vcva_pipeline(&m, &ChannelWeights(vec![1.0]), &cfg).unwrap();
        assert_eq!(again.1, g);
    }
}
