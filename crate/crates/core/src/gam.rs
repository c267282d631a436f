//! Generative attention: six multi-varied maps from one refined pair.
//!
//! Maps 1–4 come from cross patch merging. `R` is always split floor-first
//! and `R_plus` ceil-first, so on odd extents the two patches that are
//! stacked together have complementary sizes and every merged map keeps the
//! input's `C×H×W`. Maps 5–6 are the two foreground/background fusions.

use serde::{Deserialize, Serialize};

use crate::attention::{make_refined_pair, EnsembleParams, RefinedPair};
use crate::error::{Error, Result};
use crate::fmap::{concat_channels, conv_lite, FeatureMap, KernelSize, Rotation, SeededWeights};

/// Default fusion rate.
pub const DEFAULT_F_RATE: f32 = 0.7;

/// Number of maps produced per refined pair.
pub const MULTI_VARIED_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitAxis {
    /// Split rows: a top and a bottom patch.
    Horizontal,
    /// Split columns: a left and a right patch.
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    FloorFirst,
    CeilFirst,
}

/// Where a map is cut along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitSpec {
    pub axis: SplitAxis,
    pub first_extent: usize,
    pub second_extent: usize,
}

impl SplitSpec {
    pub fn new(extent: usize, axis: SplitAxis, mode: SplitMode) -> Result<Self> {
        if extent < 2 {
            return Err(Error::TooSmall { extent });
        }
        let first_extent = match mode {
            SplitMode::FloorFirst => extent / 2,
            SplitMode::CeilFirst => extent.div_ceil(2),
        };
        Ok(SplitSpec {
            axis,
            first_extent,
            second_extent: extent - first_extent,
        })
    }

    pub fn for_map(map: &FeatureMap, axis: SplitAxis, mode: SplitMode) -> Result<Self> {
        let extent = match axis {
            SplitAxis::Horizontal => map.height(),
            SplitAxis::Vertical => map.width(),
        };
        Self::new(extent, axis, mode)
    }
}

/// Cuts `map` into two contiguous patches along `axis`.
pub fn split(
    map: &FeatureMap,
    axis: SplitAxis,
    mode: SplitMode,
) -> Result<(FeatureMap, FeatureMap)> {
    let spec = SplitSpec::for_map(map, axis, mode)?;
    let total = spec.first_extent + spec.second_extent;
    Ok(match axis {
        SplitAxis::Horizontal => (
            map.rows(0..spec.first_extent)?,
            map.rows(spec.first_extent..total)?,
        ),
        SplitAxis::Vertical => (
            map.cols(0..spec.first_extent)?,
            map.cols(spec.first_extent..total)?,
        ),
    })
}

fn cross_merge(pair: &RefinedPair, axis: SplitAxis) -> Result<(FeatureMap, FeatureMap)> {
    let (p1, p2) = split(pair.r(), axis, SplitMode::FloorFirst)?;
    let (pa, pb) = split(pair.r_plus(), axis, SplitMode::CeilFirst)?;
    let join = match axis {
        SplitAxis::Horizontal => FeatureMap::stack_rows,
        SplitAxis::Vertical => FeatureMap::stack_cols,
    };
    Ok((join(&p1, &pa)?, join(&p2, &pb)?))
}

/// `(mv1, mv2)`: `R`'s top patch over `R_plus`'s top patch, and `R`'s bottom
/// patch over `R_plus`'s bottom patch.
pub fn cross_merge_horizontal(pair: &RefinedPair) -> Result<(FeatureMap, FeatureMap)> {
    cross_merge(pair, SplitAxis::Horizontal)
}

/// `(mv3, mv4)`: the column-wise analogue of [`cross_merge_horizontal`].
pub fn cross_merge_vertical(pair: &RefinedPair) -> Result<(FeatureMap, FeatureMap)> {
    cross_merge(pair, SplitAxis::Vertical)
}

fn check_rate(f_rate: f32) -> Result<()> {
    if f_rate > 0.0 && f_rate < 1.0 {
        Ok(())
    } else {
        Err(Error::BadRate(f_rate))
    }
}

fn blend(a: &FeatureMap, wa: f32, b: &FeatureMap, wb: f32) -> FeatureMap {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| wa * x + wb * y)
        .collect();
    FeatureMap::new(a.channels(), a.height(), a.width(), data)
        .expect("convex blend of finite maps is finite")
}

/// `mv5 = (1 − f)·R + f·R_plus`.
pub fn fuse_r_foreground(pair: &RefinedPair, f_rate: f32) -> Result<FeatureMap> {
    check_rate(f_rate)?;
    Ok(blend(pair.r(), 1.0 - f_rate, pair.r_plus(), f_rate))
}

/// `mv6 = f·R + (1 − f)·R_plus`.
pub fn fuse_rplus_foreground(pair: &RefinedPair, f_rate: f32) -> Result<FeatureMap> {
    check_rate(f_rate)?;
    Ok(blend(pair.r(), f_rate, pair.r_plus(), 1.0 - f_rate))
}

/// The six generated maps, all shaped like the source input.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiVariedSet {
    maps: [FeatureMap; MULTI_VARIED_COUNT],
    f_rate: f32,
}

impl MultiVariedSet {
    pub fn maps(&self) -> &[FeatureMap; MULTI_VARIED_COUNT] {
        &self.maps
    }

    /// One-based accessor matching the `mv1..mv6` numbering.
    pub fn mv(&self, n: usize) -> &FeatureMap {
        assert!(
            (1..=MULTI_VARIED_COUNT).contains(&n),
            "mv index {n} out of 1..=6"
        );
        &self.maps[n - 1]
    }

    pub fn f_rate(&self) -> f32 {
        self.f_rate
    }

    pub fn into_maps(self) -> [FeatureMap; MULTI_VARIED_COUNT] {
        self.maps
    }
}

/// Builds the six maps from an existing refined pair.
pub fn generate_from_pair(pair: &RefinedPair, f_rate: f32) -> Result<MultiVariedSet> {
    check_rate(f_rate)?;
    let (mv1, mv2) = cross_merge_horizontal(pair)?;
    let (mv3, mv4) = cross_merge_vertical(pair)?;
    let mv5 = fuse_r_foreground(pair, f_rate)?;
    let mv6 = fuse_rplus_foreground(pair, f_rate)?;
    Ok(MultiVariedSet {
        maps: [mv1, mv2, mv3, mv4, mv5, mv6],
        f_rate,
    })
}

/// Refines `map` through both ensembles and generates the six maps.
pub fn gam_generate(
    map: &FeatureMap,
    params: &EnsembleParams,
    rotation: Rotation,
    f_rate: f32,
) -> Result<MultiVariedSet> {
    check_rate(f_rate)?;
    for extent in [map.height(), map.width()] {
        if extent < 2 {
            return Err(Error::TooSmall { extent });
        }
    }
    let pair = make_refined_pair(map, params, rotation)?;
    generate_from_pair(&pair, f_rate)
}

/// Concatenates `[original, mv1..mv6]` along channels (7·C deep). With
/// `project`, a seeded 1×1 convolution maps the stack back to C channels.
pub fn gam_stack(
    set: &MultiVariedSet,
    original: &FeatureMap,
    project: bool,
    seed: u64,
) -> Result<FeatureMap> {
    let mut parts: Vec<&FeatureMap> = Vec::with_capacity(1 + MULTI_VARIED_COUNT);
    parts.push(original);
    for m in set.maps() {
        if m.shape() != original.shape() {
            return Err(Error::dims(original.shape(), m.shape()));
        }
        parts.push(m);
    }
    let stacked = concat_channels(&parts)?;
    if !project {
        return Ok(stacked);
    }
    let c = original.channels();
    let kernel = SeededWeights::generate(seed, c * stacked.channels());
    conv_lite(&stacked, &kernel, c, KernelSize::One)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmap::{Angle, Shape};

    fn pair_from(shape: Shape, seed: u64) -> RefinedPair {
        let a = SeededWeights::generate(seed, shape.len());
        let b = SeededWeights::generate(seed + 1, shape.len());
        let mk = |w: &SeededWeights| {
            FeatureMap::new(
                shape.channels,
                shape.height,
                shape.width,
                w.values().to_vec(),
            )
            .unwrap()
        };
        RefinedPair::new(mk(&a), mk(&b)).unwrap()
    }

    #[test]
    fn split_extents() {
        let s = SplitSpec::new(127, SplitAxis::Horizontal, SplitMode::FloorFirst).unwrap();
        assert_eq!((s.first_extent, s.second_extent), (63, 64));
        let s = SplitSpec::new(127, SplitAxis::Horizontal, SplitMode::CeilFirst).unwrap();
        assert_eq!((s.first_extent, s.second_extent), (64, 63));
        for mode in [SplitMode::FloorFirst, SplitMode::CeilFirst] {
            let s = SplitSpec::new(224, SplitAxis::Vertical, mode).unwrap();
            assert_eq!((s.first_extent, s.second_extent), (112, 112));
        }
        assert!(matches!(
            SplitSpec::new(1, SplitAxis::Vertical, SplitMode::FloorFirst),
            Err(Error::TooSmall { extent: 1 })
        ));
    }

    #[test]
    fn split_patches_are_contiguous() {
        let m = FeatureMap::from_fn(2, 5, 3, |c, i, j| (c * 100 + i * 10 + j) as f32).unwrap();
        let (top, bottom) = split(&m, SplitAxis::Horizontal, SplitMode::CeilFirst).unwrap();
        assert_eq!(top.shape(), Shape::new(2, 3, 3));
        assert_eq!(bottom.shape(), Shape::new(2, 2, 3));
        assert_eq!(bottom.get(1, 0, 2), m.get(1, 3, 2));
        let (left, right) = split(&m, SplitAxis::Vertical, SplitMode::FloorFirst).unwrap();
        assert_eq!(left.width(), 1);
        assert_eq!(right.get(0, 4, 1), m.get(0, 4, 2));
    }

    #[test]
    fn horizontal_merge_127_boundary() {
        let r = FeatureMap::filled(1, 127, 127, 1.0);
        let rp = FeatureMap::filled(1, 127, 127, 2.0);
        let pair = RefinedPair::new(r, rp).unwrap();
        let (mv1, mv2) = cross_merge_horizontal(&pair).unwrap();
        assert_eq!(mv1.shape(), Shape::new(1, 127, 127));
        assert_eq!(mv2.shape(), Shape::new(1, 127, 127));
        for i in 0..127 {
            let expect1 = if i < 63 { 1.0 } else { 2.0 };
            let expect2 = if i < 64 { 1.0 } else { 2.0 };
            assert_eq!(mv1.get(0, i, 5), expect1, "row {i}");
            assert_eq!(mv2.get(0, i, 5), expect2, "row {i}");
        }
        let (mv3, _) = cross_merge_vertical(&pair).unwrap();
        assert_eq!(mv3.get(0, 10, 62), 1.0);
        assert_eq!(mv3.get(0, 10, 63), 2.0);
    }

    #[test]
    fn merges_follow_patch_bookkeeping() {
        let pair = pair_from(Shape::new(1, 5, 4), 3);
        let (r, rp) = (pair.r(), pair.r_plus());
        let (mv1, mv2) = cross_merge_horizontal(&pair).unwrap();
        // r: rows 0..2 | 2..5, r_plus: rows 0..3 | 3..5
        for j in 0..4 {
            for i in 0..5 {
                let e1 = if i < 2 {
                    r.get(0, i, j)
                } else {
                    rp.get(0, i - 2, j)
                };
                let e2 = if i < 3 {
                    r.get(0, i + 2, j)
                } else {
                    rp.get(0, i, j)
                };
                assert_eq!(mv1.get(0, i, j), e1);
                assert_eq!(mv2.get(0, i, j), e2);
            }
        }
        let pair = pair_from(Shape::new(1, 4, 5), 8);
        let (r, rp) = (pair.r(), pair.r_plus());
        let (mv3, mv4) = cross_merge_vertical(&pair).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let e3 = if j < 2 {
                    r.get(0, i, j)
                } else {
                    rp.get(0, i, j - 2)
                };
                let e4 = if j < 3 {
                    r.get(0, i, j + 2)
                } else {
                    rp.get(0, i, j)
                };
                assert_eq!(mv3.get(0, i, j), e3);
                assert_eq!(mv4.get(0, i, j), e4);
            }
        }
    }

    #[test]
    fn even_self_merge_repeats_first_half() {
        let pair = pair_from(Shape::new(1, 6, 6), 1);
        let same = RefinedPair::new(pair.r().clone(), pair.r().clone()).unwrap();
        let (mv1, mv2) = cross_merge_horizontal(&same).unwrap();
        let top = pair.r().rows(0..3).unwrap();
        let bottom = pair.r().rows(3..6).unwrap();
        assert_eq!(mv1, FeatureMap::stack_rows(&top, &top).unwrap());
        assert_eq!(mv2, FeatureMap::stack_rows(&bottom, &bottom).unwrap());
    }

    #[test]
    fn fusion_point_values() {
        let pair = RefinedPair::new(
            FeatureMap::filled(1, 2, 2, 1.0),
            FeatureMap::filled(1, 2, 2, 0.0),
        )
        .unwrap();
        let mv5 = fuse_r_foreground(&pair, 0.7).unwrap();
        let mv6 = fuse_rplus_foreground(&pair, 0.7).unwrap();
        assert!(mv5.data().iter().all(|&v| v == 0.3));
        assert!(mv6.data().iter().all(|&v| v == 0.7));
        for bad in [0.0, 1.0, -0.5, 1.5, f32::NAN] {
            assert!(matches!(
                fuse_r_foreground(&pair, bad),
                Err(Error::BadRate(_))
            ));
            assert!(matches!(
                fuse_rplus_foreground(&pair, bad),
                Err(Error::BadRate(_))
            ));
        }
    }

    #[test]
    fn fusion_of_equal_operands_and_mean() {
        let pair = pair_from(Shape::new(2, 4, 4), 17);
        let same = RefinedPair::new(pair.r().clone(), pair.r().clone()).unwrap();
        for f in [0.1, 0.5, 0.7, 0.9] {
            let mv5 = fuse_r_foreground(&same, f).unwrap();
            for (a, b) in mv5.data().iter().zip(pair.r().data()) {
                assert!((a - b).abs() <= 1e-7);
            }
        }
        let mv5 = fuse_r_foreground(&pair, 0.5).unwrap();
        for k in 0..mv5.data().len() {
            let mean = 0.5 * (pair.r().data()[k] as f64 + pair.r_plus().data()[k] as f64);
            assert!((mv5.data()[k] as f64 - mean).abs() < 1e-7);
        }
    }

    #[test]
    fn generate_and_stack() {
        let m = FeatureMap::from_fn(2, 6, 5, |c, i, j| ((c + i * j) % 7) as f32 - 3.0).unwrap();
        let rot = Rotation::clockwise(Angle::Deg90);
        let set = gam_generate(&m, &EnsembleParams::default(), rot, DEFAULT_F_RATE).unwrap();
        assert_eq!(set.maps().len(), 6);
        assert!(set.maps().iter().all(|x| x.shape() == m.shape()));
        let stacked = gam_stack(&set, &m, false, 0).unwrap();
        assert_eq!(stacked.channels(), 14);
        assert_eq!(&stacked.slice_channels(0..2).unwrap(), &m);
        assert_eq!(&stacked.slice_channels(2..4).unwrap(), set.mv(1));
        assert_eq!(&stacked.slice_channels(12..14).unwrap(), set.mv(6));
        let projected = gam_stack(&set, &m, true, 5).unwrap();
        assert_eq!(projected.shape(), m.shape());
        let wrong = FeatureMap::zeros(2, 6, 4);
        assert!(matches!(
            gam_stack(&set, &wrong, false, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn generate_rejects_small_or_bad_rate() {
        let thin = FeatureMap::zeros(1, 1, 8);
        let p = EnsembleParams::default();
        assert!(matches!(
            gam_generate(&thin, &p, Rotation::default(), 0.7),
            Err(Error::TooSmall { extent: 1 })
        ));
        let ok = FeatureMap::zeros(1, 4, 4);
        assert!(matches!(
            gam_generate(&ok, &p, Rotation::default(), 1.0),
            Err(Error::BadRate(_))
        ));
    }

    #[test]
    fn zero_input_gives_zero_maps() {
        let z = FeatureMap::zeros(2, 5, 7);
        let set = gam_generate(&z, &EnsembleParams::default(), Rotation::default(), 0.7).unwrap();
        assert!(set.maps().iter().all(|m| m == &z));
    }
}
