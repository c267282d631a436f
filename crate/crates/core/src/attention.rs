//! Channel/spatial attention refiners and the explicit ensembles built on them.
//!
//! The two refiners follow the usual block-attention layout (a shared
//! two-layer 1×1 channel MLP and a 7×7 spatial gate over pooled planes) with
//! seeded weights in place of trained ones. `cbam_refine` applies the gates
//! one after the other, `pam_refine` computes both from the input and applies
//! them jointly. Every gate lies in (0, 1), so a zero input stays zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmap::{
    avg_pool_channels, concat_channels, conv_lite, derive_seed, max_pool_channels, rotate,
    spatial_avg_pool, spatial_max_pool, ElementOp, FeatureMap, KernelSize, Rotation, SeededWeights,
};

const REDUCTION: usize = 4;

// Sub-stage stream ids for derive_seed.
const STREAM_MLP_IN: u64 = 1;
const STREAM_MLP_OUT: u64 = 2;
const STREAM_SPATIAL: u64 = 3;
const STREAM_CBAM: u64 = 11;
const STREAM_PAM: u64 = 12;
const STREAM_ENSEMBLE_AVG: u64 = 13;
const STREAM_ENSEMBLE_MAX: u64 = 14;
const STREAM_ENSEMBLE_MASK: u64 = 15;

/// Scalars weighting the pooled descriptors in the explicit ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    /// Weight on the average-pooled CBAM descriptor.
    pub w_x: f32,
    /// Weight on the average-pooled PAM descriptor.
    pub w_y: f32,
    /// Weight on the max-pooled CBAM descriptor.
    pub z_x: f32,
    /// Weight on the max-pooled PAM descriptor.
    pub z_y: f32,
    pub seed: u64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            w_x: 1.0,
            w_y: 1.0,
            z_x: 1.0,
            z_y: 1.0,
            seed: 0,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_x", self.w_x),
            ("w_y", self.w_y),
            ("z_x", self.z_x),
            ("z_y", self.z_y),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Output of the plain and rotation-augmented ensembles for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPair {
    r: FeatureMap,
    r_plus: FeatureMap,
}

impl RefinedPair {
    pub fn new(r: FeatureMap, r_plus: FeatureMap) -> Result<Self> {
        if r.shape() != r_plus.shape() {
            return Err(Error::dims(r.shape(), r_plus.shape()));
        }
        Ok(RefinedPair { r, r_plus })
    }

    pub fn r(&self) -> &FeatureMap {
        &self.r
    }

    pub fn r_plus(&self) -> &FeatureMap {
        &self.r_plus
    }

    pub fn into_parts(self) -> (FeatureMap, FeatureMap) {
        (self.r, self.r_plus)
    }
}

fn channel_gate(map: &FeatureMap, seed: u64) -> Result<FeatureMap> {
    let c = map.channels();
    let hidden = (c / REDUCTION).max(1);
    let w_in = SeededWeights::generate(derive_seed(seed, STREAM_MLP_IN), hidden * c);
    let w_out = SeededWeights::generate(derive_seed(seed, STREAM_MLP_OUT), c * hidden);
    let mlp = |pooled: &FeatureMap| -> Result<FeatureMap> {
        let h = conv_lite(pooled, &w_in, hidden, KernelSize::One)?.map_values(|v| v.max(0.0))?;
        conv_lite(&h, &w_out, c, KernelSize::One)
    };
    let avg = mlp(&spatial_avg_pool(map))?;
    let max = mlp(&spatial_max_pool(map))?;
    Ok(crate::fmap::elementwise(&avg, &max, ElementOp::Add, 1.0, 1.0)?.sigmoid())
}

fn spatial_gate(map: &FeatureMap, seed: u64) -> Result<FeatureMap> {
    let pooled = concat_channels(&[&avg_pool_channels(map), &max_pool_channels(map)])?;
    let kernel = SeededWeights::generate(derive_seed(seed, STREAM_SPATIAL), 2 * 49);
    Ok(conv_lite(&pooled, &kernel, 1, KernelSize::Seven)?.sigmoid())
}

/// Sequential channel-then-spatial gating.
pub fn cbam_refine(map: &FeatureMap, seed: u64) -> Result<FeatureMap> {
    let channel_refined = map.channel_mul(&channel_gate(map, seed)?)?;
    channel_refined.broadcast_mul(&spatial_gate(&channel_refined, seed)?)
}

/// Parallel gating: both gates are computed from `map` and applied together.
pub fn pam_refine(map: &FeatureMap, seed: u64) -> Result<FeatureMap> {
    let cg = channel_gate(map, seed)?;
    let sg = spatial_gate(map, seed)?;
    map.channel_mul(&cg)?.broadcast_mul(&sg)
}

/// Explicit ensemble of the CBAM and PAM descriptors.
///
/// The four weighted pooled planes are fused by two 7×7 convolutions into
/// `E_avg` and `E_max`; a 1×1 convolution over `[E_avg; E_max]` followed by a
/// sigmoid gives a spatial mask that modulates `0.5·(F'' + P'')`.
pub fn eeam(map: &FeatureMap, params: &EnsembleParams) -> Result<FeatureMap> {
    params.validate()?;
    let seed = params.seed;
    let f = cbam_refine(map, derive_seed(seed, STREAM_CBAM))?;
    let p = pam_refine(map, derive_seed(seed, STREAM_PAM))?;

    let k_avg = SeededWeights::generate(derive_seed(seed, STREAM_ENSEMBLE_AVG), 2 * 49);
    let k_max = SeededWeights::generate(derive_seed(seed, STREAM_ENSEMBLE_MAX), 2 * 49);
    let k_mask = SeededWeights::generate(derive_seed(seed, STREAM_ENSEMBLE_MASK), 2);

    let avg_in = concat_channels(&[
        &avg_pool_channels(&f).scale(params.w_x)?,
        &avg_pool_channels(&p).scale(params.w_y)?,
    ])?;
    let e_avg = conv_lite(&avg_in, &k_avg, 1, KernelSize::Seven)?;
    let max_in = concat_channels(&[
        &max_pool_channels(&f).scale(params.z_x)?,
        &max_pool_channels(&p).scale(params.z_y)?,
    ])?;
    let e_max = conv_lite(&max_in, &k_max, 1, KernelSize::Seven)?;

    let mask = conv_lite(
        &concat_channels(&[&e_avg, &e_max])?,
        &k_mask,
        1,
        KernelSize::One,
    )?
    .sigmoid();
    let mean = crate::fmap::elementwise(&f, &p, ElementOp::Add, 0.5, 0.5)?;
    mean.broadcast_mul(&mask)
}

/// Rotation-augmented ensemble: rotate, run [`eeam`], rotate back.
pub fn eeam_plus(
    map: &FeatureMap,
    params: &EnsembleParams,
    rotation: Rotation,
) -> Result<FeatureMap> {
    let rotated = rotate(map, rotation);
    let refined = eeam(&rotated, params)?;
    Ok(rotate(&refined, rotation.inverse()))
}

pub fn make_refined_pair(
    map: &FeatureMap,
    params: &EnsembleParams,
    rotation: Rotation,
) -> Result<RefinedPair> {
    RefinedPair::new(eeam(map, params)?, eeam_plus(map, params, rotation)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmap::{Angle, Shape};

    fn noise(shape: Shape, seed: u64) -> FeatureMap {
        let w = SeededWeights::generate(seed, shape.len());
        FeatureMap::new(
            shape.channels,
            shape.height,
            shape.width,
            w.values().iter().map(|v| v * 20.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let z = FeatureMap::zeros(3, 6, 5);
        let params = EnsembleParams::default();
        assert_eq!(cbam_refine(&z, 1).unwrap(), z);
        assert_eq!(pam_refine(&z, 1).unwrap(), z);
        assert_eq!(eeam(&z, &params).unwrap(), z);
        let rot = Rotation::clockwise(Angle::Deg180);
        assert_eq!(eeam_plus(&z, &params, rot).unwrap(), z);
        let pair = make_refined_pair(&z, &params, rot).unwrap();
        assert_eq!(pair.r(), &z);
        assert_eq!(pair.r_plus(), &z);
    }

    #[test]
    fn gates_shrink_magnitudes() {
        let m = noise(Shape::new(2, 8, 8), 5);
        for out in [cbam_refine(&m, 3).unwrap(), pam_refine(&m, 3).unwrap()] {
            assert_eq!(out.shape(), m.shape());
            for (o, i) in out.data().iter().zip(m.data()) {
                assert!(o.abs() <= i.abs());
            }
        }
    }

    #[test]
    fn refiners_are_deterministic_and_seed_dependent() {
        let m = noise(Shape::new(4, 7, 6), 8);
        assert_eq!(cbam_refine(&m, 9).unwrap(), cbam_refine(&m, 9).unwrap());
        assert_eq!(pam_refine(&m, 9).unwrap(), pam_refine(&m, 9).unwrap());
        assert_ne!(cbam_refine(&m, 9).unwrap(), cbam_refine(&m, 10).unwrap());
        assert_ne!(cbam_refine(&m, 9).unwrap(), pam_refine(&m, 9).unwrap());
        let p = EnsembleParams {
            seed: 4,
            ..Default::default()
        };
        assert_eq!(eeam(&m, &p).unwrap(), eeam(&m, &p).unwrap());
    }

    #[test]
    fn zero_ensemble_weights_give_constant_mask() {
        // With all four scalars at zero, E_avg = E_max = 0 everywhere, so the
        // mask is sigmoid(0) = 0.5 at every pixel.
        let m = noise(Shape::new(2, 6, 6), 21);
        let params = EnsembleParams {
            w_x: 0.0,
            w_y: 0.0,
            z_x: 0.0,
            z_y: 0.0,
            seed: 3,
        };
        let out = eeam(&m, &params).unwrap();
        let f = cbam_refine(&m, derive_seed(3, STREAM_CBAM)).unwrap();
        let p = pam_refine(&m, derive_seed(3, STREAM_PAM)).unwrap();
        for k in 0..m.data().len() {
            let mean = 0.5 * f.data()[k] + 0.5 * p.data()[k];
            assert_eq!(out.data()[k], mean * 0.5);
        }
    }

    #[test]
    fn eeam_plus_restores_shape() {
        let m = noise(Shape::new(1, 4, 6), 2);
        let params = EnsembleParams::default();
        for rot in [
            Rotation::clockwise(Angle::Deg90),
            Rotation::anticlockwise(Angle::Deg270),
            Rotation::clockwise(Angle::Deg180),
        ] {
            let out = eeam_plus(&m, &params, rot).unwrap();
            assert_eq!(out.shape(), m.shape());
            assert_eq!(out, eeam_plus(&m, &params, rot).unwrap());
        }
    }

    #[test]
    fn half_turn_conjugates_eeam() {
        let m = noise(Shape::new(2, 9, 9), 13);
        let params = EnsembleParams {
            seed: 99,
            ..Default::default()
        };
        let half = Rotation::clockwise(Angle::Deg180);
        let pair = make_refined_pair(&m, &params, half).unwrap();
        let manual = rotate(&eeam(&rotate(&m, half), &params).unwrap(), half);
        assert_eq!(pair.r_plus(), &manual);
        assert_eq!(pair.r().shape(), Shape::new(2, 9, 9));
        assert_eq!(pair.r_plus().shape(), Shape::new(2, 9, 9));
    }

    #[test]
    fn non_finite_params_rejected() {
        let m = FeatureMap::zeros(1, 3, 3);
        let params = EnsembleParams {
            w_x: f32::INFINITY,
            ..Default::default()
        };
        assert!(eeam(&m, &params).is_err());
    }
}
