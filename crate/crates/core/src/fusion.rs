//! Per-scale cross-modal fusion of the two feature pyramids and the
//! projections that map fused features to the decoder width.
//!
//! The default fusion is channel concatenation followed by a bare 1x1
//! convolution (bias, no normalization or activation) reducing 2C_l back
//! to C_l. The ablation variant is a per-scale convex blend
//! sigma(alpha_l) * rgb + (1 - sigma(alpha_l)) * aux with a learnable
//! scalar logit per scale.

use candle_core::{Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::encoder::FeaturePyramid;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, BatchNorm2d, Init, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    ConcatProject,
    WeightedSum,
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "fusion inputs {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Concatenation-projection fusion at one scale.
pub fn fuse_concat(rgb: &Tensor, aux: &Tensor, conv: &candle_nn::Conv2d) -> Result<Tensor> {
    check_pair(rgb, aux)?;
    let stacked = Tensor::cat(&[rgb, aux], 1)?;
    Ok(conv.forward(&stacked)?)
}

/// Convex per-scale blend; `alpha` is the scalar logit.
pub fn fuse_weighted_sum(rgb: &Tensor, aux: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    check_pair(rgb, aux)?;
    let gate = sigmoid(alpha)?.reshape(())?;
    let one_minus = ((&gate * (-1.0))? + 1.0)?;
    Ok((rgb.broadcast_mul(&gate)? + aux.broadcast_mul(&one_minus)?)?)
}

enum ScaleParams {
    Concat(candle_nn::Conv2d),
    Weighted(Tensor),
}

/// Fusion parameters for all four scales.
pub struct Fusion {
    mode: FusionMode,
    scales: Vec<ScaleParams>,
}

impl Fusion {
    pub fn init(
        store: &mut ParamStore,
        mode: FusionMode,
        stage_dims: &[usize; 4],
    ) -> Result<Self> {
        let scales = (0..4)
            .map(|l| {
                let c = stage_dims[l];
                match mode {
                    FusionMode::ConcatProject => Ok(ScaleParams::Concat(crate::nn::conv2d(
                        store,
                        &format!("fusion.scales.{l}"),
                        2 * c,
                        c,
                        1,
                        0,
                        1,
                    )?)),
                    FusionMode::WeightedSum => Ok(ScaleParams::Weighted(store.param(
                        &format!("fusion.scales.{l}.alpha"),
                        &[1],
                        Init::Zeros,
                    )?)),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Fusion { mode, scales })
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn forward(&self, rgb: &FeaturePyramid, aux: &FeaturePyramid) -> Result<Vec<Tensor>> {
        rgb.levels
            .iter()
            .zip(aux.levels.iter())
            .zip(self.scales.iter())
            .map(|((r, a), params)| match params {
                ScaleParams::Concat(conv) => fuse_concat(r, a, conv),
                ScaleParams::Weighted(alpha) => fuse_weighted_sum(r, a, alpha),
            })
            .collect()
    }

    /// Channel-mixing multiplies per pixel at each scale: 2*C_l*C_l for the
    /// concat projection (a 1x1 kernel has no term quadratic in pixel
    /// count), 2 for the scalar blend.
    pub fn multiplies_per_pixel(&self, stage_dims: &[usize; 4]) -> Vec<usize> {
        stage_dims
            .iter()
            .map(|&c| match self.mode {
                FusionMode::ConcatProject => 2 * c * c,
                FusionMode::WeightedSum => 2,
            })
            .collect()
    }
}

/// Conv(1x1)-BN-ReLU projection of one fused scale to the decoder width.
pub struct Projection {
    conv: candle_nn::Conv2d,
    bn: BatchNorm2d,
}

impl Projection {
    pub fn init(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Projection {
            conv: crate::nn::conv2d(store, &format!("{name}.conv"), in_ch, out_ch, 1, 0, 1)?,
            bn: BatchNorm2d::init(store, &format!("{name}.bn"), out_ch)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, train)?.relu()?)
    }
}

/// The four per-scale projections feeding the decoder.
pub struct Projections {
    pub scales: Vec<Projection>,
}

impl Projections {
    pub fn init(store: &mut ParamStore, stage_dims: &[usize; 4], c_dec: usize) -> Result<Self> {
        let scales = (0..4)
            .map(|l| Projection::init(store, &format!("proj.scales.{l}"), stage_dims[l], c_dec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Projections { scales })
    }

    pub fn forward(&self, fused: &[Tensor], train: bool) -> Result<Vec<Tensor>> {
        fused
            .iter()
            .zip(self.scales.iter())
            .map(|(x, p)| p.forward(x, train))
            .collect()
    }
}
