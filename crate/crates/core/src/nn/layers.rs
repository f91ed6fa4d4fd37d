//! Layer constructors over the parameter store plus the handful of tensor
//! ops the backend does not ship: batch norm with explicit running-stat
//! control, half-pixel bilinear resampling, cyclic rolls, and seeded
//! dropout.

use candle_core::{DType, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamStore};
use crate::error::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

pub fn linear(
    store: &mut ParamStore,
    name: &str,
    in_dim: usize,
    out_dim: usize,
    init: Init,
    bias: bool,
) -> Result<candle_nn::Linear> {
    let w = store.param(&format!("{name}.weight"), &[out_dim, in_dim], init)?;
    let b = if bias {
        Some(store.param(&format!("{name}.bias"), &[out_dim], Init::Zeros)?)
    } else {
        None
    };
    Ok(candle_nn::Linear::new(w, b))
}

pub fn conv2d(
    store: &mut ParamStore,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    padding: usize,
    stride: usize,
) -> Result<candle_nn::Conv2d> {
    let fan_in = in_ch * kernel * kernel;
    let w = store.param(
        &format!("{name}.weight"),
        &[out_ch, in_ch, kernel, kernel],
        Init::FanInUniform { fan_in },
    )?;
    let b = store.param(
        &format!("{name}.bias"),
        &[out_ch],
        Init::FanInUniform { fan_in },
    )?;
    let cfg = candle_nn::Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    };
    Ok(candle_nn::Conv2d::new(w, Some(b), cfg))
}

/// Layer normalization over the last dimension, built from composed tensor
/// ops so gradients flow in every dtype. (The backend's fused layer-norm
/// kernel does not participate in the autograd graph.)
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mu = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mu)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let xhat = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xhat
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)?)
    }
}

pub fn layer_norm(store: &mut ParamStore, name: &str, dim: usize) -> Result<LayerNorm> {
    let w = store.param(&format!("{name}.weight"), &[dim], Init::Ones)?;
    let b = store.param(&format!("{name}.bias"), &[dim], Init::Zeros)?;
    Ok(LayerNorm {
        weight: w,
        bias: b,
        eps: LAYER_NORM_EPS,
    })
}

/// Batch normalization over (B, C, H, W) with scale init 1, bias init 0.
/// Train mode normalizes by biased batch statistics and updates the running
/// estimates (detached); eval mode uses the frozen running statistics.
pub struct BatchNorm2d {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    channels: usize,
}

impl BatchNorm2d {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.param(&format!("{name}.weight"), &[channels], Init::Ones)?,
            beta: store.param(&format!("{name}.bias"), &[channels], Init::Zeros)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], Init::Zeros)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], Init::Ones)?,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = self.channels;
        let scale_shape = (1, c, 1, 1);
        let (mean, var) = if train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            // Update running stats outside the autograd graph; the running
            // variance stores the unbiased estimate.
            let dims = x.dims4()?;
            let n = (dims.0 * dims.2 * dims.3) as f64;
            let bessel = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = BATCH_NORM_MOMENTUM;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().reshape(c)?.to_dtype(x.dtype())? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().reshape(c)? * (bessel * m))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().detach().reshape(scale_shape)?,
                self.running_var.as_tensor().detach().reshape(scale_shape)?,
            )
        };
        let xhat = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + BATCH_NORM_EPS)?.sqrt()?)?;
        xhat.broadcast_mul(&self.gamma.reshape(scale_shape)?)?
            .broadcast_add(&self.beta.reshape(scale_shape)?)
            .map_err(Into::into)
    }
}

/// Row interpolation matrix for half-pixel-center bilinear resampling
/// (align_corners = false); out = A_h x A_w^T applied separably.
fn interp_matrix(in_len: usize, out_len: usize, dtype: DType) -> Result<Tensor> {
    let mut data = vec![0.0f64; out_len * in_len];
    let scale = in_len as f64 / out_len as f64;
    for i in 0..out_len {
        let src = (i as f64 + 0.5) * scale - 0.5;
        let i0 = src.floor();
        let frac = src - i0;
        let lo = (i0.max(0.0) as usize).min(in_len - 1);
        let hi = ((i0 + 1.0).max(0.0) as usize).min(in_len - 1);
        data[i * in_len + lo] += 1.0 - frac;
        data[i * in_len + hi] += frac;
    }
    Ok(Tensor::from_vec(data, (out_len, in_len), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Bilinear resize of (B, C, H, W) to (B, C, out_h, out_w) with half-pixel
/// centers. Expressed as two matrix products so gradients flow through the
/// backend's matmul.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let a_h = interp_matrix(h, out_h, x.dtype())?.unsqueeze(0)?;
    let a_w_t = interp_matrix(w, out_w, x.dtype())?.t()?.unsqueeze(0)?;
    let flat = x.reshape((b * c, h, w))?;
    let rows = a_h.broadcast_matmul(&flat)?;
    let out = rows.broadcast_matmul(&a_w_t)?;
    Ok(out.reshape((b, c, out_h, out_w))?)
}

/// Cyclic roll along one dimension: out[i] = x[(i - shift) mod n].
pub fn roll(x: &Tensor, shift: isize, dim: usize) -> Result<Tensor> {
    let n = x.dims()[dim];
    let k = (((shift % n as isize) + n as isize) % n as isize) as usize;
    if k == 0 {
        return Ok(x.clone());
    }
    let tail = x.narrow(dim, n - k, k)?;
    let head = x.narrow(dim, 0, n - k)?;
    Ok(Tensor::cat(&[&tail, &head], dim)?)
}

/// Inverted-scale dropout with an explicit RNG stream; eval paths simply
/// skip the call.
pub fn dropout(x: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let count = x.elem_count();
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..count)
        .map(|_| {
            if rng.random_range(0.0..1.0) < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Numerically stable softplus ln(1 + e^t) = max(t, 0) + ln(1 + e^-|t|).
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let neg_abs = x.abs()?.neg()?;
    Ok((pos + (neg_abs.exp()? + 1.0)?.log()?)?)
}

/// L2-normalize along the last dimension with a small floor.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm_sq = x.sqr()?.sum_keepdim(D::Minus1)?;
    Ok(x.broadcast_div(&(norm_sq + 1e-12)?.sqrt()?)?)
}
