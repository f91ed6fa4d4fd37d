//! Hierarchical shifted-window self-attention encoder producing a 4-level
//! feature pyramid, plus the dual-stream wrapper with channel-mean warm
//! initialization of the auxiliary patch embedding.
//!
//! Backbone conventions, frozen here (constants table):
//!   - pre-normalization block layout: x + attn(LN(x)), then x + mlp(LN(x));
//!   - scaled cosine attention: q and k are L2-normalized per head and the
//!     similarity is multiplied by exp(min(logit_scale, ln 100)); the
//!     per-head logit_scale initializes to ln 10;
//!   - log-spaced continuous position bias: a 2 -> cpb_hidden -> heads MLP
//!     (ReLU, no bias on the output layer, output layer zero-initialized)
//!     over sign(d) * log2(1+|d|) / log2(1+max_offset) relative coordinates;
//!   - shifted blocks cyclically roll the token grid by window/2 and mask
//!     cross-boundary attention with -100 before softmax;
//!   - window auto-shrink: a window larger than the token grid shrinks to
//!     the grid side and the shift becomes 0;
//!   - patch merging: 2x2 spatial concat -> Linear(4C -> 2C, no bias) ->
//!     LayerNorm(2C);
//!   - a LayerNorm per stage output feeds the pyramid;
//!   - GELU (erf form) in the MLP; LayerNorm eps 1e-5;
//!   - linear weights init truncated-normal(std 0.02), biases zero.

use candle_core::{DType, Module, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l2_normalize, layer_norm, linear, roll, Init, ParamStore};

pub const LOGIT_SCALE_INIT: f64 = 2.302585092994046; // ln 10
pub const LOGIT_SCALE_MAX: f64 = 4.605170185988092; // ln 100
pub const ATTENTION_MASK_VALUE: f64 = -100.0;
pub const PATCH_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Stage dims are {C, 2C, 4C, 8C}.
    pub base_dim: usize,
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    pub window: usize,
    pub mlp_ratio: f64,
    /// Hidden width of the position-bias MLP.
    pub cpb_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::desk(3)
    }
}

impl EncoderConfig {
    /// Test-suite default scale.
    pub fn desk(in_channels: usize) -> Self {
        EncoderConfig {
            in_channels,
            base_dim: 32,
            depths: [2, 2, 2, 2],
            heads: [2, 4, 8, 16],
            window: 4,
            mlp_ratio: 4.0,
            cpb_hidden: 64,
        }
    }

    /// Full scale: C=96, depths {2,2,18,2}, window 8.
    pub fn full(in_channels: usize) -> Self {
        EncoderConfig {
            in_channels,
            base_dim: 96,
            depths: [2, 2, 18, 2],
            heads: [3, 6, 12, 24],
            window: 8,
            mlp_ratio: 4.0,
            cpb_hidden: 512,
        }
    }

    /// Tiny scale for double-precision gradient checks.
    pub fn micro(in_channels: usize) -> Self {
        EncoderConfig {
            in_channels,
            base_dim: 8,
            depths: [1, 1, 1, 1],
            heads: [2, 2, 2, 2],
            window: 2,
            mlp_ratio: 2.0,
            cpb_hidden: 16,
        }
    }

    pub fn stage_dim(&self, stage: usize) -> usize {
        self.base_dim << stage
    }
}

/// Four feature maps at strides {4, 8, 16, 32} with channels {C,2C,4C,8C}.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub const STRIDES: [usize; 4] = [4, 8, 16, 32];

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.levels.iter().map(|l| l.dims().to_vec()).collect()
    }
}

/// The signed-log relative-coordinate fed to the bias MLP:
/// sign(d) * log2(1+|d|) / log2(1+max_offset), zero when max_offset is 0.
pub fn log_cpb_input(delta: (i64, i64), max_offset: usize) -> (f64, f64) {
    let norm = (1.0 + max_offset as f64).log2();
    let map = |d: i64| {
        if max_offset == 0 {
            0.0
        } else {
            d.signum() as f64 * (1.0 + d.abs() as f64).log2() / norm
        }
    };
    (map(delta.0), map(delta.1))
}

/// Index into the (2w-1)^2 bias table for every ordered token pair of a
/// w x w window.
fn relative_position_index(window: usize) -> Vec<u32> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (iy, ix) = (i / window, i % window);
        for j in 0..n {
            let (jy, jx) = (j / window, j % window);
            let dy = iy as i64 - jy as i64 + window as i64 - 1;
            let dx = ix as i64 - jx as i64 + window as i64 - 1;
            idx.push((dy * span as i64 + dx) as u32);
        }
    }
    idx
}

/// (B, h, w, C) -> (B * nh * nw, ws*ws, C)
fn window_partition(x: &Tensor, ws: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let x = x.reshape((b, h / ws, ws, w / ws, ws, c))?;
    let x = x.permute((0, 1, 3, 2, 4, 5))?.contiguous()?;
    Ok(x.reshape((b * (h / ws) * (w / ws), ws * ws, c))?)
}

/// Inverse of `window_partition`.
fn window_reverse(x: &Tensor, ws: usize, b: usize, h: usize, w: usize) -> Result<Tensor> {
    let c = x.dims()[2];
    let x = x.reshape((b, h / ws, w / ws, ws, ws, c))?;
    let x = x.permute((0, 1, 3, 2, 4, 5))?.contiguous()?;
    Ok(x.reshape((b, h, w, c))?)
}

/// Additive attention mask for shifted windows: 0 within a contiguous
/// region, -100 across the wrap-around seams. Shape (num_windows, N, N).
fn shift_attention_mask(h: usize, w: usize, ws: usize, shift: usize, dtype: DType) -> Result<Tensor> {
    let region = |coord: usize, n: usize| -> u8 {
        if coord < n - ws {
            0
        } else if coord < n - shift {
            1
        } else {
            2
        }
    };
    let mut ids = vec![0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            ids[r * w + c] = (region(r, h) * 3 + region(c, w)) as f32;
        }
    }
    let ids = Tensor::from_vec(ids, (1, h, w, 1), &candle_core::Device::Cpu)?;
    let ids = window_partition(&ids, ws)?.reshape(((h / ws) * (w / ws), ws * ws))?;
    let a = ids.unsqueeze(1)?;
    let b = ids.unsqueeze(2)?;
    let diff = a.broadcast_sub(&b)?;
    let same = diff.eq(0f64)?.to_dtype(dtype)?;
    Ok(((same * (-ATTENTION_MASK_VALUE))? + ATTENTION_MASK_VALUE)?)
}

/// Scaled-cosine windowed multi-head attention with the log-spaced
/// continuous position bias.
pub struct WindowAttention {
    qkv: candle_nn::Linear,
    proj: candle_nn::Linear,
    logit_scale: Tensor,
    cpb_fc1: candle_nn::Linear,
    cpb_fc2: candle_nn::Linear,
    dim: usize,
    heads: usize,
}

impl WindowAttention {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        cpb_hidden: usize,
    ) -> Result<Self> {
        let tn = Init::TruncNormal { std: 0.02 };
        Ok(WindowAttention {
            qkv: linear(store, &format!("{name}.qkv"), dim, 3 * dim, tn, true)?,
            proj: linear(store, &format!("{name}.proj"), dim, dim, tn, true)?,
            logit_scale: store.param(
                &format!("{name}.logit_scale"),
                &[heads],
                Init::Const(LOGIT_SCALE_INIT),
            )?,
            cpb_fc1: linear(store, &format!("{name}.cpb.fc1"), 2, cpb_hidden, tn, true)?,
            cpb_fc2: linear(
                store,
                &format!("{name}.cpb.fc2"),
                cpb_hidden,
                heads,
                Init::Zeros,
                false,
            )?,
            dim,
            heads,
        })
    }

    /// Per-head position bias for a ws x ws window, shape (heads, N, N).
    pub fn position_bias(&self, ws: usize, dtype: DType) -> Result<Tensor> {
        let n = ws * ws;
        if ws == 1 {
            return Ok(Tensor::zeros((self.heads, 1, 1), dtype, &candle_core::Device::Cpu)?);
        }
        let span = 2 * ws - 1;
        let max_offset = ws - 1;
        let mut coords = Vec::with_capacity(span * span * 2);
        for dy in -(max_offset as i64)..=(max_offset as i64) {
            for dx in -(max_offset as i64)..=(max_offset as i64) {
                let (cy, cx) = log_cpb_input((dy, dx), max_offset);
                coords.push(cy);
                coords.push(cx);
            }
        }
        let table = Tensor::from_vec(coords, (span * span, 2), &candle_core::Device::Cpu)?
            .to_dtype(dtype)?;
        let hidden = self.cpb_fc1.forward(&table)?.relu()?;
        let raw = self.cpb_fc2.forward(&hidden)?; // (span^2, heads)
        let idx = Tensor::from_vec(
            relative_position_index(ws),
            n * n,
            &candle_core::Device::Cpu,
        )?;
        let bias = raw.index_select(&idx, 0)?; // (N*N, heads)
        Ok(bias.reshape((n, n, self.heads))?.permute((2, 0, 1))?.contiguous()?)
    }

    /// Attention over pre-partitioned windows (B', N, C) with position bias
    /// (heads, N, N) and an optional per-window additive mask (nw, N, N).
    fn forward_windows(&self, x: &Tensor, bias: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (bn, n, c) = x.dims3()?;
        let hd = c / self.heads;
        let qkv = self.qkv.forward(x)?; // (bn, n, 3c)
        let qkv = qkv
            .reshape((bn, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?
            .contiguous()?;
        let q = l2_normalize(&qkv.narrow(0, 0, 1)?.squeeze(0)?)?;
        let k = l2_normalize(&qkv.narrow(0, 1, 1)?.squeeze(0)?)?;
        let v = qkv.narrow(0, 2, 1)?.squeeze(0)?.contiguous()?;

        let scale = self
            .logit_scale
            .minimum(LOGIT_SCALE_MAX)?
            .exp()?
            .reshape((1, self.heads, 1, 1))?;
        let attn = q.matmul(&k.transpose(D::Minus2, D::Minus1)?.contiguous()?)?;
        let attn = attn.broadcast_mul(&scale)?;
        let attn = attn.broadcast_add(&bias.unsqueeze(0)?)?;
        let attn = match mask {
            Some(m) => {
                let nw = m.dims()[0];
                let b = bn / nw;
                let attn = attn.reshape((b, nw, self.heads, n, n))?;
                let m = m.reshape((1, nw, 1, n, n))?;
                attn.broadcast_add(&m)?.reshape((bn, self.heads, n, n))?
            }
            None => attn,
        };
        let attn = candle_nn::ops::softmax(&attn, D::Minus1)?;
        let out = attn.matmul(&v)?; // (bn, heads, n, hd)
        let out = out.transpose(1, 2)?.contiguous()?.reshape((bn, n, c))?;
        Ok(self.proj.forward(&out)?)
    }

    /// Windowed self-attention over a (B, N, C) token grid of shape (h, w):
    /// optionally roll by `shift`, partition into ws x ws windows, attend
    /// per window (masking across the seam when shifted), merge back.
    pub fn forward_grid(
        &self,
        x: &Tensor,
        h: usize,
        w: usize,
        ws: usize,
        shift: usize,
    ) -> Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        debug_assert_eq!(n, h * w);
        debug_assert_eq!(c, self.dim);
        if h % ws != 0 || w % ws != 0 {
            return Err(Error::WindowGridMismatch { window: ws, h, w });
        }
        let grid = x.reshape((b, h, w, c))?;
        let grid = if shift > 0 {
            let rolled = roll(&grid, -(shift as isize), 1)?;
            roll(&rolled, -(shift as isize), 2)?
        } else {
            grid
        };
        let windows = window_partition(&grid, ws)?;
        let bias = self.position_bias(ws, x.dtype())?;
        let mask = if shift > 0 {
            Some(shift_attention_mask(h, w, ws, shift, x.dtype())?)
        } else {
            None
        };
        let out = self.forward_windows(&windows, &bias, mask.as_ref())?;
        let grid = window_reverse(&out, ws, b, h, w)?;
        let grid = if shift > 0 {
            let rolled = roll(&grid, shift as isize, 1)?;
            roll(&rolled, shift as isize, 2)?
        } else {
            grid
        };
        Ok(grid.reshape((b, n, c))?)
    }
}

/// Effective (window, shift) for a token grid: the window shrinks to the
/// grid side when larger, in which case the shift is dropped.
fn effective_window(window: usize, shifted: bool, h: usize, w: usize) -> Result<(usize, usize)> {
    let side = h.min(w);
    let ws = window.min(side);
    if h % ws != 0 || w % ws != 0 {
        return Err(Error::WindowGridMismatch { window: ws, h, w });
    }
    let shift = if shifted && ws < side { ws / 2 } else { 0 };
    Ok((ws, shift))
}

struct Mlp {
    fc1: candle_nn::Linear,
    fc2: candle_nn::Linear,
}

impl Mlp {
    fn init(store: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        let tn = Init::TruncNormal { std: 0.02 };
        Ok(Mlp {
            fc1: linear(store, &format!("{name}.fc1"), dim, hidden, tn, true)?,
            fc2: linear(store, &format!("{name}.fc2"), hidden, dim, tn, true)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.fc2.forward(&self.fc1.forward(x)?.gelu_erf()?)?)
    }
}

struct SwinBlock {
    norm1: crate::nn::LayerNorm,
    attn: WindowAttention,
    norm2: crate::nn::LayerNorm,
    mlp: Mlp,
    window: usize,
    shifted: bool,
}

impl SwinBlock {
    fn init(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        shifted: bool,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        Ok(SwinBlock {
            norm1: layer_norm(store, &format!("{name}.norm1"), dim)?,
            attn: WindowAttention::init(store, &format!("{name}.attn"), dim, heads, cfg.cpb_hidden)?,
            norm2: layer_norm(store, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::init(
                store,
                &format!("{name}.mlp"),
                dim,
                (dim as f64 * cfg.mlp_ratio) as usize,
            )?,
            window,
            shifted,
        })
    }

    fn forward(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let (ws, shift) = effective_window(self.window, self.shifted, h, w)?;
        let attn_out = self
            .attn
            .forward_grid(&self.norm1.forward(x)?, h, w, ws, shift)?;
        let x = (x + attn_out)?;
        let mlp_out = self.mlp.forward(&self.norm2.forward(&x)?)?;
        Ok((x + mlp_out)?)
    }
}

struct PatchMerging {
    reduction: candle_nn::Linear,
    norm: crate::nn::LayerNorm,
}

impl PatchMerging {
    fn init(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(PatchMerging {
            reduction: linear(
                store,
                &format!("{name}.reduction"),
                4 * dim,
                2 * dim,
                Init::TruncNormal { std: 0.02 },
                false,
            )?,
            norm: layer_norm(store, &format!("{name}.norm"), 2 * dim)?,
        })
    }

    /// (B, h*w, C) -> (B, h/2 * w/2, 2C)
    fn forward(&self, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let (b, _, c) = x.dims3()?;
        let x = x.reshape((b, h / 2, 2, w / 2, 2, c))?;
        let x = x.permute((0, 1, 3, 2, 4, 5))?.contiguous()?;
        let x = x.reshape((b, (h / 2) * (w / 2), 4 * c))?;
        Ok(self.norm.forward(&self.reduction.forward(&x)?)?)
    }
}

struct PatchEmbed {
    proj: candle_nn::Conv2d,
    norm: crate::nn::LayerNorm,
}

impl PatchEmbed {
    fn init(store: &mut ParamStore, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        Ok(PatchEmbed {
            proj: crate::nn::conv2d(
                store,
                &format!("{name}.proj"),
                cfg.in_channels,
                cfg.base_dim,
                PATCH_STRIDE,
                0,
                PATCH_STRIDE,
            )?,
            norm: layer_norm(store, &format!("{name}.norm"), cfg.base_dim)?,
        })
    }

    /// (B, in, H, W) -> ((B, N, C), h, w)
    fn forward(&self, x: &Tensor) -> Result<(Tensor, usize, usize)> {
        let emb = self.proj.forward(x)?;
        let (b, c, h, w) = emb.dims4()?;
        let tokens = emb.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?;
        Ok((self.norm.forward(&tokens)?, h, w))
    }
}

struct Stage {
    blocks: Vec<SwinBlock>,
    downsample: Option<PatchMerging>,
    out_norm: crate::nn::LayerNorm,
}

pub struct Encoder {
    pub config: EncoderConfig,
    patch_embed: PatchEmbed,
    stages: Vec<Stage>,
    prefix: String,
}

impl Encoder {
    pub fn init(store: &mut ParamStore, prefix: &str, config: EncoderConfig) -> Result<Self> {
        let patch_embed = PatchEmbed::init(store, &format!("{prefix}.patch_embed"), &config)?;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let dim = config.stage_dim(s);
            let blocks = (0..config.depths[s])
                .map(|b| {
                    SwinBlock::init(
                        store,
                        &format!("{prefix}.stages.{s}.blocks.{b}"),
                        dim,
                        config.heads[s],
                        config.window,
                        b % 2 == 1,
                        &config,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let downsample = if s < 3 {
                Some(PatchMerging::init(
                    store,
                    &format!("{prefix}.stages.{s}.downsample"),
                    dim,
                )?)
            } else {
                None
            };
            let out_norm = layer_norm(store, &format!("{prefix}.out_norms.{s}"), dim)?;
            stages.push(Stage {
                blocks,
                downsample,
                out_norm,
            });
        }
        Ok(Encoder {
            config,
            patch_embed,
            stages,
            prefix: prefix.to_string(),
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Forward pass producing all four stage outputs.
    pub fn encode(&self, x: &Tensor) -> Result<FeaturePyramid> {
        let (b, c_in, h, w) = x.dims4()?;
        if c_in != self.config.in_channels {
            return Err(Error::ConfigMismatch(format!(
                "encoder expects {} input channels, got {c_in}",
                self.config.in_channels
            )));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::ShapeNotDivisible { h, w, divisor: 32 });
        }
        if b == 0 {
            // Empty batches short-circuit with correctly-shaped outputs.
            let levels = (0..4)
                .map(|s| {
                    let stride = FeaturePyramid::STRIDES[s];
                    Ok(Tensor::zeros(
                        (0, self.config.stage_dim(s), h / stride, w / stride),
                        x.dtype(),
                        x.device(),
                    )?)
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(FeaturePyramid { levels });
        }
        let (mut tokens, mut gh, mut gw) = self.patch_embed.forward(x)?;
        let mut levels = Vec::with_capacity(4);
        for (s, stage) in self.stages.iter().enumerate() {
            for block in &stage.blocks {
                tokens = block.forward(&tokens, gh, gw)?;
            }
            let dim = self.config.stage_dim(s);
            let out = stage.out_norm.forward(&tokens)?;
            let level = out
                .reshape((b, gh, gw, dim))?
                .permute((0, 3, 1, 2))?
                .contiguous()?;
            levels.push(level);
            if let Some(merge) = &stage.downsample {
                tokens = merge.forward(&tokens, gh, gw)?;
                gh /= 2;
                gw /= 2;
            }
        }
        Ok(FeaturePyramid { levels })
    }
}

/// Expand a 3-input-channel patch-embed kernel to 4 channels: the first
/// three filter slices copy verbatim and the 4th is their per-position mean.
pub fn warm_init_aux_patch_embed(rgb_kernel: &Tensor) -> Result<Tensor> {
    let dims = rgb_kernel.dims();
    if dims.len() != 4 || dims[1] != 3 {
        return Err(Error::ShapeConflict {
            name: "patch_embed.proj.weight".into(),
            expected: vec![dims[0], 3, dims[2], dims[3]],
            found: dims.to_vec(),
        });
    }
    // Literal (1/3) * (W0 + W1 + W2): pairwise sum then one multiply, so
    // the test oracle can reproduce the arithmetic bit-exactly.
    let w0 = rgb_kernel.narrow(1, 0, 1)?;
    let w1 = rgb_kernel.narrow(1, 1, 1)?;
    let w2 = rgb_kernel.narrow(1, 2, 1)?;
    let mean = (((w0 + w1)? + w2)? * (1.0 / 3.0))?;
    Ok(Tensor::cat(&[rgb_kernel, &mean], 1)?)
}

/// Two independent encoders with no parameter sharing.
pub struct DualEncoder {
    pub rgb: Encoder,
    pub aux: Encoder,
}

impl DualEncoder {
    pub fn init(store: &mut ParamStore, config: &EncoderConfig) -> Result<Self> {
        let mut rgb_cfg = config.clone();
        rgb_cfg.in_channels = 3;
        let mut aux_cfg = config.clone();
        aux_cfg.in_channels = 4;
        Ok(DualEncoder {
            rgb: Encoder::init(store, "encoder_rgb", rgb_cfg)?,
            aux: Encoder::init(store, "encoder_aux", aux_cfg)?,
        })
    }

    /// Copy the RGB patch embedding onto the aux stream, warm-initializing
    /// the 4th input slice with the channel mean; the bias copies verbatim.
    pub fn warm_init_aux_from_rgb(&self, store: &ParamStore) -> Result<()> {
        let rgb_w = store
            .get("encoder_rgb.patch_embed.proj.weight")
            .expect("rgb patch embed registered")
            .as_tensor()
            .copy()?;
        let rgb_b = store
            .get("encoder_rgb.patch_embed.proj.bias")
            .expect("rgb patch embed bias registered")
            .as_tensor()
            .copy()?;
        store.set(
            "encoder_aux.patch_embed.proj.weight",
            &warm_init_aux_patch_embed(&rgb_w)?,
        )?;
        store.set("encoder_aux.patch_embed.proj.bias", &rgb_b)?;
        Ok(())
    }

    /// Encode both modalities; the two pyramids must agree on shape per
    /// scale, which holds whenever the two configs share base_dim/depths.
    pub fn dual_encode(&self, rgb: &Tensor, aux: &Tensor) -> Result<(FeaturePyramid, FeaturePyramid)> {
        if self.rgb.config.base_dim != self.aux.config.base_dim
            || self.rgb.config.depths != self.aux.config.depths
        {
            return Err(Error::ConfigMismatch(
                "dual encoder streams disagree on pyramid geometry".into(),
            ));
        }
        let p_rgb = self.rgb.encode(rgb)?;
        let p_aux = self.aux.encode(aux)?;
        for (a, b) in p_rgb.levels.iter().zip(p_aux.levels.iter()) {
            let (da, db) = (a.dims(), b.dims());
            if da[0] != db[0] || da[2] != db[2] || da[3] != db[3] {
                return Err(Error::ConfigMismatch(format!(
                    "pyramid shapes diverge: {da:?} vs {db:?}"
                )));
            }
        }
        Ok((p_rgb, p_aux))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn dev() -> Device {
        Device::Cpu
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "encoder-test", 0);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &dev()).unwrap()
    }

    /// Finite-difference checks need the loss differentiable at the
    /// evaluation point. The (0,0) relative coordinate feeds exactly zero
    /// into the bias MLP's ReLU when its bias is zero, which parks the
    /// evaluation on the kink; biasing the hidden units away from zero and
    /// un-zeroing the output layer removes the artifact while keeping the
    /// bias path under test.
    fn nudge_cpb_for_differentiability(store: &mut ParamStore) {
        for name in store.param_names() {
            let shape = store.get(&name).unwrap().dims().to_vec();
            if name.contains("cpb.fc2") {
                store
                    .set(&name, &randn(&shape, 1000).affine(0.1, 0.0).unwrap())
                    .unwrap();
            } else if name.contains("cpb.fc1.bias") {
                store
                    .set(&name, &randn(&shape, 1001).affine(0.05, 0.2).unwrap())
                    .unwrap();
            }
        }
    }

    #[test]
    fn log_cpb_input_normalization() {
        assert_eq!(log_cpb_input((0, 0), 7), (0.0, 0.0));
        let (a, b) = log_cpb_input((-3, 3), 7);
        let (c, d) = log_cpb_input((3, -3), 7);
        assert_eq!(a, -c);
        assert_eq!(b, -d);
        let (x, y) = log_cpb_input((7, 0), 7);
        assert!((x - 1.0).abs() < 1e-15);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn relative_index_spans_table() {
        let idx = relative_position_index(3);
        assert_eq!(idx.len(), 81);
        assert!(idx.iter().all(|&i| i < 25));
        // Center pair (i == j) maps to the center of the table.
        assert_eq!(idx[0], 12);
    }

    #[test]
    fn window_partition_reverse_round_trip() {
        let x = randn(&[2, 8, 8, 5], 1);
        let w = window_partition(&x, 4).unwrap();
        assert_eq!(w.dims(), &[2 * 4, 16, 5]);
        let back = window_reverse(&w, 4, 2, 8, 8).unwrap();
        let a: Vec<f64> = x.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = back.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_init_bias_mlp_gives_zero_bias() {
        let mut store = ParamStore::new(DType::F64, 3);
        let attn = WindowAttention::init(&mut store, "attn", 8, 2, 16).unwrap();
        let bias = attn.position_bias(4, DType::F64).unwrap();
        let v: Vec<f64> = bias.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn uniform_attention_averages_tokens() {
        // Single window over a 2x2 grid; zero q/k projections make the
        // attention uniform, identity v and proj pass values through, so
        // every output token is the token mean.
        let dim = 4;
        let heads = 2;
        let mut store = ParamStore::new(DType::F64, 5);
        let attn = WindowAttention::init(&mut store, "attn", dim, heads, 8).unwrap();
        let mut qkv_w = vec![0.0f64; 3 * dim * dim];
        for i in 0..dim {
            // v block starts at row 2*dim; identity.
            qkv_w[(2 * dim + i) * dim + i] = 1.0;
        }
        store
            .set(
                "attn.qkv.weight",
                &Tensor::from_vec(qkv_w, (3 * dim, dim), &dev()).unwrap(),
            )
            .unwrap();
        let mut proj_w = vec![0.0f64; dim * dim];
        for i in 0..dim {
            proj_w[i * dim + i] = 1.0;
        }
        store
            .set(
                "attn.proj.weight",
                &Tensor::from_vec(proj_w, (dim, dim), &dev()).unwrap(),
            )
            .unwrap();
        let x = randn(&[1, 4, dim], 6);
        let out = attn.forward_grid(&x, 2, 2, 2, 0).unwrap();
        let mean = x.mean_keepdim(1).unwrap();
        let out_v: Vec<f64> = out.flatten_all().unwrap().to_vec1().unwrap();
        let mean_v: Vec<f64> = mean
            .broadcast_as((1, 4, dim))
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        for (a, b) in out_v.iter().zip(mean_v.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn shifted_attention_changes_output_and_masks_seams() {
        let dim = 8;
        let mut store = ParamStore::new(DType::F64, 7);
        let attn = WindowAttention::init(&mut store, "attn", dim, 2, 16).unwrap();
        // Break the zero-init bias so shifted/unshifted differ.
        store
            .set("attn.cpb.fc2.weight", &randn(&[2, 16], 8))
            .unwrap();
        let x = randn(&[1, 16, dim], 9);
        let plain = attn.forward_grid(&x, 4, 4, 2, 0).unwrap();
        let shifted = attn.forward_grid(&x, 4, 4, 2, 1).unwrap();
        let a: Vec<f64> = plain.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = shifted.flatten_all().unwrap().to_vec1().unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
        assert!(b.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mask_blocks_cross_region_pairs() {
        let mask = shift_attention_mask(4, 4, 2, 1, DType::F64).unwrap();
        assert_eq!(mask.dims(), &[4, 4, 4]);
        let v: Vec<f64> = mask.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|&x| x == 0.0 || x == ATTENTION_MASK_VALUE));
        // The first window after rolling contains no seams.
        let first: Vec<f64> = mask
            .narrow(0, 0, 1)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert!(first.iter().all(|&x| x == 0.0));
        // The last window mixes all four quadrants: diagonal stays open.
        let last = mask.narrow(0, 3, 1).unwrap();
        let lv: Vec<f64> = last.flatten_all().unwrap().to_vec1().unwrap();
        for i in 0..4 {
            assert_eq!(lv[i * 4 + i], 0.0);
        }
        assert!(lv.iter().any(|&x| x == ATTENTION_MASK_VALUE));
    }

    #[test]
    fn pyramid_shape_contract_desk() {
        let mut store = ParamStore::new(DType::F32, 11);
        let cfg = EncoderConfig::desk(3);
        let enc = Encoder::init(&mut store, "enc", cfg.clone()).unwrap();
        for size in [32usize, 64, 128] {
            let x = Tensor::zeros((2, 3, size, size), DType::F32, &dev()).unwrap();
            let pyr = enc.encode(&x).unwrap();
            for (l, level) in pyr.levels.iter().enumerate() {
                let stride = FeaturePyramid::STRIDES[l];
                assert_eq!(
                    level.dims(),
                    &[2, cfg.base_dim << l, size / stride, size / stride],
                    "size {size} level {l}"
                );
            }
        }
    }

    #[test]
    fn empty_batch_propagates_shapes() {
        let mut store = ParamStore::new(DType::F32, 12);
        let enc = Encoder::init(&mut store, "enc", EncoderConfig::desk(3)).unwrap();
        let x = Tensor::zeros((0, 3, 64, 64), DType::F32, &dev()).unwrap();
        let pyr = enc.encode(&x).unwrap();
        assert_eq!(pyr.levels[0].dims(), &[0, 32, 16, 16]);
        assert_eq!(pyr.levels[3].dims(), &[0, 256, 2, 2]);
    }

    #[test]
    fn indivisible_input_rejected() {
        let mut store = ParamStore::new(DType::F32, 13);
        let enc = Encoder::init(&mut store, "enc", EncoderConfig::desk(3)).unwrap();
        let x = Tensor::zeros((1, 3, 48, 48), DType::F32, &dev()).unwrap();
        assert!(matches!(
            enc.encode(&x),
            Err(Error::ShapeNotDivisible { .. })
        ));
    }

    #[test]
    fn window_grid_mismatch_detected() {
        // 96/16 = 6-token grid with window 4: 4 < 6 and 6 % 4 != 0.
        let mut store = ParamStore::new(DType::F32, 14);
        let enc = Encoder::init(&mut store, "enc", EncoderConfig::desk(3)).unwrap();
        let x = Tensor::zeros((1, 3, 96, 96), DType::F32, &dev()).unwrap();
        assert!(matches!(
            enc.encode(&x),
            Err(Error::WindowGridMismatch { .. })
        ));
    }

    #[test]
    fn warm_init_is_exact_channel_mean() {
        let w = randn(&[8, 3, 4, 4], 15);
        let out = warm_init_aux_patch_embed(&w).unwrap();
        assert_eq!(out.dims(), &[8, 4, 4, 4]);
        // Channels 0..3 copied verbatim.
        let orig: Vec<f64> = w.flatten_all().unwrap().to_vec1().unwrap();
        let copied: Vec<f64> = out
            .narrow(1, 0, 3)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(orig, copied);
        // 4th slice is the exact mean.
        let mean: Vec<f64> = out
            .narrow(1, 3, 1)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        for (pos, m) in mean.iter().enumerate() {
            let (o, k) = (pos / 16, pos % 16);
            let expect = ((orig[o * 48 + k] + orig[o * 48 + 16 + k]) + orig[o * 48 + 32 + k])
                * (1.0 / 3.0);
            assert_eq!(*m, expect, "exact equality required");
        }

        // All-ones kernel -> all-ones 4th slice; (1, -1, 0) -> 0.
        let ones = Tensor::ones((2, 3, 4, 4), DType::F64, &dev()).unwrap();
        let out = warm_init_aux_patch_embed(&ones).unwrap();
        let v: Vec<f64> = out.narrow(1, 3, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn dual_encoder_streams_are_independent() {
        let mut store = ParamStore::new(DType::F32, 16);
        let dual = DualEncoder::init(&mut store, &EncoderConfig::micro(0)).unwrap();
        let rgb = randn(&[1, 3, 32, 32], 17).to_dtype(DType::F32).unwrap();
        let aux = randn(&[1, 4, 32, 32], 18).to_dtype(DType::F32).unwrap();
        let (p1, _) = dual.dual_encode(&rgb, &aux).unwrap();
        // Perturb an aux-encoder weight; the rgb pyramid must not move.
        let w = store.get("encoder_aux.stages.0.blocks.0.attn.qkv.weight").unwrap();
        let bumped = (w.as_tensor() + 1.0).unwrap();
        store.set("encoder_aux.stages.0.blocks.0.attn.qkv.weight", &bumped).unwrap();
        let (p2, _) = dual.dual_encode(&rgb, &aux).unwrap();
        for (a, b) in p1.levels.iter().zip(p2.levels.iter()) {
            let av: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
            let bv: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(av, bv);
        }
        // Same input through independently initialized encoders differs.
        let rgb4 = Tensor::cat(&[&rgb, &rgb.narrow(1, 0, 1).unwrap()], 1).unwrap();
        let pa = dual.rgb.encode(&rgb).unwrap();
        let pb = dual.aux.encode(&rgb4).unwrap();
        let av: Vec<f32> = pa.levels[0].flatten_all().unwrap().to_vec1().unwrap();
        let bv: Vec<f32> = pb.levels[0].flatten_all().unwrap().to_vec1().unwrap();
        assert_ne!(av, bv);
    }

    #[test]
    fn two_block_encoder_gradients_match_finite_differences() {
        // Exactly a 2-block windowed-attention encoder (patch embed + one
        // regular + one shifted block), C=8, window 2, on a 16x16 input in
        // double precision.
        let mut store = ParamStore::new(DType::F64, 40);
        let cfg = EncoderConfig {
            in_channels: 3,
            base_dim: 8,
            depths: [2, 1, 1, 1],
            heads: [2, 2, 2, 2],
            window: 2,
            mlp_ratio: 2.0,
            cpb_hidden: 8,
        };
        let embed = PatchEmbed::init(&mut store, "pe", &cfg).unwrap();
        let b0 = SwinBlock::init(&mut store, "b0", 8, 2, 2, false, &cfg).unwrap();
        let b1 = SwinBlock::init(&mut store, "b1", 8, 2, 2, true, &cfg).unwrap();
        nudge_cpb_for_differentiability(&mut store);
        // Near-zero projections leave the cosine normalization with huge
        // curvature (1/|q|^3), which drowns central differences in
        // truncation noise; O(1) weights keep the check about correctness.
        for (i, name) in store.param_names().into_iter().enumerate() {
            if name.ends_with("qkv.weight") || name.ends_with("proj.weight") {
                let shape = store.get(&name).unwrap().dims().to_vec();
                store
                    .set(&name, &randn(&shape, 900 + i as u64).affine(0.3, 0.0).unwrap())
                    .unwrap();
            }
        }
        let x = randn(&[1, 3, 16, 16], 41);
        let probe = randn(&[1, 16, 8], 42);
        let loss_of = |store: &ParamStore, x: &Tensor| -> f64 {
            let _ = store;
            let (tokens, h, w) = embed.forward(x).unwrap();
            let tokens = b0.forward(&tokens, h, w).unwrap();
            let tokens = b1.forward(&tokens, h, w).unwrap();
            tokens
                .sin()
                .unwrap()
                .mul(&probe)
                .unwrap()
                .sum_all()
                .unwrap()
                .to_vec0::<f64>()
                .unwrap()
        };
        let (tokens, h, w) = embed.forward(&x).unwrap();
        let tokens = b0.forward(&tokens, h, w).unwrap();
        let tokens = b1.forward(&tokens, h, w).unwrap();
        let scalar = tokens.sin().unwrap().mul(&probe).unwrap().sum_all().unwrap();
        let grads = scalar.backward().unwrap();

        let h_step = 1e-5;
        let mut rng = crate::rng::stream(43, "encoder-fd2", 0);
        use rand::Rng;
        let mut checked = 0usize;
        for name in store.param_names() {
            let var = store.get(&name).unwrap().clone();
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let analytic: Vec<f64> = g.flatten_all().unwrap().to_vec1().unwrap();
            let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            let shape = var.dims().to_vec();
            let i = rng.random_range(0..base.len());
            let mut plus = base.clone();
            plus[i] += h_step;
            store
                .set(&name, &Tensor::from_vec(plus, shape.as_slice(), &dev()).unwrap())
                .unwrap();
            let fp = loss_of(&store, &x);
            let mut minus = base.clone();
            minus[i] -= h_step;
            store
                .set(&name, &Tensor::from_vec(minus, shape.as_slice(), &dev()).unwrap())
                .unwrap();
            let fm = loss_of(&store, &x);
            store
                .set(&name, &Tensor::from_vec(base, shape.as_slice(), &dev()).unwrap())
                .unwrap();
            let numeric = (fp - fm) / (2.0 * h_step);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic[i] - numeric).abs() / denom;
            assert!(
                rel < 1e-5,
                "{name}[{i}]: analytic {} vs numeric {} (rel {rel})",
                analytic[i],
                numeric
            );
            checked += 1;
        }
        assert!(checked >= 15, "checked {checked} parameters");
    }

    #[test]
    fn four_stage_encoder_gradients_match_finite_differences() {
        let mut store = ParamStore::new(DType::F64, 19);
        let cfg = EncoderConfig {
            in_channels: 3,
            base_dim: 8,
            depths: [2, 1, 1, 1],
            heads: [2, 2, 2, 2],
            window: 2,
            mlp_ratio: 2.0,
            cpb_hidden: 8,
        };
        let enc = Encoder::init(&mut store, "enc", cfg).unwrap();
        nudge_cpb_for_differentiability(&mut store);
        let x = randn(&[1, 3, 32, 32], 20);

        // Scalar probe: fixed random projection of all pyramid levels.
        let probes: Vec<Tensor> = (0..4).map(|i| randn(&[1], 21 + i as u64)).collect();
        let loss_of = |enc: &Encoder, x: &Tensor| -> f64 {
            let pyr = enc.encode(x).unwrap();
            let mut total = Tensor::zeros((), DType::F64, &dev()).unwrap();
            for (lvl, probe) in pyr.levels.iter().zip(probes.iter()) {
                let weighted = lvl.sin().unwrap().sum_all().unwrap();
                total = (total + (weighted * probe.clone().reshape(()).unwrap()).unwrap()).unwrap();
            }
            total.to_vec0::<f64>().unwrap()
        };

        // Analytic gradients of the same scalar.
        let pyr = enc.encode(&x).unwrap();
        let mut total = Tensor::zeros((), DType::F64, &dev()).unwrap();
        for (lvl, probe) in pyr.levels.iter().zip(probes.iter()) {
            let weighted = lvl.sin().unwrap().sum_all().unwrap();
            total = (total + (weighted * probe.clone().reshape(()).unwrap()).unwrap()).unwrap();
        }
        let grads = total.backward().unwrap();

        // Sample parameters across component kinds.
        let sample: Vec<String> = store
            .param_names()
            .into_iter()
            .filter(|n| {
                n.ends_with("blocks.0.attn.qkv.weight")
                    || n.ends_with("blocks.1.attn.proj.weight")
                    || n.ends_with("blocks.0.attn.logit_scale")
                    || n.ends_with("blocks.0.norm1.weight")
                    || n.ends_with("blocks.0.mlp.fc1.weight")
                    || n.ends_with("stages.0.downsample.reduction.weight")
                    || n.ends_with("patch_embed.proj.weight")
                    || n.ends_with("blocks.0.attn.cpb.fc1.weight")
            })
            .collect();
        assert!(sample.len() >= 8, "sampled {:?}", sample);

        let h = 1e-5;
        let mut rng = crate::rng::stream(22, "encoder-fd", 0);
        use rand::Rng;
        let mut checked = 0;
        for name in sample {
            let var = store.get(&name).unwrap().clone();
            let analytic = grads.get(var.as_tensor());
            let analytic: Vec<f64> = match analytic {
                Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
                None => continue,
            };
            let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            let shape = var.dims().to_vec();
            // Probe up to 3 random coordinates per tensor.
            for _ in 0..3 {
                let i = rng.random_range(0..base.len());
                let mut plus = base.clone();
                plus[i] += h;
                store.set(&name, &Tensor::from_vec(plus, shape.as_slice(), &dev()).unwrap()).unwrap();
                let fp = loss_of(&enc, &x);
                let mut minus = base.clone();
                minus[i] -= h;
                store.set(&name, &Tensor::from_vec(minus, shape.as_slice(), &dev()).unwrap()).unwrap();
                let fm = loss_of(&enc, &x);
                store.set(&name, &Tensor::from_vec(base.clone(), shape.as_slice(), &dev()).unwrap()).unwrap();
                let numeric = (fp - fm) / (2.0 * h);
                let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic[i] - numeric).abs() / denom;
                assert!(
                    rel < 1e-5,
                    "{name}[{i}]: analytic {} vs numeric {} (rel {rel})",
                    analytic[i],
                    numeric
                );
                checked += 1;
            }
        }
        assert!(checked >= 20, "checked {checked} coordinates");
    }
}
