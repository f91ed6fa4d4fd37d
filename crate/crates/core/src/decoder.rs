//! Decoders: the dense nested-skip graph (default), the multi-level MLP
//! head, their SE-gated hybrid combination, and the classification head.
//!
//! Nested-skip recurrence: node (i,j) for j >= 1 consumes every earlier
//! same-scale node x^{i,0..j-1} plus the 2x-upsampled coarser node
//! x^{i+1,j-1}, so its block sees (j+1) * C_dec input channels. Each block
//! is two Conv(3x3)-BatchNorm-ReLU layers at C_dec output channels. Up is
//! bilinear with half-pixel centers. With deep supervision disabled only
//! x^{0,3} is exposed.

use candle_core::{Module, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bilinear_resize, dropout, sigmoid, BatchNorm2d, ParamStore};

pub const HEAD_DROPOUT_P: f64 = 0.1;
pub const DEFAULT_SE_REDUCTION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Unetpp,
    Hybrid,
}

/// Two Conv(3x3)-BN-ReLU layers.
struct ConvBlock {
    conv1: candle_nn::Conv2d,
    bn1: BatchNorm2d,
    conv2: candle_nn::Conv2d,
    bn2: BatchNorm2d,
}

impl ConvBlock {
    fn init(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(ConvBlock {
            conv1: crate::nn::conv2d(store, &format!("{name}.conv1"), in_ch, out_ch, 3, 1, 1)?,
            bn1: BatchNorm2d::init(store, &format!("{name}.bn1"), out_ch)?,
            conv2: crate::nn::conv2d(store, &format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1)?,
            bn2: BatchNorm2d::init(store, &format!("{name}.bn2"), out_ch)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        Ok(self.bn2.forward(&self.conv2.forward(&x)?, train)?.relu()?)
    }
}

/// One dense node's position and wiring, exposed for graph audits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInfo {
    pub i: usize,
    pub j: usize,
    /// Input nodes in concatenation order: (i,0)..(i,j-1) then (i+1,j-1).
    pub inputs: Vec<(usize, usize)>,
    pub in_channels: usize,
}

impl NodeInfo {
    pub fn arity(&self) -> usize {
        self.inputs.len()
    }
}

fn dense_nodes(levels: usize, c_dec: usize) -> Vec<NodeInfo> {
    let mut nodes = Vec::new();
    for j in 1..levels {
        for i in 0..levels - j {
            let mut inputs: Vec<(usize, usize)> = (0..j).map(|k| (i, k)).collect();
            inputs.push((i + 1, j - 1));
            nodes.push(NodeInfo {
                i,
                j,
                in_channels: (j + 1) * c_dec,
                inputs,
            });
        }
    }
    nodes
}

/// The nested-skip decoder over a 4-level projected pyramid.
pub struct UnetPP {
    blocks: Vec<(NodeInfo, ConvBlock)>,
    pub deep_supervision: bool,
    levels: usize,
}

impl UnetPP {
    pub fn init(
        store: &mut ParamStore,
        c_dec: usize,
        deep_supervision: bool,
    ) -> Result<Self> {
        let levels = 4;
        let blocks = dense_nodes(levels, c_dec)
            .into_iter()
            .map(|info| {
                let block = ConvBlock::init(
                    store,
                    &format!("decoder.nodes.{}_{}", info.i, info.j),
                    info.in_channels,
                    c_dec,
                )?;
                Ok((info, block))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(UnetPP {
            blocks,
            deep_supervision,
            levels,
        })
    }

    /// Graph description in topological (j-ascending) order.
    pub fn nodes(&self) -> Vec<NodeInfo> {
        self.blocks.iter().map(|(info, _)| info.clone()).collect()
    }

    /// Compute x^{0,3}; with deep supervision also x^{0,1}, x^{0,2}.
    pub fn forward(&self, pyramid: &[Tensor], train: bool) -> Result<(Tensor, Vec<Tensor>)> {
        if pyramid.len() != self.levels {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} levels, got {}",
                self.levels,
                pyramid.len()
            )));
        }
        let mut computed: std::collections::BTreeMap<(usize, usize), Tensor> =
            std::collections::BTreeMap::new();
        for (i, level) in pyramid.iter().enumerate() {
            computed.insert((i, 0), level.clone());
        }
        for (info, block) in &self.blocks {
            let (_, _, h, w) = computed[&(info.i, 0)].dims4()?;
            let coarser = &computed[&(info.i + 1, info.j - 1)];
            let up = bilinear_resize(coarser, h, w)?;
            let mut cat_inputs: Vec<Tensor> = (0..info.j)
                .map(|k| computed[&(info.i, k)].clone())
                .collect();
            cat_inputs.push(up);
            let refs: Vec<&Tensor> = cat_inputs.iter().collect();
            let stacked = Tensor::cat(&refs, 1)?;
            let out = block.forward(&stacked, train)?;
            computed.insert((info.i, info.j), out);
        }
        let main = computed[&(0, self.levels - 1)].clone();
        let aux = if self.deep_supervision {
            (1..self.levels - 1)
                .map(|j| computed[&(0, j)].clone())
                .collect()
        } else {
            Vec::new()
        };
        Ok((main, aux))
    }
}

/// Multi-level MLP head: an independent 1x1 conv per level, bilinear
/// upsampling to the finest (stride-4) grid, and a single 1x1 fusion conv
/// over the concatenation.
pub struct MlpHead {
    level_projs: Vec<candle_nn::Conv2d>,
    fuse: candle_nn::Conv2d,
}

impl MlpHead {
    pub fn init(store: &mut ParamStore, c_dec: usize) -> Result<Self> {
        let level_projs = (0..4)
            .map(|l| crate::nn::conv2d(store, &format!("mlp_head.levels.{l}"), c_dec, c_dec, 1, 0, 1))
            .collect::<Result<Vec<_>>>()?;
        let fuse = crate::nn::conv2d(store, "mlp_head.fuse", 4 * c_dec, c_dec, 1, 0, 1)?;
        Ok(MlpHead { level_projs, fuse })
    }

    pub fn forward(&self, pyramid: &[Tensor]) -> Result<Tensor> {
        let (_, _, h, w) = pyramid[0].dims4()?;
        let upsampled = pyramid
            .iter()
            .zip(self.level_projs.iter())
            .map(|(x, conv)| bilinear_resize(&conv.forward(x)?, h, w))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = upsampled.iter().collect();
        Ok(self.fuse.forward(&Tensor::cat(&refs, 1)?)?)
    }
}

/// Squeeze-excitation gate: global average pool, C -> C/r -> C bottleneck,
/// logistic output in (0,1)^C.
pub struct SeGate {
    fc1: candle_nn::Linear,
    fc2: candle_nn::Linear,
}

impl SeGate {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::BadReduction {
                channels,
                reduction,
            });
        }
        let hidden = channels / reduction;
        Ok(SeGate {
            fc1: crate::nn::linear(
                store,
                &format!("{name}.fc1"),
                channels,
                hidden,
                crate::nn::Init::FanInUniform { fan_in: channels },
                true,
            )?,
            fc2: crate::nn::linear(
                store,
                &format!("{name}.fc2"),
                hidden,
                channels,
                crate::nn::Init::FanInUniform { fan_in: hidden },
                true,
            )?,
        })
    }

    /// (B, C, H, W) -> per-channel scale (B, C).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = x.mean(3)?.mean(2)?; // (B, C)
        let hidden = self.fc1.forward(&pooled)?.relu()?;
        sigmoid(&self.fc2.forward(&hidden)?)
    }
}

/// Learned combination of the two decoder outputs:
/// z = ReLU(BN(Conv1x1([u || s]))), out = z * se(z).
pub struct HybridFuse {
    conv: candle_nn::Conv2d,
    bn: BatchNorm2d,
    se: SeGate,
}

impl HybridFuse {
    pub fn init(store: &mut ParamStore, c_dec: usize, se_reduction: usize) -> Result<Self> {
        Ok(HybridFuse {
            conv: crate::nn::conv2d(store, "hybrid.conv", 2 * c_dec, c_dec, 1, 0, 1)?,
            bn: BatchNorm2d::init(store, "hybrid.bn", c_dec)?,
            se: SeGate::init(store, "hybrid.se", c_dec, se_reduction)?,
        })
    }

    pub fn forward(&self, u: &Tensor, s: &Tensor, train: bool) -> Result<Tensor> {
        if u.dims() != s.dims() {
            return Err(Error::ShapeMismatch(format!(
                "hybrid branches {:?} vs {:?}",
                u.dims(),
                s.dims()
            )));
        }
        let z = self
            .bn
            .forward(&self.conv.forward(&Tensor::cat(&[u, s], 1)?)?, train)?
            .relu()?;
        let gate = self.se.forward(&z)?; // (B, C)
        let (b, c, _, _) = z.dims4()?;
        Ok(z.broadcast_mul(&gate.reshape((b, c, 1, 1))?)?)
    }
}

/// Conv(3x3)-BN-ReLU refinement, dropout (train only), a 1x1 conv to one
/// logit channel, and bilinear upsampling to the output resolution.
pub struct ClassificationHead {
    refine: candle_nn::Conv2d,
    bn: BatchNorm2d,
    final_conv: candle_nn::Conv2d,
    dropout_p: f64,
}

impl ClassificationHead {
    pub fn init(store: &mut ParamStore, c_dec: usize, dropout_p: f64) -> Result<Self> {
        Ok(ClassificationHead {
            refine: crate::nn::conv2d(store, "head.refine", c_dec, c_dec, 3, 1, 1)?,
            bn: BatchNorm2d::init(store, "head.bn", c_dec)?,
            final_conv: crate::nn::conv2d(store, "head.final", c_dec, 1, 1, 0, 1)?,
            dropout_p,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        out_size: usize,
        train: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let x = self.bn.forward(&self.refine.forward(x)?, train)?.relu()?;
        let x = match (train, rng) {
            (true, Some(rng)) => dropout(&x, self.dropout_p, rng)?,
            _ => x,
        };
        let logits = self.final_conv.forward(&x)?;
        bilinear_resize(&logits, out_size, out_size)
    }
}
