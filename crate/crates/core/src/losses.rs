//! Training objectives: class-weighted BCE, soft Dice, their equal-weight
//! composite, and the ablation alternatives (focal, soft-IoU, Tversky and
//! combinations).
//!
//! Reduction conventions, frozen because they change values: BCE-family
//! losses average over all pixels of the batch; Dice/IoU/Tversky reduce
//! with one global sum over the whole batch. The Dice numerator carries no
//! epsilon, so the empty-prediction/empty-target case evaluates to exactly 1.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus};

pub const DICE_EPS: f64 = 1e-7;
pub const IOU_EPS: f64 = 1e-7;
pub const TVERSKY_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    BceWeighted,
    Dice,
    /// 1/2 BCE(w+) + 1/2 Dice, the default objective.
    Composite,
    Focal,
    FocalDice,
    SoftIou,
    BceSoftIou,
    Tversky,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Positive-class weight for the weighted BCE term.
    pub w_plus: f64,
    pub dice_eps: f64,
    pub focal_gamma: f64,
    pub tversky_alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Composite,
            w_plus: 1.86,
            dice_eps: DICE_EPS,
            focal_gamma: 2.0,
            tversky_alpha: 0.3,
        }
    }
}

fn check_shapes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "loss inputs {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean over pixels of -[w+ y log p + (1-y) log(1-p)], p = sigmoid(logit),
/// in softplus form so saturated logits stay finite.
pub fn bce_weighted(logits: &Tensor, y: &Tensor, w_plus: f64) -> Result<Tensor> {
    check_shapes(logits, y)?;
    let pos = (y * w_plus)?.mul(&softplus(&logits.neg()?)?)?;
    let neg = ((y * (-1.0))? + 1.0)?.mul(&softplus(logits)?)?;
    Ok((pos + neg)?.mean_all()?)
}

pub fn bce(logits: &Tensor, y: &Tensor) -> Result<Tensor> {
    bce_weighted(logits, y, 1.0)
}

/// 1 - 2*sum(p y) / (sum(p) + sum(y) + eps), summed over the whole batch.
pub fn soft_dice(probs: &Tensor, y: &Tensor, eps: f64) -> Result<Tensor> {
    check_shapes(probs, y)?;
    let intersection = probs.mul(y)?.sum_all()?;
    let denom = ((probs.sum_all()? + y.sum_all()?)? + eps)?;
    let dice = ((intersection * 2.0)? / denom)?;
    Ok(((dice * (-1.0))? + 1.0)?)
}

/// 1/2 weighted BCE + 1/2 soft Dice on sigmoid probabilities.
pub fn composite_loss(logits: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let bce_term = bce_weighted(logits, y, cfg.w_plus)?;
    let dice_term = soft_dice(&sigmoid(logits)?, y, cfg.dice_eps)?;
    Ok(((bce_term + dice_term)? * 0.5)?)
}

/// 1 - (sum(p y) + eps) / (sum(p) + sum(y) - sum(p y) + eps).
pub fn soft_iou_loss(probs: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_shapes(probs, y)?;
    let intersection = probs.mul(y)?.sum_all()?;
    let union = ((probs.sum_all()? + y.sum_all()?)? - &intersection)?;
    let iou = ((intersection + IOU_EPS)? / (union + IOU_EPS)?)?;
    Ok(((iou * (-1.0))? + 1.0)?)
}

/// Mean of -(1 - p_t)^gamma log p_t with p_t the predicted probability of
/// the true class.
pub fn focal_loss(logits: &Tensor, y: &Tensor, gamma: f64) -> Result<Tensor> {
    check_shapes(logits, y)?;
    let p = sigmoid(logits)?;
    let one_minus_p = ((&p * (-1.0))? + 1.0)?;
    // y=1: (1-p)^g * softplus(-z); y=0: p^g * softplus(z)
    let pos = y
        .mul(&one_minus_p.powf(gamma)?)?
        .mul(&softplus(&logits.neg()?)?)?;
    let neg = ((y * (-1.0))? + 1.0)?
        .mul(&p.powf(gamma)?)?
        .mul(&softplus(logits)?)?;
    Ok((pos + neg)?.mean_all()?)
}

/// 1 - (TP + eps) / (TP + a FP + (1-a) FN + eps) with soft counts.
pub fn tversky_loss(probs: &Tensor, y: &Tensor, alpha: f64) -> Result<Tensor> {
    check_shapes(probs, y)?;
    let tp = probs.mul(y)?.sum_all()?;
    let fp = probs.mul(&((y * (-1.0))? + 1.0)?)?.sum_all()?;
    let fn_ = ((probs * (-1.0))? + 1.0)?.mul(y)?.sum_all()?;
    let denom = (((&tp + (fp * alpha)?)? + (fn_ * (1.0 - alpha))?)? + TVERSKY_EPS)?;
    let index = ((tp + TVERSKY_EPS)? / denom)?;
    Ok(((index * (-1.0))? + 1.0)?)
}

/// Evaluate the configured objective on logits.
pub fn compute_loss(logits: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let half = |a: Tensor, b: Tensor| -> Result<Tensor> { Ok(((a + b)? * 0.5)?) };
    match cfg.kind {
        LossKind::Bce => bce(logits, y),
        LossKind::BceWeighted => bce_weighted(logits, y, cfg.w_plus),
        LossKind::Dice => soft_dice(&sigmoid(logits)?, y, cfg.dice_eps),
        LossKind::Composite => composite_loss(logits, y, cfg),
        LossKind::Focal => focal_loss(logits, y, cfg.focal_gamma),
        LossKind::FocalDice => half(
            focal_loss(logits, y, cfg.focal_gamma)?,
            soft_dice(&sigmoid(logits)?, y, cfg.dice_eps)?,
        ),
        LossKind::SoftIou => soft_iou_loss(&sigmoid(logits)?, y),
        LossKind::BceSoftIou => half(bce(logits, y)?, soft_iou_loss(&sigmoid(logits)?, y)?),
        LossKind::Tversky => tversky_loss(&sigmoid(logits)?, y, cfg.tversky_alpha),
    }
}
