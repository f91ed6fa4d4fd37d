//! Online training-time augmentation.
//!
//! Geometric transforms apply jointly to all 7 channels and the mask;
//! photometric transforms apply to the RGB stack only and never see the
//! auxiliary channels. The pipeline runs on stage-1 scaled data, before
//! stage-2 standardization, so photometric limits stay interpretable on
//! [0,1] values.
//!
//! Conventions frozen here (the source material names limits without
//! formulas):
//!   - brightness: additive shift u ~ U(-limit, limit);
//!   - contrast: multiplicative (1+u) about the channel mean, applied
//!     before the brightness shift;
//!   - blur sigma from kernel size k: sigma = 0.3*((k-1)/2 - 1) + 0.8,
//!     with reflecting borders so constant images are fixed points;
//!   - rot90 samples uniformly from {90, 180, 270} degrees when triggered;
//!   - affine out-of-bounds regions fill with 0 for both image and mask.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tile::ModalPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_rot90: f64,
    pub p_affine: f64,
    /// Shift as a fraction of the tile side, sampled in [-shift, +shift].
    pub affine_shift: f64,
    pub affine_scale: (f64, f64),
    /// Rotation sampled in [-deg, +deg].
    pub affine_rot_deg: f64,
    pub p_blur: f64,
    /// Odd kernel sizes sampled inclusively from this range.
    pub blur_kernel_range: (usize, usize),
    pub p_brightness_contrast: f64,
    /// Brightness and contrast jitter limit (each sampled independently).
    pub bc_limit: f64,
}

impl Default for AugmentPolicy {
    /// The training pipeline defaults.
    fn default() -> Self {
        AugmentPolicy {
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_rot90: 0.5,
            p_affine: 0.5,
            affine_shift: 0.05,
            affine_scale: (0.9, 1.1),
            affine_rot_deg: 20.0,
            p_blur: 0.15,
            blur_kernel_range: (3, 7),
            p_brightness_contrast: 0.3,
            bc_limit: 0.2,
        }
    }
}

impl AugmentPolicy {
    /// Identity policy, useful in tests and for evaluation paths.
    pub fn disabled() -> Self {
        AugmentPolicy {
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_rot90: 0.0,
            p_affine: 0.0,
            p_blur: 0.0,
            p_brightness_contrast: 0.0,
            ..Default::default()
        }
    }
}

/// The sampled geometric transform of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GeomSample {
    hflip: bool,
    vflip: bool,
    /// Number of 90-degree counter-clockwise turns in {0,1,2,3}.
    quarter_turns: u8,
    affine: Option<AffineSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AffineSample {
    shift_x: f64,
    shift_y: f64,
    scale: f64,
    rot_rad: f64,
}

fn sample_geometry(policy: &AugmentPolicy, rng: &mut ChaCha8Rng, size: usize) -> GeomSample {
    let hflip = rng.random_range(0.0..1.0) < policy.p_hflip;
    let vflip = rng.random_range(0.0..1.0) < policy.p_vflip;
    let quarter_turns = if rng.random_range(0.0..1.0) < policy.p_rot90 {
        rng.random_range(1..=3u8)
    } else {
        0
    };
    let affine = if rng.random_range(0.0..1.0) < policy.p_affine {
        let bound = policy.affine_shift * size as f64;
        Some(AffineSample {
            shift_x: rng.random_range(-bound..=bound),
            shift_y: rng.random_range(-bound..=bound),
            scale: rng.random_range(policy.affine_scale.0..=policy.affine_scale.1),
            rot_rad: rng
                .random_range(-policy.affine_rot_deg..=policy.affine_rot_deg)
                .to_radians(),
        })
    } else {
        None
    };
    GeomSample {
        hflip,
        vflip,
        quarter_turns,
        affine,
    }
}

pub fn hflip2(a: &Array2<f32>) -> Array2<f32> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(r, c)| a[[r, w - 1 - c]])
}

pub fn vflip2(a: &Array2<f32>) -> Array2<f32> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(r, c)| a[[h - 1 - r, c]])
}

/// One counter-clockwise quarter turn (square inputs).
pub fn rot90ccw2(a: &Array2<f32>) -> Array2<f32> {
    let (h, w) = a.dim();
    debug_assert_eq!(h, w);
    Array2::from_shape_fn((w, h), |(r, c)| a[[c, w - 1 - r]])
}

fn apply_index_transform<F>(a: &Array2<f32>, f: F) -> Array2<f32>
where
    F: Fn(&Array2<f32>) -> Array2<f32>,
{
    f(a)
}

fn transform_plane(plane: &Array2<f32>, g: &GeomSample, bilinear: bool) -> Array2<f32> {
    let mut out = plane.clone();
    if g.hflip {
        out = apply_index_transform(&out, hflip2);
    }
    if g.vflip {
        out = apply_index_transform(&out, vflip2);
    }
    for _ in 0..g.quarter_turns {
        out = apply_index_transform(&out, rot90ccw2);
    }
    if let Some(aff) = &g.affine {
        out = warp_affine(&out, aff, bilinear);
    }
    out
}

/// Inverse-mapping affine warp about the image center. `bilinear` selects
/// the resampling kernel; nearest-neighbor keeps masks binary.
fn warp_affine(plane: &Array2<f32>, aff: &AffineSample, bilinear: bool) -> Array2<f32> {
    let (h, w) = plane.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (sin_r, cos_r) = aff.rot_rad.sin_cos();
    let inv_scale = 1.0 / aff.scale;
    Array2::from_shape_fn((h, w), |(r, c)| {
        // Invert: out = R(theta)*S*(in - center) + center + shift
        let dy = r as f64 - cy - aff.shift_y;
        let dx = c as f64 - cx - aff.shift_x;
        let sx = inv_scale * (cos_r * dx + sin_r * dy);
        let sy = inv_scale * (-sin_r * dx + cos_r * dy);
        let src_y = sy + cy;
        let src_x = sx + cx;
        if bilinear {
            sample_bilinear_zero(plane, src_y, src_x)
        } else {
            sample_nearest_zero(plane, src_y, src_x)
        }
    })
}

fn sample_bilinear_zero(plane: &Array2<f32>, y: f64, x: f64) -> f32 {
    let (h, w) = plane.dim();
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = (y - y0) as f32;
    let fx = (x - x0) as f32;
    let fetch = |r: f64, c: f64| -> f32 {
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
            0.0
        } else {
            plane[[r as usize, c as usize]]
        }
    };
    let v00 = fetch(y0, x0);
    let v01 = fetch(y0, x0 + 1.0);
    let v10 = fetch(y0 + 1.0, x0);
    let v11 = fetch(y0 + 1.0, x0 + 1.0);
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bot = v10 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bot * fy
}

fn sample_nearest_zero(plane: &Array2<f32>, y: f64, x: f64) -> f32 {
    let (h, w) = plane.dim();
    let r = y.round();
    let c = x.round();
    if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
        0.0
    } else {
        plane[[r as usize, c as usize]]
    }
}

fn transform_stack(stack: &Array3<f32>, g: &GeomSample) -> Array3<f32> {
    let planes: Vec<Array2<f32>> = (0..stack.dim().0)
        .map(|c| transform_plane(&stack.index_axis(Axis(0), c).to_owned(), g, true))
        .collect();
    let (h, w) = planes[0].dim();
    let mut out = Array3::zeros((planes.len(), h, w));
    for (c, p) in planes.iter().enumerate() {
        out.index_axis_mut(Axis(0), c).assign(p);
    }
    out
}

/// Apply one sampled geometric transform composition identically to all 7
/// channels (bilinear) and the mask (nearest-neighbor).
pub fn apply_geometric(
    pair: &ModalPair,
    mask: &Array2<u8>,
    policy: &AugmentPolicy,
    rng: &mut ChaCha8Rng,
) -> (ModalPair, Array2<u8>) {
    let (h, _) = pair.size();
    let g = sample_geometry(policy, rng, h);
    let rgb = transform_stack(&pair.rgb, &g);
    let aux = transform_stack(&pair.aux, &g);
    let mask_f = mask.mapv(|v| v as f32);
    let mask_t = transform_plane(&mask_f, &g, false);
    let mask_out = mask_t.mapv(|v| if v >= 0.5 { 1u8 } else { 0u8 });
    (
        ModalPair {
            rgb,
            aux,
            normalized: pair.normalized,
        },
        mask_out,
    )
}

fn gaussian_kernel(k: usize) -> Vec<f32> {
    // OpenCV's automatic sigma for a given odd kernel size.
    let sigma = 0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8;
    let half = (k / 2) as isize;
    let mut kernel: Vec<f32> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let sum: f32 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    kernel
}

/// Separable Gaussian blur with reflect-101 borders (constant images are
/// fixed points).
fn gaussian_blur(plane: &Array2<f32>, k: usize) -> Array2<f32> {
    let kernel = gaussian_kernel(k);
    let half = (k / 2) as isize;
    let (h, w) = plane.dim();
    let reflect = |i: isize, n: isize| -> usize {
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
        i.clamp(0, n - 1) as usize
    };
    let mut horiz = Array2::<f32>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f32;
            for (ki, kv) in kernel.iter().enumerate() {
                let cc = reflect(c as isize + ki as isize - half, w as isize);
                acc += kv * plane[[r, cc]];
            }
            horiz[[r, c]] = acc;
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f32;
            for (ki, kv) in kernel.iter().enumerate() {
                let rr = reflect(r as isize + ki as isize - half, h as isize);
                acc += kv * horiz[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Photometric jitter of the RGB stack: Gaussian blur then
/// brightness/contrast. Auxiliary channels never pass through here.
pub fn apply_photometric(
    rgb: &Array3<f32>,
    policy: &AugmentPolicy,
    rng: &mut ChaCha8Rng,
) -> Array3<f32> {
    let mut out = rgb.clone();
    if rng.random_range(0.0..1.0) < policy.p_blur {
        let (lo, hi) = policy.blur_kernel_range;
        let odd: Vec<usize> = (lo..=hi).filter(|k| k % 2 == 1).collect();
        let k = odd[rng.random_range(0..odd.len())];
        for c in 0..out.dim().0 {
            let blurred = gaussian_blur(&out.index_axis(Axis(0), c).to_owned(), k);
            out.index_axis_mut(Axis(0), c).assign(&blurred);
        }
    }
    if rng.random_range(0.0..1.0) < policy.p_brightness_contrast {
        let u_contrast = rng.random_range(-policy.bc_limit..=policy.bc_limit) as f32;
        let u_brightness = rng.random_range(-policy.bc_limit..=policy.bc_limit) as f32;
        for c in 0..out.dim().0 {
            let mut plane = out.index_axis_mut(Axis(0), c);
            let mean = plane.iter().copied().sum::<f32>() / plane.len() as f32;
            plane.mapv_inplace(|v| mean + (1.0 + u_contrast) * (v - mean) + u_brightness);
        }
    }
    out
}

/// Full training pipeline: geometric on all channels + mask, photometric
/// on RGB only.
pub fn apply_full(
    pair: &ModalPair,
    mask: &Array2<u8>,
    policy: &AugmentPolicy,
    rng: &mut ChaCha8Rng,
) -> (ModalPair, Array2<u8>) {
    let (geo, mask) = apply_geometric(pair, mask, policy, rng);
    let rgb = apply_photometric(&geo.rgb, policy, rng);
    (
        ModalPair {
            rgb,
            aux: geo.aux,
            normalized: geo.normalized,
        },
        mask,
    )
}
