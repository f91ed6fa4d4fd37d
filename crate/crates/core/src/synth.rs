//! Synthetic 7-band tile generator.
//!
//! Stand-in data source: every formula below is plumbing chosen to make the
//! bands mutually consistent and learnable, not a physical model of any
//! real surface. The one hard contract is that band 2 (slope) is the
//! central-difference gradient magnitude of band 3 (DEM) as emitted.
//!
//! A tile is a smooth fractal terrain; with probability
//! `landslide_probability` an elliptical scarp+fan footprint is carved into
//! it: a locally steep scarp face at the head, a gentle depositional fan
//! below, and a thermal offset over the fan. The mask is the footprint.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tile::{RawTile, BAND_COUNT};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    /// Tile side length (H = W).
    pub size: usize,
    /// Scarp face inclination range, degrees.
    pub scarp_slope_range: (f64, f64),
    /// Fan surface inclination range, degrees.
    pub fan_slope_range: (f64, f64),
    /// Probability that a tile contains a landslide at all.
    pub landslide_probability: f64,
    /// Expected foreground fraction of a landslide tile, in (0, 0.9).
    pub foreground_fraction_target: f64,
    /// Multiplier on all stochastic texture amplitudes.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            size: 64,
            scarp_slope_range: (25.0, 40.0),
            fan_slope_range: (2.0, 8.0),
            landslide_probability: 0.7,
            foreground_fraction_target: 0.35,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::ConfigMismatch(format!(
                "synthetic tile size {} too small",
                self.size
            )));
        }
        for (name, (lo, hi)) in [
            ("scarp_slope_range", self.scarp_slope_range),
            ("fan_slope_range", self.fan_slope_range),
        ] {
            if !(lo <= hi) || lo < 0.0 {
                return Err(Error::ConfigMismatch(format!("{name} empty: ({lo}, {hi})")));
            }
        }
        if !(0.0..=1.0).contains(&self.landslide_probability) {
            return Err(Error::ConfigMismatch(
                "landslide_probability outside [0,1]".into(),
            ));
        }
        if !(self.foreground_fraction_target > 0.0 && self.foreground_fraction_target < 0.9) {
            return Err(Error::ConfigMismatch(
                "foreground_fraction_target outside (0, 0.9)".into(),
            ));
        }
        Ok(())
    }
}

/// Bilinearly interpolated random lattice, one octave of value noise.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize, amplitude: f32) -> Array2<f32> {
    let nodes = cells + 1;
    let lattice = Array2::from_shape_fn((nodes, nodes), |_| rng.random::<f32>());
    let step = size as f32 / cells as f32;
    Array2::from_shape_fn((size, size), |(r, c)| {
        let y = r as f32 / step;
        let x = c as f32 / step;
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(cells), (x0 + 1).min(cells));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let top = lattice[[y0, x0]] * (1.0 - fx) + lattice[[y0, x1]] * fx;
        let bot = lattice[[y1, x0]] * (1.0 - fx) + lattice[[y1, x1]] * fx;
        amplitude * (top * (1.0 - fy) + bot * fy)
    })
}

fn fractal_terrain(rng: &mut ChaCha8Rng, size: usize, octaves: usize, scale: f32) -> Array2<f32> {
    let mut out = Array2::<f32>::zeros((size, size));
    let mut amplitude = scale;
    let mut cells = 4usize;
    for _ in 0..octaves {
        out = out + value_noise(rng, size, cells.min(size), amplitude);
        amplitude *= 0.5;
        cells *= 2;
    }
    out
}

/// Central-difference gradient magnitude with edge replication.
pub fn gradient_magnitude(dem: &Array2<f32>) -> Array2<f32> {
    let (h, w) = dem.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let rp = (r + 1).min(h - 1);
        let rm = r.saturating_sub(1);
        let cp = (c + 1).min(w - 1);
        let cm = c.saturating_sub(1);
        let gy = (dem[[rp, c]] - dem[[rm, c]]) / (rp - rm).max(1) as f32;
        let gx = (dem[[r, cp]] - dem[[r, cm]]) / (cp - cm).max(1) as f32;
        (gx * gx + gy * gy).sqrt()
    })
}

fn smoothstep(t: f32) -> f32 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// 3x3 box smoothing, applied `passes` times (edges replicated).
fn smooth(field: &Array2<f32>, passes: usize) -> Array2<f32> {
    let (h, w) = field.dim();
    let mut cur = field.clone();
    for _ in 0..passes {
        let src = cur.clone();
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0f32;
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                        let cc = (c as isize + dc).clamp(0, w as isize - 1) as usize;
                        acc += src[[rr, cc]];
                    }
                }
                cur[[r, c]] = acc / 9.0;
            }
        }
    }
    cur
}

fn normalized(field: &Array2<f32>) -> Array2<f32> {
    let min = field.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = field.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if max <= min {
        return Array2::zeros(field.dim());
    }
    field.mapv(|v| (v - min) / (max - min))
}

struct Landslide {
    mask: Array2<u8>,
    /// Along-axis coordinate in [0,1] inside the footprint (0 = head).
    axis_t: Array2<f32>,
    /// Cross-axis falloff in [0,1] inside the footprint (1 = centerline).
    falloff: Array2<f32>,
}

fn sample_landslide(rng: &mut ChaCha8Rng, size: usize, target_fraction: f64) -> Landslide {
    let s = size as f64;
    // Slight inflation compensates the expected border clipping loss.
    let area = target_fraction * s * s * rng.random_range(0.9..1.1) * 1.05;
    let ratio = rng.random_range(1.3..2.0);
    let a = (area * ratio / std::f64::consts::PI).sqrt();
    let b = a / ratio;
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (sin_t, cos_t) = theta.sin_cos();
    let cy = s * rng.random_range(0.4..0.6);
    let cx = s * rng.random_range(0.4..0.6);

    let mut mask = Array2::<u8>::zeros((size, size));
    let mut axis_t = Array2::<f32>::zeros((size, size));
    let mut falloff = Array2::<f32>::zeros((size, size));
    for r in 0..size {
        for c in 0..size {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            let u = cos_t * dx + sin_t * dy; // along major axis
            let v = -sin_t * dx + cos_t * dy;
            let q = (u / a).powi(2) + (v / b).powi(2);
            if q <= 1.0 {
                mask[[r, c]] = 1;
                axis_t[[r, c]] = ((u / a + 1.0) / 2.0) as f32;
                falloff[[r, c]] = smoothstep(1.0 - q as f32);
            }
        }
    }
    Landslide {
        mask,
        axis_t,
        falloff,
    }
}

/// Generate one tile with mask. Pure function of the parameters:
/// repeated calls produce byte-identical output.
pub fn generate_synthetic_tile(params: &SynthParams) -> Result<RawTile> {
    params.validate()?;
    let size = params.size;
    let ns = params.noise_scale as f32;
    let mut rng = crate::rng::stream(params.seed, "synth", 0);

    // Base terrain. All subsequent bands derive from it.
    let mut dem = fractal_terrain(&mut rng, size, 5, 12.0);

    // Landslide geometry is sampled from the same stream so the whole tile
    // is a function of the seed alone.
    let has_landslide = rng.random_range(0.0..1.0) < params.landslide_probability;
    let scarp_deg = rng.random_range(params.scarp_slope_range.0..=params.scarp_slope_range.1);
    let fan_deg = rng.random_range(params.fan_slope_range.0..=params.fan_slope_range.1);
    let slide = sample_landslide(&mut rng, size, params.foreground_fraction_target);

    let mask = if has_landslide {
        // Carve the footprint: a steep drop at the head (scarp) followed by
        // a gently inclined depositional surface (fan).
        let scarp_grad = (scarp_deg.to_radians().tan()) as f32;
        let fan_grad = (fan_deg.to_radians().tan()) as f32;
        let head_len = 0.25f32; // fraction of the axis occupied by the scarp
        for r in 0..size {
            for c in 0..size {
                if slide.mask[[r, c]] == 1 {
                    let t = slide.axis_t[[r, c]];
                    let f = slide.falloff[[r, c]];
                    let axis_px = size as f32 * 0.5;
                    let drop = if t < head_len {
                        scarp_grad * (head_len - t) * axis_px
                    } else {
                        -fan_grad * (t - head_len) * axis_px * 0.3
                    };
                    dem[[r, c]] -= (scarp_grad * head_len * axis_px - drop) * f;
                }
            }
        }
        slide.mask.clone()
    } else {
        Array2::zeros((size, size))
    };

    // Slope is recomputed from the final DEM so the two bands stay
    // consistent by construction.
    let slope = gradient_magnitude(&dem);

    let dem_low = smooth(&dem, 4);
    let relief = normalized(&dem_low);
    let slope_norm = normalized(&slope);

    // Thermal inertia: coarse terrain correlation, a depositional offset
    // over the fan, and smoothed texture noise.
    let thermal_noise = smooth(&value_noise(&mut rng, size, 8, 1.0), 2);
    let mut thermal = Array2::<f32>::zeros((size, size));
    for r in 0..size {
        for c in 0..size {
            let fan = if mask[[r, c]] == 1 && slide.axis_t[[r, c]] >= 0.25 {
                slide.falloff[[r, c]]
            } else {
                0.0
            };
            thermal[[r, c]] = 0.5 * relief[[r, c]] - 0.3 * slope_norm[[r, c]]
                + 0.35 * fan
                + 0.25 * ns * thermal_noise[[r, c]];
        }
    }

    // Grayscale context: hillshade of the DEM plus fine-grained noise.
    let light = {
        let l = (-0.5f32, 0.7f32, 0.6f32);
        let n = (l.0 * l.0 + l.1 * l.1 + l.2 * l.2).sqrt();
        (l.0 / n, l.1 / n, l.2 / n)
    };
    let fine_noise = value_noise(&mut rng, size, size / 2, 1.0);
    let mut gray = Array2::<f32>::zeros((size, size));
    {
        let (h, w) = dem.dim();
        for r in 0..h {
            for c in 0..w {
                let rp = (r + 1).min(h - 1);
                let rm = r.saturating_sub(1);
                let cp = (c + 1).min(w - 1);
                let cm = c.saturating_sub(1);
                let gy = (dem[[rp, c]] - dem[[rm, c]]) / (rp - rm).max(1) as f32;
                let gx = (dem[[r, cp]] - dem[[r, cm]]) / (cp - cm).max(1) as f32;
                let norm = (gx * gx + gy * gy + 1.0).sqrt();
                let shade = ((-gx) * light.0 + (-gy) * light.1 + light.2) / norm;
                gray[[r, c]] = shade.max(0.0) + 0.15 * ns * fine_noise[[r, c]];
            }
        }
    }

    // RGB: a low-frequency colorized rendering of the relief.
    let rgb_noise = smooth(&value_noise(&mut rng, size, 6, 1.0), 1);
    let make_channel = |base: f32, gain: f32, noise_gain: f32| {
        Array2::from_shape_fn((size, size), |(r, c)| {
            base + gain * relief[[r, c]] + noise_gain * ns * rgb_noise[[r, c]]
        })
    };
    let red = make_channel(0.55, 0.30, 0.05);
    let green = make_channel(0.35, 0.22, 0.04);
    let blue = make_channel(0.22, 0.12, 0.03);

    let mut bands = Array3::<f32>::zeros((BAND_COUNT, size, size));
    for (idx, band) in [&thermal, &slope, &dem, &gray, &red, &green, &blue]
        .into_iter()
        .enumerate()
    {
        bands.index_axis_mut(ndarray::Axis(0), idx).assign(band);
    }
    RawTile::new(bands, Some(mask), format!("synth{:08x}", params.seed))
}
