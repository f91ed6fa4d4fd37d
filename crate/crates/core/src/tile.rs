//! Tile domain types, modality splitting, the two-stage normalization
//! pipeline, dataset statistics, class weighting and fold assignment.
//!
//! Band order is contractual: band 1 thermal inertia, band 2 slope,
//! band 3 DEM, band 4 grayscale context, bands 5-7 RGB.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};

pub const BAND_COUNT: usize = 7;
/// Indices (0-based) of the RGB bands within the 7-band stack.
pub const RGB_BANDS: [usize; 3] = [4, 5, 6];
/// Indices (0-based) of the auxiliary bands: thermal, slope, DEM, grayscale.
pub const AUX_BANDS: [usize; 4] = [0, 1, 2, 3];

/// One 7-band co-registered sample with optional binary mask.
#[derive(Debug, Clone)]
pub struct RawTile {
    /// 7 x H x W, band order as in the source file.
    pub bands: Array3<f32>,
    /// H x W in {0,1}, if present.
    pub mask: Option<Array2<u8>>,
    pub tile_id: String,
}

impl RawTile {
    pub fn new(bands: Array3<f32>, mask: Option<Array2<u8>>, tile_id: String) -> Result<Self> {
        let (c, h, w) = bands.dim();
        if c != BAND_COUNT {
            return Err(Error::BandCountMismatch {
                expected: BAND_COUNT,
                found: c,
                path: tile_id.clone().into(),
            });
        }
        if h != w {
            return Err(Error::ShapeMismatch(format!(
                "tile {tile_id}: expected square spatial dims, got {h}x{w}"
            )));
        }
        if bands.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData(format!(
                "tile {tile_id}: NaN/Inf in band data"
            )));
        }
        if let Some(m) = &mask {
            if m.dim() != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "tile {tile_id}: mask {:?} vs bands {h}x{w}",
                    m.dim()
                )));
            }
            if m.iter().any(|&v| v > 1) {
                return Err(Error::NonBinaryInput);
            }
        }
        Ok(RawTile {
            bands,
            mask,
            tile_id,
        })
    }

    pub fn size(&self) -> usize {
        self.bands.dim().1
    }
}

/// The (rgb, aux) tensor pair fed to the dual encoders.
#[derive(Debug, Clone)]
pub struct ModalPair {
    /// 3 x H x W, in (R, G, B) order.
    pub rgb: Array3<f32>,
    /// 4 x H x W, in (thermal, slope, DEM, grayscale) order.
    pub aux: Array3<f32>,
    /// True once both tensors passed stage-1 percentile scaling and
    /// stage-2 standardization.
    pub normalized: bool,
}

impl ModalPair {
    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.rgb.dim();
        (h, w)
    }
}

/// Split a tile into the RGB and auxiliary stacks. Output channel order is
/// contractual: rgb = bands 5-7 as (R,G,B), aux = bands 1-4 as
/// (thermal, slope, DEM, grayscale). The mask is not part of the pair and
/// is carried alongside by callers.
pub fn split_modalities(tile: &RawTile) -> ModalPair {
    let (_, h, w) = tile.bands.dim();
    let mut rgb = Array3::zeros((3, h, w));
    for (out_c, &src) in RGB_BANDS.iter().enumerate() {
        rgb.index_axis_mut(Axis(0), out_c)
            .assign(&tile.bands.index_axis(Axis(0), src));
    }
    let mut aux = Array3::zeros((4, h, w));
    for (out_c, &src) in AUX_BANDS.iter().enumerate() {
        aux.index_axis_mut(Axis(0), out_c)
            .assign(&tile.bands.index_axis(Axis(0), src));
    }
    ModalPair {
        rgb,
        aux,
        normalized: false,
    }
}

/// Linear-interpolation percentile of already-sorted values, rank
/// p/100 * (n-1) between order statistics.
fn sorted_percentile(sorted: &[f32], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0] as f64;
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64)
}

/// Stage-1 normalization of one channel: clip to this channel's own
/// [P1, P99] and map that range affinely onto [0,1]. A constant channel
/// (P1 = P99) maps to all zeros.
pub fn percentile_scale(channel: &Array2<f32>) -> Array2<f32> {
    let mut sorted: Vec<f32> = channel.iter().copied().collect();
    sorted.sort_by(f32::total_cmp);
    let p1 = sorted_percentile(&sorted, 1.0);
    let p99 = sorted_percentile(&sorted, 99.0);
    if p99 <= p1 {
        return Array2::zeros(channel.dim());
    }
    let span = p99 - p1;
    channel.mapv(|v| {
        let v = (v as f64).clamp(p1, p99);
        ((v - p1) / span) as f32
    })
}

/// Stage-1 scale every channel of a pair in place (per image, per band).
pub fn stage1_scale(pair: &ModalPair) -> ModalPair {
    let scale_stack = |stack: &Array3<f32>| {
        let mut out = stack.clone();
        for c in 0..stack.dim().0 {
            let scaled = percentile_scale(&stack.index_axis(Axis(0), c).to_owned());
            out.index_axis_mut(Axis(0), c).assign(&scaled);
        }
        out
    };
    ModalPair {
        rgb: scale_stack(&pair.rgb),
        aux: scale_stack(&pair.aux),
        normalized: false,
    }
}

/// Channel-wise statistics for stage-2 standardization, computed from
/// training tiles only (on stage-1 scaled values).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; BAND_COUNT],
    pub std: [f64; BAND_COUNT],
    pub epsilon: f64,
}

pub const STANDARDIZE_EPSILON: f64 = 1e-6;

/// Partial (count, sum, sum-of-squares) accumulator; merge is fieldwise
/// addition so dataset scans may be sharded.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatAccumulator {
    pub count: [f64; BAND_COUNT],
    pub sum: [f64; BAND_COUNT],
    pub sum_sq: [f64; BAND_COUNT],
}

impl StatAccumulator {
    pub fn add_tile(&mut self, tile: &RawTile) {
        for c in 0..BAND_COUNT {
            let scaled = percentile_scale(&tile.bands.index_axis(Axis(0), c).to_owned());
            for &v in scaled.iter() {
                self.count[c] += 1.0;
                self.sum[c] += v as f64;
                self.sum_sq[c] += (v as f64) * (v as f64);
            }
        }
    }

    pub fn merge(mut self, other: StatAccumulator) -> StatAccumulator {
        for c in 0..BAND_COUNT {
            self.count[c] += other.count[c];
            self.sum[c] += other.sum[c];
            self.sum_sq[c] += other.sum_sq[c];
        }
        self
    }

    pub fn finish(&self) -> Result<NormStats> {
        if self.count.iter().any(|&n| n == 0.0) {
            return Err(Error::EmptyDataset("no pixels accumulated".into()));
        }
        let mut mean = [0.0; BAND_COUNT];
        let mut std = [0.0; BAND_COUNT];
        for c in 0..BAND_COUNT {
            mean[c] = self.sum[c] / self.count[c];
            let var = (self.sum_sq[c] / self.count[c] - mean[c] * mean[c]).max(0.0);
            std[c] = var.sqrt();
        }
        Ok(NormStats {
            mean,
            std,
            epsilon: STANDARDIZE_EPSILON,
        })
    }
}

/// Population mean/std per channel over all pixels of all tiles, measured
/// after stage-1 percentile scaling.
pub fn compute_norm_stats(tiles: &[RawTile]) -> Result<NormStats> {
    if tiles.is_empty() {
        return Err(Error::EmptyDataset("compute_norm_stats on empty set".into()));
    }
    let mut acc = StatAccumulator::default();
    for t in tiles {
        acc.add_tile(t);
    }
    acc.finish()
}

/// Stage-2 standardization x' = (x - mu_c) / (sigma_c + epsilon) of a
/// stage-1 scaled pair. Channel c of the pair maps to its source band's
/// statistics slot.
pub fn standardize(pair: &ModalPair, stats: &NormStats) -> ModalPair {
    let apply = |stack: &Array3<f32>, band_idx: &[usize]| {
        let mut out = stack.clone();
        for (c, &band) in band_idx.iter().enumerate() {
            let mu = stats.mean[band];
            let denom = stats.std[band] + stats.epsilon;
            out.index_axis_mut(Axis(0), c)
                .mapv_inplace(|v| ((v as f64 - mu) / denom) as f32);
        }
        out
    };
    ModalPair {
        rgb: apply(&pair.rgb, &RGB_BANDS),
        aux: apply(&pair.aux, &AUX_BANDS),
        normalized: true,
    }
}

impl NormStats {
    /// Plain-text serialization: one `c mean std` line per channel plus an
    /// `epsilon` line, with 17 significant decimal digits so the values
    /// round-trip bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in 0..BAND_COUNT {
            writeln!(out, "{} {:.16e} {:.16e}", c + 1, self.mean[c], self.std[c]).unwrap();
        }
        writeln!(out, "epsilon {:.16e}", self.epsilon).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<NormStats> {
        let mut mean = [f64::NAN; BAND_COUNT];
        let mut std = [f64::NAN; BAND_COUNT];
        let mut epsilon = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["epsilon", e] => {
                    epsilon = Some(e.parse::<f64>().map_err(|e| {
                        Error::Format(format!("bad epsilon in stats file: {e}"))
                    })?)
                }
                [c, m, s] => {
                    let c: usize = c
                        .parse()
                        .map_err(|e| Error::Format(format!("bad channel index: {e}")))?;
                    if !(1..=BAND_COUNT).contains(&c) {
                        return Err(Error::Format(format!("channel {c} out of range")));
                    }
                    mean[c - 1] = m
                        .parse()
                        .map_err(|e| Error::Format(format!("bad mean: {e}")))?;
                    std[c - 1] = s
                        .parse()
                        .map_err(|e| Error::Format(format!("bad std: {e}")))?;
                }
                _ => return Err(Error::Format(format!("bad stats line: {line:?}"))),
            }
        }
        if mean.iter().any(|v| v.is_nan()) || std.iter().any(|v| v.is_nan()) {
            return Err(Error::StatsMissing(
                "stats file does not cover all 7 channels".into(),
            ));
        }
        Ok(NormStats {
            mean,
            std,
            epsilon: epsilon
                .ok_or_else(|| Error::StatsMissing("stats file has no epsilon line".into()))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NormStats> {
        if !path.exists() {
            return Err(Error::StatsMissing(format!("{}", path.display())));
        }
        NormStats::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Positive-class weight w+ = N_neg / N_pos over all pixels of all masks.
pub fn compute_class_weight(masks: &[Array2<u8>]) -> Result<f64> {
    let mut pos: u64 = 0;
    let mut neg: u64 = 0;
    for m in masks {
        for &v in m.iter() {
            if v == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 {
        return Err(Error::NoForeground);
    }
    Ok(neg as f64 / pos as f64)
}

/// Assignment of tile ids to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_count: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_ids(&self, fold: usize) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn complement_ids(&self, fold: usize) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Deterministic k-fold split: shuffle ids by seed, then assign round-robin,
/// so fold sizes differ by at most one.
pub fn make_folds(tile_ids: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 || tile_ids.len() < k {
        return Err(Error::TooFewTiles {
            n: tile_ids.len(),
            k,
        });
    }
    let mut ids: Vec<String> = tile_ids.to_vec();
    ids.sort();
    let mut rng = crate::rng::stream(seed, "folds", 0);
    ids.shuffle(&mut rng);
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i % k))
        .collect();
    Ok(FoldSplit {
        fold_count: k,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_tile(value: f32, size: usize) -> RawTile {
        RawTile::new(
            Array3::from_elem((BAND_COUNT, size, size), value),
            None,
            "const".into(),
        )
        .unwrap()
    }

    #[test]
    fn split_keeps_band_bookkeeping() {
        let mut bands = Array3::zeros((BAND_COUNT, 4, 4));
        for c in 0..BAND_COUNT {
            bands.index_axis_mut(Axis(0), c).fill((c + 1) as f32);
        }
        let tile = RawTile::new(bands, None, "t".into()).unwrap();
        let pair = split_modalities(&tile);
        for (i, expect) in [5.0, 6.0, 7.0].iter().enumerate() {
            assert!(pair.rgb.index_axis(Axis(0), i).iter().all(|v| v == expect));
        }
        for (i, expect) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            assert!(pair.aux.index_axis(Axis(0), i).iter().all(|v| v == expect));
        }
        assert!(!pair.normalized);
    }

    #[test]
    fn percentile_scale_constant_channel_is_zero() {
        let ch = Array2::from_elem((8, 8), 3.5f32);
        let out = percentile_scale(&ch);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn percentile_scale_ramp_matches_sorted_oracle() {
        // 100x100 grid holding the ramp 0..99 repeated 100 times.
        let ch = Array2::from_shape_fn((100, 100), |(r, c)| ((r * 100 + c) % 100) as f32);
        // Independent sort-and-interpolate oracle.
        let mut v: Vec<f32> = ch.iter().copied().collect();
        v.sort_by(f32::total_cmp);
        let rank = |p: f64| p / 100.0 * (v.len() - 1) as f64;
        let interp = |p: f64| {
            let r = rank(p);
            let lo = r.floor() as usize;
            v[lo] as f64 + (r - lo as f64) * (v[lo + 1] as f64 - v[lo] as f64)
        };
        let (p1, p99) = (interp(1.0), interp(99.0));
        assert!((p1 - 0.99).abs() < 1e-12);
        assert!((p99 - 98.01).abs() < 1e-9);
        let out = percentile_scale(&ch);
        let min = out.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = out.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(min, 0.0);
        assert_eq!(max, 1.0);
        // Spot-check the affine map itself against the oracle.
        let mid = ch[[0, 50]];
        let expect = ((mid as f64).clamp(p1, p99) - p1) / (p99 - p1);
        assert!((out[[0, 50]] as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn percentile_scale_output_in_unit_interval() {
        let mut rng = crate::rng::stream(3, "tile-pct", 0);
        use rand::Rng;
        let ch = Array2::from_shape_fn((32, 32), |_| rng.random_range(-50.0f32..150.0));
        let once = percentile_scale(&ch);
        assert!(once.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn percentile_scale_idempotent_on_uniform_input() {
        // On a [0,1]-uniform input the rescale is the identity away from
        // the clipped 2% tails, so a second application barely moves
        // anything.
        let n = 100;
        let ch = Array2::from_shape_fn((n, n), |(r, c)| {
            ((r * n + c) as f32 + 0.5) / (n * n) as f32
        });
        let once = percentile_scale(&ch);
        let twice = percentile_scale(&once);
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn norm_stats_two_value_population() {
        // A half/half {0,1} channel keeps its plateaus under stage-1
        // scaling (P1=0, P99=1), so the population stats have the
        // closed form mean=0.5, std=0.5.
        let size = 16;
        let mut bands = Array3::zeros((BAND_COUNT, size, size));
        for c in 0..BAND_COUNT {
            for r in 0..size {
                for col in 0..size {
                    bands[[c, r, col]] = if (r * size + col) % 2 == 0 { 0.0 } else { 1.0 };
                }
            }
        }
        let tile = RawTile::new(bands, None, "half".into()).unwrap();
        let stats = compute_norm_stats(std::slice::from_ref(&tile)).unwrap();
        for c in 0..BAND_COUNT {
            assert!((stats.mean[c] - 0.5).abs() < 1e-12, "mean {}", stats.mean[c]);
            assert!((stats.std[c] - 0.5).abs() < 1e-12, "std {}", stats.std[c]);
        }
    }

    #[test]
    fn norm_stats_zero_variance() {
        let tile = const_tile(7.0, 8);
        let stats = compute_norm_stats(std::slice::from_ref(&tile)).unwrap();
        for c in 0..BAND_COUNT {
            assert_eq!(stats.mean[c], 0.0); // constant channel scales to zero
            assert_eq!(stats.std[c], 0.0);
        }
        // Standardization then divides by epsilon only.
        let pair = stage1_scale(&split_modalities(&tile));
        let norm = standardize(&pair, &stats);
        assert!(norm.normalized);
        assert!(norm.rgb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_centering_and_unit_scale() {
        let stats = NormStats {
            mean: [0.25; BAND_COUNT],
            std: [0.5; BAND_COUNT],
            epsilon: 0.0,
        };
        let pair = ModalPair {
            rgb: Array3::from_elem((3, 4, 4), 0.25),
            aux: Array3::from_elem((4, 4, 4), 0.75),
            normalized: false,
        };
        let out = standardize(&pair, &stats);
        assert!(out.rgb.iter().all(|&v| v == 0.0));
        assert!(out.aux.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn standardize_degenerate_sigma_uses_epsilon() {
        let mut stats = NormStats {
            mean: [0.0; BAND_COUNT],
            std: [0.0; BAND_COUNT],
            epsilon: 1e-6,
        };
        stats.mean[RGB_BANDS[0]] = 0.0;
        let mut rgb = Array3::zeros((3, 2, 2));
        rgb.fill(1e-6);
        let pair = ModalPair {
            rgb,
            aux: Array3::zeros((4, 2, 2)),
            normalized: false,
        };
        let out = standardize(&pair, &stats);
        assert!(out.rgb.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn standardize_round_trips_when_sigma_positive() {
        let stats = NormStats {
            mean: [0.3; BAND_COUNT],
            std: [0.2; BAND_COUNT],
            epsilon: 1e-6,
        };
        let mut rng = crate::rng::stream(5, "tile-rt", 0);
        use rand::Rng;
        let pair = ModalPair {
            rgb: Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(0.0f32..1.0)),
            aux: Array3::from_shape_fn((4, 8, 8), |_| rng.random_range(0.0f32..1.0)),
            normalized: false,
        };
        let fwd = standardize(&pair, &stats);
        // Invert the affine map.
        let mut back = fwd.clone();
        for (c, &band) in RGB_BANDS.iter().enumerate() {
            let mu = stats.mean[band];
            let denom = stats.std[band] + stats.epsilon;
            back.rgb
                .index_axis_mut(Axis(0), c)
                .mapv_inplace(|v| (v as f64 * denom + mu) as f32);
        }
        for (a, b) in pair.rgb.iter().zip(back.rgb.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn stats_text_round_trip_is_bit_exact() {
        let stats = NormStats {
            mean: [
                0.1234567890123456,
                std::f64::consts::PI / 10.0,
                0.3,
                1.0 / 3.0,
                0.5,
                2.0f64.sqrt() / 3.0,
                0.7,
            ],
            std: [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 1e-17],
            epsilon: STANDARDIZE_EPSILON,
        };
        let text = stats.to_text();
        let back = NormStats::from_text(&text).unwrap();
        for c in 0..BAND_COUNT {
            assert_eq!(stats.mean[c].to_bits(), back.mean[c].to_bits());
            assert_eq!(stats.std[c].to_bits(), back.std[c].to_bits());
        }
        assert_eq!(stats.epsilon.to_bits(), back.epsilon.to_bits());
    }

    #[test]
    fn stat_accumulator_merge_matches_sequential() {
        let t1 = const_tile(1.0, 8);
        let size = 8;
        let bands = Array3::from_shape_fn((BAND_COUNT, size, size), |(c, r, col)| {
            (c + r + col) as f32 * 0.1
        });
        let t2 = RawTile::new(bands, None, "t2".into()).unwrap();
        let mut seq = StatAccumulator::default();
        seq.add_tile(&t1);
        seq.add_tile(&t2);
        let mut a = StatAccumulator::default();
        a.add_tile(&t1);
        let mut b = StatAccumulator::default();
        b.add_tile(&t2);
        let merged = a.merge(b).finish().unwrap();
        let direct = seq.finish().unwrap();
        for c in 0..BAND_COUNT {
            assert!((merged.mean[c] - direct.mean[c]).abs() < 1e-12);
            assert!((merged.std[c] - direct.std[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn class_weight_direct_count() {
        let mut m = Array2::<u8>::zeros((4, 4));
        m[[0, 0]] = 1;
        m[[1, 1]] = 1;
        m[[2, 2]] = 1;
        m[[3, 3]] = 1;
        let w = compute_class_weight(std::slice::from_ref(&m)).unwrap();
        assert_eq!(w, 3.0);
    }

    #[test]
    fn class_weight_35_percent() {
        // 35 foreground out of 100.
        let mut m = Array2::<u8>::zeros((10, 10));
        for i in 0..35 {
            m[[i / 10, i % 10]] = 1;
        }
        let w = compute_class_weight(std::slice::from_ref(&m)).unwrap();
        assert!((w - 65.0 / 35.0).abs() < 1e-12);
        assert!((w - 1.857).abs() < 2e-3);
    }

    #[test]
    fn class_weight_invariances() {
        let mut a = Array2::<u8>::zeros((4, 4));
        a[[0, 0]] = 1;
        let mut b = Array2::<u8>::ones((4, 4));
        b[[3, 3]] = 0;
        let w1 = compute_class_weight(&[a.clone(), b.clone()]).unwrap();
        let w2 = compute_class_weight(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(w1, w2);
        // Duplicating every mask leaves the ratio unchanged.
        let w3 = compute_class_weight(&[a.clone(), b.clone(), a, b]).unwrap();
        assert_eq!(w1, w3);
    }

    #[test]
    fn class_weight_no_foreground() {
        let z = Array2::<u8>::zeros((4, 4));
        assert!(matches!(
            compute_class_weight(std::slice::from_ref(&z)),
            Err(Error::NoForeground)
        ));
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("tile{i:03}")).collect()
    }

    #[test]
    fn folds_partition_evenly() {
        let split = make_folds(&ids(10), 5, 42).unwrap();
        let mut sizes = [0usize; 5];
        for (_, &f) in &split.assignment {
            sizes[f] += 1;
        }
        assert_eq!(sizes, [2; 5]);
    }

    #[test]
    fn folds_distribute_remainder() {
        let split = make_folds(&ids(11), 5, 42).unwrap();
        let mut sizes = vec![0usize; 5];
        for (_, &f) in &split.assignment {
            sizes[f] += 1;
        }
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_deterministic_and_partitioning() {
        let a = make_folds(&ids(23), 4, 7).unwrap();
        let b = make_folds(&ids(23), 4, 7).unwrap();
        assert_eq!(a, b);
        let c = make_folds(&ids(23), 4, 8).unwrap();
        assert_ne!(a, c); // different seed shuffles differently
        // Union of folds covers every id exactly once.
        assert_eq!(a.assignment.len(), 23);
        for fold in 0..4 {
            for id in a.fold_ids(fold) {
                assert!(!a.complement_ids(fold).contains(&id));
            }
        }
    }

    #[test]
    fn folds_too_few_tiles() {
        assert!(matches!(
            make_folds(&ids(3), 5, 0),
            Err(Error::TooFewTiles { n: 3, k: 5 })
        ));
        assert!(matches!(
            make_folds(&ids(5), 1, 0),
            Err(Error::TooFewTiles { .. })
        ));
    }

    #[test]
    fn raw_tile_validation() {
        let bad = Array3::<f32>::zeros((6, 4, 4));
        assert!(matches!(
            RawTile::new(bad, None, "b".into()),
            Err(Error::BandCountMismatch { found: 6, .. })
        ));
        let mut nan = Array3::<f32>::zeros((7, 4, 4));
        nan[[0, 0, 0]] = f32::NAN;
        assert!(matches!(
            RawTile::new(nan, None, "n".into()),
            Err(Error::NonFiniteData(_))
        ));
        let ok = Array3::<f32>::zeros((7, 4, 4));
        let wrong_mask = Array2::<u8>::zeros((3, 4));
        assert!(matches!(
            RawTile::new(ok, Some(wrong_mask), "m".into()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
