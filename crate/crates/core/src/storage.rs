//! Tile persistence: format selection by extension (`.tif`/`.tiff` vs the
//! raw `.mmt` fallback) and mask transport, either as a sibling single-band
//! file or as an 8th band.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tile::{RawTile, BAND_COUNT};
use crate::{geotiff, raw_format};

/// Where a tile's mask lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// `<stem>.mask.<ext>` next to the tile file (default).
    #[default]
    Sibling,
    /// The tile file carries 8 bands; band 8 is the mask.
    Band8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Tiff,
    Raw,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tif") | Some("tiff") => Ok(Format::Tiff),
        Some("mmt") => Ok(Format::Raw),
        other => Err(Error::Format(format!(
            "unknown tile extension {other:?} for {}",
            path.display()
        ))),
    }
}

pub fn mask_path_for(tile_path: &Path) -> PathBuf {
    let stem = tile_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("tile");
    let ext = tile_path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("mmt");
    let mask_ext = if ext == "mmt" { "mmu" } else { ext };
    tile_path.with_file_name(format!("{stem}.mask.{mask_ext}"))
}

fn tile_id_of(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("tile")
        .to_string()
}

fn read_raster(path: &Path) -> Result<Array3<f32>> {
    match format_of(path)? {
        Format::Tiff => geotiff::read_raster(path),
        Format::Raw => raw_format::read_float_raster(path),
    }
}

fn band8_to_mask(band: ndarray::ArrayView2<f32>) -> Result<Array2<u8>> {
    let mut mask = Array2::<u8>::zeros(band.dim());
    for (out, &v) in mask.iter_mut().zip(band.iter()) {
        *out = if v == 0.0 {
            0
        } else if v == 1.0 {
            1
        } else {
            return Err(Error::NonBinaryInput);
        };
    }
    Ok(mask)
}

/// Load a tile. The raster must carry exactly 7 bands (8 with
/// `MaskSource::Band8`) of equal square spatial size; a sibling mask file
/// is picked up when present.
pub fn load_tile(path: &Path, mask_source: MaskSource) -> Result<RawTile> {
    let raster = read_raster(path)?;
    let (c, _, _) = raster.dim();
    let (bands, mask) = match mask_source {
        MaskSource::Band8 => {
            if c != BAND_COUNT + 1 {
                return Err(Error::BandCountMismatch {
                    expected: BAND_COUNT + 1,
                    found: c,
                    path: path.to_path_buf(),
                });
            }
            let mask = band8_to_mask(raster.index_axis(Axis(0), BAND_COUNT))?;
            let bands = raster.slice(ndarray::s![..BAND_COUNT, .., ..]).to_owned();
            (bands, Some(mask))
        }
        MaskSource::Sibling => {
            if c != BAND_COUNT {
                return Err(Error::BandCountMismatch {
                    expected: BAND_COUNT,
                    found: c,
                    path: path.to_path_buf(),
                });
            }
            let mask_path = mask_path_for(path);
            let mask = if mask_path.exists() {
                Some(match format_of(&mask_path) {
                    Ok(Format::Tiff) => geotiff::read_mask(&mask_path)?,
                    _ => raw_format::read_mask(&mask_path)?,
                })
            } else {
                None
            };
            (raster, mask)
        }
    };
    RawTile::new(bands, mask, tile_id_of(path))
}

/// Save a tile (and, with `MaskSource::Sibling`, its mask next to it).
pub fn save_tile(path: &Path, tile: &RawTile, mask_source: MaskSource) -> Result<()> {
    match mask_source {
        MaskSource::Band8 => {
            let (_, h, w) = tile.bands.dim();
            let mut stacked = Array3::<f32>::zeros((BAND_COUNT + 1, h, w));
            stacked
                .slice_mut(ndarray::s![..BAND_COUNT, .., ..])
                .assign(&tile.bands);
            if let Some(mask) = &tile.mask {
                let band8 = mask.mapv(|v| v as f32);
                stacked.index_axis_mut(Axis(0), BAND_COUNT).assign(&band8);
            }
            match format_of(path)? {
                Format::Tiff => geotiff::write_raster(path, &stacked),
                Format::Raw => raw_format::write_float_raster(path, &stacked),
            }
        }
        MaskSource::Sibling => {
            match format_of(path)? {
                Format::Tiff => geotiff::write_raster(path, &tile.bands)?,
                Format::Raw => raw_format::write_float_raster(path, &tile.bands)?,
            }
            if let Some(mask) = &tile.mask {
                let mask_path = mask_path_for(path);
                match format_of(path)? {
                    Format::Tiff => geotiff::write_mask(&mask_path, mask)?,
                    Format::Raw => raw_format::write_mask(&mask_path, mask)?,
                }
            }
            Ok(())
        }
    }
}

/// Write a predicted mask with the format implied by the extension.
pub fn save_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tif") | Some("tiff") => geotiff::write_mask(path, mask),
        _ => raw_format::write_mask(path, mask),
    }
}

/// List tile files (not masks) in a directory, sorted by name.
pub fn list_tiles(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
        let is_tile = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("tif") | Some("tiff") | Some("mmt")
        );
        if is_tile && !name.contains(".mask.") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Load every tile in a directory.
pub fn load_dir(dir: &Path, mask_source: MaskSource) -> Result<Vec<RawTile>> {
    let paths = list_tiles(dir)?;
    if paths.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no tiles in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_tile(p, mask_source)).collect()
}
