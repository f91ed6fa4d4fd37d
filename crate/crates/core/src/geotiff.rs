//! GeoTIFF-compatible TIFF input/output for multiband float rasters and
//! single-band u8 masks.
//!
//! Reading accepts any uncompressed/deflate baseline TIFF whose samples
//! decode to f32 (or u8/u16 promoted to f32), pixel-interleaved. Writing
//! emits uncompressed chunky TIFFs; georeferencing tags of source files
//! are not preserved.

use std::path::Path;

use ndarray::{Array2, Array3};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::colortype::{self, ColorType};
use tiff::encoder::TiffEncoder;
use tiff::tags::{PhotometricInterpretation, SampleFormat};

use crate::error::{Error, Result};

/// Seven-band float32 sample layout for the encoder.
pub struct Multiband7F32;

impl ColorType for Multiband7F32 {
    type Inner = f32;
    const TIFF_VALUE: PhotometricInterpretation = PhotometricInterpretation::BlackIsZero;
    const BITS_PER_SAMPLE: &'static [u16] = &[32; 7];
    const SAMPLE_FORMAT: &'static [SampleFormat] = &[SampleFormat::IEEEFP; 7];

    fn horizontal_predict(_row: &[Self::Inner], _result: &mut Vec<Self::Inner>) {
        unreachable!("horizontal prediction is not used for float samples")
    }
}

/// Eight-band variant used when the mask travels as band 8.
pub struct Multiband8F32;

impl ColorType for Multiband8F32 {
    type Inner = f32;
    const TIFF_VALUE: PhotometricInterpretation = PhotometricInterpretation::BlackIsZero;
    const BITS_PER_SAMPLE: &'static [u16] = &[32; 8];
    const SAMPLE_FORMAT: &'static [SampleFormat] = &[SampleFormat::IEEEFP; 8];

    fn horizontal_predict(_row: &[Self::Inner], _result: &mut Vec<Self::Inner>) {
        unreachable!("horizontal prediction is not used for float samples")
    }
}

fn decode_to_f32(result: DecodingResult) -> Result<Vec<f32>> {
    match result {
        DecodingResult::F32(v) => Ok(v),
        DecodingResult::F64(v) => Ok(v.into_iter().map(|x| x as f32).collect()),
        DecodingResult::U8(v) => Ok(v.into_iter().map(|x| x as f32).collect()),
        DecodingResult::U16(v) => Ok(v.into_iter().map(|x| x as f32).collect()),
        DecodingResult::U32(v) => Ok(v.into_iter().map(|x| x as f32).collect()),
        DecodingResult::I8(v) => Ok(v.into_iter().map(|x| x as f32).collect()),
        DecodingResult::I16(v) => Ok(v.into_iter().map(|x| x as f32).collect()),
        DecodingResult::I32(v) => Ok(v.into_iter().map(|x| x as f32).collect()),
        other => Err(Error::Format(format!(
            "unsupported TIFF sample type {other:?}"
        ))),
    }
}

/// Read a pixel-interleaved multiband TIFF into channel-major (C,H,W).
pub fn read_raster(path: &Path) -> Result<Array3<f32>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut decoder = Decoder::new(file)?;
    let (w, h) = decoder.dimensions()?;
    let (w, h) = (w as usize, h as usize);
    let samples = decoder.colortype()?;
    let bands = match samples {
        tiff::ColorType::Gray(_) => 1,
        tiff::ColorType::RGB(_) => 3,
        tiff::ColorType::RGBA(_) => 4,
        tiff::ColorType::Multiband { num_samples, .. } => num_samples as usize,
        other => {
            return Err(Error::Format(format!(
                "unsupported TIFF color type {other:?}"
            )))
        }
    };
    let flat = decode_to_f32(decoder.read_image()?)?;
    if flat.len() != bands * h * w {
        return Err(Error::Format(format!(
            "TIFF payload {} != {}x{}x{}",
            flat.len(),
            bands,
            h,
            w
        )));
    }
    // De-interleave chunky samples into channel-major layout.
    let mut out = Array3::<f32>::zeros((bands, h, w));
    for r in 0..h {
        for c in 0..w {
            let base = (r * w + c) * bands;
            for b in 0..bands {
                out[[b, r, c]] = flat[base + b];
            }
        }
    }
    Ok(out)
}

fn interleave(data: &Array3<f32>) -> Vec<f32> {
    let (bands, h, w) = data.dim();
    let mut flat = Vec::with_capacity(bands * h * w);
    for r in 0..h {
        for c in 0..w {
            for b in 0..bands {
                flat.push(data[[b, r, c]]);
            }
        }
    }
    flat
}

/// Write a channel-major (C,H,W) float raster as a chunky multiband TIFF.
/// Supports C in {1, 7, 8}.
pub fn write_raster(path: &Path, data: &Array3<f32>) -> Result<()> {
    let (bands, h, w) = data.dim();
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut encoder = TiffEncoder::new(file)?;
    let flat = interleave(data);
    match bands {
        1 => encoder.write_image::<colortype::Gray32Float>(w as u32, h as u32, &flat)?,
        7 => encoder.write_image::<Multiband7F32>(w as u32, h as u32, &flat)?,
        8 => encoder.write_image::<Multiband8F32>(w as u32, h as u32, &flat)?,
        n => {
            return Err(Error::Format(format!(
                "TIFF writer supports 1, 7 or 8 bands, got {n}"
            )))
        }
    }
    Ok(())
}

/// Write a binary mask as a single-band uint8 TIFF.
pub fn write_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut encoder = TiffEncoder::new(file)?;
    let contiguous = mask.as_standard_layout();
    let flat: Vec<u8> = contiguous.iter().copied().collect();
    encoder.write_image::<colortype::Gray8>(w as u32, h as u32, &flat)?;
    Ok(())
}

/// Read a single-band TIFF as a binary mask. The raster must be strictly
/// {0,1}-valued; anything else is rejected.
pub fn read_mask(path: &Path) -> Result<Array2<u8>> {
    let raster = read_raster(path)?;
    let (c, h, w) = raster.dim();
    if c != 1 {
        return Err(Error::Format(format!("mask TIFF must have 1 band, got {c}")));
    }
    let mut mask = Array2::<u8>::zeros((h, w));
    for r in 0..h {
        for col in 0..w {
            let v = raster[[0, r, col]];
            if v == 0.0 {
                mask[[r, col]] = 0;
            } else if v == 1.0 {
                mask[[r, col]] = 1;
            } else {
                return Err(Error::NonBinaryInput);
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_band_round_trip() {
        let dir = std::env::temp_dir().join("dualseg-tiff-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t7.tif");
        let data = Array3::from_shape_fn((7, 12, 12), |(b, r, c)| {
            (b as f32 + 1.0) * 0.1 + r as f32 - c as f32 * 0.01
        });
        write_raster(&path, &data).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!(back.dim(), (7, 12, 12));
        for (a, b) in data.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mask_round_trip() {
        let dir = std::env::temp_dir().join("dualseg-tiff-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.tif");
        let mut mask = Array2::<u8>::zeros((9, 11));
        mask[[0, 0]] = 1;
        mask[[8, 10]] = 1;
        write_mask(&path, &mask).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
    }
}
