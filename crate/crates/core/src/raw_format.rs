//! Raw little-endian raster container used as the GeoTIFF fallback.
//!
//! Float rasters: header `{magic "MMT1", u32 C, u32 H, u32 W}` followed by
//! C*H*W float32 values, row-major within a channel, channel-major overall.
//! Masks use the byte variant `{magic "MMU1", u32 C=1, u32 H, u32 W}`
//! followed by H*W u8 values in {0,1}.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub const FLOAT_MAGIC: &[u8; 4] = b"MMT1";
pub const BYTE_MAGIC: &[u8; 4] = b"MMU1";

fn read_header(r: &mut impl Read, expect_magic: &[u8; 4]) -> Result<(usize, usize, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != expect_magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expect_magic)
        )));
    }
    let mut buf = [0u8; 4];
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        r.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    Ok((dims[0], dims[1], dims[2]))
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], c: usize, h: usize, wd: usize) -> Result<()> {
    w.write_all(magic)?;
    for d in [c, h, wd] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_float_raster(path: &Path, data: &Array3<f32>) -> Result<()> {
    let (c, h, w) = data.dim();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut file, FLOAT_MAGIC, c, h, w)?;
    let contiguous = data.as_standard_layout();
    for v in contiguous.iter() {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_float_raster(path: &Path) -> Result<Array3<f32>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let (c, h, w) = read_header(&mut file, FLOAT_MAGIC)?;
    let mut bytes = vec![0u8; c * h * w * 4];
    file.read_exact(&mut bytes)?;
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Array3::from_shape_vec((c, h, w), values)
        .map_err(|e| Error::Format(format!("raster shape: {e}")))
}

pub fn write_mask(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut file, BYTE_MAGIC, 1, h, w)?;
    let contiguous = mask.as_standard_layout();
    for v in contiguous.iter() {
        file.write_all(&[*v])?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Array2<u8>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let (c, h, w) = read_header(&mut file, BYTE_MAGIC)?;
    if c != 1 {
        return Err(Error::Format(format!("mask must be single band, got {c}")));
    }
    let mut bytes = vec![0u8; h * w];
    file.read_exact(&mut bytes)?;
    if bytes.iter().any(|&v| v > 1) {
        return Err(Error::NonBinaryInput);
    }
    Array2::from_shape_vec((h, w), bytes).map_err(|e| Error::Format(format!("mask shape: {e}")))
}
