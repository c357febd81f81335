//! Little-endian DFLD (displacement field) and MSK1 (voxel mask) files.
//!
//! Both share a 44-byte header: 4-byte magic, u32 version, u32 nx/ny/nz,
//! f64 sx/sy/sz. The payload follows in x-fastest voxel order: three f32
//! components per voxel for DFLD, one byte in {0, 1} per voxel for MSK1.

use std::io::Write;
use std::path::Path;

use super::{DisplacementField, Grid, VoxelMask};
use crate::error::{Error, Result};

pub const DFLD_MAGIC: &[u8; 4] = b"DFLD";
pub const MASK_MAGIC: &[u8; 4] = b"MSK1";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 3 * 4 + 3 * 8;

fn decode_header<'a>(bytes: &'a [u8], magic: &[u8; 4], bytes_per_voxel: usize) -> Result<(Grid, &'a [u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());

    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    let spacing = [f64_at(20), f64_at(28), f64_at(36)];
    let grid = Grid::new(dims, spacing)?;

    let payload = &bytes[HEADER_LEN..];
    let expected = grid
        .len()
        .checked_mul(bytes_per_voxel)
        .ok_or_else(|| Error::Format(format!("grid {dims:?} is too large")))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, grid {dims:?} needs {expected}",
            payload.len()
        )));
    }
    Ok((grid, payload))
}

fn encode_header(out: &mut Vec<u8>, magic: &[u8; 4], grid: &Grid) -> Result<()> {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for &d in &grid.dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::Dimension(format!("dim {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &s in &grid.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(())
}

pub fn decode_displacement_field(bytes: &[u8]) -> Result<DisplacementField> {
    let (grid, payload) = decode_header(bytes, DFLD_MAGIC, 12)?;
    let vectors = payload
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()) as f64;
            [f(0), f(4), f(8)]
        })
        .collect();
    DisplacementField::new(grid, vectors)
}

/// Components are narrowed to f32 on disk.
pub fn encode_displacement_field(field: &DisplacementField) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + field.vectors().len() * 12);
    encode_header(&mut out, DFLD_MAGIC, field.grid())?;
    for v in field.vectors() {
        for &c in v {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_voxel_mask(bytes: &[u8]) -> Result<VoxelMask> {
    let (grid, payload) = decode_header(bytes, MASK_MAGIC, 1)?;
    let voxels = payload
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    VoxelMask::new(grid, voxels)
}

pub fn encode_voxel_mask(mask: &VoxelMask) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + mask.voxels().len());
    encode_header(&mut out, MASK_MAGIC, mask.grid())?;
    out.extend(mask.voxels().iter().map(|&v| v as u8));
    Ok(out)
}

pub fn read_displacement_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    decode_displacement_field(&std::fs::read(path).map_err(|e| Error::io_at(path, e))?)
}

pub fn read_voxel_mask(path: impl AsRef<Path>) -> Result<VoxelMask> {
    let path = path.as_ref();
    decode_voxel_mask(&std::fs::read(path).map_err(|e| Error::io_at(path, e))?)
}

pub fn write_displacement_field(path: impl AsRef<Path>, field: &DisplacementField) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_displacement_field(field)?)?;
    Ok(())
}

pub fn write_voxel_mask(path: impl AsRef<Path>, mask: &VoxelMask) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_voxel_mask(mask)?)?;
    Ok(())
}
