//! Constrained NIfTI-1 reader and debug writer.
//!
//! Accepts uncompressed single-file `.nii` with magic `n+1`, datatype uint8,
//! int16 or float32, and a usable sform. Byte order is auto-detected from
//! `dim[0]`, which must land in `[1, 7]` under exactly one interpretation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{LabelMap, Volume, VolumeError};

pub const HEADER_LEN: usize = 348;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("file too short for a NIfTI-1 header ({0} bytes)")]
    ShortHeader(usize),
    #[error("bad magic: expected \"n+1\"")]
    BadMagic,
    #[error("cannot determine byte order: dim[0] invalid in both endiannesses")]
    BadByteOrder,
    #[error("unsupported datatype {0}")]
    UnsupportedDatatype(i16),
    #[error("sform_code is 0; qform-only files are rejected")]
    NoSform,
    #[error("truncated data section: expected {expected} bytes after offset {offset}, got {got}")]
    TruncatedData {
        expected: usize,
        got: usize,
        offset: usize,
    },
    #[error("invalid dim counts {0:?}")]
    BadDim([i16; 8]),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Header {
    dims: [usize; 3],
    datatype: i16,
    scl_slope: f32,
    scl_inter: f32,
    vox_offset: usize,
    affine: [[f64; 4]; 4],
    swap: bool,
}

fn i16_at(bytes: &[u8], off: usize, swap: bool) -> i16 {
    let b = [bytes[off], bytes[off + 1]];
    if swap {
        i16::from_be_bytes(b)
    } else {
        i16::from_le_bytes(b)
    }
}

fn f32_at(bytes: &[u8], off: usize, swap: bool) -> f32 {
    let b = [bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]];
    if swap {
        f32::from_be_bytes(b)
    } else {
        f32::from_le_bytes(b)
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, NiftiError> {
    if bytes.len() < HEADER_LEN {
        return Err(NiftiError::ShortHeader(bytes.len()));
    }
    if &bytes[344..347] != b"n+1" {
        return Err(NiftiError::BadMagic);
    }
    let dim0_le = i16_at(bytes, 40, false);
    let swap = if (1..=7).contains(&dim0_le) {
        false
    } else if (1..=7).contains(&i16_at(bytes, 40, true)) {
        true
    } else {
        return Err(NiftiError::BadByteOrder);
    };

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = i16_at(bytes, 40 + i * 2, swap);
    }
    let ndim = dim[0] as usize;
    if ndim < 3 || dim[1] < 1 || dim[2] < 1 || dim[3] < 1 {
        return Err(NiftiError::BadDim(dim));
    }
    // trailing dims beyond 3 must be singleton
    for d in dim.iter().take(ndim + 1).skip(4) {
        if *d > 1 {
            return Err(NiftiError::BadDim(dim));
        }
    }

    let datatype = i16_at(bytes, 70, swap);
    if !matches!(datatype, DT_UINT8 | DT_INT16 | DT_FLOAT32) {
        return Err(NiftiError::UnsupportedDatatype(datatype));
    }

    let sform_code = i16_at(bytes, 254, swap);
    if sform_code <= 0 {
        return Err(NiftiError::NoSform);
    }
    let mut affine = [[0.0f64; 4]; 4];
    for (r, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for c in 0..4 {
            affine[r][c] = f32_at(bytes, base + c * 4, swap) as f64;
        }
    }
    affine[3] = [0.0, 0.0, 0.0, 1.0];

    Ok(Header {
        dims: [dim[1] as usize, dim[2] as usize, dim[3] as usize],
        datatype,
        scl_slope: f32_at(bytes, 112, swap),
        scl_inter: f32_at(bytes, 116, swap),
        vox_offset: f32_at(bytes, 108, swap) as usize,
        affine,
        swap,
    })
}

pub fn parse_nifti(path: impl AsRef<Path>) -> Result<Volume, NiftiError> {
    let bytes = std::fs::read(path)?;
    let h = parse_header(&bytes)?;
    let n = h.dims[0] * h.dims[1] * h.dims[2];
    let elem = match h.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        _ => 4,
    };
    let offset = h.vox_offset.max(HEADER_LEN);
    let need = n * elem;
    if bytes.len() < offset + need {
        return Err(NiftiError::TruncatedData {
            expected: need,
            got: bytes.len().saturating_sub(offset),
            offset,
        });
    }
    let raw = &bytes[offset..offset + need];
    // slope 0 is treated as 1 per the NIfTI convention
    let slope = if h.scl_slope == 0.0 { 1.0 } else { h.scl_slope };
    let inter = h.scl_inter;
    let voxels: Vec<f32> = match h.datatype {
        DT_UINT8 => raw.iter().map(|&b| b as f32 * slope + inter).collect(),
        DT_INT16 => raw
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                let v = if h.swap {
                    i16::from_be_bytes(b)
                } else {
                    i16::from_le_bytes(b)
                };
                v as f32 * slope + inter
            })
            .collect(),
        _ => raw
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                let v = if h.swap {
                    f32::from_be_bytes(b)
                } else {
                    f32::from_le_bytes(b)
                };
                v * slope + inter
            })
            .collect(),
    };
    Ok(Volume::new(h.dims, h.affine, voxels)?)
}

/// Load a NIfTI file as a label map, rounding voxel values to integer
/// labels, with structure names supplied separately.
pub fn load_label_map(
    path: impl AsRef<Path>,
    names: BTreeMap<u32, String>,
) -> Result<LabelMap, NiftiError> {
    let v = parse_nifti(path)?;
    let labels = v.voxels.iter().map(|&x| x.round().max(0.0) as u32).collect();
    Ok(LabelMap {
        dims: v.dims,
        affine: v.affine,
        labels,
        names,
    })
}

/// Voxel payloads the debug writer can emit.
#[derive(Debug, Clone)]
pub enum NiftiData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

/// Minimal NIfTI-1 writer used for round-trip tests and fixture
/// construction. Writes a single uncompressed `.nii` with an sform.
pub fn write_nifti(
    path: impl AsRef<Path>,
    dims: [usize; 3],
    affine: [[f64; 4]; 4],
    data: &NiftiData,
    scl_slope: f32,
    scl_inter: f32,
    big_endian: bool,
) -> Result<(), NiftiError> {
    let mut h = vec![0u8; HEADER_LEN];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| {
        let b = if big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        h[off..off + 2].copy_from_slice(&b);
    };
    let put_i32 = |h: &mut [u8], off: usize, v: i32| {
        let b = if big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        h[off..off + 4].copy_from_slice(&b);
    };
    let put_f32 = |h: &mut [u8], off: usize, v: f32| {
        let b = if big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        h[off..off + 4].copy_from_slice(&b);
    };

    put_i32(&mut h, 0, HEADER_LEN as i32);
    put_i16(&mut h, 40, 3);
    put_i16(&mut h, 42, dims[0] as i16);
    put_i16(&mut h, 44, dims[1] as i16);
    put_i16(&mut h, 46, dims[2] as i16);
    for i in 4..8 {
        put_i16(&mut h, 40 + i * 2, 1);
    }
    let (dt, bitpix) = match data {
        NiftiData::U8(_) => (DT_UINT8, 8),
        NiftiData::I16(_) => (DT_INT16, 16),
        NiftiData::F32(_) => (DT_FLOAT32, 32),
    };
    put_i16(&mut h, 70, dt);
    put_i16(&mut h, 72, bitpix);
    // pixdim[1..3] from affine column norms
    put_f32(&mut h, 76, 1.0);
    for c in 0..3 {
        let norm = (affine[0][c].powi(2) + affine[1][c].powi(2) + affine[2][c].powi(2)).sqrt();
        put_f32(&mut h, 80 + c * 4, norm as f32);
    }
    put_f32(&mut h, 108, 352.0); // vox_offset
    put_f32(&mut h, 112, scl_slope);
    put_f32(&mut h, 116, scl_inter);
    put_i16(&mut h, 254, 1); // sform_code
    for (r, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for c in 0..4 {
            put_f32(&mut h, base + c * 4, affine[r][c] as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&h)?;
    f.write_all(&[0u8; 4])?; // pad to vox_offset 352
    match data {
        NiftiData::U8(v) => f.write_all(v)?,
        NiftiData::I16(v) => {
            for x in v {
                let b = if big_endian {
                    x.to_be_bytes()
                } else {
                    x.to_le_bytes()
                };
                f.write_all(&b)?;
            }
        }
        NiftiData::F32(v) => {
            for x in v {
                let b = if big_endian {
                    x.to_be_bytes()
                } else {
                    x.to_le_bytes()
                };
                f.write_all(&b)?;
            }
        }
    }
    f.flush()?;
    Ok(())
}
