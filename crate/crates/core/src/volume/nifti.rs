//! Read-only NIfTI-1 single-file (`.nii`) ingestion.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use super::Volume;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy)]
enum Dtype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Dtype {
    fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Dtype::U8,
            4 => Dtype::I16,
            8 => Dtype::I32,
            16 => Dtype::F32,
            64 => Dtype::F64,
            other => return Err(Error::UnsupportedDtype(other)),
        })
    }

    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::I32 | Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

struct Fields {
    dims: [usize; 3],
    channels: usize,
    dtype: Dtype,
    vox_offset: usize,
    slope: f32,
    inter: f32,
}

fn parse_header<E: ByteOrder>(h: &[u8]) -> Result<Fields> {
    let magic = &h[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(Error::NotNifti(format!("magic {magic:?}")));
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = E::read_i16(&h[offsets::DIM + 2 * i..]);
    }
    let rank = dim[0];
    if !(3..=4).contains(&rank) {
        return Err(Error::NotNifti(format!("dim[0] = {rank}, expected 3 or 4")));
    }
    let extent = |i: usize| -> Result<usize> {
        let d = dim[i];
        if d < 1 {
            return Err(Error::CorruptFile(format!("dim[{i}] = {d}")));
        }
        Ok(d as usize)
    };
    let dims = [extent(1)?, extent(2)?, extent(3)?];
    let channels = if rank == 4 { extent(4)? } else { 1 };

    let code = E::read_i16(&h[offsets::DATATYPE..]);
    let dtype = Dtype::from_code(code)?;
    let bitpix = E::read_i16(&h[offsets::BITPIX..]);
    if bitpix as usize != dtype.size() * 8 {
        return Err(Error::CorruptFile(format!(
            "bitpix {bitpix} disagrees with datatype {code}"
        )));
    }
    let vox_offset = E::read_f32(&h[offsets::VOX_OFFSET..]);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(Error::CorruptFile(format!("vox_offset {vox_offset}")));
    }
    Ok(Fields {
        dims,
        channels,
        dtype,
        vox_offset: vox_offset as usize,
        slope: E::read_f32(&h[offsets::SCL_SLOPE..]),
        inter: E::read_f32(&h[offsets::SCL_INTER..]),
    })
}

fn decode<E: ByteOrder>(fields: &Fields, payload: &[u8]) -> Vec<f32> {
    let n = payload.len() / fields.dtype.size();
    let mut out = Vec::with_capacity(n);
    match fields.dtype {
        Dtype::U8 => out.extend(payload.iter().map(|&b| b as f32)),
        Dtype::I16 => out.extend(payload.chunks_exact(2).map(|c| E::read_i16(c) as f32)),
        Dtype::I32 => out.extend(payload.chunks_exact(4).map(|c| E::read_i32(c) as f32)),
        Dtype::F32 => out.extend(payload.chunks_exact(4).map(E::read_f32)),
        Dtype::F64 => out.extend(payload.chunks_exact(8).map(|c| E::read_f64(c) as f32)),
    }
    // scl_slope == 0 (or NaN) means "no scaling"
    if fields.slope != 0.0 && fields.slope.is_finite() {
        let (a, b) = (fields.slope, fields.inter);
        let b = if b.is_finite() { b } else { 0.0 };
        if a != 1.0 || b != 0.0 {
            for v in &mut out {
                *v = *v * a + b;
            }
        }
    }
    out
}

/// Load an uncompressed single-file NIfTI-1 volume.
///
/// NIfTI stores voxels x-fastest then y, z and the 4th dimension, which is
/// already this crate's layout with `dim[4]` as the channel axis. Both byte
/// orders are accepted; the order is detected from `sizeof_hdr`.
pub fn load_nifti1(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::CorruptFile(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let h = &bytes[..HEADER_SIZE];
    let little = LittleEndian::read_i32(&h[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32;
    let big = BigEndian::read_i32(&h[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32;
    if !little && !big {
        return Err(Error::NotNifti("sizeof_hdr is not 348".into()));
    }
    let fields = if little {
        parse_header::<LittleEndian>(h)?
    } else {
        parse_header::<BigEndian>(h)?
    };
    let count = fields.dims.iter().product::<usize>() * fields.channels;
    let end = fields.vox_offset + count * fields.dtype.size();
    if bytes.len() < end {
        return Err(Error::CorruptFile(format!(
            "payload truncated: {} bytes, need {end}",
            bytes.len()
        )));
    }
    let payload = &bytes[fields.vox_offset..end];
    let data = if little {
        decode::<LittleEndian>(&fields, payload)
    } else {
        decode::<BigEndian>(&fields, payload)
    };
    Volume::from_vec(fields.dims, fields.channels, data)
}
