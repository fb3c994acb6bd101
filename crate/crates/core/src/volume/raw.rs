//! `<name>.json` header + `<name>.f32` little-endian payload.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

pub const DTYPE_TAG: &str = "float32-le";
pub const LAYOUT_TAG: &str = "c-z-y-x";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    /// `[W, H, L]`
    pub dims: [usize; 3],
    pub channels: usize,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default = "default_layout")]
    pub layout: String,
    /// Voxel spacing in millimetres.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<[f32; 3]>,
}

fn default_dtype() -> String {
    DTYPE_TAG.to_string()
}

fn default_layout() -> String {
    LAYOUT_TAG.to_string()
}

impl VolumeHeader {
    pub fn for_volume(v: &Volume) -> Self {
        VolumeHeader {
            dims: v.dims(),
            channels: v.channels(),
            dtype: default_dtype(),
            layout: default_layout(),
            spacing: None,
        }
    }

    pub fn payload_bytes(&self) -> usize {
        self.dims.iter().product::<usize>() * self.channels * 4
    }

    fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE_TAG {
            return Err(Error::BadHeader(format!("dtype {:?}", self.dtype)));
        }
        if self.layout != LAYOUT_TAG {
            return Err(Error::BadHeader(format!("layout {:?}", self.layout)));
        }
        if self.dims.iter().any(|&d| d == 0) || self.channels == 0 {
            return Err(Error::BadHeader(format!(
                "zero extent in {:?} x {}",
                self.dims, self.channels
            )));
        }
        Ok(())
    }
}

pub fn load_raw(header_path: &Path, data_path: &Path) -> Result<Volume> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::read(header_path, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::BadHeader(e.to_string()))?;
    header.validate()?;
    let bytes = fs::read(data_path).map_err(|e| Error::read(data_path, e))?;
    if bytes.len() != header.payload_bytes() {
        return Err(Error::CorruptVolume(format!(
            "{} bytes, header implies {}",
            bytes.len(),
            header.payload_bytes()
        )));
    }
    let mut data = vec![0f32; bytes.len() / 4];
    LittleEndian::read_f32_into(&bytes, &mut data);
    Volume::from_vec(header.dims, header.channels, data)
}

pub fn save_raw(volume: &Volume, header_path: &Path, data_path: &Path) -> Result<()> {
    save_raw_with(volume, &VolumeHeader::for_volume(volume), header_path, data_path)
}

/// Like [`save_raw`] but with a caller-supplied header (e.g. to carry spacing).
pub fn save_raw_with(
    volume: &Volume,
    header: &VolumeHeader,
    header_path: &Path,
    data_path: &Path,
) -> Result<()> {
    if header.dims != volume.dims() || header.channels != volume.channels() {
        return Err(Error::BadHeader("header does not describe volume".into()));
    }
    let mut bytes = vec![0u8; volume.data().len() * 4];
    LittleEndian::write_f32_into(volume.data(), &mut bytes);
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(header_path, json + "\n").map_err(Error::Write)?;
    fs::write(data_path, bytes).map_err(Error::Write)?;
    Ok(())
}
