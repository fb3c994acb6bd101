//! Multi-channel 3D volumes.
//!
//! Voxels are stored as `f32` with the channel outermost and `x` fastest:
//! `index = ((c * L + z) * H + y) * W + x`. Slabs perpendicular to the axial
//! (`z`) axis are therefore contiguous blocks of memory.

mod files;
mod nifti;
mod raw;

pub use files::{is_nifti, load_volume, raw_paths, save_volume};

pub use nifti::load_nifti1;
pub use raw::{load_raw, save_raw, save_raw_with, VolumeHeader, DTYPE_TAG, LAYOUT_TAG};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    channels: usize,
    data: Vec<f32>,
}

impl Volume {
    /// A zero-filled volume. Panics if any extent is zero.
    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        assert!(
            dims.iter().all(|&d| d >= 1) && channels >= 1,
            "volume extents must be positive"
        );
        Volume {
            dims,
            channels,
            data: vec![0.0; dims[0] * dims[1] * dims[2] * channels],
        }
    }

    /// Wrap an existing buffer, checking its length and that every value is
    /// finite.
    pub fn from_vec(dims: [usize; 3], channels: usize, data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || channels == 0 {
            return Err(Error::Shape(format!(
                "extents must be positive, got {dims:?} x {channels}"
            )));
        }
        let want = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != want {
            return Err(Error::Shape(format!(
                "buffer holds {} values, dims {dims:?} x {channels} need {want}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite value at index {i}")));
        }
        Ok(Volume {
            dims,
            channels,
            data,
        })
    }

    /// Build a volume from a function of `(c, x, y, z)`.
    pub fn from_fn(
        dims: [usize; 3],
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut v = Volume::zeros(dims, channels);
        let [w, h, l] = dims;
        let mut i = 0;
        for c in 0..channels {
            for z in 0..l {
                for y in 0..h {
                    for x in 0..w {
                        v.data[i] = f(c, x, y, z);
                        i += 1;
                    }
                }
            }
        }
        v
    }

    /// `[W, H, L]`.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Voxels per channel.
    pub fn channel_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.channel_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        let [w, h, l] = self.dims;
        ((c * l + z) * h + y) * w + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(c, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, value: f32) {
        let i = self.index(c, x, y, z);
        self.data[i] = value;
    }

    /// Minimum and maximum over all channels.
    pub fn value_range(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Same dims and channel count.
    pub fn same_shape(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }
}

/// Extract the box `[origin, origin + size)` from every channel.
pub fn crop(volume: &Volume, origin: [usize; 3], size: [usize; 3]) -> Result<Volume> {
    for a in 0..3 {
        if size[a] == 0 || origin[a] + size[a] > volume.dims[a] {
            return Err(Error::CropOutOfRange(format!(
                "origin {origin:?} size {size:?} exceeds dims {:?}",
                volume.dims
            )));
        }
    }
    let [w, h, l] = size;
    let mut out = Vec::with_capacity(w * h * l * volume.channels);
    for c in 0..volume.channels {
        for z in 0..l {
            for y in 0..h {
                let start = volume.index(c, origin[0], origin[1] + y, origin[2] + z);
                out.extend_from_slice(&volume.data[start..start + w]);
            }
        }
    }
    Ok(Volume {
        dims: size,
        channels: volume.channels,
        data: out,
    })
}

/// Crop at an origin drawn uniformly per axis from `[0, dim - size]`.
pub fn random_crop(volume: &Volume, size: [usize; 3], seed: u64) -> Result<(Volume, [usize; 3])> {
    if (0..3).any(|a| size[a] == 0 || size[a] > volume.dims[a]) {
        return Err(Error::CropTooLarge(format!(
            "size {size:?} vs dims {:?}",
            volume.dims
        )));
    }
    let mut rng = seed::stream(seed, &[0xC0]);
    let mut origin = [0usize; 3];
    for a in 0..3 {
        origin[a] = rng.random_range(0..=volume.dims[a] - size[a]);
    }
    Ok((crop(volume, origin, size)?, origin))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// Per-channel affine map of `[min, max]` onto `[0, 1]`; constant channels map to 0.
    #[default]
    Minmax01,
    /// Per-channel mean 0, population standard deviation 1.
    Zscore,
}

impl std::str::FromStr for NormalizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax01" => Ok(NormalizeMode::Minmax01),
            "zscore" => Ok(NormalizeMode::Zscore),
            other => Err(Error::BadMode(other.to_string())),
        }
    }
}

pub fn normalize(volume: &Volume, mode: NormalizeMode) -> Result<Volume> {
    let mut out = volume.clone();
    let n = volume.channel_len();
    for c in 0..volume.channels {
        let chan = &mut out.data[c * n..(c + 1) * n];
        match mode {
            NormalizeMode::Minmax01 => {
                let (lo, hi) = chan
                    .iter()
                    .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                if lo == hi {
                    chan.fill(0.0);
                } else {
                    let (lo, span) = (lo as f64, hi as f64 - lo as f64);
                    for v in chan.iter_mut() {
                        *v = ((*v as f64 - lo) / span) as f32;
                    }
                }
            }
            NormalizeMode::Zscore => {
                let mean = chan.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                let var = chan
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>()
                    / n as f64;
                if var <= 0.0 {
                    return Err(Error::DegenerateChannel(c));
                }
                let sd = var.sqrt();
                for v in chan.iter_mut() {
                    *v = ((*v as f64 - mean) / sd) as f32;
                }
            }
        }
    }
    Ok(out)
}
