//! Synthetic blob volumes with per-voxel class labels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub count: usize,
    pub dims: [usize; 3],
    pub channels: usize,
    /// Inclusive range of blobs per volume.
    pub blobs: [usize; 2],
    /// Blob radius range in voxels.
    pub radius: [f64; 2],
    /// Width of the soft blob edge in voxels; 0 gives hard balls.
    pub smoothness: f64,
    pub noise_sd: f64,
    /// Radii splitting blobs into size bands; band `i` is labeled `i + 1`.
    pub band_edges: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 32,
            dims: [20, 20, 20],
            channels: 1,
            blobs: [2, 5],
            radius: [2.0, 5.0],
            smoothness: 1.0,
            noise_sd: 0.05,
            band_edges: vec![3.5],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if self.count == 0 || self.channels == 0 || self.dims.iter().any(|&d| d == 0) {
            return bad(format!("count {} x {:?} x {} channels", self.count, self.dims, self.channels));
        }
        if self.blobs[0] > self.blobs[1] {
            return bad(format!("blob range {:?}", self.blobs));
        }
        let [r0, r1] = self.radius;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad(format!("radius range {:?}", self.radius));
        }
        let min_dim = *self.dims.iter().min().unwrap() as f64;
        if self.blobs[1] > 0 && 2.0 * r1 >= min_dim {
            return bad(format!("radius {r1} does not fit inside {:?}", self.dims));
        }
        if !(self.smoothness >= 0.0 && self.noise_sd >= 0.0) {
            return bad("smoothness and noise must be non-negative".into());
        }
        if self.band_edges.windows(2).any(|w| w[0] >= w[1]) || self.band_edges.len() > 254 {
            return bad(format!("band edges {:?} must increase", self.band_edges));
        }
        Ok(())
    }

    /// Background plus one class per size band.
    pub fn num_classes(&self) -> usize {
        self.band_edges.len() + 2
    }

    fn class_of(&self, radius: f64) -> u8 {
        (self.band_edges.iter().filter(|&&e| radius >= e).count() + 1) as u8
    }
}

/// Volumes and their label masks (`x` fastest, one label per voxel).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub volumes: Vec<Volume>,
    pub masks: Vec<Vec<u8>>,
}

struct Blob {
    center: [f64; 3],
    radius: f64,
    amplitude: Vec<f64>,
    class: u8,
}

fn one_volume(spec: &SyntheticSpec, index: usize) -> (Volume, Vec<u8>) {
    let mut rng = seed::stream(spec.seed, &[0x5E7, index as u64]);
    let n = rng.random_range(spec.blobs[0]..=spec.blobs[1]);
    let blobs: Vec<Blob> = (0..n)
        .map(|_| {
            let radius = if spec.radius[0] == spec.radius[1] {
                spec.radius[0]
            } else {
                rng.random_range(spec.radius[0]..spec.radius[1])
            };
            let center = std::array::from_fn(|a| {
                let hi = spec.dims[a] as f64 - 1.0 - radius;
                rng.random_range(radius..=hi.max(radius))
            });
            Blob {
                center,
                radius,
                amplitude: (0..spec.channels).map(|_| rng.random_range(0.5..1.0)).collect(),
                class: spec.class_of(radius),
            }
        })
        .collect();

    let [w, h, l] = spec.dims;
    let sp = w * h * l;
    let mut data = vec![0f32; spec.channels * sp];
    let mut mask = vec![0u8; sp];
    let mut field = vec![0f64; spec.channels];
    for z in 0..l {
        for y in 0..h {
            for x in 0..w {
                field.iter_mut().for_each(|v| *v = 0.0);
                let i = (z * h + y) * w + x;
                for b in &blobs {
                    let d = ((x as f64 - b.center[0]).powi(2)
                        + (y as f64 - b.center[1]).powi(2)
                        + (z as f64 - b.center[2]).powi(2))
                    .sqrt();
                    let profile = if spec.smoothness == 0.0 {
                        (d <= b.radius) as u8 as f64
                    } else {
                        1.0 / (1.0 + ((d - b.radius) / spec.smoothness).exp())
                    };
                    for (f, a) in field.iter_mut().zip(&b.amplitude) {
                        *f += a * profile;
                    }
                    if d <= b.radius {
                        mask[i] = b.class;
                    }
                }
                for (c, &f) in field.iter().enumerate() {
                    data[c * sp + i] = f as f32;
                }
            }
        }
    }
    if spec.noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sd).expect("validated sd");
        for v in &mut data {
            *v += noise.sample(&mut rng) as f32;
        }
    }
    let volume = Volume::from_vec(spec.dims, spec.channels, data).expect("finite synthetic data");
    (volume, mask)
}

/// `spec.count` volumes, each drawn from its own stream under `spec.seed`.
pub fn synth_volumes(spec: &SyntheticSpec) -> Result<SyntheticSet> {
    spec.validate()?;
    let (volumes, masks) = (0..spec.count)
        .into_par_iter()
        .map(|i| one_volume(spec, i))
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();
    Ok(SyntheticSet { volumes, masks })
}
