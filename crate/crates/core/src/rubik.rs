//! Cube-layer rotation algebra.
//!
//! A volume of extent `W x H x L` is partitioned into subcubes of side
//! `[n_w, n_h, n_l]`, giving a `floor(W/n_w) x floor(H/n_h) x floor(L/n_l)`
//! grid. A *cube layer* is a one-subcube-thick slab perpendicular to an axis;
//! rotating it permutes the voxels of that slab in-plane. Subcubes never move
//! on their own. Voxels beyond the covered extent (when a dimension is not a
//! multiple of the side) are never touched.
//!
//! Disarrangement draws, for each axis in the fixed order sagittal, coronal,
//! axial, `m` distinct layers and one admissible angle per layer, then applies
//! the rotations in draw order. The full draw is kept in a
//! [`DisarrangeRecord`], so the inverse is exact.

use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::volume::Volume;

/// Anatomical axis, mapped onto the volume's index axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// `x`, extent `W`
    Sagittal,
    /// `y`, extent `H`
    Coronal,
    /// `z`, extent `L`
    Axial,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Sagittal, Axis::Coronal, Axis::Axial];

    pub fn index(self) -> usize {
        match self {
            Axis::Sagittal => 0,
            Axis::Coronal => 1,
            Axis::Axial => 2,
        }
    }

    /// The in-plane `(u, v)` axes, ordered so that `(u, v, axis)` is a
    /// right-handed frame. A positive quarter turn is counter-clockwise when
    /// viewed from the positive end of `self`.
    pub fn plane(self) -> (usize, usize) {
        match self {
            Axis::Sagittal => (1, 2),
            Axis::Coronal => (2, 0),
            Axis::Axial => (0, 1),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Sagittal => "sagittal",
            Axis::Coronal => "coronal",
            Axis::Axial => "axial",
        })
    }
}

/// A non-trivial in-plane rotation. Serialized as degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u16", try_from = "u16")]
pub enum Angle {
    Deg90,
    Deg180,
    Deg270,
}

impl Angle {
    pub const ALL: [Angle; 3] = [Angle::Deg90, Angle::Deg180, Angle::Deg270];

    pub fn degrees(self) -> u16 {
        match self {
            Angle::Deg90 => 90,
            Angle::Deg180 => 180,
            Angle::Deg270 => 270,
        }
    }

    /// `360 - θ`.
    pub fn inverse(self) -> Angle {
        match self {
            Angle::Deg90 => Angle::Deg270,
            Angle::Deg180 => Angle::Deg180,
            Angle::Deg270 => Angle::Deg90,
        }
    }
}

impl From<Angle> for u16 {
    fn from(a: Angle) -> u16 {
        a.degrees()
    }
}

impl TryFrom<u16> for Angle {
    type Error = String;
    fn try_from(deg: u16) -> std::result::Result<Self, String> {
        match deg {
            90 => Ok(Angle::Deg90),
            180 => Ok(Angle::Deg180),
            270 => Ok(Angle::Deg270),
            other => Err(format!("angle {other} is not one of 90, 180, 270")),
        }
    }
}

/// Partition of a volume into subcubes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    side: [usize; 3],
    counts: [usize; 3],
    covered: [usize; 3],
    dims: [usize; 3],
}

impl GridSpec {
    /// Subcube side per axis.
    pub fn side(&self) -> [usize; 3] {
        self.side
    }
    /// Subcubes per axis.
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }
    /// Voxel extent spanned by whole subcubes.
    pub fn covered(&self) -> [usize; 3] {
        self.covered
    }
    /// Extent of the volume the grid was built for.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// True when some voxels lie outside the covered extent.
    pub fn has_residual(&self) -> bool {
        self.covered != self.dims
    }

    /// Whether voxel `(x, y, z)` lies inside the covered extent.
    pub fn covers(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] < self.covered[a])
    }
}

pub fn make_grid(dims: [usize; 3], side: [usize; 3]) -> Result<GridSpec> {
    if side.iter().any(|&s| s == 0) {
        return Err(Error::SubcubeTooLarge(format!("side {side:?} has a zero entry")));
    }
    let counts = [dims[0] / side[0], dims[1] / side[1], dims[2] / side[2]];
    if counts.iter().any(|&g| g == 0) {
        return Err(Error::SubcubeTooLarge(format!(
            "side {side:?} vs dims {dims:?}"
        )));
    }
    Ok(GridSpec {
        side,
        counts,
        covered: [
            counts[0] * side[0],
            counts[1] * side[1],
            counts[2] * side[2],
        ],
        dims,
    })
}

const ALL_ANGLES: &[Angle] = &Angle::ALL;
const HALF_TURN_ONLY: &[Angle] = &[Angle::Deg180];

/// Angles admissible for layers perpendicular to `axis`.
///
/// Quarter turns need a square cross-section made of a square array of
/// subcubes; otherwise only the half turn maps the layer onto itself.
pub fn valid_angles(grid: &GridSpec, axis: Axis) -> &'static [Angle] {
    let (u, v) = axis.plane();
    if grid.covered[u] == grid.covered[v] && grid.counts[u] == grid.counts[v] {
        ALL_ANGLES
    } else {
        HALF_TURN_ONLY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRotation {
    pub axis: Axis,
    /// 0-based layer index along `axis`.
    pub layer: usize,
    pub angle: Angle,
}

impl LayerRotation {
    pub fn new(axis: Axis, layer: usize, angle: Angle) -> Self {
        LayerRotation { axis, layer, angle }
    }

    pub fn inverse(self) -> Self {
        LayerRotation {
            angle: self.angle.inverse(),
            ..self
        }
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        let a = self.axis.index();
        if self.layer >= grid.counts[a] {
            return Err(Error::IllegalRotation(format!(
                "layer {} on {} axis with {} layers",
                self.layer, self.axis, grid.counts[a]
            )));
        }
        if !valid_angles(grid, self.axis).contains(&self.angle) {
            return Err(Error::IllegalRotation(format!(
                "{} degrees on the {} axis of a {:?} grid",
                self.angle.degrees(),
                self.axis,
                grid.counts
            )));
        }
        Ok(())
    }
}

impl fmt::Display for LayerRotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} layer {} by {}°", self.axis, self.layer, self.angle.degrees())
    }
}

pub type TransformSequence = Vec<LayerRotation>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisarrangeParams {
    /// Subcube side per axis.
    pub side: [usize; 3],
    /// Layers rotated per axis.
    pub m: usize,
    pub seed: u64,
}

impl DisarrangeParams {
    pub fn new(side: [usize; 3], m: usize, seed: u64) -> Self {
        DisarrangeParams { side, m, seed }
    }
}

/// Everything needed to reproduce or undo one disarrangement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisarrangeRecord {
    pub params: DisarrangeParams,
    pub grid: GridSpec,
    pub sequence: TransformSequence,
}

// Sidecar JSON shape: {seed, side, m, grid: {counts, covered, dims}, sequence}
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    seed: u64,
    side: [usize; 3],
    m: usize,
    grid: GridJson,
    sequence: Vec<LayerRotation>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridJson {
    counts: [usize; 3],
    covered: [usize; 3],
    dims: [usize; 3],
}

impl DisarrangeRecord {
    pub fn to_json(&self) -> String {
        let j = RecordJson {
            seed: self.params.seed,
            side: self.params.side,
            m: self.params.m,
            grid: GridJson {
                counts: self.grid.counts,
                covered: self.grid.covered,
                dims: self.grid.dims,
            },
            sequence: self.sequence.clone(),
        };
        serde_json::to_string_pretty(&j).expect("record serializes")
    }

    /// Parse and validate a sidecar record.
    pub fn from_json(text: &str) -> Result<Self> {
        let j: RecordJson =
            serde_json::from_str(text).map_err(|e| Error::BadHeader(format!("record: {e}")))?;
        let grid = make_grid(j.grid.dims, j.side)?;
        if grid.counts != j.grid.counts || grid.covered != j.grid.covered {
            return Err(Error::BadHeader(format!(
                "record grid {:?}/{:?} disagrees with side {:?} on dims {:?}",
                j.grid.counts, j.grid.covered, j.side, j.grid.dims
            )));
        }
        if j.sequence.len() != 3 * j.m {
            return Err(Error::BadHeader(format!(
                "record has {} rotations, expected 3*m = {}",
                j.sequence.len(),
                3 * j.m
            )));
        }
        for r in &j.sequence {
            r.check(&grid)?;
        }
        Ok(DisarrangeRecord {
            params: DisarrangeParams::new(j.side, j.m, j.seed),
            grid,
            sequence: j.sequence,
        })
    }
}

fn check_dims(volume: &Volume, grid: &GridSpec) -> Result<()> {
    if volume.dims() != grid.dims {
        return Err(Error::GridMismatch(format!(
            "volume {:?}, grid built for {:?}",
            volume.dims(),
            grid.dims
        )));
    }
    Ok(())
}

/// Rotate one cube layer of every channel in place.
fn rotate_in_place(volume: &mut Volume, grid: &GridSpec, rot: LayerRotation, plane: &mut Vec<f32>) {
    let [w, h, _] = volume.dims();
    let strides = [1, w, w * h];
    let a = rot.axis.index();
    let (ua, va) = rot.axis.plane();
    let (su, sv) = (grid.covered[ua], grid.covered[va]);
    let (stride_u, stride_v, stride_w) = (strides[ua], strides[va], strides[a]);
    let chan_len = volume.channel_len();
    let channels = volume.channels();
    let thickness = grid.side[a];
    let first = rot.layer * thickness;

    plane.clear();
    plane.resize(su * sv, 0.0);
    let data = volume.data_mut();
    for c in 0..channels {
        for slice in first..first + thickness {
            let base = c * chan_len + slice * stride_w;
            for v in 0..sv {
                for u in 0..su {
                    plane[v * su + u] = data[base + u * stride_u + v * stride_v];
                }
            }
            for v in 0..sv {
                for u in 0..su {
                    let (du, dv) = match rot.angle {
                        Angle::Deg90 => (su - 1 - v, u),
                        Angle::Deg180 => (su - 1 - u, sv - 1 - v),
                        Angle::Deg270 => (v, su - 1 - u),
                    };
                    data[base + du * stride_u + dv * stride_v] = plane[v * su + u];
                }
            }
        }
    }
}

/// Apply one layer rotation, returning a new volume.
pub fn rotate_layer(volume: &Volume, grid: &GridSpec, rotation: LayerRotation) -> Result<Volume> {
    check_dims(volume, grid)?;
    rotation.check(grid)?;
    let mut out = volume.clone();
    rotate_in_place(&mut out, grid, rotation, &mut Vec::new());
    Ok(out)
}

/// Apply a sequence of rotations in order.
pub fn apply_sequence(volume: &Volume, grid: &GridSpec, sequence: &[LayerRotation]) -> Result<Volume> {
    check_dims(volume, grid)?;
    for r in sequence {
        r.check(grid)?;
    }
    let mut out = volume.clone();
    let mut plane = Vec::new();
    for &r in sequence {
        rotate_in_place(&mut out, grid, r, &mut plane);
    }
    Ok(out)
}

/// Draw the rotations of one disarrangement.
///
/// Each axis uses two private random streams (layers, angles) split from
/// `params.seed`, so the draws on one axis never depend on another's.
pub fn sample_sequence(grid: &GridSpec, params: &DisarrangeParams) -> Result<TransformSequence> {
    if let Some(a) = (0..3).find(|&a| params.m > grid.counts[a]) {
        return Err(Error::TooManyLayers(format!(
            "m = {} but the {} axis has {} layers",
            params.m, Axis::ALL[a], grid.counts[a]
        )));
    }
    let mut seq = Vec::with_capacity(3 * params.m);
    for axis in Axis::ALL {
        let i = axis.index() as u64;
        let mut layer_rng = seed::stream(params.seed, &[i, 0]);
        let mut angle_rng = seed::stream(params.seed, &[i, 1]);
        let angles = valid_angles(grid, axis);
        for layer in index::sample(&mut layer_rng, grid.counts[axis.index()], params.m) {
            let angle = angles[angle_rng.random_range(0..angles.len())];
            seq.push(LayerRotation { axis, layer, angle });
        }
    }
    Ok(seq)
}

/// Sample and apply one disarrangement. Every channel receives the identical
/// permutation.
pub fn disarrange(volume: &Volume, params: &DisarrangeParams) -> Result<(Volume, DisarrangeRecord)> {
    let grid = make_grid(volume.dims(), params.side)?;
    let sequence = sample_sequence(&grid, params)?;
    let out = apply_sequence(volume, &grid, &sequence)?;
    Ok((
        out,
        DisarrangeRecord {
            params: *params,
            grid,
            sequence,
        },
    ))
}

/// Reverse order, inverse angles.
pub fn invert_sequence(sequence: &[LayerRotation]) -> TransformSequence {
    sequence.iter().rev().map(|r| r.inverse()).collect()
}

/// Undo a recorded disarrangement exactly.
pub fn restore(volume: &Volume, record: &DisarrangeRecord) -> Result<Volume> {
    apply_sequence(volume, &record.grid, &invert_sequence(&record.sequence))
}
