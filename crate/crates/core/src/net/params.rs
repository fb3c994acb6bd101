use rand::Rng;

use super::conv::ConvSpec;
use super::tensor::Scalar;
use crate::error::{Error, Result};
use crate::seed;

/// A named parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered parameter list. Every model keeps a weight then a bias per layer,
/// in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub entries: Vec<Param<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Params {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![T::zero(); p.data.len()],
                })
                .collect(),
        }
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout<U>(&self, other: &Params<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && b.data.len() == a.data.len())
    }

    pub fn check_layout<U>(&self, other: &Params<U>) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter layouts differ".into()))
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Params<T>, scale: T) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Flat view of every scalar, in order.
    pub fn flat(&self) -> Vec<T> {
        self.entries.iter().flat_map(|p| p.data.iter().copied()).collect()
    }
}

/// One conv layer of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDef {
    pub name: String,
    pub spec: ConvSpec,
}

/// Parameters for `layers`, seeded per layer: weights uniform in
/// `±sqrt(6 / fan_in)`, biases zero.
pub fn init_params<T: Scalar>(layers: &[LayerDef], seed: u64) -> Params<T> {
    let mut entries = Vec::with_capacity(2 * layers.len());
    for (i, layer) in layers.iter().enumerate() {
        entries.extend(init_layer(layer, seed, i as u64));
    }
    Params { entries }
}

/// Weight and bias of one layer, drawn from the stream `(seed, index)`.
pub fn init_layer<T: Scalar>(layer: &LayerDef, seed: u64, index: u64) -> [Param<T>; 2] {
    let spec = &layer.spec;
    let mut fan_in = (spec.in_channels * spec.kernel_volume()) as f64;
    if spec.transposed {
        fan_in /= spec.stride.pow(3) as f64;
    }
    let bound = (6.0 / fan_in.max(1.0)).sqrt();
    let mut rng = seed::stream(seed, &[0x1A17, index]);
    let weight = (0..spec.weight_len())
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    [
        Param {
            name: format!("{}.weight", layer.name),
            shape: spec.weight_shape(),
            data: weight,
        },
        Param {
            name: format!("{}.bias", layer.name),
            shape: vec![spec.out_channels],
            data: vec![T::zero(); spec.out_channels],
        },
    ]
}

/// Check that `params` is the layout `layers` implies.
pub fn check_params<T>(layers: &[LayerDef], params: &Params<T>) -> Result<()> {
    if params.entries.len() != 2 * layers.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors for {} layers",
            params.entries.len(),
            layers.len()
        )));
    }
    for (i, layer) in layers.iter().enumerate() {
        let (w, b) = (&params.entries[2 * i], &params.entries[2 * i + 1]);
        let ok = w.name == format!("{}.weight", layer.name)
            && b.name == format!("{}.bias", layer.name)
            && w.shape == layer.spec.weight_shape()
            && w.data.len() == layer.spec.weight_len()
            && b.shape == [layer.spec.out_channels]
            && b.data.len() == layer.spec.out_channels;
        if !ok {
            return Err(Error::Shape(format!("parameters of layer {}", layer.name)));
        }
    }
    Ok(())
}
