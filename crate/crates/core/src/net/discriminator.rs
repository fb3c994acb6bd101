//! Conditional patch discriminator: the condition `x` and a candidate are
//! concatenated along channels, passed through k=4 convs with LeakyReLU
//! between them, and squashed to a map of per-patch probabilities.

use serde::{Deserialize, Serialize};

use super::conv::{self, ConvSpec};
use super::params::{check_params, init_params, LayerDef, Params};
use super::tensor::{concat_channels, split_channels, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Channels of `x` (and of the candidate); the first layer sees twice this.
    pub in_channels: usize,
    /// Output channels of every layer; the last must be 1.
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub leak: f64,
}

impl DiscriminatorConfig {
    /// Four layers, widths `b, 2b, 4b, 1`, strides `2, 2, 1, 1`.
    pub fn new(in_channels: usize, base_channels: usize) -> Self {
        DiscriminatorConfig {
            in_channels,
            widths: vec![base_channels, 2 * base_channels, 4 * base_channels, 1],
            strides: vec![2, 2, 1, 1],
            kernel: 4,
            padding: 1,
            leak: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(Error::Shape("discriminator widths and strides differ in length".into()));
        }
        if *self.widths.last().unwrap() != 1 || self.in_channels == 0 {
            return Err(Error::Shape("discriminator must end in a single channel".into()));
        }
        if !(0.0..1.0).contains(&self.leak) {
            return Err(Error::Shape(format!("leak {}", self.leak)));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerDef> {
        let mut cin = 2 * self.in_channels;
        self.widths
            .iter()
            .zip(&self.strides)
            .enumerate()
            .map(|(i, (&w, &s))| {
                let l = LayerDef {
                    name: format!("d{i}"),
                    spec: ConvSpec::conv(cin, w, self.kernel, s, self.padding),
                };
                cin = w;
                l
            })
            .collect()
    }

    /// Patch-map extent for a given input extent.
    pub fn output_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        self.layers()
            .iter()
            .try_fold(dims, |d, l| l.spec.output_dims(d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    layers: Vec<LayerDef>,
    params: Params<T>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTape<T> {
    /// Input of each layer.
    inputs: Vec<Tensor<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Tensor<T>>,
    probs: Tensor<T>,
    cond_channels: usize,
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let params = init_params(&layers, seed);
        Ok(Discriminator { config, layers, params })
    }

    pub fn from_params(config: DiscriminatorConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        check_params(&layers, &params)?;
        Ok(Discriminator { config, layers, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn forward(&self, x: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_tape(x, candidate)?.0)
    }

    pub fn forward_tape(&self, x: &Tensor<T>, candidate: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorTape<T>)> {
        if x.shape() != candidate.shape() {
            return Err(Error::Shape(format!(
                "condition {:?} vs candidate {:?}",
                x.shape(),
                candidate.shape()
            )));
        }
        let mut h = concat_channels(x, candidate)?;
        let leak = T::of(self.config.leak);
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = conv::forward(&h, &layer.spec, &self.params.entries[2 * i].data, &self.params.entries[2 * i + 1].data)?;
            let next = if i == last {
                z.map(sigmoid)
            } else {
                z.map(|v| if v > T::zero() { v } else { leak * v })
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok((
            h.clone(),
            DiscriminatorTape {
                inputs,
                pre,
                probs: h,
                cond_channels: x.dims5()?[1],
            },
        ))
    }

    /// Parameter gradients and the gradient with respect to the candidate,
    /// given the gradient of a loss with respect to the probability map.
    pub fn backward(&self, tape: &DiscriminatorTape<T>, grad_probs: &Tensor<T>) -> Result<(Params<T>, Tensor<T>)> {
        if grad_probs.shape() != tape.probs.shape() {
            return Err(Error::Shape("gradient does not match patch map".into()));
        }
        let leak = T::of(self.config.leak);
        let mut grads = self.params.zeros_like();
        // through the sigmoid: dp/dz = p (1 - p)
        let mut g = grad_probs.clone();
        for (gv, &p) in g.data_mut().iter_mut().zip(tape.probs.data()) {
            *gv *= p * (T::one() - p);
        }
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                for (gv, &z) in g.data_mut().iter_mut().zip(tape.pre[i].data()) {
                    if z <= T::zero() {
                        *gv *= leak;
                    }
                }
            }
            let r = conv::backward(
                &tape.inputs[i],
                &self.layers[i].spec,
                &self.params.entries[2 * i].data,
                &self.params.entries[2 * i + 1].data,
                &g,
            )?;
            grads.entries[2 * i].data = r.weight;
            grads.entries[2 * i + 1].data = r.bias;
            g = r.input;
        }
        let (_, g_candidate) = split_channels(&g, tape.cond_channels)?;
        Ok((grads, g_candidate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = crate::seed::stream(seed, &[]);
        Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn zero_params_give_one_half() {
        let c = DiscriminatorConfig::new(1, 4);
        let d = Discriminator::<f64>::new(c.clone(), 0).unwrap();
        let d = Discriminator::from_params(c, d.params().zeros_like()).unwrap();
        let x = rand_input(&[1, 1, 16, 16, 16], 1);
        let p = d.forward(&x, &x).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn patch_map_extent() {
        // 16 -> 8 -> 4 -> 3 -> 2 with k=4, p=1, strides 2,2,1,1
        let c = DiscriminatorConfig::new(1, 4);
        assert_eq!(c.layers().len(), 4);
        assert_eq!(c.output_dims([16, 16, 16]).unwrap(), [2, 2, 2]);
        let d = Discriminator::<f32>::new(c, 3).unwrap();
        let x = Tensor::<f32>::zeros(&[2, 1, 16, 16, 16]);
        assert_eq!(d.forward(&x, &x).unwrap().shape(), &[2, 1, 2, 2, 2]);
    }

    #[test]
    fn condition_and_candidate_are_not_interchangeable() {
        let d = Discriminator::<f64>::new(DiscriminatorConfig::new(1, 4), 7).unwrap();
        let a = rand_input(&[1, 1, 16, 16, 16], 8);
        let b = rand_input(&[1, 1, 16, 16, 16], 9);
        assert_ne!(d.forward(&a, &b).unwrap(), d.forward(&b, &a).unwrap());
        assert!(matches!(
            d.forward(&a, &Tensor::zeros(&[1, 1, 8, 16, 16])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = DiscriminatorConfig {
            widths: vec![3, 1],
            strides: vec![1, 1],
            ..DiscriminatorConfig::new(1, 3)
        };
        let d = Discriminator::<f64>::new(c, 31).unwrap();
        let x = rand_input(&[2, 1, 4, 4, 4], 32);
        let y = rand_input(&[2, 1, 4, 4, 4], 33);
        let (p, tape) = d.forward_tape(&x, &y).unwrap();
        let up = rand_input(p.shape(), 34);
        let (grads, g_cand) = d.backward(&tape, &up).unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for (pi, prm) in d.params().entries.iter().enumerate() {
            for i in 0..prm.data.len() {
                let mut dp = d.clone();
                dp.params_mut().entries[pi].data[i] += h;
                let mut dm = d.clone();
                dm.params_mut().entries[pi].data[i] -= h;
                let fd = (dp.forward(&x, &y).unwrap().dot(&up) - dm.forward(&x, &y).unwrap().dot(&up)) / (2.0 * h);
                assert!(rel(grads.entries[pi].data[i], fd) < 1e-4, "{}[{i}]", prm.name);
            }
        }
        for i in 0..y.len() {
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp.data_mut()[i] += h;
            ym.data_mut()[i] -= h;
            let fd = (d.forward(&x, &yp).unwrap().dot(&up) - d.forward(&x, &ym).unwrap().dot(&up)) / (2.0 * h);
            assert!(rel(g_cand.data()[i], fd) < 1e-4);
        }
    }
}
