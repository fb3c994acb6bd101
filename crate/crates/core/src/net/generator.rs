//! Encoder-decoder generator with skip connections between mirrored levels.
//!
//! ```text
//! enc0   conv k3 s1      in      -> b          (ReLU)
//! downL  conv k3 s2      ch(L-1) -> ch(L)      (ReLU)   L = 1..depth
//! upL    deconv k4 s2    ch(L)   -> ch(L-1)    (ReLU)   L = depth..1
//! fuseL  conv k3 s1      [up, encoder skip] -> ch(L-1) (ReLU)
//! head   conv k1         b       -> out        (identity)
//! ```
//! with `ch(L) = base_channels * 2^L`.

use serde::{Deserialize, Serialize};

use super::conv::{self, ConvSpec};
use super::params::{check_params, init_layer, init_params, LayerDef, Params};
use super::tensor::{concat_channels, split_channels, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    /// Restoration output, compared voxel-wise with the target.
    #[default]
    Identity,
    /// Per-class scores fed to a softmax cross-entropy.
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub down_stride: usize,
    pub up_kernel: usize,
    pub skip: bool,
    pub final_activation: FinalActivation,
}

impl GeneratorConfig {
    /// Restoration generator mapping `channels` to `channels`.
    pub fn restoration(channels: usize, depth: usize, base_channels: usize) -> Self {
        GeneratorConfig {
            in_channels: channels,
            out_channels: channels,
            depth,
            base_channels,
            kernel: 3,
            down_stride: 2,
            up_kernel: 4,
            skip: true,
            final_activation: FinalActivation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Shape(format!("degenerate generator {self:?}")));
        }
        if self.kernel % 2 == 0 || self.down_stride == 0 {
            return Err(Error::Shape("encoder kernel must be odd".into()));
        }
        if self.up_kernel < self.down_stride || (self.up_kernel - self.down_stride) % 2 != 0 {
            return Err(Error::Shape(format!(
                "up kernel {} cannot invert stride {}",
                self.up_kernel, self.down_stride
            )));
        }
        Ok(())
    }

    /// Channels at encoder level `l`.
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Every spatial extent must be divisible by `stride^depth`.
    pub fn check_input(&self, dims: [usize; 3]) -> Result<()> {
        let f = self.down_stride.pow(self.depth as u32);
        if dims.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(Error::Shape(format!(
                "spatial dims {dims:?} not divisible by {f} (depth {})",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerDef> {
        let k = self.kernel;
        let pad = k / 2;
        let up_pad = (self.up_kernel - self.down_stride) / 2;
        let mut out = vec![LayerDef {
            name: "enc0".into(),
            spec: ConvSpec::conv(self.in_channels, self.width(0), k, 1, pad),
        }];
        for l in 1..=self.depth {
            out.push(LayerDef {
                name: format!("down{l}"),
                spec: ConvSpec::conv(self.width(l - 1), self.width(l), k, self.down_stride, pad),
            });
        }
        for l in (1..=self.depth).rev() {
            let c = self.width(l - 1);
            out.push(LayerDef {
                name: format!("up{l}"),
                spec: ConvSpec::deconv(self.width(l), c, self.up_kernel, self.down_stride, up_pad),
            });
            out.push(LayerDef {
                name: format!("fuse{l}"),
                spec: ConvSpec::conv(if self.skip { 2 * c } else { c }, c, k, 1, pad),
            });
        }
        out.push(LayerDef {
            name: "head".into(),
            spec: ConvSpec::conv(self.width(0), self.out_channels, 1, 1, 0),
        });
        out
    }

    /// Scalar parameter count implied by the config.
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.spec.weight_len() + l.spec.out_channels)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    layers: Vec<LayerDef>,
    params: Params<T>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct GeneratorTape<T> {
    input: Tensor<T>,
    /// Post-ReLU encoder outputs, `enc[0]` at full resolution.
    enc: Vec<Tensor<T>>,
    /// Per decoder level, indexed by `level - 1`: post-ReLU upsampled tensor,
    /// fuse-layer input, post-ReLU fuse output.
    up: Vec<Tensor<T>>,
    cat: Vec<Tensor<T>>,
    fused: Vec<Tensor<T>>,
}

fn relu<T: Scalar>(t: Tensor<T>) -> Tensor<T> {
    let mut t = t;
    for v in t.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    t
}

/// Zero the gradient where the post-ReLU activation is not positive.
fn relu_back<T: Scalar>(grad: &mut Tensor<T>, activation: &Tensor<T>) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activation.data()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let params = init_params(&layers, seed);
        Ok(Generator { config, layers, params })
    }

    pub fn from_params(config: GeneratorConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        check_params(&layers, &params)?;
        Ok(Generator { config, layers, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerDef] {
        &self.layers
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            config: self.config,
            layers: self.layers.clone(),
            params: self.params.cast(),
        }
    }

    fn layer(&self, name: &str) -> (usize, &ConvSpec) {
        let i = self
            .layers
            .iter()
            .position(|l| l.name == name)
            .expect("layer exists by construction");
        (i, &self.layers[i].spec)
    }

    fn run(&self, name: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (i, spec) = self.layer(name);
        conv::forward(x, spec, &self.params.entries[2 * i].data, &self.params.entries[2 * i + 1].data)
    }

    fn back(&self, name: &str, x: &Tensor<T>, up: &Tensor<T>, grads: &mut Params<T>) -> Result<Tensor<T>> {
        let (i, spec) = self.layer(name);
        let g = conv::backward(x, spec, &self.params.entries[2 * i].data, &self.params.entries[2 * i + 1].data, up)?;
        grads.entries[2 * i].data = g.weight;
        grads.entries[2 * i + 1].data = g.bias;
        Ok(g.input)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_tape(x)?.0)
    }

    pub fn forward_tape(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GeneratorTape<T>)> {
        let [_, c, d, h, w] = x.dims5()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {} channels, got {c}",
                self.config.in_channels
            )));
        }
        self.config.check_input([d, h, w])?;
        let depth = self.config.depth;
        let mut enc = vec![relu(self.run("enc0", x)?)];
        for l in 1..=depth {
            let e = relu(self.run(&format!("down{l}"), &enc[l - 1])?);
            enc.push(e);
        }
        let mut up = vec![Tensor::zeros(&[0]); depth];
        let mut cat = vec![Tensor::zeros(&[0]); depth];
        let mut fused = vec![Tensor::zeros(&[0]); depth];
        for l in (1..=depth).rev() {
            let below = if l == depth { &enc[depth] } else { &fused[l] };
            let u = relu(self.run(&format!("up{l}"), below)?);
            let joined = if self.config.skip {
                concat_channels(&u, &enc[l - 1])?
            } else {
                u.clone()
            };
            fused[l - 1] = relu(self.run(&format!("fuse{l}"), &joined)?);
            up[l - 1] = u;
            cat[l - 1] = joined;
        }
        let out = self.run("head", &fused[0])?;
        Ok((
            out,
            GeneratorTape {
                input: x.clone(),
                enc,
                up,
                cat,
                fused,
            },
        ))
    }

    /// Parameter gradients (and the input gradient) given the gradient of the
    /// output.
    pub fn backward(&self, tape: &GeneratorTape<T>, grad_out: &Tensor<T>) -> Result<(Params<T>, Tensor<T>)> {
        let depth = self.config.depth;
        let mut grads = self.params.zeros_like();
        let mut g_enc: Vec<Option<Tensor<T>>> = vec![None; depth + 1];
        let mut g = self.back("head", &tape.fused[0], grad_out, &mut grads)?;
        for l in 1..=depth {
            relu_back(&mut g, &tape.fused[l - 1]);
            let g_cat = self.back(&format!("fuse{l}"), &tape.cat[l - 1], &g, &mut grads)?;
            let mut g_up = if self.config.skip {
                let c = self.config.width(l - 1);
                let (g_up, g_skip) = split_channels(&g_cat, c)?;
                g_enc[l - 1] = Some(g_skip);
                g_up
            } else {
                g_cat
            };
            relu_back(&mut g_up, &tape.up[l - 1]);
            let below = if l == depth { &tape.enc[depth] } else { &tape.fused[l] };
            g = self.back(&format!("up{l}"), below, &g_up, &mut grads)?;
        }
        // g is now the gradient at enc[depth]
        let mut g_cur = g;
        for l in (1..=depth).rev() {
            relu_back(&mut g_cur, &tape.enc[l]);
            let mut g_below = self.back(&format!("down{l}"), &tape.enc[l - 1], &g_cur, &mut grads)?;
            if let Some(skip) = &g_enc[l - 1] {
                for (a, &b) in g_below.data_mut().iter_mut().zip(skip.data()) {
                    *a += b;
                }
            }
            g_cur = g_below;
        }
        relu_back(&mut g_cur, &tape.enc[0]);
        let g_in = self.back("enc0", &tape.input, &g_cur, &mut grads)?;
        Ok((grads, g_in))
    }

    /// Swap the final layer for a fresh `num_classes`-way 1×1×1 conv emitting
    /// logits. Every other parameter is carried over unchanged.
    pub fn replace_head(&self, num_classes: usize, seed: u64) -> Result<Generator<T>> {
        if num_classes < 1 {
            return Err(Error::BadHead(format!("{num_classes} classes")));
        }
        let config = GeneratorConfig {
            out_channels: num_classes,
            final_activation: FinalActivation::Logits,
            ..self.config
        };
        let layers = config.layers();
        let head_index = layers.len() - 1;
        let mut params = self.params.clone();
        let fresh = init_layer::<T>(&layers[head_index], seed, head_index as u64);
        let [w, b] = fresh;
        params.entries[2 * head_index] = w;
        params.entries[2 * head_index + 1] = b;
        Generator::from_params(config, params)
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
    fn desk_config_param_count() {
        // enc0 1*8*27+8, down1 8*16*27+16, down2 16*32*27+32, up2 32*16*64+16,
        // fuse2 32*16*27+16, up1 16*8*64+8, fuse1 16*8*27+8, head 8*1+1
        let c = GeneratorConfig::restoration(1, 2, 8);
        let want = 224 + 3472 + 13856 + 32784 + 13840 + 8200 + 3464 + 9;
        assert_eq!(want, 75849);
        assert_eq!(c.param_count(), want);
        let g = Generator::<f32>::new(c, 0).unwrap();
        assert_eq!(g.params().count(), want);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let c = GeneratorConfig::restoration(1, 1, 2);
        let g = Generator::<f64>::new(c, 0).unwrap();
        let zero = g.params().zeros_like();
        let g = Generator::from_params(c, zero).unwrap();
        let y = g.forward(&rand_input(&[1, 1, 4, 4, 4], 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_matches_input_shape() {
        let c = GeneratorConfig::restoration(1, 2, 4);
        let g = Generator::<f32>::new(c, 3).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 16, 16, 16]);
        assert_eq!(g.forward(&x).unwrap().shape(), &[1, 1, 16, 16, 16]);
        let bad = Tensor::<f32>::zeros(&[1, 1, 16, 16, 10]);
        assert!(matches!(g.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn skip_path_is_wired() {
        // Zero the whole decoder upsampling path; only the skip connection can
        // carry signal to the head.
        let on = GeneratorConfig::restoration(1, 1, 2);
        let mut g_on = Generator::<f64>::new(on, 5).unwrap();
        for p in &mut g_on.params_mut().entries {
            if p.name.starts_with("up") {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let off = GeneratorConfig { skip: false, ..on };
        let mut off_params = Generator::<f64>::new(off, 5).unwrap().params().clone();
        for (dst, src) in off_params.entries.iter_mut().zip(&g_on.params().entries) {
            if dst.name == "fuse1.weight" {
                // keep the weights that read the upsampled half of the concat
                let (cout, cin_on) = (src.shape[0], src.shape[1]);
                let k = 27;
                dst.data.clear();
                for o in 0..cout {
                    dst.data.extend_from_slice(&src.data[o * cin_on * k..o * cin_on * k + dst.shape[1] * k]);
                }
            } else {
                dst.data = src.data.clone();
            }
        }
        let g_off = Generator::from_params(off, off_params).unwrap();
        let x = rand_input(&[1, 1, 4, 4, 4], 6);
        let y_on = g_on.forward(&x).unwrap();
        let y_off = g_off.forward(&x).unwrap();
        assert_ne!(y_on, y_off);
        assert!(y_on.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = GeneratorConfig::restoration(1, 1, 2);
        let mut g = Generator::<f64>::new(c, 11).unwrap();
        // nonzero biases keep pre-activations off the ReLU kink
        let mut rng = crate::seed::stream(14, &[]);
        for p in g.params_mut().entries.iter_mut().filter(|p| p.name.ends_with(".bias")) {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        let x = rand_input(&[2, 1, 4, 4, 4], 12);
        let up = rand_input(&[2, 1, 4, 4, 4], 13);
        let (_, tape) = g.forward_tape(&x).unwrap();
        let (grads, g_in) = g.backward(&tape, &up).unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for (pi, p) in g.params().entries.iter().enumerate() {
            for i in 0..p.data.len() {
                let mut gp = g.clone();
                gp.params_mut().entries[pi].data[i] += h;
                let mut gm = g.clone();
                gm.params_mut().entries[pi].data[i] -= h;
                let fd = (gp.forward(&x).unwrap().dot(&up) - gm.forward(&x).unwrap().dot(&up)) / (2.0 * h);
                let a = grads.entries[pi].data[i];
                assert!(rel(a, fd) < 1e-4, "{}[{i}]: {a} vs {fd}", p.name);
            }
        }
        for i in (0..x.len()).step_by(7) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let fd = (g.forward(&xp).unwrap().dot(&up) - g.forward(&xm).unwrap().dot(&up)) / (2.0 * h);
            assert!(rel(g_in.data()[i], fd) < 1e-4);
        }
    }

    #[test]
    fn head_swap_keeps_body() {
        let c = GeneratorConfig::restoration(1, 2, 4);
        let g = Generator::<f32>::new(c, 21).unwrap();
        let s = g.replace_head(2, 99).unwrap();
        let n = g.params().entries.len();
        for (a, b) in g.params().entries[..n - 2].iter().zip(&s.params().entries[..n - 2]) {
            assert_eq!(a.name, b.name);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let x = Tensor::<f32>::zeros(&[3, 1, 8, 8, 8]);
        assert_eq!(s.forward(&x).unwrap().shape(), &[3, 2, 8, 8, 8]);
        assert_eq!(s.config().final_activation, FinalActivation::Logits);
        assert_eq!(g.replace_head(2, 99).unwrap(), s);
        assert_ne!(g.replace_head(2, 98).unwrap(), s);
        assert!(matches!(g.replace_head(0, 1), Err(Error::BadHead(_))));
    }
}
