//! Objectives with their parameter gradients, and single optimizer steps.

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::discriminator::Discriminator;
use super::generator::{Generator, GeneratorTape};
use super::params::Params;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::loss::{self, AdvMode, LossReport, LossWeights};

/// Voxel-wise reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    #[default]
    L1,
    L2,
}

impl std::str::FromStr for ReconLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(ReconLoss::L1),
            "l2" => Ok(ReconLoss::L2),
            other => Err(Error::BadMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub weights: LossWeights,
    pub mode: AdvMode,
    pub recon: ReconLoss,
    /// When off, the discriminator is neither consulted nor updated and the
    /// generator minimizes `λ · recon` alone.
    pub adversarial: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            weights: LossWeights::default(),
            mode: AdvMode::default(),
            recon: ReconLoss::L1,
            adversarial: true,
        }
    }
}

/// Generator, optional discriminator and their optimizer states.
#[derive(Debug, Clone)]
pub struct GanModel<T> {
    pub generator: Generator<T>,
    pub discriminator: Option<Discriminator<T>>,
    pub opt_g: AdamState<T>,
    pub opt_d: Option<AdamState<T>>,
}

fn recon_parts<T: Scalar>(y: &Tensor<T>, out: &Tensor<T>, recon: ReconLoss) -> Result<(f64, f64, Vec<T>)> {
    let l1 = loss::l1(y.data(), out.data())?;
    let l2 = loss::l2(y.data(), out.data())?;
    let grad = match recon {
        ReconLoss::L1 => loss::l1_grad(y.data(), out.data())?,
        ReconLoss::L2 => loss::l2_grad(y.data(), out.data())?,
    };
    Ok((l1, l2, grad))
}

fn generator_step_grads<T: Scalar>(
    g: &Generator<T>,
    d: Option<&Discriminator<T>>,
    tape: &GeneratorTape<T>,
    out: &Tensor<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    cfg: &GanConfig,
) -> Result<(LossReport, Params<T>)> {
    if y.shape() != out.shape() {
        return Err(Error::Shape(format!("target {:?} vs output {:?}", y.shape(), out.shape())));
    }
    let (l1, l2, recon_grad) = recon_parts(y, out, cfg.recon)?;
    let lambda = T::of(cfg.weights.lambda);
    let mut grad_out: Vec<T> = recon_grad.into_iter().map(|v| lambda * v).collect();
    let mut adv_g = 0.0;
    if cfg.adversarial {
        let d = d.ok_or_else(|| Error::BadConfig("adversarial training without a discriminator".into()))?;
        let (probs, dtape) = d.forward_tape(x, out)?;
        adv_g = loss::adv_loss_g(probs.data(), cfg.mode)?;
        let up = Tensor::from_vec(probs.shape(), loss::adv_loss_g_grad(probs.data(), cfg.mode)?)?;
        let (_, g_cand) = d.backward(&dtape, &up)?;
        for (a, &b) in grad_out.iter_mut().zip(g_cand.data()) {
            *a += b;
        }
    }
    let recon = match cfg.recon {
        ReconLoss::L1 => l1,
        ReconLoss::L2 => l2,
    };
    let report = LossReport {
        l1,
        l2,
        adv_d: 0.0,
        adv_g,
        joint: adv_g + cfg.weights.lambda * recon,
    };
    let (grads, _) = g.backward(tape, &Tensor::from_vec(out.shape(), grad_out)?)?;
    Ok((report, grads))
}

/// Generator objective `adv_g + λ · recon` and its gradient with respect to
/// every generator parameter. `adv_d` of the report is left at 0.
pub fn generator_objective<T: Scalar>(
    g: &Generator<T>,
    d: Option<&Discriminator<T>>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    cfg: &GanConfig,
) -> Result<(LossReport, Params<T>)> {
    let (out, tape) = g.forward_tape(x)?;
    generator_step_grads(g, d, &tape, &out, x, y, cfg)
}

/// `adv_d` for a real pair `(x, y)` and a fake pair `(x, fake)`, and the
/// gradient of `-adv_d` with respect to every discriminator parameter.
pub fn discriminator_objective<T: Scalar>(
    d: &Discriminator<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<(f64, Params<T>)> {
    let (p_real, tape_real) = d.forward_tape(x, y)?;
    let (p_fake, tape_fake) = d.forward_tape(x, fake)?;
    let adv_d = loss::adv_loss_d(p_real.data(), p_fake.data())?;
    let (g_real, g_fake) = loss::adv_loss_d_grad(p_real.data(), p_fake.data())?;
    let (mut grads, _) = d.backward(&tape_real, &Tensor::from_vec(p_real.shape(), g_real)?)?;
    let (grads_fake, _) = d.backward(&tape_fake, &Tensor::from_vec(p_fake.shape(), g_fake)?)?;
    grads.add_scaled(&grads_fake, T::one())?;
    Ok((adv_d, grads))
}

/// One discriminator update on the current generator output, then one
/// generator update against the updated discriminator.
pub fn gan_train_step<T: Scalar>(
    model: &mut GanModel<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    cfg: &GanConfig,
) -> Result<LossReport> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!("x {:?} vs y {:?}", x.shape(), y.shape())));
    }
    let (out, tape) = model.generator.forward_tape(x)?;
    let mut adv_d = 0.0;
    if cfg.adversarial {
        let (d, opt_d) = match (model.discriminator.as_mut(), model.opt_d.as_mut()) {
            (Some(d), Some(o)) => (d, o),
            _ => return Err(Error::BadConfig("adversarial training without a discriminator".into())),
        };
        let (value, grads) = discriminator_objective(d, x, y, &out)?;
        adam_step(d.params_mut(), &grads, opt_d)?;
        adv_d = value;
    }
    let (mut report, grads) = generator_step_grads(
        &model.generator,
        model.discriminator.as_ref(),
        &tape,
        &out,
        x,
        y,
        cfg,
    )?;
    adam_step(model.generator.params_mut(), &grads, &mut model.opt_g)?;
    report.adv_d = adv_d;
    Ok(report)
}

/// Voxel-wise cross-entropy of the generator's logits against `labels`
/// (`(N, S)` layout) and its parameter gradient.
pub fn segmentation_objective<T: Scalar>(g: &Generator<T>, x: &Tensor<T>, labels: &[u8]) -> Result<(f64, Params<T>)> {
    let (out, tape) = g.forward_tape(x)?;
    let [_, k, z, yy, xx] = out.dims5()?;
    let (value, grad) = loss::cross_entropy_with(out.data(), labels, k, z * yy * xx)?;
    let (grads, _) = g.backward(&tape, &Tensor::from_vec(out.shape(), grad)?)?;
    Ok((value, grads))
}

/// One optimizer step on the segmentation loss. Returns the loss before it.
pub fn segmentation_train_step<T: Scalar>(
    g: &mut Generator<T>,
    opt: &mut AdamState<T>,
    x: &Tensor<T>,
    labels: &[u8],
) -> Result<f64> {
    let (value, grads) = segmentation_objective(g, x, labels)?;
    adam_step(g.params_mut(), &grads, opt)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::adam::AdamConfig;
    use crate::net::discriminator::DiscriminatorConfig;
    use crate::net::generator::GeneratorConfig;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = crate::seed::stream(seed, &[]);
        Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn small_model(seed: u64) -> GanModel<f64> {
        let mut g = Generator::new(GeneratorConfig::restoration(1, 1, 2), seed).unwrap();
        let mut rng = crate::seed::stream(seed, &[1]);
        for p in g.params_mut().entries.iter_mut().filter(|p| p.name.ends_with(".bias")) {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        let dc = DiscriminatorConfig {
            widths: vec![2, 1],
            strides: vec![1, 1],
            ..DiscriminatorConfig::new(1, 2)
        };
        let d = Discriminator::new(dc, seed + 1).unwrap();
        GanModel {
            opt_g: AdamState::new(AdamConfig::pretrain(), g.params()),
            opt_d: Some(AdamState::new(AdamConfig::pretrain(), d.params())),
            generator: g,
            discriminator: Some(d),
        }
    }

    #[test]
    fn degenerate_weights_give_a_pure_l1_step() {
        let x = rand_tensor(&[1, 1, 4, 4, 4], 3);
        let y = rand_tensor(&[1, 1, 4, 4, 4], 4);
        let cfg = GanConfig {
            weights: LossWeights::new(1.0).unwrap(),
            adversarial: false,
            ..GanConfig::default()
        };
        let mut model = small_model(5);
        let mut reference = model.generator.clone();
        let mut opt = model.opt_g.clone();
        let d_before = model.discriminator.clone();

        let report = gan_train_step(&mut model, &x, &y, &cfg).unwrap();

        let (out, tape) = reference.forward_tape(&x).unwrap();
        let g = loss::l1_grad(y.data(), out.data()).unwrap();
        let (grads, _) = reference.backward(&tape, &Tensor::from_vec(out.shape(), g).unwrap()).unwrap();
        adam_step(reference.params_mut(), &grads, &mut opt).unwrap();
        assert_eq!(model.generator.params(), reference.params());
        assert_eq!(model.discriminator, d_before);
        assert_eq!(report.joint, report.l1);
        assert_eq!(report.adv_g, 0.0);
    }

    #[test]
    fn steps_preserve_parameter_shapes() {
        let x = rand_tensor(&[2, 1, 4, 4, 4], 6);
        let y = rand_tensor(&[2, 1, 4, 4, 4], 7);
        let mut model = small_model(8);
        let before = model.clone();
        for mode in [AdvMode::Minimax, AdvMode::Nonsaturating] {
            let cfg = GanConfig {
                mode,
                ..GanConfig::default()
            };
            let r = gan_train_step(&mut model, &x, &y, &cfg).unwrap();
            assert!(r.is_finite());
            assert!(r.adv_d < 0.0);
        }
        assert!(model.generator.params().same_layout(before.generator.params()));
        let (d0, d1) = (before.discriminator.unwrap(), model.discriminator.unwrap());
        assert!(d1.params().same_layout(d0.params()));
        assert_ne!(d1.params(), d0.params());
        assert_eq!(model.opt_g.step, 2);
    }

    #[test]
    fn adversarial_step_needs_a_discriminator() {
        let x = rand_tensor(&[1, 1, 4, 4, 4], 9);
        let mut model = small_model(10);
        model.discriminator = None;
        assert!(matches!(
            gan_train_step(&mut model, &x, &x, &GanConfig::default()),
            Err(Error::BadConfig(_))
        ));
    }

    fn rel(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let x = rand_tensor(&[1, 1, 4, 4, 4], 11);
        let y = rand_tensor(&[1, 1, 4, 4, 4], 12);
        let model = small_model(13);
        let d = model.discriminator.as_ref().unwrap();
        for (mode, recon) in [
            (AdvMode::Nonsaturating, ReconLoss::L1),
            (AdvMode::Minimax, ReconLoss::L1),
            (AdvMode::Nonsaturating, ReconLoss::L2),
        ] {
            let cfg = GanConfig {
                mode,
                recon,
                ..GanConfig::default()
            };
            let (_, grads) = generator_objective(&model.generator, Some(d), &x, &y, &cfg).unwrap();
            let h = 1e-5;
            for (pi, p) in model.generator.params().entries.iter().enumerate() {
                for i in (0..p.data.len()).step_by(7) {
                    let eval = |delta: f64| {
                        let mut g = model.generator.clone();
                        g.params_mut().entries[pi].data[i] += delta;
                        generator_objective(&g, Some(d), &x, &y, &cfg).unwrap().0.joint
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    assert!(rel(grads.entries[pi].data[i], fd) < 1e-4, "{mode:?} {}[{i}]", p.name);
                }
            }
        }
    }

    #[test]
    fn discriminator_gradient_matches_finite_differences() {
        let x = rand_tensor(&[1, 1, 4, 4, 4], 14);
        let y = rand_tensor(&[1, 1, 4, 4, 4], 15);
        let fake = rand_tensor(&[1, 1, 4, 4, 4], 16);
        let d = small_model(17).discriminator.unwrap();
        let (_, grads) = discriminator_objective(&d, &x, &y, &fake).unwrap();
        let h = 1e-5;
        for (pi, p) in d.params().entries.iter().enumerate() {
            for i in 0..p.data.len() {
                let eval = |delta: f64| {
                    let mut dd = d.clone();
                    dd.params_mut().entries[pi].data[i] += delta;
                    -discriminator_objective(&dd, &x, &y, &fake).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!(rel(grads.entries[pi].data[i], fd) < 1e-4, "{}[{i}]", p.name);
            }
        }
    }

    #[test]
    fn segmentation_gradients_reach_retained_layers() {
        let g = Generator::<f64>::new(GeneratorConfig::restoration(1, 1, 2), 18)
            .unwrap()
            .replace_head(2, 19)
            .unwrap();
        let x = rand_tensor(&[1, 1, 4, 4, 4], 20);
        let labels: Vec<u8> = x.data().iter().map(|&v| (v > 0.0) as u8).collect();
        let (value, grads) = segmentation_objective(&g, &x, &labels).unwrap();
        assert!(value.is_finite());
        assert!(grads.all_finite());
        let enc = grads.get("enc0.weight").unwrap();
        assert!(enc.data.iter().any(|&v| v != 0.0));
    }
}
