//! Pretraining on the pretext task and fine-tuning on segmentation.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;

use super::config::ExperimentConfig;
use super::data::{eval_pairs, label_subset, make_pair, segmentation_splits, source_volumes, LabeledSet};
use super::eval::{evaluate_restoration, Restorer};
use super::report::{emit, MetricsReport};
use crate::error::{Error, Result};
use crate::loss;
use crate::net::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta};
use crate::net::train::{gan_train_step, segmentation_train_step};
use crate::net::{AdamState, Discriminator, GanModel, Generator, Tensor};
use crate::seed;

/// Stream counters under the experiment seed.
const MODEL: u64 = 0x40D;
const DISC: u64 = 0xD15;
const HEAD: u64 = 0x4EAD;
const LABELS: u64 = 0x1AB;
const PRETRAIN_STEP: u64 = 0x57E9;
const FINETUNE_STEP: u64 = 0xF7E9;

pub const PRETRAIN_COLUMNS: [&str; 6] = ["step", "l1", "l2", "adv_d", "adv_g", "joint"];
pub const FINETUNE_COLUMNS: [&str; 2] = ["step", "cross_entropy"];

/// Result of a pretraining run. When training diverged, `diverged_at` names
/// the step and `report` holds the rows up to and including it.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    pub diverged_at: Option<usize>,
}

/// The generator every run starts from under `cfg.seed`.
pub fn initial_generator(cfg: &ExperimentConfig) -> Result<Generator<f32>> {
    Generator::new(cfg.generator(), seed::split(cfg.seed, &[MODEL]))
}

/// Train the restoration GAN in memory.
pub fn pretrain_model(cfg: &ExperimentConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let sources = source_volumes(cfg)?;
    let eval = eval_pairs(cfg)?;
    let gan = cfg.gan();
    let generator = initial_generator(cfg)?;
    let discriminator = if gan.adversarial {
        Some(Discriminator::<f32>::new(cfg.discriminator(), seed::split(cfg.seed, &[DISC]))?)
    } else {
        None
    };
    let adam = cfg.pretrain_adam();
    let mut model = GanModel {
        opt_g: AdamState::new(adam, generator.params()),
        opt_d: discriminator.as_ref().map(|d| AdamState::new(adam, d.params())),
        generator,
        discriminator,
    };

    let mut report = MetricsReport::new("pretrain", cfg, &PRETRAIN_COLUMNS);
    let mut diverged_at = None;
    for step in 0..cfg.pretrain.steps {
        let mut pick = seed::stream(cfg.seed, &[PRETRAIN_STEP, step as u64]);
        let mut xs = Vec::with_capacity(cfg.pretrain.batch);
        let mut ys = Vec::with_capacity(cfg.pretrain.batch);
        for b in 0..cfg.pretrain.batch {
            let src = &sources[pick.random_range(0..sources.len())];
            let sample_seed = seed::split(cfg.seed, &[PRETRAIN_STEP, step as u64, b as u64]);
            let pair = make_pair(src, cfg, sample_seed, String::new())?;
            xs.push(Tensor::from_volume(&pair.x));
            ys.push(Tensor::from_volume(&pair.y));
        }
        let r = gan_train_step(&mut model, &Tensor::stack(&xs)?, &Tensor::stack(&ys)?, &gan)?;
        report.rows.push(vec![step as f64, r.l1, r.l2, r.adv_d, r.adv_g, r.joint]);
        if !r.is_finite() || !model.generator.params().all_finite() {
            log::warn!("pretraining diverged at step {step}");
            diverged_at = Some(step);
            break;
        }
        if step % 50 == 0 {
            log::info!("pretrain step {step}: l1 {:.5} l2 {:.5} adv_d {:.4}", r.l1, r.l2, r.adv_d);
        }
    }

    if diverged_at.is_none() {
        report.final_mse = Some(evaluate_restoration(&Restorer::Model(&model.generator), &eval)?.mse);
        report.identity_mse = Some(evaluate_restoration(&Restorer::Identity, &eval)?.mse);
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    let checkpoint = Checkpoint {
        generator: model.generator,
        discriminator: model.discriminator,
        opt_g: Some(model.opt_g),
        opt_d: model.opt_d,
        rng_state: report.rows.len() as u64,
        meta: CheckpointMeta {
            step: report.rows.len() as u64,
            seed: cfg.seed,
            loss_digest: report.rows_digest(),
        },
    };
    Ok(PretrainOutcome {
        checkpoint,
        report,
        diverged_at,
    })
}

/// Paths written by a stage.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    pub report: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

/// Pretrain and write `checkpoint.bin` plus the pretrain report under
/// `cfg.output_dir`. A diverged run still writes its partial report.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<(PretrainOutcome, StageOutputs)> {
    let outcome = pretrain_model(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(Error::Write)?;
    let ck_path = cfg.output_dir.join("checkpoint.bin");
    save_checkpoint(&outcome.checkpoint, &ck_path)?;
    let report = emit(&outcome.report, cfg, &cfg.output_dir, &[&ck_path])?;
    if let Some(step) = outcome.diverged_at {
        return Err(Error::Diverged { step });
    }
    Ok((
        outcome,
        StageOutputs {
            report,
            checkpoint: Some(ck_path),
        },
    ))
}

fn check_compatible(cfg: &ExperimentConfig, ck: &Checkpoint) -> Result<()> {
    let want = cfg.generator();
    let have = ck.generator.config();
    if *have != want {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint generator {have:?} does not match configured {want:?}"
        )));
    }
    Ok(())
}

fn stack_labeled(set: &LabeledSet, picks: &[usize]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let xs: Vec<_> = picks.iter().map(|&i| Tensor::from_volume(&set.volumes[i])).collect();
    let labels = picks.iter().flat_map(|&i| set.masks[i].iter().copied()).collect();
    Ok((Tensor::stack(&xs)?, labels))
}

/// Per-class and mean dice of `g` on every volume of `set`, pooled.
pub fn segmentation_dice(g: &Generator<f32>, set: &LabeledSet, num_classes: usize) -> Result<(Vec<f64>, f64)> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (v, m) in set.volumes.iter().zip(&set.masks) {
        let out = g.forward(&Tensor::from_volume(v))?;
        pred.extend(loss::argmax_labels(out.data(), num_classes, v.channel_len()));
        truth.extend_from_slice(m);
    }
    let per_class = loss::per_class_dice(&pred, &truth, num_classes)?;
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok((per_class, mean))
}

/// Fine-tune a head-swapped generator on the labeled fraction of the
/// training split and score it on the test split. Without a checkpoint the
/// body starts from the same initialization pretraining would use.
pub fn finetune_model(cfg: &ExperimentConfig, checkpoint: Option<&Checkpoint>) -> Result<(Generator<f32>, MetricsReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let body = match checkpoint {
        Some(ck) => {
            check_compatible(cfg, ck)?;
            ck.generator.clone()
        }
        None => initial_generator(cfg)?,
    };
    let k = cfg.data.synthetic.num_classes();
    let mut g = body.replace_head(k, seed::split(cfg.seed, &[HEAD]))?;
    let (train, test) = segmentation_splits(cfg)?;
    let subset = label_subset(train.volumes.len(), cfg.finetune.label_fraction, seed::split(cfg.seed, &[LABELS]));
    let mut opt = AdamState::new(cfg.finetune_adam(), g.params());
    let stage = if checkpoint.is_some() { "finetune" } else { "finetune_scratch" };
    let mut report = MetricsReport::new(stage, cfg, &FINETUNE_COLUMNS);
    for step in 0..cfg.finetune.steps {
        let mut pick = seed::stream(cfg.seed, &[FINETUNE_STEP, step as u64]);
        let picks: Vec<usize> = (0..cfg.finetune.batch)
            .map(|_| subset[pick.random_range(0..subset.len())])
            .collect();
        let (x, labels) = stack_labeled(&train, &picks)?;
        let ce = segmentation_train_step(&mut g, &mut opt, &x, &labels)?;
        report.rows.push(vec![step as f64, ce]);
        if !ce.is_finite() {
            return Err(Error::Diverged { step });
        }
    }
    let (per_class, mean) = segmentation_dice(&g, &test, k)?;
    report.per_class_dice = per_class;
    report.mean_dice = Some(mean);
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((g, report))
}

/// [`finetune_model`] plus report files under `cfg.output_dir`.
pub fn finetune(cfg: &ExperimentConfig, checkpoint: Option<&Checkpoint>) -> Result<(MetricsReport, StageOutputs)> {
    let (_, report) = finetune_model(cfg, checkpoint)?;
    let path = emit(&report, cfg, &cfg.output_dir, &[])?;
    Ok((
        report,
        StageOutputs {
            report: path,
            checkpoint: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::checkpoint::encode_checkpoint;
    use crate::net::train::ReconLoss;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.synthetic.count = 4;
        cfg.data.synthetic.dims = [18, 18, 18];
        cfg.data.eval_count = 2;
        cfg.data.train_count = 4;
        cfg.data.test_count = 2;
        cfg.model.depth = 1;
        cfg.model.base_channels = 4;
        cfg.model.disc_base_channels = 2;
        cfg.pretrain.steps = 3;
        cfg.finetune.steps = 3;
        cfg
    }

    #[test]
    fn zero_steps_keep_the_initialization() {
        let mut cfg = tiny();
        cfg.pretrain.steps = 0;
        let out = pretrain_model(&cfg).unwrap();
        assert!(out.report.rows.is_empty());
        assert_eq!(out.checkpoint.generator, initial_generator(&cfg).unwrap());
    }

    #[test]
    fn degenerate_pretext_has_zero_loss_at_step_zero() {
        // m = 0 makes every pair (y, y)
        let mut cfg = tiny();
        cfg.pretext.m = 0;
        cfg.loss.adversarial = false;
        let out = pretrain_model(&cfg).unwrap();
        assert_eq!(out.report.identity_mse, Some(0.0));
    }

    #[test]
    fn pretraining_is_deterministic() {
        let cfg = tiny();
        let a = pretrain_model(&cfg).unwrap();
        let b = pretrain_model(&cfg).unwrap();
        assert_eq!(a.report, MetricsReport { wall_clock_s: a.report.wall_clock_s, ..b.report });
        assert_eq!(
            encode_checkpoint(&a.checkpoint).unwrap(),
            encode_checkpoint(&b.checkpoint).unwrap()
        );
        assert_eq!(a.report.rows.len(), 3);
    }

    #[test]
    fn loss_arms_differ() {
        let mut cfg = tiny();
        let mut digests = Vec::new();
        for recon in [ReconLoss::L1, ReconLoss::L2] {
            for adversarial in [false, true] {
                cfg.loss.recon = recon;
                cfg.loss.adversarial = adversarial;
                let out = pretrain_model(&cfg).unwrap();
                assert_eq!(out.checkpoint.discriminator.is_some(), adversarial);
                digests.push(out.report.rows_digest());
            }
        }
        digests.sort();
        digests.dedup();
        assert_eq!(digests.len(), 4);
    }

    #[test]
    fn finetune_from_checkpoint_and_scratch() {
        let cfg = tiny();
        let ck = pretrain_model(&cfg).unwrap().checkpoint;
        let (_, a) = finetune_model(&cfg, Some(&ck)).unwrap();
        let (_, b) = finetune_model(&cfg, None).unwrap();
        assert_eq!(a.per_class_dice.len(), 2);
        assert!(a.mean_dice.unwrap() >= 0.0 && b.mean_dice.unwrap() <= 1.0);
        assert_eq!(a.stage, "finetune");
        assert_eq!(b.stage, "finetune_scratch");

        let mut other = cfg.clone();
        other.model.base_channels = 2;
        assert!(matches!(finetune_model(&other, Some(&ck)), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn divergence_aborts_with_partial_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.output_dir = dir.path().to_path_buf();
        cfg.loss.adversarial = false;
        cfg.pretrain.lr = 1e30;
        cfg.pretrain.steps = 20;
        match pretrain(&cfg) {
            Err(Error::Diverged { step }) => {
                let csv = std::fs::read_to_string(dir.path().join("pretrain.csv")).unwrap();
                assert_eq!(csv.lines().count(), step + 2);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
