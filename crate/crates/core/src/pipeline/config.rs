use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SyntheticSpec;
use crate::error::{Error, Result};
use crate::loss::{AdvMode, LossWeights};
use crate::net::{AdamConfig, DiscriminatorConfig, GanConfig, GeneratorConfig, ReconLoss};
use crate::volume::NormalizeMode;

/// Full description of one experiment. Every field has a desk-scale default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub pretext: PretextConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            pretext: PretextConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of source volumes (`*.nii`, or `<stem>.hdr.json` next to
    /// `<stem>.f32`). Synthetic volumes are used when unset.
    pub dir: Option<PathBuf>,
    /// `count` is the size of the unlabeled pretraining pool and `seed` keys
    /// every synthetic split.
    pub synthetic: SyntheticSpec,
    /// Held-out pretext pairs used for the reconstruction metric.
    pub eval_count: usize,
    /// Labeled synthetic volumes for fine-tuning and for its held-out test.
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            synthetic: SyntheticSpec::default(),
            eval_count: 16,
            train_count: 20,
            test_count: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretextConfig {
    pub crop: [usize; 3],
    pub side: [usize; 3],
    pub m: usize,
    pub normalize: NormalizeMode,
}

impl Default for PretextConfig {
    fn default() -> Self {
        PretextConfig {
            crop: [16, 16, 16],
            side: [4, 4, 4],
            m: 2,
            normalize: NormalizeMode::Minmax01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub skip: bool,
    pub disc_base_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 2,
            base_channels: 8,
            skip: true,
            disc_base_channels: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub recon: ReconLoss,
    pub adversarial: bool,
    pub lambda: f64,
    pub mode: AdvMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            recon: ReconLoss::L1,
            adversarial: true,
            lambda: 10.0,
            mode: AdvMode::Nonsaturating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 500,
            batch: 2,
            lr: 2e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub label_fraction: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 300,
            batch: 2,
            lr: 1e-4,
            label_fraction: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        let f = self.finetune.label_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return bad(format!("label fraction {f} outside (0, 1]"));
        }
        if self.pretrain.batch == 0 || self.finetune.batch == 0 {
            return bad("batch size must be at least 1".into());
        }
        for lr in [self.pretrain.lr, self.finetune.lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("learning rate {lr}"));
            }
        }
        if self.data.eval_count == 0 || self.data.train_count == 0 || self.data.test_count == 0 {
            return bad("dataset counts must be at least 1".into());
        }
        LossWeights::new(self.loss.lambda)?;
        self.generator().check_input(self.pretext.crop)?;
        if self.loss.adversarial {
            self.discriminator().output_dims(self.pretext.crop)?;
        }
        self.data.synthetic.validate()?;
        let dims = self.data.synthetic.dims;
        if self.data.dir.is_none() && (0..3).any(|a| self.pretext.crop[a] > dims[a]) {
            return bad(format!("crop {:?} larger than synthetic dims {dims:?}", self.pretext.crop));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.data.synthetic.channels
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            skip: self.model.skip,
            ..GeneratorConfig::restoration(self.channels(), self.model.depth, self.model.base_channels)
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig::new(self.channels(), self.model.disc_base_channels)
    }

    pub fn gan(&self) -> GanConfig {
        GanConfig {
            weights: LossWeights {
                lambda: self.loss.lambda,
            },
            mode: self.loss.mode,
            recon: self.loss.recon,
            adversarial: self.loss.adversarial,
        }
    }

    pub fn pretrain_adam(&self) -> AdamConfig {
        AdamConfig::pretrain().with_lr(self.pretrain.lr)
    }

    pub fn finetune_adam(&self) -> AdamConfig {
        AdamConfig::finetune().with_lr(self.finetune.lr)
    }

    /// SHA-256 of the canonical JSON form, hex encoded. `output_dir` is left
    /// out so that a run reproduces byte for byte wherever it writes.
    pub fn digest(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_experiment_not_location() {
        let a = ExperimentConfig::default();
        let moved = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        let reseeded = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.digest(), moved.digest());
        assert_ne!(a.digest(), reseeded.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let mut c = ExperimentConfig::default();
        c.finetune.label_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.pretext.crop = [8; 3];
        assert!(c.validate().is_err(), "discriminator cannot reduce an 8^3 crop");
        c.loss.adversarial = false;
        assert!(c.validate().is_ok());
        let mut c = ExperimentConfig::default();
        c.pretext.crop = [24; 3];
        assert!(c.validate().is_err(), "crop exceeds synthetic dims");
    }
}
