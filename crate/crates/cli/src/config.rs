//! The TOML run configuration shared by every subcommand.
//!
//! Relative paths inside a config file resolve against the file's directory.
//! The top-level `seed` drives every stochastic component: per-component
//! `seed` keys are replaced by values derived from it. The feature extractor
//! is the exception, since it defines the metrics and must not move with the
//! run seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wrinkle_core::features::FeatureNetConfig;
use wrinkle_core::inpaint::{DiscConfig, GeneratorConfig};
use wrinkle_core::losses::LossWeights;
use wrinkle_core::maskgen::MaskPolicy;
use wrinkle_core::math::derive_seed;
use wrinkle_core::pipeline::PipelineOptions;
use wrinkle_core::segnet::{SegModelConfig, SegTrainConfig};
use wrinkle_core::trainer::InpaintTrainConfig;
use wrinkle_core::AugmentConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_dir: PathBuf,
    /// Separate validation set; otherwise `val_fraction` of the training ids
    /// are held out.
    pub val_dir: Option<PathBuf>,
    pub val_fraction: f64,
    /// Set used by `eval`; defaults to the validation set, then training.
    pub eval_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_dir: PathBuf::from("data/train"),
            val_dir: None,
            val_fraction: 0.0,
            eval_dir: None,
        }
    }
}

/// Inpainting schedule. Mask policy and loss weights live in their own
/// top-level tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintSchedule {
    pub epochs: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub batch_size: usize,
    pub crop_size: usize,
    pub val_every: usize,
}

impl Default for InpaintSchedule {
    fn default() -> Self {
        let d = InpaintTrainConfig::default();
        InpaintSchedule {
            epochs: d.epochs,
            lr_gen: d.lr_gen,
            lr_disc: d.lr_disc,
            batch_size: d.batch_size,
            crop_size: d.crop_size,
            val_every: d.val_every,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Defaults to `runs` next to the config file.
    pub output_dir: Option<PathBuf>,
    /// Frozen segmenter for inpainting and inference; defaults to
    /// `<output_dir>/seg.ckpt`.
    pub seg_checkpoint: Option<PathBuf>,
    /// Defaults to `<output_dir>/generator.ckpt`.
    pub gen_checkpoint: Option<PathBuf>,
    /// Optional pretrained weights for the feature extractor.
    pub feature_weights: Option<PathBuf>,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub mask_policy: MaskPolicy,
    pub seg_model: SegModelConfig,
    pub seg_train: SegTrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscConfig,
    pub features: FeatureNetConfig,
    pub inpaint_train: InpaintSchedule,
    pub loss_weights: LossWeights,
    pub pipeline: PipelineOptions,
}

/// Component indices for seed derivation.
const SEED_SEG_MODEL: u64 = 1;
const SEED_SEG_TRAIN: u64 = 2;
const SEED_GENERATOR: u64 = 3;
const SEED_DISCRIMINATOR: u64 = 4;
const SEED_INPAINT_TRAIN: u64 = 5;
const SEED_EVAL_MASKS: u64 = 6;

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(CliError::runtime)
    }

    /// Parse a file without touching its paths.
    pub fn parse_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Parse a file and resolve its relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg = Self::parse_file(path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let out = self.output_dir.get_or_insert_with(|| PathBuf::from("runs"));
        fix(out);
        for p in [
            &mut self.seg_checkpoint,
            &mut self.gen_checkpoint,
            &mut self.feature_weights,
        ] {
            if let Some(p) = p {
                fix(p);
            }
        }
        fix(&mut self.data.train_dir);
        for p in [&mut self.data.val_dir, &mut self.data.eval_dir] {
            if let Some(p) = p {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let checks = [
            self.augment.validate(),
            self.mask_policy.validate(),
            self.seg_train.validate(),
            self.inpaint_train_config().validate(),
            self.loss_weights.validate(),
            self.pipeline.validate(),
        ];
        for r in checks {
            r.map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(CliError::config(format!(
                "data.val_fraction {} outside [0, 1)",
                self.data.val_fraction
            )));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn seg_checkpoint_path(&self) -> PathBuf {
        self.seg_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir().join("seg.ckpt"))
    }

    pub fn gen_checkpoint_path(&self) -> PathBuf {
        self.gen_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir().join("generator.ckpt"))
    }

    pub fn seg_model_config(&self) -> SegModelConfig {
        SegModelConfig {
            seed: derive_seed(self.seed, &[SEED_SEG_MODEL]),
            ..self.seg_model.clone()
        }
    }

    pub fn seg_train_config(&self) -> SegTrainConfig {
        SegTrainConfig {
            seed: derive_seed(self.seed, &[SEED_SEG_TRAIN]),
            ..self.seg_train.clone()
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: derive_seed(self.seed, &[SEED_GENERATOR]),
            ..self.generator.clone()
        }
    }

    pub fn discriminator_config(&self) -> DiscConfig {
        DiscConfig {
            seed: derive_seed(self.seed, &[SEED_DISCRIMINATOR]),
            ..self.discriminator.clone()
        }
    }

    pub fn inpaint_train_config(&self) -> InpaintTrainConfig {
        let s = &self.inpaint_train;
        InpaintTrainConfig {
            epochs: s.epochs,
            lr_gen: s.lr_gen,
            lr_disc: s.lr_disc,
            batch_size: s.batch_size,
            crop_size: s.crop_size,
            seed: derive_seed(self.seed, &[SEED_INPAINT_TRAIN]),
            mask_policy: self.mask_policy.clone(),
            weights: self.loss_weights.clone(),
            seg_checkpoint: Some(self.seg_checkpoint_path().display().to_string()),
            val_every: s.val_every,
        }
    }

    pub fn eval_mask_seed(&self) -> u64 {
        derive_seed(self.seed, &[SEED_EVAL_MASKS])
    }

    /// SHA-256 of the canonical TOML form, as lowercase hex. Call before
    /// [`resolve_paths`](Self::resolve_paths) for a location-independent hash.
    pub fn hash(&self) -> CliResult<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
