use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config_file;
use crate::data::augment::PixelAugment;
use crate::error::{Error, Result};
use crate::model::config::LoraConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    AnatomicalPretrain,
    MpgFinetune,
}

/// Hyperparameters of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: StageKind,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Pairs per step when fine-tuning; images per step when pre-training.
    pub batch_size: usize,
    /// Regions drawn per image when pre-training.
    pub regions_per_image: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub giou_weight: f64,
    pub seed: u64,
    /// Pre-training only: attach adapters and train only them and the box head.
    pub use_lora: bool,
    pub lora: LoraConfig,
    /// Pre-training only: draw phrase variants from the synonym lexicon.
    pub synonyms: bool,
    pub augment: PixelAugment,
    /// Monitoring interval in steps while pre-training; `None` means a
    /// quarter epoch.
    pub eval_every: Option<u64>,
    /// Fraction of pre-training images held out for monitoring.
    pub monitor_fraction: f64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Write a resumable checkpoint every this many steps (pre-training).
    pub checkpoint_every: Option<u64>,
}

impl StageConfig {
    pub fn pretrain() -> Self {
        Self {
            stage: StageKind::AnatomicalPretrain,
            learning_rate: 1e-4,
            epochs: 1,
            batch_size: 8,
            regions_per_image: 5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.1,
            giou_weight: 1.0,
            seed: 0,
            use_lora: false,
            lora: LoraConfig::default(),
            synonyms: true,
            augment: PixelAugment::default(),
            eval_every: None,
            monitor_fraction: 0.05,
            max_steps: None,
            checkpoint_every: None,
        }
    }

    pub fn finetune() -> Self {
        Self {
            stage: StageKind::MpgFinetune,
            learning_rate: 1e-5,
            epochs: 90,
            batch_size: 12,
            synonyms: false,
            monitor_fraction: 0.0,
            ..Self::pretrain()
        }
    }

    pub fn defaults_for(kind: StageKind) -> Self {
        match kind {
            StageKind::AnatomicalPretrain => Self::pretrain(),
            StageKind::MpgFinetune => Self::finetune(),
        }
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            format!("learning_rate must be > 0, got {}", self.learning_rate),
        );
        check(
            self.epochs >= 1,
            format!("epochs must be >= 1, got {}", self.epochs),
        );
        check(
            self.batch_size >= 1,
            format!("batch_size must be >= 1, got {}", self.batch_size),
        );
        check(
            self.regions_per_image >= 1,
            format!(
                "regions_per_image must be >= 1, got {}",
                self.regions_per_image
            ),
        );
        check(
            self.weight_decay >= 0.0,
            format!("weight_decay must be >= 0, got {}", self.weight_decay),
        );
        check(
            (0.0..1.0).contains(&self.beta1),
            format!("beta1 must be in [0, 1), got {}", self.beta1),
        );
        check(
            (0.0..1.0).contains(&self.beta2),
            format!("beta2 must be in [0, 1), got {}", self.beta2),
        );
        check(
            self.adam_eps > 0.0,
            format!("adam_eps must be > 0, got {}", self.adam_eps),
        );
        check(
            self.grad_clip >= 0.0,
            format!("grad_clip must be >= 0, got {}", self.grad_clip),
        );
        check(
            self.giou_weight >= 0.0,
            format!("giou_weight must be >= 0, got {}", self.giou_weight),
        );
        check(
            (0.0..1.0).contains(&self.monitor_fraction),
            format!(
                "monitor_fraction must be in [0, 1), got {}",
                self.monitor_fraction
            ),
        );
        check(
            self.lora.rank >= 1,
            format!("lora.rank must be >= 1, got {}", self.lora.rank),
        );
        check(
            self.augment.jitter_strength >= 0.0 && self.augment.noise_sigma >= 0.0,
            "augment strengths must be >= 0".to_string(),
        );
        check(
            self.eval_every != Some(0),
            "eval_every must be >= 1".to_string(),
        );
        check(
            self.max_steps != Some(0),
            "max_steps must be >= 1".to_string(),
        );
        check(
            self.checkpoint_every != Some(0),
            "checkpoint_every must be >= 1".to_string(),
        );
        if self.stage == StageKind::MpgFinetune && self.use_lora {
            problems.push(
                "use_lora applies to pre-training only; attached adapters are fine-tuned as-is"
                    .into(),
            );
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Parses a TOML run file. Keys left out take the defaults for the
    /// file's `stage`; unknown keys are all reported together.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table = config_file::parse_table(text)?;
        let kind = match table.get("stage") {
            Some(v) => StageKind::deserialize(v.clone())
                .map_err(|e| Error::InvalidInput(format!("config field 'stage': {e}")))?,
            None => {
                return Err(Error::InvalidInput(
                    "config field 'stage' is required".into(),
                ))
            }
        };
        let mut merged = toml::Table::try_from(Self::defaults_for(kind))
            .map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        for (k, v) in table {
            match (merged.get_mut(&k), v) {
                (Some(toml::Value::Table(base)), toml::Value::Table(over)) => {
                    for (kk, vv) in over {
                        base.insert(kk, vv);
                    }
                }
                (_, v) => {
                    merged.insert(k, v);
                }
            }
        }
        let cfg: Self = config_file::from_table(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
