//! Run configuration: one human-editable TOML file with strict schema
//! validation; command-line flags override file values.

use docrel_core::encoder::{Activation, BackendKind, EncoderConfig};
use docrel_core::loss::TaskWeights;
use docrel_core::model::{ModelConfig, TaskToggles};
use docrel_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub infer: InferSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// `docred` or `pubtator`.
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "docred".to_string()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    /// `miniature` or `pretrained`.
    pub backend: String,
    /// Checkpoint-container name or path for the pretrained backend.
    pub name: Option<String>,
    pub h_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub window: usize,
    pub overlap: usize,
    pub seed: u64,
    #[serde(default)]
    pub lowercase: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let m = EncoderConfig::miniature(7);
        EncoderSection {
            backend: "miniature".to_string(),
            name: None,
            h_dim: m.h_dim,
            layers: m.layers,
            heads: m.heads,
            ffn_dim: m.ffn_dim,
            vocab_size: m.vocab_size,
            window: m.window,
            overlap: m.overlap,
            seed: m.seed,
            lowercase: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Group count of the grouped bilinear layers.
    pub groups: usize,
    /// Enabled auxiliary tasks, any subset of CR/ET/PER/FER. Relation
    /// extraction is always on.
    pub tasks: Vec<String>,
    pub head_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            groups: 4,
            tasks: ["CR", "ET", "PER", "FER"].iter().map(|s| s.to_string()).collect(),
            head_seed: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_documents: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub warmup_ratio: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub gamma_cr: f64,
    pub gamma_per: f64,
    pub eta_cr: f64,
    pub eta_et: f64,
    pub eta_per: f64,
    pub eta_fer: f64,
    pub patience: usize,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_documents: t.batch_documents,
            encoder_lr: t.encoder_lr,
            head_lr: t.head_lr,
            warmup_ratio: t.warmup_ratio,
            clip_norm: t.clip_norm,
            seed: t.seed,
            gamma_cr: t.gamma_cr,
            gamma_per: t.gamma_per,
            eta_cr: t.task_weights.cr,
            eta_et: t.task_weights.et,
            eta_per: t.task_weights.per,
            eta_fer: t.task_weights.fer,
            patience: t.patience,
            weight_decay: t.weight_decay,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    /// Evidence probability threshold.
    pub alpha: f64,
    /// Cap on uncertain triplets per entity pair.
    pub per_pair_cap: usize,
    #[serde(default)]
    pub no_augment: bool,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection {
            alpha: 0.5,
            per_pair_cap: 10,
            no_augment: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config schema violation: {e}"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn toggles(&self) -> Result<TaskToggles, String> {
        let mut t = TaskToggles::none();
        for task in &self.model.tasks {
            match task.to_ascii_uppercase().as_str() {
                "CR" => t.cr = true,
                "ET" => t.et = true,
                "PER" => t.per = true,
                "FER" => t.fer = true,
                other => return Err(format!("unknown task toggle `{other}`")),
            }
        }
        Ok(t)
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig, String> {
        let backend = match self.encoder.backend.as_str() {
            "miniature" => BackendKind::Miniature,
            "pretrained" => BackendKind::Pretrained,
            other => return Err(format!("unknown encoder backend `{other}`")),
        };
        let mut cfg = EncoderConfig {
            backend,
            h_dim: self.encoder.h_dim,
            layers: self.encoder.layers,
            heads: self.encoder.heads,
            ffn_dim: self.encoder.ffn_dim,
            vocab_size: self.encoder.vocab_size,
            window: self.encoder.window,
            overlap: self.encoder.overlap,
            activation: Activation::Tanh,
            seed: self.encoder.seed,
            lowercase: self.encoder.lowercase,
        };
        if backend == BackendKind::Pretrained {
            if let Some(name) = &self.encoder.name {
                if let Some(preset) = EncoderConfig::pretrained_preset(name) {
                    cfg = EncoderConfig {
                        seed: self.encoder.seed,
                        ..preset
                    };
                }
            }
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> Result<ModelConfig, String> {
        Ok(ModelConfig {
            encoder: self.encoder_config()?,
            groups: self.model.groups,
            toggles: self.toggles()?,
            gamma_cr: self.train.gamma_cr,
            gamma_per: self.train.gamma_per,
            task_weights: self.task_weights(),
            head_seed: self.model.head_seed,
        })
    }

    pub fn task_weights(&self) -> TaskWeights {
        TaskWeights {
            cr: self.train.eta_cr,
            et: self.train.eta_et,
            per: self.train.eta_per,
            fer: self.train.eta_fer,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_documents: self.train.batch_documents,
            encoder_lr: self.train.encoder_lr,
            head_lr: self.train.head_lr,
            warmup_ratio: self.train.warmup_ratio,
            clip_norm: self.train.clip_norm,
            seed: self.train.seed,
            task_weights: self.task_weights(),
            gamma_cr: self.train.gamma_cr,
            gamma_per: self.train.gamma_per,
            patience: self.train.patience,
            weight_decay: self.train.weight_decay,
            fer_alpha: self.infer.alpha,
        }
    }
}
