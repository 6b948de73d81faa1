//! Run configuration: a TOML file plus command-line overrides.
//! Flags always win over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use seover_core::context::ContextVariant;
use seover_core::corpus::LabelSet;
use seover_core::encoder::EncoderConfig;
use seover_core::error::Error;
use seover_core::seov::FusionMode;
use seover_core::train::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub label_set: Option<String>,
    pub custom_labels: Option<Vec<String>>,
    pub fusion: Option<String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub vocab: VocabSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub context: ContextSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub split: SplitSection,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub min_frequency: usize,
    pub max_size: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            min_frequency: 1,
            max_size: 50_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            d_model: 32,
            n_layers: 1,
            n_heads: 2,
            d_ff: 64,
            max_len: 16,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextSection {
    pub variant: String,
    pub hidden_dim: usize,
}

impl Default for ContextSection {
    fn default() -> Self {
        ContextSection {
            variant: "bclstm".into(),
            hidden_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub freeze_upstream: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            stage1_epochs: 40,
            stage2_epochs: 60,
            learning_rate: 1e-3,
            optimizer: "adam".into(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            freeze_upstream: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub ratios: [f64; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            ratios: [0.8, 0.1, 0.1],
        }
    }
}

/// Flag overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fusion: Option<String>,
    pub label_set: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Fully resolved configuration after merging file and flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub label_set: LabelSet,
    /// True when the label set came from the file or a flag rather than
    /// the built-in default; checkpoint compatibility checks only fire
    /// for explicit choices.
    pub label_set_explicit: bool,
    pub fusion: FusionMode,
    pub fusion_explicit: bool,
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub vocab_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub vocab_min_frequency: usize,
    pub vocab_max_size: usize,
    pub encoder: EncoderConfig,
    pub context_variant: ContextVariant,
    pub context_hidden: usize,
    pub train: TrainConfig,
    pub split_ratios: [f64; 3],
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config { msg: msg.into() }
}

pub fn load_file(path: &Path) -> Result<FileConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))
}

pub fn resolve(file: FileConfig, flags: &Overrides) -> Result<RunConfig, Error> {
    let explicit_label = flags.label_set.clone().or(file.label_set);
    let label_set_explicit = explicit_label.is_some();
    let label_set_name = explicit_label.unwrap_or_else(|| "meld".into());
    let label_set = match label_set_name.as_str() {
        "custom" => {
            let labels = file
                .custom_labels
                .ok_or_else(|| config_err("label_set = \"custom\" needs custom_labels"))?;
            LabelSet::new("custom", labels)?
        }
        name => LabelSet::by_name(name).ok_or_else(|| {
            config_err(format!(
                "unknown label set {name:?} (iemocap, meld, custom)"
            ))
        })?,
    };

    let explicit_fusion = flags.fusion.clone().or(file.fusion);
    let fusion_explicit = explicit_fusion.is_some();
    let fusion: FusionMode = explicit_fusion.unwrap_or_else(|| "seov".into()).parse()?;

    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let out_dir = flags
        .out
        .clone()
        .or(file.paths.out_dir)
        .unwrap_or_else(|| PathBuf::from("out"));
    let vocab_path = file
        .paths
        .vocab
        .unwrap_or_else(|| out_dir.join("vocab.txt"));
    let checkpoint_path = flags
        .checkpoint
        .clone()
        .or(file.paths.checkpoint)
        .unwrap_or_else(|| out_dir.join("stage2.ckpt"));

    let encoder = EncoderConfig {
        d_model: file.encoder.d_model,
        n_layers: file.encoder.n_layers,
        n_heads: file.encoder.n_heads,
        d_ff: file.encoder.d_ff,
        max_len: file.encoder.max_len,
        dropout_rate: file.encoder.dropout,
    };
    encoder.validate()?;

    let optimizer = match file.training.optimizer.as_str() {
        "adam" => OptimizerKind::Adam,
        "sgd" => OptimizerKind::Sgd,
        other => {
            return Err(config_err(format!(
                "unknown optimizer {other:?} (adam, sgd)"
            )))
        }
    };
    let train = TrainConfig {
        stage1_epochs: file.training.stage1_epochs,
        stage2_epochs: file.training.stage2_epochs,
        learning_rate: file.training.learning_rate,
        optimizer,
        adam_beta1: file.training.adam_beta1,
        adam_beta2: file.training.adam_beta2,
        adam_eps: file.training.adam_eps,
        batch_size: file.training.batch_size,
        freeze_upstream: file.training.freeze_upstream,
        seed,
    };
    train.validate()?;

    Ok(RunConfig {
        label_set,
        label_set_explicit,
        fusion,
        fusion_explicit,
        seed,
        corpus: file.paths.corpus,
        out_dir,
        vocab_path,
        checkpoint_path,
        vocab_min_frequency: file.vocab.min_frequency,
        vocab_max_size: file.vocab.max_size,
        encoder,
        context_variant: file.context.variant.parse()?,
        context_hidden: file.context.hidden_dim,
        train,
        split_ratios: file.split.ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_without_a_file() {
        let cfg = resolve(FileConfig::default(), &Overrides::default()).unwrap();
        assert_eq!(cfg.label_set.name(), "meld");
        assert_eq!(cfg.fusion, FusionMode::Seov);
        assert_eq!(cfg.encoder.d_model, 32);
        assert!(cfg.train.freeze_upstream);
    }

    #[test]
    fn flags_override_the_file() {
        let file: FileConfig = toml::from_str(
            r#"
            label_set = "meld"
            fusion = "seov"
            seed = 3
            [paths]
            out_dir = "from_file"
            "#,
        )
        .unwrap();
        let flags = Overrides {
            seed: Some(9),
            fusion: Some("sentence_only".into()),
            label_set: Some("iemocap".into()),
            out: Some(PathBuf::from("from_flag")),
            checkpoint: None,
        };
        let cfg = resolve(file, &flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.fusion, FusionMode::SentenceOnly);
        assert_eq!(cfg.label_set.name(), "iemocap");
        assert_eq!(cfg.out_dir, PathBuf::from("from_flag"));
        assert_eq!(cfg.vocab_path, PathBuf::from("from_flag/vocab.txt"));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let parsed: Result<FileConfig, _> = toml::from_str("banana = 1");
        assert!(parsed.is_err());
    }

    #[test]
    fn custom_label_sets_need_the_label_list() {
        let file: FileConfig = toml::from_str("label_set = \"custom\"").unwrap();
        assert!(resolve(file, &Overrides::default()).is_err());
        let file: FileConfig =
            toml::from_str("label_set = \"custom\"\ncustom_labels = [\"x\", \"y\"]").unwrap();
        let cfg = resolve(file, &Overrides::default()).unwrap();
        assert_eq!(cfg.label_set.len(), 2);
    }
}
