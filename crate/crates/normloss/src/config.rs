//! Experiment configuration, read from TOML.
//!
//! ```toml
//! config_version = 1
//! seed = 0
//! epochs = 50
//! batch_size = 64
//!
//! [model]
//! preset = "mini-resnet"   # linear | mlp-bn | mini-resnet | custom
//! width = 4
//!
//! [data]
//! source = "blobs"         # blobs | cifar10 | cifar100
//! classes = 2
//! dim = 16
//! shape = [1, 4, 4]
//!
//! [optimizer]
//! lr = 0.1
//! momentum = 0.9
//! milestones = [25, 40]
//! factor = 5.0
//!
//! [regularizer]
//! kind = "norm_loss"       # none | weight_decay | norm_loss | oblique_projection
//! lambda = 0.001
//!
//! [output]
//! dir = "runs/blobs"
//! ```
//!
//! A `custom` model lists its layers explicitly as `[[model.layers]]`
//! tables, each tagged with `kind`.

use std::path::{Path, PathBuf};

use normloss_core::data::AugmentPolicy;
use normloss_core::nn::{LayerSpec, ModelSpec};
use normloss_core::optim::LrSchedule;
use normloss_core::{RegKind, RegularizerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub epochs: u32,
    pub batch_size: usize,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub regularizer: RegularizerSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Linear,
    MlpBn,
    MiniResnet,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Hidden units of `mlp-bn`.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Stem channels of `mini-resnet`.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerSpec>,
}

fn default_hidden() -> usize {
    32
}

fn default_width() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding the CIFAR binaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Reshapes each blob vector, e.g. `[1, 4, 4]` for convolutional models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    /// Keeps the first `n` training examples of every class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset_per_class: Option<usize>,
    /// Per-channel standardization with training-split statistics.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentConfig>,
}

fn default_classes() -> usize {
    2
}

fn default_dim() -> usize {
    2
}

fn default_train_per_class() -> usize {
    1000
}

fn default_test_per_class() -> usize {
    500
}

fn default_spread() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub pad: usize,
    pub crop: [usize; 2],
    pub hflip_prob: f64,
}

impl From<AugmentConfig> for AugmentPolicy {
    fn from(a: AugmentConfig) -> Self {
        AugmentPolicy { pad: a.pad, crop: (a.crop[0], a.crop[1]), hflip_prob: a.hflip_prob }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub nesterov: bool,
    /// Epochs at which the learning rate is divided by `factor`.
    #[serde(default)]
    pub milestones: Vec<u32>,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_factor() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSection {
    pub kind: RegKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_period")]
    pub projection_period: u64,
}

fn default_period() -> u64 {
    1
}

impl Default for RegularizerSection {
    fn default() -> Self {
        RegularizerSection { kind: RegKind::None, lambda: 0.0, projection_period: 1 }
    }
}

impl RegularizerSection {
    pub fn to_config(&self) -> RegularizerConfig {
        RegularizerConfig { kind: self.kind, lambda: self.lambda, projection_period: self.projection_period }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn regularizer(&self) -> RegularizerConfig {
        self.regularizer.to_config()
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        Ok(LrSchedule::new(self.optimizer.lr, self.optimizer.milestones.clone(), self.optimizer.factor)?)
    }

    /// Number of classes of the configured data source.
    pub fn class_count(&self) -> usize {
        match self.data.source {
            DataSource::Blobs => self.data.classes,
            DataSource::Cifar10 => 10,
            DataSource::Cifar100 => 100,
        }
    }

    /// Shape of one example as seen by the model.
    pub fn sample_shape(&self) -> Vec<usize> {
        match self.data.source {
            DataSource::Blobs => self.data.shape.clone().unwrap_or_else(|| vec![self.data.dim]),
            DataSource::Cifar10 | DataSource::Cifar100 => vec![3, 32, 32],
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let shape = self.sample_shape();
        let classes = self.class_count();
        let features = shape.iter().product();
        let spec = match self.model.preset {
            Preset::Linear => ModelSpec::linear(features, classes),
            Preset::MlpBn => ModelSpec::mlp_bn(features, self.model.hidden, classes),
            Preset::MiniResnet => {
                let &[c, h, w] = shape.as_slice() else {
                    return Err(HarnessError::Config(format!(
                        "mini-resnet needs C x H x W examples, data has shape {shape:?}"
                    )));
                };
                ModelSpec::mini_resnet([c, h, w], self.model.width, classes)
            }
            Preset::Custom => ModelSpec { input_shape: shape, layers: self.model.layers.clone() },
        };
        spec.infer_shapes()?;
        if spec.classes()? != classes {
            return Err(HarnessError::Config(format!("model emits {} classes, data has {classes}", spec.classes()?)));
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.config_version != CONFIG_VERSION {
            return bad(format!("config_version {} is not supported (expected {CONFIG_VERSION})", self.config_version));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.model.preset == Preset::Custom && self.model.layers.is_empty() {
            return bad("preset 'custom' needs [[model.layers]]".into());
        }
        if self.model.preset != Preset::Custom && !self.model.layers.is_empty() {
            return bad("[[model.layers]] is only used with preset 'custom'".into());
        }
        if self.model.hidden == 0 || self.model.width == 0 {
            return bad("model hidden and width must be positive".into());
        }
        let d = &self.data;
        match d.source {
            DataSource::Blobs => {
                if d.classes < 2 || d.dim < 2 || d.train_per_class == 0 || d.test_per_class == 0 || !(d.spread >= 0.0) {
                    return bad("blobs need classes >= 2, dim >= 2, positive per-class counts and spread >= 0".into());
                }
                if let Some(shape) = &d.shape {
                    if shape.iter().product::<usize>() != d.dim || shape.contains(&0) {
                        return bad(format!("data.shape {shape:?} does not hold {} features", d.dim));
                    }
                }
            }
            DataSource::Cifar10 | DataSource::Cifar100 => {
                if d.path.is_none() {
                    return bad("CIFAR sources need data.path".into());
                }
            }
        }
        if d.subset_per_class == Some(0) || d.test_subset_per_class == Some(0) {
            return bad("subset sizes must be positive".into());
        }
        if let Some(a) = &d.augment {
            // Test images are not augmented, so crops keep the image size.
            let shape = self.sample_shape();
            let &[_, h, w] = shape.as_slice() else {
                return bad("augmentation needs C x H x W examples".into());
            };
            if a.crop != [h, w] {
                return bad(format!("augment.crop {:?} must equal the image size [{h}, {w}]", a.crop));
            }
            AugmentPolicy::from(*a).validate(h, w)?;
        }
        self.schedule()?;
        normloss_core::optim::OptimizerState::<f32>::new(
            self.optimizer.lr,
            self.optimizer.momentum,
            self.optimizer.nesterov,
        )?;
        self.regularizer().validate()?;
        let spec = self.model_spec()?;
        if spec.has_batch_norm() && self.batch_size < 2 {
            return bad(format!("batch_size {} is too small for batch norm (need >= 2)", self.batch_size));
        }
        Ok(())
    }

    /// Toy preset: blobs in 16 dimensions viewed as 1 x 4 x 4 images.
    pub fn blobs_example(preset: Preset) -> Self {
        let shape = match preset {
            Preset::MiniResnet => Some(vec![1, 4, 4]),
            _ => None,
        };
        ExperimentConfig {
            config_version: CONFIG_VERSION,
            seed: 0,
            epochs: 10,
            batch_size: 64,
            model: ModelConfig { preset, hidden: 32, width: 4, layers: Vec::new() },
            data: DataConfig {
                source: DataSource::Blobs,
                path: None,
                classes: 2,
                dim: 16,
                train_per_class: 1000,
                test_per_class: 500,
                spread: 1.0,
                shape,
                subset_per_class: None,
                test_subset_per_class: None,
                normalize: false,
                augment: None,
            },
            optimizer: OptimizerConfig {
                lr: 0.05,
                momentum: 0.9,
                nesterov: false,
                milestones: Vec::new(),
                factor: 5.0,
            },
            regularizer: RegularizerSection::default(),
            output: OutputConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
config_version = 1
seed = 3
epochs = 2
batch_size = 16

[model]
preset = "mlp-bn"
hidden = 8

[data]
source = "blobs"
classes = 3
dim = 4

[optimizer]
lr = 0.1
milestones = [1]

[regularizer]
kind = "norm_loss"
lambda = 0.01
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(FULL).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.preset, Preset::MlpBn);
        assert_eq!(cfg.optimizer.momentum, 0.9);
        assert_eq!(cfg.regularizer().kind, RegKind::NormLoss);
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_wrong_version_and_unknown_keys() {
        let err =
            ExperimentConfig::from_toml_str(&FULL.replace("config_version = 1", "config_version = 2")).unwrap_err();
        assert_eq!(err.category(), "invalid-config");
        let err = ExperimentConfig::from_toml_str(&FULL.replace("seed = 3", "seed = 3\nsede = 4")).unwrap_err();
        assert_eq!(err.category(), "invalid-config");
    }

    #[test]
    fn batch_of_one_with_batch_norm_is_rejected() {
        let err = ExperimentConfig::from_toml_str(&FULL.replace("batch_size = 16", "batch_size = 1")).unwrap_err();
        assert!(err.to_string().contains("batch norm"), "{err}");
        let cfg = FULL.replace("batch_size = 16", "batch_size = 2");
        assert!(ExperimentConfig::from_toml_str(&cfg).is_ok());
        let linear = FULL.replace("batch_size = 16", "batch_size = 1").replace("mlp-bn", "linear");
        assert!(ExperimentConfig::from_toml_str(&linear).is_ok());
    }

    #[test]
    fn custom_layers_parse() {
        let text = FULL.replace("preset = \"mlp-bn\"\nhidden = 8", "preset = \"custom\"\n\n[[model.layers]]\nkind = \"dense\"\ninputs = 4\noutputs = 3\nbias = true\n\n[[model.layers]]\nkind = \"softmax_xent_head\"\n");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.model_spec().unwrap().layers.len(), 2);
    }

    #[test]
    fn mini_resnet_needs_image_examples() {
        let mut cfg = ExperimentConfig::blobs_example(Preset::MiniResnet);
        assert!(cfg.validate().is_ok());
        cfg.data.shape = None;
        assert_eq!(cfg.validate().unwrap_err().category(), "invalid-config");
    }
}
