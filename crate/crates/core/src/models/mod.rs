//! The three fusion architectures, first-layer channel adaptation, pretrained
//! weight loading and checkpoints.

mod adapt;
mod checkpoint;
mod fusion;
mod pretrained;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use adapt::{adapt_first_layer, adapt_weight_tensor, FirstLayerAdaptation};
pub use checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use fusion::{build_early, build_late, build_moe, Extractor, FusionInput, FusionModel, ModelOutput, ScoreKind};
pub use pretrained::load_pretrained;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Early,
    Late,
    Moe,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Early, Strategy::Late, Strategy::Moe];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Early => "early",
            Strategy::Late => "late",
            Strategy::Moe => "moe",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected early, late or moe)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneFamily {
    PaperResnet50,
    TinyCnn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    #[serde(default)]
    pub pretrained: bool,
    pub feature_dim: usize,
}

impl BackboneSpec {
    pub fn paper_resnet50(pretrained: bool) -> Self {
        Self {
            family: BackboneFamily::PaperResnet50,
            pretrained,
            feature_dim: crate::nn::ResNet50::<f32>::FEATURE_DIM,
        }
    }

    pub fn tiny_cnn(feature_dim: usize) -> Self {
        Self {
            family: BackboneFamily::TinyCnn,
            pretrained: false,
            feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            BackboneFamily::PaperResnet50 => {
                let expected = crate::nn::ResNet50::<f32>::FEATURE_DIM;
                if self.feature_dim != expected {
                    return Err(Error::Config(format!(
                        "paper_resnet50 has feature_dim {expected}, got {}",
                        self.feature_dim
                    )));
                }
            }
            BackboneFamily::TinyCnn => {
                if self.pretrained {
                    return Err(Error::Config("tiny_cnn has no pretrained weights".into()));
                }
                if self.feature_dim == 0 {
                    return Err(Error::Config("tiny_cnn feature_dim must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::paper_resnet50(true)
    }
}

fn default_num_classes() -> usize {
    4
}

fn default_width() -> usize {
    256
}

fn default_true() -> bool {
    true
}

/// Everything needed to construct any of the three models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionModelSpec {
    pub strategy: Strategy,
    #[serde(default)]
    pub backbone: BackboneSpec,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_width")]
    pub per_modality_feature_dim: usize,
    #[serde(default = "default_width")]
    pub gate_hidden_dim: usize,
    /// When false the gate sees detached features and its loss gradient
    /// stops at the gate input.
    #[serde(default = "default_true")]
    pub gate_grad_to_extractors: bool,
}

impl FusionModelSpec {
    pub fn new(strategy: Strategy, backbone: BackboneSpec) -> Self {
        Self {
            strategy,
            backbone,
            num_classes: default_num_classes(),
            per_modality_feature_dim: default_width(),
            gate_hidden_dim: default_width(),
            gate_grad_to_extractors: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        for (name, v) in [
            ("num_classes", self.num_classes),
            ("per_modality_feature_dim", self.per_modality_feature_dim),
            ("gate_hidden_dim", self.gate_hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}
