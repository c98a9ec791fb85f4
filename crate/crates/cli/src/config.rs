use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use fusionbench::dataset::{RebalancePlan, SplitSpec};
use fusionbench::models::{BackboneFamily, BackboneSpec, FusionModelSpec, Strategy};
use fusionbench::pipeline::InputPaths;
use fusionbench::synthgen::SceneSpec;
use fusionbench::training::TrainConfig;

/// Overrides `paths.pretrained`.
pub const PRETRAINED_ENV: &str = "FUSIONBENCH_PRETRAINED";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub thermal: PathBuf,
    pub rgb: PathBuf,
    pub lidar: PathBuf,
    pub points: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub cell_size_m: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { cell_size_m: 20.0 }
    }
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
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

/// Fusion model settings shared by every strategy; the strategy itself comes
/// from `strategies` or `--strategy`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub backbone: BackboneSpec,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_width")]
    pub per_modality_feature_dim: usize,
    #[serde(default = "default_width")]
    pub gate_hidden_dim: usize,
    #[serde(default = "default_true")]
    pub gate_grad_to_extractors: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            strategies: default_strategies(),
            backbone: BackboneSpec::default(),
            num_classes: default_num_classes(),
            per_modality_feature_dim: default_width(),
            gate_hidden_dim: default_width(),
            gate_grad_to_extractors: true,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, strategy: Strategy) -> FusionModelSpec {
        FusionModelSpec {
            strategy,
            backbone: self.backbone.clone(),
            num_classes: self.num_classes,
            per_modality_feature_dim: self.per_modality_feature_dim,
            gate_hidden_dim: self.gate_hidden_dim,
            gate_grad_to_extractors: self.gate_grad_to_extractors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub rebalance: RebalancePlan,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub scene: SceneSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, resolves relative paths against its directory and
    /// applies the pretrained-weights environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        if let Some(p) = env::var_os(PRETRAINED_ENV) {
            config.paths.pretrained = Some(PathBuf::from(p));
        }
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.thermal, &mut p.rgb, &mut p.lidar, &mut p.points, &mut p.out_dir] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(path) = p.pretrained.as_mut().filter(|p| p.is_relative()) {
            *path = base.join(&*path);
        }
    }

    pub fn inputs(&self) -> InputPaths {
        InputPaths {
            thermal: self.paths.thermal.clone(),
            rgb: self.paths.rgb.clone(),
            lidar: self.paths.lidar.clone(),
            points: self.paths.points.clone(),
        }
    }

    pub fn check_inputs_exist(&self) -> Result<()> {
        let inputs = self.inputs();
        for path in [&inputs.thermal, &inputs.rgb, &inputs.lidar, &inputs.points] {
            if !path.exists() {
                bail!("input {} does not exist", path.display());
            }
        }
        Ok(())
    }

    /// Pretrained weights path when the backbone asks for one; it must exist.
    pub fn pretrained(&self) -> Result<Option<PathBuf>> {
        let backbone = &self.model.backbone;
        if !(backbone.pretrained && backbone.family == BackboneFamily::PaperResnet50) {
            return Ok(None);
        }
        match &self.paths.pretrained {
            None => bail!(
                "model.backbone.pretrained is set but no weights path was given (paths.pretrained or {PRETRAINED_ENV})"
            ),
            Some(p) if !p.exists() => bail!("pretrained weights {} do not exist", p.display()),
            Some(p) => Ok(Some(p.clone())),
        }
    }
}
