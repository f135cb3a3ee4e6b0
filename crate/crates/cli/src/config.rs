use std::fs;
use std::path::{Path, PathBuf};

use hst_core::ablation::AblationConfig;
use hst_core::ctc::DecodeConfig;
use hst_core::gradcheck::GradCheckConfig;
use hst_core::model::TrainConfig;
use hst_core::refine::RefinerConfig;
use hst_core::search::SearchConfig;
use hst_core::synth::SynthConfig;
use hst_core::tree::TreeConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a `--config` file may set. Missing sections and fields take
/// their built-in defaults; command-line flags are applied on top.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub tree: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub tree_build: TreeConfig,
    pub search: SearchConfig,
    pub refiner: RefinerConfig,
    pub decode: DecodeConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub ablation: AblationConfig,
    pub grad_check: GradCheckConfig,
}

impl PipelineConfig {
    /// Reads a pipeline config. A file that is not a pipeline config but is
    /// a bare synthetic-benchmark section is accepted as its `synth` part.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(require(path)?)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        match serde_json::from_str::<Self>(&text) {
            Ok(c) => Ok(c),
            Err(pipeline_err) => match serde_json::from_str::<SynthConfig>(&text) {
                Ok(synth) => Ok(Self { synth, ..Default::default() }),
                Err(_) => Err(CliError::Validation(format!("{}: {pipeline_err}", path.display()))),
            },
        }
    }

    /// Overrides every stochastic component's seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.tree_build.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
        self.ablation.tree.seed = seed;
        self.ablation.train.seed = seed;
        self.grad_check.seed = seed;
    }
}

/// Fails with a validation error when an input file is missing.
pub fn require(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Validation(format!("input {} does not exist", path.display())))
    }
}

/// Flag value, else config value, else a validation error naming the flag.
pub fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::Validation(format!("--{name} is required (or set `{name}` in --config)")))
}
