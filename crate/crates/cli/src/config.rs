use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slam_core::pipeline::PipelineConfig;
use slam_core::predictor::ModelConfig;
use slam_core::synth::{generate, single_room, two_room_loop, NoiseSpec, SceneSpec, SyntheticSequence};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Toy,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    TwoRoomLoop,
    SingleRoom,
}

impl Builtin {
    pub fn spec(self, seed: u64, frames: usize) -> SceneSpec {
        match self {
            Builtin::TwoRoomLoop => two_room_loop(seed, frames),
            Builtin::SingleRoom => single_room(seed, frames),
        }
    }
}

/// Where the frames come from. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Builtin { builtin: Builtin, frames: usize },
    Spec { spec: PathBuf },
    Sequence { sequence: PathBuf },
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Builtin { builtin: Builtin::TwoRoomLoop, frames: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub predictor: PredictorKind,
    pub seed: u64,
    pub scene: SceneSource,
    /// Oracle corruption.
    pub noise: NoiseSpec,
    /// Toy model shape; width and height follow the scene.
    pub model: ModelConfig,
    /// Optional weight snapshot for the toy model.
    pub weights: Option<PathBuf>,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            predictor: PredictorKind::Oracle,
            seed: 0,
            scene: SceneSource::default(),
            noise: NoiseSpec::default(),
            model: ModelConfig::default(),
            weights: None,
            pipeline: PipelineConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.scene {
            SceneSource::Spec { spec } => *spec = resolve(base, spec),
            SceneSource::Sequence { sequence } => *sequence = resolve(base, sequence),
            SceneSource::Builtin { .. } => {}
        }
        if let Some(w) = &mut cfg.weights {
            *w = resolve(base, w);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline.validate().map_err(CliError::input)?;
        self.noise.validate().map_err(CliError::input)?;
        let missing = |p: &Path| (!p.exists()).then(|| CliError::input(format!("{} does not exist", p.display())));
        let paths = match &self.scene {
            SceneSource::Spec { spec } => vec![spec.as_path()],
            SceneSource::Sequence { sequence } => vec![sequence.as_path()],
            SceneSource::Builtin { frames, .. } => {
                if *frames < 2 {
                    return Err(CliError::input("a builtin scene needs at least 2 frames"));
                }
                vec![]
            }
        };
        for p in paths.into_iter().chain(self.weights.as_deref()) {
            if let Some(e) = missing(p) {
                return Err(e);
            }
        }
        Ok(())
    }

    /// Builds the sequence. A spec file keeps its own seed unless `seed_override` is set.
    pub fn sequence(&self, seed_override: Option<u64>) -> Result<SyntheticSequence, CliError> {
        match &self.scene {
            SceneSource::Builtin { builtin, frames } => generate(&builtin.spec(self.seed, *frames)).map_err(CliError::input),
            SceneSource::Spec { spec } => {
                let text = std::fs::read_to_string(spec).map_err(|e| CliError::input(format!("{}: {e}", spec.display())))?;
                let mut spec: SceneSpec = serde_json::from_str(&text).map_err(CliError::input)?;
                if let Some(seed) = seed_override {
                    spec.seed = seed;
                }
                generate(&spec).map_err(CliError::input)
            }
            SceneSource::Sequence { sequence } => SyntheticSequence::read_from(sequence).map_err(CliError::input),
        }
    }
}
