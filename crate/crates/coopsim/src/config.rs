//! One JSON config file drives every command: world synthesis, sensor
//! geometry, model hyperparameters, training, and evaluation grids. Every
//! field has a default, so partial configs are valid.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comms::CurriculumSchedule;
use crate::pipeline::ModelConfig;
use crate::training::LossWeights;
use crate::world::{ScenarioConfig, SensorConfig};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub learning_rate: f64,
    pub loss: LossWeights,
    pub curriculum: CurriculumSchedule,
    pub seed: u64,
    /// Scenario counts for `gen-scenarios` (train/test split).
    pub train_scenarios: usize,
    pub test_scenarios: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            teacher_epochs: 15,
            student_epochs: 12,
            learning_rate: 0.002,
            loss: LossWeights::default(),
            curriculum: CurriculumSchedule::default(),
            seed: 0,
            train_scenarios: 50,
            test_scenarios: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub p_list: Vec<f64>,
    pub eval_seeds: Vec<u64>,
    /// (sigma_t meters, sigma_r radians) pose-noise levels.
    pub noise_levels: Vec<(f64, f64)>,
    /// Fixed drop rate for the pose-noise sweep.
    pub noise_p: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            p_list: (0..10).map(|i| i as f64 / 10.0).collect(),
            eval_seeds: vec![1, 2, 3, 4, 5],
            noise_levels: vec![
                (0.0, 0.0),
                (0.2, 0.2f64.to_radians()),
                (0.4, 0.4f64.to_radians()),
                (0.8, 0.8f64.to_radians()),
            ],
            noise_p: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub world: ScenarioConfig,
    pub sensor: SensorConfig,
    pub model: ModelConfig,
    pub train: TrainParams,
    pub eval: EvalParams,
}

impl AppConfig {
    pub fn load(path: &Path) -> io::Result<AppConfig> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
        })
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
