//! Evaluation: rotated-box average precision, per-method episode runners,
//! PDR / pose-noise / ablation sweep drivers, and CSV + manifest output.

mod ap;
mod methods;
mod report;
mod sweep;

pub use ap::{average_precision, FrameDets};
pub use methods::{evaluate_method, ApPair, Method, NoiseConfig};
pub use report::{git_describe, write_manifest, write_noise_csv, write_records_csv, RunManifest};
pub use sweep::{
    mean_ap_over_p, run_components_ablation, run_history_k_ablation, run_num_nodes_ablation,
    run_pdr_sweep, run_pose_noise_sweep, sweep_threads, EvalRecord, SweepContext,
};

use thiserror::Error;

use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("no ground-truth boxes in the evaluation set; AP is undefined")]
    NoGroundTruth,
    #[error("invalid evaluation configuration: {0}")]
    InvalidConfig(String),
}
