//! Loss assembly, teacher guidance, knowledge distillation, and the
//! curriculum training loop shared by the teacher (ideal communication,
//! detection loss only) and every student variant.

mod targets;
mod teacher;
mod trainer;

pub use targets::{build_targets, TargetMap};
pub use teacher::{teacher_guidance, TeacherFrameCache};
pub use trainer::{
    train, train_student, train_teacher, write_training_log, EpochLog, PSchedule, TrainOutput,
    TrainSettings, TrainVariant,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, NumericsError, Tape, Tensor};
use crate::pipeline::{DetectionMap, FeatureMap, PipelineError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("non-finite loss at epoch {epoch}, scenario {scenario}, frame {frame}")]
    NonFiniteLoss { epoch: usize, scenario: usize, frame: usize },
    #[error("student training requires a teacher checkpoint when distillation is enabled")]
    MissingTeacher,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Loss weights and optimizer settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    /// Classification (BCE) weight.
    pub alpha: f32,
    /// Regression (smooth-L1) weight.
    pub beta: f32,
    /// Distillation (channelwise-KL) weight.
    pub gamma: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 2.0, gamma: 10_000.0 }
    }
}

/// Detection loss: `alpha * BCE(cls)` averaged over all cells plus
/// `beta * smoothL1(reg)` averaged over foreground cells only.
pub fn detection_loss(
    tape: &mut Tape,
    det: &DetectionMap,
    targets: &TargetMap,
    alpha: f32,
    beta: f32,
) -> Result<Tensor, TrainError> {
    let cls = numerics::bce_mean(tape, &det.cls, &targets.cls)?;
    let reg = numerics::smooth_l1_masked_mean(tape, &det.reg, &targets.reg, &targets.mask)?;
    let cls_term = numerics::scale(tape, &cls, alpha);
    let reg_term = numerics::scale(tape, &reg, beta);
    Ok(numerics::add(tape, &cls_term, &reg_term)?)
}

/// Distillation loss between the student's fused feature and the teacher
/// guidance: channelwise KL summed over cells. Gradients reach the student
/// only (guidance tensors never require grad).
pub fn kd_loss(
    tape: &mut Tape,
    student_fused: &FeatureMap,
    guidance: &FeatureMap,
) -> Result<Tensor, TrainError> {
    Ok(numerics::kl_channelwise(tape, &student_fused.data, &guidance.data)?)
}

/// `L_total = L_det + gamma * L_kd`.
pub fn total_loss(
    tape: &mut Tape,
    det: &Tensor,
    kd: Option<&Tensor>,
    gamma: f32,
) -> Result<Tensor, TrainError> {
    match kd {
        None => Ok(det.clone()),
        Some(kd) => {
            let weighted = numerics::scale(tape, kd, gamma);
            Ok(numerics::add(tape, det, &weighted)?)
        }
    }
}
