//! Missing-information recovery: each node keeps a short ring of its own
//! past fused features and, when messages drop out, synthesizes a
//! pseudo-contributor feature from that history — either by a learned
//! multi-scale spatial-temporal predictor or by plain temporal averaging
//! (the ablation variant).

mod msstp;

pub use msstp::{msstp_predict, PredictorWeights};

use std::collections::VecDeque;

use crate::numerics::{self, Tape, Tensor};
use crate::pipeline::{warp_to, FeatureMap, Owner, PipelineError};
use crate::world::Pose2D;

/// How a node fills in for missing messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryMode {
    /// No recovery: fuse only what arrived this frame.
    None,
    /// Pseudo feature = elementwise mean of the warped history.
    Mean,
    /// Pseudo feature = learned multi-scale spatial-temporal prediction.
    Predictor,
}

/// Ring of up to `k` past fused feature maps, strictly increasing in
/// timestep. Stored maps are detached: gradients never flow across frames.
pub struct HistoryBuffer {
    k: usize,
    entries: VecDeque<FeatureMap>,
}

impl HistoryBuffer {
    pub fn new(k: usize) -> HistoryBuffer {
        assert!(k >= 1, "history window must be at least 1");
        HistoryBuffer { k, entries: VecDeque::with_capacity(k) }
    }

    pub fn window(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &FeatureMap> {
        self.entries.iter()
    }

    /// Store a fused map (detached), evicting the oldest beyond `k`.
    pub fn push(&mut self, map: &FeatureMap) {
        if let Some(last) = self.entries.back() {
            assert!(
                map.timestep > last.timestep,
                "history timesteps must strictly increase ({} after {})",
                map.timestep,
                last.timestep
            );
        }
        self.entries.push_back(FeatureMap {
            owner: map.owner,
            timestep: map.timestep,
            pose: map.pose,
            extent_m: map.extent_m,
            data: map.data.detach(),
        });
        while self.entries.len() > self.k {
            self.entries.pop_front();
        }
    }
}

/// Ego-motion-compensated history stack `[k, C, H, W]`: each stored map is
/// warped from its stored pose into `current_pose` and stacked oldest-first.
/// Short histories are front-padded by repeating the oldest entry. `None`
/// when the buffer is empty.
pub fn build_history_input(
    tape: &mut Tape,
    buffer: &HistoryBuffer,
    current_pose: Pose2D,
) -> Result<Option<Tensor>, PipelineError> {
    if buffer.is_empty() {
        return Ok(None);
    }
    let warped: Vec<Tensor> = buffer
        .entries()
        .map(|m| warp_to(tape, m, current_pose).map(|f| f.data))
        .collect::<Result<_, _>>()?;
    let mut slices: Vec<&Tensor> = Vec::with_capacity(buffer.window());
    for _ in 0..buffer.window() - warped.len() {
        slices.push(&warped[0]);
    }
    slices.extend(warped.iter());
    Ok(Some(numerics::stack_new0(tape, &slices)?))
}

/// Synthesize the pseudo-contributor feature for `ego` at `timestep`, or
/// `None` when recovery is off or no history exists yet (scenario start).
pub fn pseudo_feature(
    tape: &mut Tape,
    buffer: &HistoryBuffer,
    current_pose: Pose2D,
    timestep: usize,
    ego: u32,
    mode: HistoryMode,
    predictor: Option<&PredictorWeights>,
) -> Result<Option<FeatureMap>, PipelineError> {
    if mode == HistoryMode::None {
        return Ok(None);
    }
    let Some(history) = build_history_input(tape, buffer, current_pose)? else {
        return Ok(None);
    };
    let data = match mode {
        HistoryMode::Mean => numerics::mean0(tape, &history)?,
        HistoryMode::Predictor => {
            let weights = predictor.ok_or_else(|| {
                PipelineError::Config("predictor history mode needs predictor weights".into())
            })?;
            msstp_predict(tape, &history, weights)?
        }
        HistoryMode::None => unreachable!(),
    };
    let extent = buffer.entries().next().expect("non-empty").extent_m;
    Ok(Some(FeatureMap {
        owner: Owner::Pseudo(ego),
        timestep,
        pose: current_pose,
        extent_m: extent,
        data,
    }))
}

/// Append the pseudo contributor to the fusion set when it exists.
pub fn insert_pseudo_node(
    mut contributors: Vec<FeatureMap>,
    pseudo: Option<FeatureMap>,
) -> Vec<FeatureMap> {
    if let Some(p) = pseudo {
        contributors.push(p);
    }
    contributors
}
