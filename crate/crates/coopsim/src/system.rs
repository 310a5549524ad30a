//! Shared orchestration between training and evaluation: pre-rendered
//! scenario data and the assembly of one node's forward pass (encode
//! received features, warp into the ego frame, insert the pseudo
//! contributor, fuse, decode).

use crate::comms::LinkTrace;
use crate::numerics::{Tape, Tensor};
use crate::pipeline::{
    decode, encode, fuse_spatial_attention, warp_to, DetBox, DetectionMap, FeatureMap,
    FusionResult, ModelWeights, Owner, PipelineError,
};
use crate::recovery::{pseudo_feature, HistoryBuffer, HistoryMode};
use crate::world::{ground_truth_boxes, render_observation, Pose2D, Scenario, SensorConfig};

/// A scenario with observations rendered and ground truth extracted once,
/// reusable across epochs and evaluation sweeps.
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub obs_size: usize,
    /// `[frame][node]` flattened occupancy grids.
    pub obs: Vec<Vec<Vec<f32>>>,
    /// `[frame][node]` ground-truth boxes in that node's frame.
    pub gts: Vec<Vec<Vec<DetBox>>>,
}

impl PreparedScenario {
    pub fn n_nodes(&self) -> usize {
        self.scenario.config.n_nodes()
    }

    pub fn n_frames(&self) -> usize {
        self.scenario.frames.len()
    }

    pub fn poses(&self, t: usize) -> &[Pose2D] {
        &self.scenario.frames[t].agent_poses
    }

    pub fn obs_tensor(&self, t: usize, node: usize) -> Tensor {
        Tensor::from_vec(&[1, self.obs_size, self.obs_size], self.obs[t][node].clone())
            .expect("prepared grid shape")
    }
}

/// Render every (frame, node) observation and ground-truth list up front.
pub fn prepare_scenarios(
    scenarios: &[Scenario],
    sensor: &SensorConfig,
) -> Result<Vec<PreparedScenario>, PipelineError> {
    let obs_size = sensor.grid_size().map_err(|e| PipelineError::Config(e.to_string()))?;
    scenarios
        .iter()
        .map(|scenario| {
            let n = scenario.config.n_nodes();
            let mut obs = Vec::with_capacity(scenario.frames.len());
            let mut gts = Vec::with_capacity(scenario.frames.len());
            for frame in &scenario.frames {
                let mut frame_obs = Vec::with_capacity(n);
                let mut frame_gts = Vec::with_capacity(n);
                for node in 0..n {
                    let rendered = render_observation(frame, node, sensor)
                        .map_err(|e| PipelineError::Config(e.to_string()))?;
                    frame_obs.push(rendered.grid.to_vec());
                    frame_gts.push(
                        ground_truth_boxes(frame, node, sensor.window_m)
                            .map_err(|e| PipelineError::Config(e.to_string()))?,
                    );
                }
                obs.push(frame_obs);
                gts.push(frame_gts);
            }
            Ok(PreparedScenario { scenario: scenario.clone(), obs_size, obs, gts })
        })
        .collect()
}

/// Encode every node's observation for one frame with the given weights.
pub fn encode_frame(
    tape: &mut Tape,
    prep: &PreparedScenario,
    t: usize,
    weights: &ModelWeights,
) -> Result<Vec<Tensor>, PipelineError> {
    (0..prep.n_nodes()).map(|node| encode(tape, &prep.obs_tensor(t, node), &weights.encoder)).collect()
}

/// Output of one node's perception step.
pub struct NodeStep {
    pub fusion: FusionResult,
    pub det: DetectionMap,
    pub used_pseudo: bool,
}

/// One node's full forward pass for frame `t`.
///
/// `features[j]` is node j's encoded feature in its own frame; `warp_poses`
/// are the sender poses the ego believes (true poses during training, noisy
/// during pose-noise evaluation; the ego's own entry is its true pose).
#[allow(clippy::too_many_arguments)]
pub fn node_forward(
    tape: &mut Tape,
    weights: &ModelWeights,
    mode: HistoryMode,
    ego: usize,
    t: usize,
    poses: &[Pose2D],
    warp_poses: &[Pose2D],
    features: &[Tensor],
    received: &[usize],
    history: &HistoryBuffer,
    extent_m: f64,
) -> Result<NodeStep, PipelineError> {
    let ego_pose = poses[ego];
    let mut contributors: Vec<FeatureMap> = Vec::with_capacity(received.len() + 2);
    contributors.push(FeatureMap {
        owner: Owner::Node(ego as u32),
        timestep: t,
        pose: ego_pose,
        extent_m,
        data: features[ego].clone(),
    });
    for &j in received {
        let sender = FeatureMap {
            owner: Owner::Node(j as u32),
            timestep: t,
            pose: warp_poses[j],
            extent_m,
            data: features[j].clone(),
        };
        contributors.push(warp_to(tape, &sender, ego_pose)?);
    }
    let pseudo = pseudo_feature(
        tape,
        history,
        ego_pose,
        t,
        ego as u32,
        mode,
        weights.predictor.as_ref(),
    )?;
    let used_pseudo = pseudo.is_some();
    let contributors = crate::recovery::insert_pseudo_node(contributors, pseudo);
    let refs: Vec<&FeatureMap> = contributors.iter().collect();
    let fusion = fuse_spatial_attention(tape, &refs, 0, &weights.mask)?;
    let det = decode(tape, &fusion.fused.data, &weights.decoder)?;
    Ok(NodeStep { fusion, det, used_pseudo })
}

/// Received sets for every ego at frame `t`, from the trace.
pub fn received_sets(trace: &LinkTrace, t: usize) -> Vec<Vec<usize>> {
    (0..trace.n_nodes()).map(|i| trace.received_set(i, t)).collect()
}
