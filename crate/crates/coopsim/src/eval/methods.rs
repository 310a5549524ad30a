use serde::{Deserialize, Serialize};

use crate::baseline::{LateFusionTracker, TrackerConfig};
use crate::comms::LinkTrace;
use crate::numerics::Tape;
use crate::pipeline::{
    nms, postprocess, DetBox, GridGeom, ModelConfig, ModelWeights, PipelineError,
};
use crate::recovery::{HistoryBuffer, HistoryMode};
use crate::rng::{hash_key, streams, SimRng};
use crate::system::{encode_frame, node_forward, PreparedScenario};
use crate::world::{Pose2D, SensorConfig};

use super::{average_precision, EvalError, FrameDets};

/// Gaussian pose perturbation applied to cooperator poses as perceived by
/// the ego (2D center and yaw), used by the pose-noise robustness sweep.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub seed: u64,
}

/// Evaluated cooperation strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Full system: spatial-attentive fusion plus history-based recovery.
    Incop,
    /// Fusion of whatever arrives, no recovery.
    NoHistory,
    /// Recovery by elementwise mean of the warped history.
    TemporalSummation,
    /// No cooperation at all.
    EgoOnly,
    /// Detection-level cooperation with Kalman coasting recovery.
    KalmanLateFusion,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Incop => "incop",
            Method::NoHistory => "no_history",
            Method::TemporalSummation => "temporal_summation",
            Method::EgoOnly => "ego_only",
            Method::KalmanLateFusion => "kalman_late_fusion",
        }
    }

    pub fn from_name(name: &str) -> Option<Method> {
        match name {
            "incop" => Some(Method::Incop),
            "no_history" => Some(Method::NoHistory),
            "temporal_summation" => Some(Method::TemporalSummation),
            "ego_only" => Some(Method::EgoOnly),
            "kalman_late_fusion" => Some(Method::KalmanLateFusion),
            _ => None,
        }
    }

    fn history_mode(&self) -> HistoryMode {
        match self {
            Method::Incop => HistoryMode::Predictor,
            Method::TemporalSummation => HistoryMode::Mean,
            _ => HistoryMode::None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ApPair {
    pub ap50: f64,
    pub ap70: f64,
}

/// Sender pose as the ego perceives it: exact, or perturbed by the noise
/// model keyed on (seed, scenario, frame, ego, sender).
fn perceived_pose(
    true_pose: Pose2D,
    noise: Option<&NoiseConfig>,
    scenario: usize,
    t: usize,
    ego: usize,
    sender: usize,
) -> Pose2D {
    match noise {
        None => true_pose,
        Some(n) => {
            let mut rng = SimRng::from_key(&[
                n.seed,
                streams::POSE_NOISE,
                scenario as u64,
                t as u64,
                ego as u64,
                sender as u64,
            ]);
            Pose2D::new(
                true_pose.x + n.sigma_t * rng.next_gaussian(),
                true_pose.y + n.sigma_t * rng.next_gaussian(),
                true_pose.yaw + n.sigma_r * rng.next_gaussian(),
            )
        }
    }
}

fn trace_for(prep: &PreparedScenario, p: f64, eval_seed: u64, scenario: usize) -> Result<LinkTrace, EvalError> {
    LinkTrace::generate(
        prep.n_nodes(),
        prep.n_frames(),
        p,
        hash_key(&[eval_seed, streams::TRACE, scenario as u64]),
    )
    .map_err(|e| EvalError::InvalidConfig(e.to_string()))
}

/// Run one method over the prepared scenarios at drop rate `p` and compute
/// AP@0.5 / AP@0.7, pooled per ego node across all frames and scenarios and
/// then averaged over nodes.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_method(
    prepared: &[PreparedScenario],
    sensor: &SensorConfig,
    model_cfg: &ModelConfig,
    tracker_cfg: &TrackerConfig,
    method: Method,
    weights: &ModelWeights,
    p: f64,
    eval_seed: u64,
    noise: Option<&NoiseConfig>,
) -> Result<ApPair, EvalError> {
    if prepared.is_empty() {
        return Err(EvalError::InvalidConfig("no evaluation scenarios".into()));
    }
    if method == Method::Incop && !weights.has_predictor() {
        return Err(EvalError::InvalidConfig(
            "the incop method needs a checkpoint with predictor weights".into(),
        ));
    }
    let geom = GridGeom::feature_grid(sensor).map_err(EvalError::from)?;
    let n_nodes = prepared[0].n_nodes();
    let mut per_node: Vec<Vec<FrameDets>> = vec![Vec::new(); n_nodes];

    for (si, prep) in prepared.iter().enumerate() {
        if prep.n_nodes() != n_nodes {
            return Err(EvalError::InvalidConfig(
                "scenario set mixes node counts within one evaluation".into(),
            ));
        }
        let trace = trace_for(prep, p, eval_seed, si)?;
        match method {
            Method::KalmanLateFusion => {
                run_kalman_scenario(prep, si, &trace, sensor, model_cfg, tracker_cfg, weights, noise, &geom, &mut per_node)?
            }
            _ => run_feature_scenario(prep, si, &trace, sensor, model_cfg, method, weights, noise, &geom, &mut per_node)?,
        }
    }

    let mut ap50 = Vec::new();
    let mut ap70 = Vec::new();
    for frames in &per_node {
        let has_gt = frames.iter().any(|f| !f.gts.is_empty());
        if !has_gt {
            continue;
        }
        ap50.push(average_precision(frames, 0.5)?);
        ap70.push(average_precision(frames, 0.7)?);
    }
    if ap50.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(ApPair {
        ap50: ap50.iter().sum::<f64>() / ap50.len() as f64,
        ap70: ap70.iter().sum::<f64>() / ap70.len() as f64,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_feature_scenario(
    prep: &PreparedScenario,
    si: usize,
    trace: &LinkTrace,
    sensor: &SensorConfig,
    model_cfg: &ModelConfig,
    method: Method,
    weights: &ModelWeights,
    noise: Option<&NoiseConfig>,
    geom: &GridGeom,
    per_node: &mut [Vec<FrameDets>],
) -> Result<(), EvalError> {
    let n = prep.n_nodes();
    let mode = method.history_mode();
    let mut buffers: Vec<HistoryBuffer> =
        (0..n).map(|_| HistoryBuffer::new(model_cfg.history_k)).collect();
    for t in 0..prep.n_frames() {
        let mut tape = Tape::inference();
        let feats = encode_frame(&mut tape, prep, t, weights)?;
        let poses = prep.poses(t);
        for ego in 0..n {
            let received =
                if method == Method::EgoOnly { Vec::new() } else { trace.received_set(ego, t) };
            let warp_poses: Vec<Pose2D> = (0..n)
                .map(|j| {
                    if j == ego {
                        poses[j]
                    } else {
                        perceived_pose(poses[j], noise, si, t, ego, j)
                    }
                })
                .collect();
            let step = node_forward(
                &mut tape,
                weights,
                mode,
                ego,
                t,
                poses,
                &warp_poses,
                &feats,
                &received,
                &buffers[ego],
                sensor.window_m,
            )?;
            let dets = postprocess(&step.det, geom, model_cfg.conf_thresh, model_cfg.nms_iou);
            per_node[ego].push(FrameDets { dets, gts: prep.gts[t][ego].clone() });
            if mode != HistoryMode::None {
                buffers[ego].push(&step.fusion.fused);
            }
        }
    }
    Ok(())
}

/// Detection-level cooperation: every node detects from its own feature,
/// broadcasts boxes, and each ego merges its own boxes with delivered ones
/// (transformed through the perceived sender pose), then runs its Kalman
/// tracker to coast through interruptions.
#[allow(clippy::too_many_arguments)]
fn run_kalman_scenario(
    prep: &PreparedScenario,
    si: usize,
    trace: &LinkTrace,
    sensor: &SensorConfig,
    model_cfg: &ModelConfig,
    tracker_cfg: &TrackerConfig,
    weights: &ModelWeights,
    noise: Option<&NoiseConfig>,
    geom: &GridGeom,
    per_node: &mut [Vec<FrameDets>],
) -> Result<(), EvalError> {
    let n = prep.n_nodes();
    let dt = prep.scenario.config.dt;
    let mut trackers: Vec<LateFusionTracker> =
        (0..n).map(|_| LateFusionTracker::new(*tracker_cfg)).collect();
    for t in 0..prep.n_frames() {
        let mut tape = Tape::inference();
        let feats = encode_frame(&mut tape, prep, t, weights)?;
        let poses = prep.poses(t);
        // Ego-only detections per node, in each node's own frame.
        let own_dets: Vec<Vec<DetBox>> = (0..n)
            .map(|node| -> Result<Vec<DetBox>, PipelineError> {
                let step = node_forward(
                    &mut tape,
                    weights,
                    HistoryMode::None,
                    node,
                    t,
                    poses,
                    poses,
                    &feats,
                    &[],
                    &HistoryBuffer::new(1),
                    sensor.window_m,
                )?;
                Ok(postprocess(&step.det, geom, model_cfg.conf_thresh, model_cfg.nms_iou))
            })
            .collect::<Result<_, _>>()?;

        for ego in 0..n {
            let mut merged = own_dets[ego].clone();
            for j in trace.received_set(ego, t) {
                let sender_pose = perceived_pose(poses[j], noise, si, t, ego, j);
                for b in &own_dets[j] {
                    merged.push(b.transform(&sender_pose, &poses[ego]));
                }
            }
            let merged = nms(merged, model_cfg.nms_iou);
            let out = trackers[ego].step(&merged, dt);
            per_node[ego].push(FrameDets { dets: out, gts: prep.gts[t][ego].clone() });
        }
    }
    Ok(())
}
