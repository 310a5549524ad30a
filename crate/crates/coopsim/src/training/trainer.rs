use std::io::{self, Write};
use std::time::Instant;

use crate::comms::{trace_seed, CurriculumSchedule, LinkTrace};
use crate::numerics::{self, AdamConfig, AdamState, Tape};
use crate::pipeline::{GridGeom, ModelConfig, ModelWeights};
use crate::recovery::{HistoryBuffer, HistoryMode};
use crate::rng::{streams, SimRng};
use crate::system::{encode_frame, node_forward, PreparedScenario};
use crate::world::SensorConfig;

use super::{
    build_targets, detection_loss, kd_loss, teacher_guidance, total_loss, LossWeights,
    TargetMap, TeacherFrameCache, TrainError,
};

/// Interruption-probability schedule used while training.
#[derive(Clone, Copy, Debug)]
pub enum PSchedule {
    /// Constant drop rate (0.0 for ideal-communication teacher training).
    Fixed(f64),
    /// Uniform over a fixed range every epoch.
    Uniform { lo: f64, hi: f64 },
    /// Range widening from easy to hard across epochs.
    Curriculum(CurriculumSchedule),
}

impl PSchedule {
    pub fn bounds(&self, epoch: usize) -> (f64, f64) {
        match self {
            PSchedule::Fixed(p) => (*p, *p),
            PSchedule::Uniform { lo, hi } => (*lo, *hi),
            PSchedule::Curriculum(c) => c.bounds(epoch),
        }
    }

    /// Drop rate for one training iteration, keyed by (seed, epoch,
    /// iteration) so reruns are identical.
    pub fn sample(&self, epoch: usize, iteration: u64, seed: u64) -> f64 {
        let (lo, hi) = self.bounds(epoch);
        if lo == hi {
            return lo;
        }
        let mut rng = SimRng::from_key(&[seed, streams::CURRICULUM, epoch as u64, iteration]);
        rng.range_f64(lo, hi)
    }
}

/// Which recovery machinery a trained model uses and whether distillation
/// supervises it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainVariant {
    pub history: HistoryMode,
    pub kd: bool,
}

impl TrainVariant {
    /// Teacher / no-history architecture: fuse only what arrives.
    pub fn no_history() -> TrainVariant {
        TrainVariant { history: HistoryMode::None, kd: false }
    }

    /// History recovered by elementwise temporal averaging.
    pub fn temporal_summation() -> TrainVariant {
        TrainVariant { history: HistoryMode::Mean, kd: false }
    }

    /// Learned multi-scale prediction, no distillation.
    pub fn predictor() -> TrainVariant {
        TrainVariant { history: HistoryMode::Predictor, kd: false }
    }

    /// Learned prediction supervised by teacher guidance.
    pub fn predictor_kd() -> TrainVariant {
        TrainVariant { history: HistoryMode::Predictor, kd: true }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
    pub schedule: PSchedule,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_det_loss: f64,
    pub mean_kd_loss: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub wall_s: f64,
}

pub struct TrainOutput {
    pub weights: ModelWeights,
    pub log: Vec<EpochLog>,
}

/// Training log CSV: one row per epoch.
pub fn write_training_log<W: Write>(mut out: W, log: &[EpochLog]) -> io::Result<()> {
    writeln!(out, "epoch,mean_det_loss,mean_kd_loss,sampled_p_low,sampled_p_high,wall_time")?;
    for e in log {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.4},{:.4},{:.3}",
            e.epoch, e.mean_det_loss, e.mean_kd_loss, e.p_low, e.p_high, e.wall_s
        )?;
    }
    Ok(())
}

/// Train the teacher under ideal communication: detection loss only,
/// no history, drop rate pinned to zero.
pub fn train_teacher(
    prepared: &[PreparedScenario],
    sensor: &SensorConfig,
    model_cfg: &ModelConfig,
    settings: &TrainSettings,
) -> Result<TrainOutput, TrainError> {
    let settings = TrainSettings { schedule: PSchedule::Fixed(0.0), ..settings.clone() };
    train(prepared, sensor, model_cfg, &settings, TrainVariant::no_history(), None)
}

/// Train a student variant against a frozen teacher (required when the
/// variant distills).
pub fn train_student(
    prepared: &[PreparedScenario],
    sensor: &SensorConfig,
    model_cfg: &ModelConfig,
    settings: &TrainSettings,
    variant: TrainVariant,
    teacher: Option<&ModelWeights>,
) -> Result<TrainOutput, TrainError> {
    train(prepared, sensor, model_cfg, settings, variant, teacher)
}

/// The shared training loop.
///
/// One optimizer step consumes one scenario frame: every node's forward pass
/// runs against the same weight snapshot, per-node losses are averaged (in
/// ascending node order), and a single backward pass accumulates gradients
/// before the Adam update. Link traces are resampled fresh every epoch.
pub fn train(
    prepared: &[PreparedScenario],
    sensor: &SensorConfig,
    model_cfg: &ModelConfig,
    settings: &TrainSettings,
    variant: TrainVariant,
    teacher: Option<&ModelWeights>,
) -> Result<TrainOutput, TrainError> {
    if prepared.is_empty() {
        return Err(TrainError::InvalidConfig("no training scenarios".into()));
    }
    if settings.epochs == 0 {
        return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
    }
    if variant.kd && teacher.is_none() {
        return Err(TrainError::MissingTeacher);
    }
    if let Some(t) = teacher {
        t.set_requires_grad(false);
    }
    model_cfg.validate()?;

    let geom = GridGeom::feature_grid(sensor)?;
    let with_predictor = variant.history == HistoryMode::Predictor;
    let model = ModelWeights::init(settings.seed, model_cfg, with_predictor)?;
    let params = model.params();
    let mut adam = AdamState::new(settings.adam, &params);

    // Targets are pure functions of the prepared ground truth.
    let targets: Vec<Vec<Vec<TargetMap>>> = prepared
        .iter()
        .map(|prep| {
            prep.gts
                .iter()
                .map(|frame| frame.iter().map(|gts| build_targets(gts, &geom)).collect())
                .collect()
        })
        .collect();

    let mut log = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let started = Instant::now();
        let mut det_sum = 0.0f64;
        let mut det_count = 0usize;
        let mut kd_sum = 0.0f64;
        let mut kd_count = 0usize;

        for (si, prep) in prepared.iter().enumerate() {
            let n = prep.n_nodes();
            let p = settings.schedule.sample(epoch, si as u64, settings.seed);
            let trace = LinkTrace::generate(
                n,
                prep.n_frames(),
                p,
                trace_seed(settings.seed, epoch, si as u64),
            )
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            let mut buffers: Vec<HistoryBuffer> =
                (0..n).map(|_| HistoryBuffer::new(model_cfg.history_k)).collect();

            for t in 0..prep.n_frames() {
                let mut tape = Tape::recording();
                let feats = encode_frame(&mut tape, prep, t, &model)?;
                let mut teacher_cache = TeacherFrameCache::new(n);
                let mut frame_loss = None;

                for i in 0..n {
                    let received = trace.received_set(i, t);
                    let step = node_forward(
                        &mut tape,
                        &model,
                        variant.history,
                        i,
                        t,
                        prep.poses(t),
                        prep.poses(t),
                        &feats,
                        &received,
                        &buffers[i],
                        sensor.window_m,
                    )?;
                    let det_l =
                        detection_loss(&mut tape, &step.det, &targets[si][t][i], settings.loss.alpha, settings.loss.beta)?;
                    det_sum += det_l.value() as f64;
                    det_count += 1;

                    let node_loss = if variant.kd && step.used_pseudo {
                        let contact = trace.past_contact_set(i, t, model_cfg.history_k);
                        let guidance = teacher_guidance(
                            &mut tape,
                            prep,
                            t,
                            i,
                            &contact,
                            teacher.expect("checked above"),
                            &mut teacher_cache,
                            sensor.window_m,
                        )?;
                        let kd = kd_loss(&mut tape, &step.fusion.fused, &guidance)?;
                        kd_sum += kd.value() as f64;
                        kd_count += 1;
                        total_loss(&mut tape, &det_l, Some(&kd), settings.loss.gamma)?
                    } else {
                        det_l
                    };

                    frame_loss = Some(match frame_loss {
                        None => node_loss,
                        Some(acc) => numerics::add(&mut tape, &acc, &node_loss)?,
                    });
                    if variant.history != HistoryMode::None {
                        buffers[i].push(&step.fusion.fused);
                    }
                }

                let loss = numerics::scale(
                    &mut tape,
                    &frame_loss.expect("at least one node"),
                    1.0 / n as f32,
                );
                if !loss.value().is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, scenario: si, frame: t });
                }
                tape.backward(&loss)?;
                adam.step(&params)?;
                model.zero_grads();
            }
        }

        let (p_low, p_high) = settings.schedule.bounds(epoch);
        log.push(EpochLog {
            epoch,
            mean_det_loss: det_sum / det_count.max(1) as f64,
            mean_kd_loss: kd_sum / kd_count.max(1) as f64,
            p_low,
            p_high,
            wall_s: started.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutput { weights: model, log })
}
