use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{self, load_checkpoint, save_checkpoint, Tape, Tensor};
use crate::recovery::PredictorWeights;
use crate::rng::{streams, SimRng};

use super::PipelineError;

/// Learned-model hyperparameters. The observation grid comes from the sensor
/// config; the encoder downsamples it by 2, so feature maps are
/// `channels x (obs/2) x (obs/2)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature channels C (must be even: the mask net squeezes to C/2).
    pub channels: usize,
    /// History window k for the pseudo-contributor predictor.
    pub history_k: usize,
    pub conf_thresh: f64,
    pub nms_iou: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { channels: 16, history_k: 3, conf_thresh: 0.3, nms_iou: 0.15 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.channels < 2 || self.channels % 2 != 0 {
            return Err(PipelineError::Config(format!(
                "channels must be even and >= 2, got {}",
                self.channels
            )));
        }
        if !(1..=5).contains(&self.history_k) {
            return Err(PipelineError::Config(format!(
                "history_k must be in 1..=5, got {}",
                self.history_k
            )));
        }
        if !(0.0..1.0).contains(&self.conf_thresh) || !(0.0..1.0).contains(&self.nms_iou) {
            return Err(PipelineError::Config("thresholds must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One conv2d layer's parameters and geometry.
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn init(
        rng: &mut SimRng,
        cout: usize,
        cin: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias_value: f32,
    ) -> ConvLayer {
        let fan_in = (cin * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight: Vec<f32> = (0..cout * cin * k * k)
            .map(|_| rng.range_f64(-bound, bound) as f32)
            .collect();
        ConvLayer {
            weight: Tensor::param(&[cout, cin, k, k], weight).expect("init shape"),
            bias: Tensor::param(&[cout], vec![bias_value; cout]).expect("init shape"),
            stride,
            pad,
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, PipelineError> {
        Ok(numerics::conv2d(tape, x, &self.weight, &self.bias, self.stride, self.pad)?)
    }
}

/// Occupancy encoder: three 3x3 convs (stride 1, 2, 1) with ReLU.
pub struct EncoderWeights {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
}

impl EncoderWeights {
    fn init(rng: &mut SimRng, channels: usize) -> EncoderWeights {
        EncoderWeights {
            conv1: ConvLayer::init(rng, channels, 1, 3, 1, 1, 0.0),
            conv2: ConvLayer::init(rng, channels, channels, 3, 2, 1, 0.0),
            conv3: ConvLayer::init(rng, channels, channels, 3, 1, 1, 0.0),
        }
    }
}

/// Mask net for fusion weights: 1x1 convs squeezing 2C -> C/2 -> 1, shared
/// across contributor pairs so the contributor count can vary.
pub struct MaskNetWeights {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl MaskNetWeights {
    fn init(rng: &mut SimRng, channels: usize) -> MaskNetWeights {
        MaskNetWeights {
            conv1: ConvLayer::init(rng, channels / 2, 2 * channels, 1, 1, 0, 0.0),
            conv2: ConvLayer::init(rng, 1, channels / 2, 1, 1, 0, 0.0),
        }
    }
}

/// Detection head: shared 3x3 trunk, then 1x1 classification (sigmoid) and
/// regression (linear) heads. The classification bias starts negative so the
/// initial foreground probability matches the sparse box prior.
pub struct DecoderWeights {
    pub trunk1: ConvLayer,
    pub trunk2: ConvLayer,
    pub cls: ConvLayer,
    pub reg: ConvLayer,
}

impl DecoderWeights {
    fn init(rng: &mut SimRng, channels: usize) -> DecoderWeights {
        DecoderWeights {
            trunk1: ConvLayer::init(rng, channels, channels, 3, 1, 1, 0.0),
            trunk2: ConvLayer::init(rng, channels, channels, 3, 1, 1, 0.0),
            cls: ConvLayer::init(rng, 1, channels, 1, 1, 0, -4.0),
            reg: ConvLayer::init(rng, 6, channels, 1, 1, 0, 0.0),
        }
    }
}

/// Full parameter set of one perception network. `predictor` is present for
/// models that synthesize a pseudo-contributor from history and absent for
/// teacher / no-history models.
pub struct ModelWeights {
    pub encoder: EncoderWeights,
    pub mask: MaskNetWeights,
    pub decoder: DecoderWeights,
    pub predictor: Option<PredictorWeights>,
}

impl ModelWeights {
    /// Deterministic initialization; parameters are drawn in canonical
    /// `params()` order from a stream keyed by `seed`.
    pub fn init(seed: u64, cfg: &ModelConfig, with_predictor: bool) -> Result<ModelWeights, PipelineError> {
        cfg.validate()?;
        let mut rng = SimRng::from_key(&[seed, streams::WEIGHTS]);
        Ok(ModelWeights {
            encoder: EncoderWeights::init(&mut rng, cfg.channels),
            mask: MaskNetWeights::init(&mut rng, cfg.channels),
            decoder: DecoderWeights::init(&mut rng, cfg.channels),
            predictor: with_predictor.then(|| PredictorWeights::init(&mut rng, cfg.channels)),
        })
    }

    /// Named parameters in canonical (checkpoint) order.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let mut layer = |name: &str, l: &ConvLayer| {
            out.push((format!("{name}.weight"), l.weight.clone()));
            out.push((format!("{name}.bias"), l.bias.clone()));
        };
        layer("encoder.conv1", &self.encoder.conv1);
        layer("encoder.conv2", &self.encoder.conv2);
        layer("encoder.conv3", &self.encoder.conv3);
        layer("mask.conv1", &self.mask.conv1);
        layer("mask.conv2", &self.mask.conv2);
        layer("decoder.trunk1", &self.decoder.trunk1);
        layer("decoder.trunk2", &self.decoder.trunk2);
        layer("decoder.cls", &self.decoder.cls);
        layer("decoder.reg", &self.decoder.reg);
        if let Some(p) = &self.predictor {
            out.extend(p.params());
        }
        out
    }

    pub fn set_requires_grad(&self, value: bool) {
        for (_, p) in self.params() {
            p.set_requires_grad(value);
        }
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.params() {
            p.clear_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.all_finite())
    }

    pub fn save(&self, stem: &Path) -> std::io::Result<()> {
        save_checkpoint(stem, &self.params())
    }

    /// Rebuild weights from a checkpoint. Trainability is off; callers
    /// training further must call `set_requires_grad(true)`.
    pub fn load(stem: &Path, cfg: &ModelConfig) -> Result<ModelWeights, PipelineError> {
        let loaded = load_checkpoint(stem).map_err(|e| {
            PipelineError::Config(format!("checkpoint {}: {e}", stem.display()))
        })?;
        let has_predictor = loaded.iter().any(|p| p.name.starts_with("predictor."));
        let mut map: HashMap<String, (Vec<usize>, Vec<f32>)> =
            loaded.into_iter().map(|p| (p.name, (p.shape, p.data))).collect();
        let template = ModelWeights::init(0, cfg, has_predictor)?;
        for (name, tensor) in template.params() {
            let (shape, data) = map.remove(&name).ok_or_else(|| {
                PipelineError::Config(format!("checkpoint missing parameter '{name}'"))
            })?;
            if shape != tensor.shape() {
                return Err(PipelineError::Config(format!(
                    "parameter '{name}' has shape {:?}, expected {:?} for this model config",
                    shape,
                    tensor.shape()
                )));
            }
            tensor.data_mut().copy_from_slice(&data);
            tensor.set_requires_grad(false);
        }
        if let Some(extra) = map.keys().next() {
            return Err(PipelineError::Config(format!(
                "checkpoint has unexpected parameter '{extra}'"
            )));
        }
        Ok(template)
    }

    pub fn has_predictor(&self) -> bool {
        self.predictor.is_some()
    }
}

/// Per-node detection output: foreground probability and per-cell box
/// regression (dx, dy, log w, log l, sin yaw, cos yaw).
pub struct DetectionMap {
    pub cls: Tensor,
    pub reg: Tensor,
}

/// `f_encode`: occupancy grid `[1,H,W]` -> feature `[C,H/2,W/2]`.
pub fn encode(tape: &mut Tape, obs: &Tensor, w: &EncoderWeights) -> Result<Tensor, PipelineError> {
    let x = w.conv1.apply(tape, obs)?;
    let x = numerics::relu(tape, &x);
    let x = w.conv2.apply(tape, &x)?;
    let x = numerics::relu(tape, &x);
    let x = w.conv3.apply(tape, &x)?;
    Ok(numerics::relu(tape, &x))
}

/// `f_decode`: fused feature -> classification + regression grids.
pub fn decode(tape: &mut Tape, feat: &Tensor, w: &DecoderWeights) -> Result<DetectionMap, PipelineError> {
    let x = w.trunk1.apply(tape, feat)?;
    let x = numerics::relu(tape, &x);
    let x = w.trunk2.apply(tape, &x)?;
    let x = numerics::relu(tape, &x);
    let cls_logits = w.cls.apply(tape, &x)?;
    let cls = numerics::sigmoid(tape, &cls_logits);
    let reg = w.reg.apply(tape, &x)?;
    Ok(DetectionMap { cls, reg })
}
