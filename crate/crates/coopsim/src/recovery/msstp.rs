//! Multi-scale spatial-temporal prediction over a stacked feature history.
//!
//! Two downsampling groups (each: a stride-2 then stride-1 spatial conv with
//! shared weights across time slices, plus a kernel-2/stride-2 temporal conv)
//! build a pyramid over `[T, C, H, W]`; a U-shaped decoder upsamples back,
//! concatenating time-pooled skip features from the group-1 output and the
//! raw input, and two final convs produce the `[C, H, W]` prediction.
//!
//! The temporal conv applies whenever a level still has at least two time
//! slices and is skipped (identity) at T = 1, so any history window in
//! 1..=5 reduces to a single slice at the bottom of the pyramid. Temporal
//! windows are right-aligned: when slices must be dropped, the oldest go
//! first.

use crate::numerics::{self, Tape, Tensor};
use crate::pipeline::{ConvLayer, PipelineError};
use crate::rng::SimRng;

/// Parameters of the prediction network for feature width C: two downsample
/// groups (C -> 2C -> 4C), two skip-fusion convs, and two output convs.
pub struct PredictorWeights {
    pub g1_conv1: ConvLayer,
    pub g1_conv2: ConvLayer,
    pub g1_temporal: Tensor,
    pub g2_conv1: ConvLayer,
    pub g2_conv2: ConvLayer,
    pub g2_temporal: Tensor,
    pub dec_conv1: ConvLayer,
    pub dec_conv2: ConvLayer,
    pub out_conv1: ConvLayer,
    pub out_conv2: ConvLayer,
}

fn temporal_kernel(rng: &mut SimRng, channels: usize) -> Tensor {
    let bound = (6.0f64 / 2.0).sqrt();
    let data: Vec<f32> =
        (0..channels * 2).map(|_| rng.range_f64(-bound, bound) as f32).collect();
    Tensor::param(&[channels, 2], data).expect("temporal kernel shape")
}

impl PredictorWeights {
    pub fn init(rng: &mut SimRng, channels: usize) -> PredictorWeights {
        let c = channels;
        PredictorWeights {
            g1_conv1: ConvLayer::init(rng, 2 * c, c, 3, 2, 1, 0.0),
            g1_conv2: ConvLayer::init(rng, 2 * c, 2 * c, 3, 1, 1, 0.0),
            g1_temporal: temporal_kernel(rng, 2 * c),
            g2_conv1: ConvLayer::init(rng, 4 * c, 2 * c, 3, 2, 1, 0.0),
            g2_conv2: ConvLayer::init(rng, 4 * c, 4 * c, 3, 1, 1, 0.0),
            g2_temporal: temporal_kernel(rng, 4 * c),
            dec_conv1: ConvLayer::init(rng, 2 * c, 6 * c, 3, 1, 1, 0.0),
            dec_conv2: ConvLayer::init(rng, c, 3 * c, 3, 1, 1, 0.0),
            out_conv1: ConvLayer::init(rng, c, c, 3, 1, 1, 0.0),
            out_conv2: ConvLayer::init(rng, c, c, 3, 1, 1, 0.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.g1_conv1.weight.shape()[1]
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        fn layer(out: &mut Vec<(String, Tensor)>, name: &str, l: &ConvLayer) {
            out.push((format!("predictor.{name}.weight"), l.weight.clone()));
            out.push((format!("predictor.{name}.bias"), l.bias.clone()));
        }
        let mut out = Vec::new();
        layer(&mut out, "g1.conv1", &self.g1_conv1);
        layer(&mut out, "g1.conv2", &self.g1_conv2);
        out.push(("predictor.g1.temporal".to_string(), self.g1_temporal.clone()));
        layer(&mut out, "g2.conv1", &self.g2_conv1);
        layer(&mut out, "g2.conv2", &self.g2_conv2);
        out.push(("predictor.g2.temporal".to_string(), self.g2_temporal.clone()));
        layer(&mut out, "dec.conv1", &self.dec_conv1);
        layer(&mut out, "dec.conv2", &self.dec_conv2);
        layer(&mut out, "out.conv1", &self.out_conv1);
        layer(&mut out, "out.conv2", &self.out_conv2);
        out
    }
}

/// Apply a spatial conv stack to every time slice (shared weights), re-stack,
/// then reduce time with the group's temporal conv when T >= 2.
fn group_forward(
    tape: &mut Tape,
    x: &Tensor,
    conv1: &ConvLayer,
    conv2: &ConvLayer,
    temporal: &Tensor,
) -> Result<Tensor, PipelineError> {
    let t_in = x.shape()[0];
    let mut slices = Vec::with_capacity(t_in);
    for ti in 0..t_in {
        let s = numerics::index0(tape, x, ti)?;
        let s = conv1.apply(tape, &s)?;
        let s = numerics::relu(tape, &s);
        let s = conv2.apply(tape, &s)?;
        slices.push(numerics::relu(tape, &s));
    }
    let refs: Vec<&Tensor> = slices.iter().collect();
    let stacked = numerics::stack_new0(tape, &refs)?;
    if stacked.shape()[0] >= 2 {
        Ok(numerics::conv1d_time(tape, &stacked, temporal, 2)?)
    } else {
        Ok(stacked)
    }
}

/// Predict the current-state feature `[C, H, W]` from stacked history
/// `[T, C, H, W]`. Fully differentiable; H and W must be equal multiples
/// of 4.
pub fn msstp_predict(
    tape: &mut Tape,
    history: &Tensor,
    w: &PredictorWeights,
) -> Result<Tensor, PipelineError> {
    let shape = history.shape().to_vec();
    if shape.len() != 4 {
        return Err(PipelineError::Shape(format!("history must be [T,C,H,W], got {shape:?}")));
    }
    let (t, c, h, wd) = (shape[0], shape[1], shape[2], shape[3]);
    if t == 0 {
        return Err(PipelineError::Shape("history has no time slices".into()));
    }
    if c != w.channels() {
        return Err(PipelineError::Shape(format!(
            "history has {c} channels, predictor expects {}",
            w.channels()
        )));
    }
    if h != wd || h % 4 != 0 {
        return Err(PipelineError::Shape(format!(
            "spatial grid must be square and divisible by 4, got {h}x{wd}"
        )));
    }

    let g1 = group_forward(tape, history, &w.g1_conv1, &w.g1_conv2, &w.g1_temporal)?;
    let g2 = group_forward(tape, &g1, &w.g2_conv1, &w.g2_conv2, &w.g2_temporal)?;

    // Decoder: collapse any residual time, upsample, and fuse the skips.
    let bottom = numerics::mean0(tape, &g2)?;
    let up1 = numerics::upsample2x(tape, &bottom)?;
    let skip1 = numerics::mean0(tape, &g1)?;
    let x = numerics::concat0(tape, &[&up1, &skip1])?;
    let x = w.dec_conv1.apply(tape, &x)?;
    let x = numerics::relu(tape, &x);
    let up2 = numerics::upsample2x(tape, &x)?;
    let skip0 = numerics::mean0(tape, history)?;
    let x = numerics::concat0(tape, &[&up2, &skip0])?;
    let x = w.dec_conv2.apply(tape, &x)?;
    let x = numerics::relu(tape, &x);
    let x = w.out_conv1.apply(tape, &x)?;
    let x = numerics::relu(tape, &x);
    Ok(w.out_conv2.apply(tape, &x)?)
}
