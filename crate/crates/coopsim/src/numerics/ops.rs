//! Differentiable tensor ops.
//!
//! Each op validates shapes, computes the f32 forward, and (when the tape is
//! recording and an input requires grad) pushes a backward closure that
//! accumulates into the inputs' gradient buffers. Targets of loss functions
//! are treated as constants: gradients flow to predictions only.

use std::rc::Rc;

use super::{NumericsError, Tape, Tensor};

const BCE_EPS: f32 = 1e-7;

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
}

fn config_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::InvalidConfig { op, detail }
}

/// 2D cross-correlation with zero padding: input `[Cin,H,W]`, kernel
/// `[Cout,Cin,kh,kw]` (odd kh/kw), bias `[Cout]`. Output height is
/// `floor((H + 2*pad - kh) / stride) + 1`, matching mainstream frameworks.
pub fn conv2d(
    tape: &mut Tape,
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor, NumericsError> {
    let ishape = input.shape().to_vec();
    let kshape = kernel.shape().to_vec();
    if ishape.len() != 3 || kshape.len() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("expected input [Cin,H,W] and kernel [Cout,Cin,kh,kw], got {ishape:?} / {kshape:?}"),
        ));
    }
    let (cin, h, w) = (ishape[0], ishape[1], ishape[2]);
    let (cout, kcin, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if kcin != cin {
        return Err(shape_err("conv2d", format!("kernel Cin {kcin} != input Cin {cin}")));
    }
    if bias.shape() != [cout] {
        return Err(shape_err("conv2d", format!("bias shape {:?} != [{cout}]", bias.shape())));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(config_err("conv2d", format!("kernel dims must be odd, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(config_err("conv2d", "stride must be >= 1".into()));
    }
    let oh = (h + 2 * pad).checked_sub(kh).map(|v| v / stride + 1);
    let ow = (w + 2 * pad).checked_sub(kw).map(|v| v / stride + 1);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
        _ => {
            return Err(config_err(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {h}x{w} (pad {pad})"),
            ))
        }
    };

    let out = conv2d_raw(
        &input.data(),
        &kernel.data(),
        &bias.data(),
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
    );
    let output = Tensor::from_vec(&[cout, oh, ow], out)?;

    if tape.wants_node(&[input, kernel, bias]) {
        let (input, kernel, bias) = (input.clone(), kernel.clone(), bias.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let in_data = input.data();
                let k_data = kernel.data();
                let need_in = input.requires_grad();
                let need_k = kernel.requires_grad();
                let need_b = bias.requires_grad();
                let mut d_in = if need_in { vec![0.0f32; cin * h * w] } else { Vec::new() };
                let mut d_k = if need_k { vec![0.0f32; cout * cin * kh * kw] } else { Vec::new() };
                let mut d_b = if need_b { vec![0.0f32; cout] } else { Vec::new() };

                for co in 0..cout {
                    let g_plane = &g[co * oh * ow..(co + 1) * oh * ow];
                    if need_b {
                        d_b[co] = g_plane.iter().sum();
                    }
                    for ci in 0..cin {
                        for r in 0..kh {
                            for s in 0..kw {
                                let kidx = ((co * cin + ci) * kh + r) * kw + s;
                                let kval = k_data[kidx];
                                let mut k_acc = 0.0f32;
                                for row in 0..oh {
                                    let ih = (row * stride + r) as isize - pad as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let (lo, hi) = ow_bounds(w, pad, s, stride, ow);
                                    if lo > hi {
                                        continue;
                                    }
                                    let in_row = (ci * h + ih as usize) * w;
                                    let g_row = row * ow;
                                    for col in lo..=hi {
                                        let iw = col * stride + s - pad;
                                        let gv = g_plane[g_row + col];
                                        if need_k {
                                            k_acc += gv * in_data[in_row + iw];
                                        }
                                        if need_in {
                                            d_in[in_row + iw] += gv * kval;
                                        }
                                    }
                                }
                                if need_k {
                                    d_k[kidx] = k_acc;
                                }
                            }
                        }
                    }
                }
                drop(in_data);
                drop(k_data);
                if need_in {
                    input.accumulate_grad(&d_in);
                }
                if need_k {
                    kernel.accumulate_grad(&d_k);
                }
                if need_b {
                    bias.accumulate_grad(&d_b);
                }
            }),
        );
    }
    Ok(output)
}

/// Valid output-column range such that `col*stride + s - pad` lands in `[0, w)`.
#[inline]
fn ow_bounds(w: usize, pad: usize, s: usize, stride: usize, ow: usize) -> (usize, usize) {
    let lo = if s >= pad { 0 } else { (pad - s).div_ceil(stride) };
    let hi_isize = (w as isize - 1 + pad as isize - s as isize) / stride as isize;
    if hi_isize < lo as isize {
        return (1, 0);
    }
    (lo, (hi_isize as usize).min(ow - 1))
}

#[allow(clippy::too_many_arguments)]
fn conv2d_raw(
    input: &[f32],
    kernel: &[f32],
    bias: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; cout * oh * ow];
    for co in 0..cout {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        plane.fill(bias[co]);
        for ci in 0..cin {
            for r in 0..kh {
                for s in 0..kw {
                    let kval = kernel[((co * cin + ci) * kh + r) * kw + s];
                    if kval == 0.0 {
                        continue;
                    }
                    for row in 0..oh {
                        let ih = (row * stride + r) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let (lo, hi) = ow_bounds(w, pad, s, stride, ow);
                        if lo > hi {
                            continue;
                        }
                        let in_row = (ci * h + ih as usize) * w;
                        let out_row = row * ow;
                        if stride == 1 {
                            let in_off = in_row + lo + s - pad;
                            let src = &input[in_off..in_off + (hi - lo + 1)];
                            let dst = &mut plane[out_row + lo..out_row + hi + 1];
                            for (d, x) in dst.iter_mut().zip(src) {
                                *d += kval * x;
                            }
                        } else {
                            for col in lo..=hi {
                                let iw = col * stride + s - pad;
                                plane[out_row + col] += kval * input[in_row + iw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Per-channel 1D convolution along the leading time axis.
///
/// Input `[T,C,H,W]`, kernel `[C,kt]` (channel c filtered by its own row),
/// no padding. Windows are right-aligned so the newest frames are always
/// covered when `(T - kt)` is not a multiple of `stride`.
pub fn conv1d_time(
    tape: &mut Tape,
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
) -> Result<Tensor, NumericsError> {
    let ishape = input.shape().to_vec();
    let kshape = kernel.shape().to_vec();
    if ishape.len() != 4 || kshape.len() != 2 {
        return Err(shape_err(
            "conv1d_time",
            format!("expected input [T,C,H,W] and kernel [C,kt], got {ishape:?} / {kshape:?}"),
        ));
    }
    let (t_in, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (kc, kt) = (kshape[0], kshape[1]);
    if kc != c {
        return Err(shape_err("conv1d_time", format!("kernel channels {kc} != input channels {c}")));
    }
    if stride == 0 {
        return Err(config_err("conv1d_time", "stride must be >= 1".into()));
    }
    if t_in < kt {
        return Err(shape_err(
            "conv1d_time",
            format!("time axis {t_in} shorter than kernel extent {kt}"),
        ));
    }
    let t_out = (t_in - kt) / stride + 1;
    let start = t_in - kt - (t_out - 1) * stride;
    let plane = h * w;

    let mut out = vec![0.0f32; t_out * c * plane];
    {
        let in_data = input.data();
        let k_data = kernel.data();
        for j in 0..t_out {
            for ci in 0..c {
                let dst = &mut out[(j * c + ci) * plane..(j * c + ci + 1) * plane];
                for tau in 0..kt {
                    let tsrc = start + j * stride + tau;
                    let kval = k_data[ci * kt + tau];
                    let src = &in_data[(tsrc * c + ci) * plane..(tsrc * c + ci + 1) * plane];
                    for (d, x) in dst.iter_mut().zip(src) {
                        *d += kval * x;
                    }
                }
            }
        }
    }
    let output = Tensor::from_vec(&[t_out, c, h, w], out)?;

    if tape.wants_node(&[input, kernel]) {
        let (input, kernel) = (input.clone(), kernel.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let in_data = input.data();
                let k_data = kernel.data();
                let need_in = input.requires_grad();
                let need_k = kernel.requires_grad();
                let mut d_in = if need_in { vec![0.0f32; t_in * c * plane] } else { Vec::new() };
                let mut d_k = if need_k { vec![0.0f32; c * kt] } else { Vec::new() };
                for j in 0..t_out {
                    for ci in 0..c {
                        let g_plane = &g[(j * c + ci) * plane..(j * c + ci + 1) * plane];
                        for tau in 0..kt {
                            let tsrc = start + j * stride + tau;
                            let off = (tsrc * c + ci) * plane;
                            if need_k {
                                let src = &in_data[off..off + plane];
                                d_k[ci * kt + tau] +=
                                    g_plane.iter().zip(src).map(|(a, b)| a * b).sum::<f32>();
                            }
                            if need_in {
                                let kval = k_data[ci * kt + tau];
                                for (d, gv) in d_in[off..off + plane].iter_mut().zip(g_plane) {
                                    *d += kval * gv;
                                }
                            }
                        }
                    }
                }
                drop(in_data);
                drop(k_data);
                if need_in {
                    input.accumulate_grad(&d_in);
                }
                if need_k {
                    kernel.accumulate_grad(&d_k);
                }
            }),
        );
    }
    Ok(output)
}

pub fn relu(tape: &mut Tape, x: &Tensor) -> Tensor {
    let out: Vec<f32> = x.data().iter().map(|&v| v.max(0.0)).collect();
    let output = Tensor::from_vec(x.shape(), out).expect("relu: same shape");
    if tape.wants_node(&[x]) {
        let x = x.clone();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let data = x.data();
                let d: Vec<f32> =
                    g.iter().zip(data.iter()).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                drop(data);
                x.accumulate_grad(&d);
            }),
        );
    }
    output
}

pub fn sigmoid(tape: &mut Tape, x: &Tensor) -> Tensor {
    let out: Vec<f32> = x.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    let output = Tensor::from_vec(x.shape(), out).expect("sigmoid: same shape");
    if tape.wants_node(&[x]) {
        let x = x.clone();
        let y = output.clone();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let yd = y.data();
                let d: Vec<f32> = g.iter().zip(yd.iter()).map(|(gv, &yv)| gv * yv * (1.0 - yv)).collect();
                drop(yd);
                x.accumulate_grad(&d);
            }),
        );
    }
    output
}

/// Softmax along `axis`; every lane sums to 1.
pub fn softmax(tape: &mut Tape, x: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(config_err("softmax", format!("axis {axis} out of range for {shape:?}")));
    }
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();

    let mut out = vec![0.0f32; x.numel()];
    {
        let data = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = f32::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(data[base + j * inner]);
                }
                let mut sum = 0.0f32;
                for j in 0..n {
                    let e = (data[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= sum;
                }
            }
        }
    }
    let output = Tensor::from_vec(&shape, out)?;

    if tape.wants_node(&[x]) {
        let x = x.clone();
        let y = output.clone();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let yd = y.data();
                let mut d = vec![0.0f32; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let mut dot = 0.0f32;
                        for j in 0..n {
                            dot += g[base + j * inner] * yd[base + j * inner];
                        }
                        for j in 0..n {
                            let idx = base + j * inner;
                            d[idx] = yd[idx] * (g[idx] - dot);
                        }
                    }
                }
                drop(yd);
                x.accumulate_grad(&d);
            }),
        );
    }
    Ok(output)
}

pub fn add(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    let output = Tensor::from_vec(a.shape(), out)?;
    if tape.wants_node(&[a, b]) {
        let (a, b) = (a.clone(), b.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                if a.requires_grad() {
                    a.accumulate_grad(g);
                }
                if b.requires_grad() {
                    b.accumulate_grad(g);
                }
            }),
        );
    }
    Ok(output)
}

/// Elementwise product of equal-shaped tensors.
pub fn mul(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let output = Tensor::from_vec(a.shape(), out)?;
    if tape.wants_node(&[a, b]) {
        let (a, b) = (a.clone(), b.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                if a.requires_grad() {
                    let bd = b.data();
                    let d: Vec<f32> = g.iter().zip(bd.iter()).map(|(gv, bv)| gv * bv).collect();
                    drop(bd);
                    a.accumulate_grad(&d);
                }
                if b.requires_grad() {
                    let ad = a.data();
                    let d: Vec<f32> = g.iter().zip(ad.iter()).map(|(gv, av)| gv * av).collect();
                    drop(ad);
                    b.accumulate_grad(&d);
                }
            }),
        );
    }
    Ok(output)
}

pub fn scale(tape: &mut Tape, x: &Tensor, c: f32) -> Tensor {
    let out: Vec<f32> = x.data().iter().map(|v| v * c).collect();
    let output = Tensor::from_vec(x.shape(), out).expect("scale: same shape");
    if tape.wants_node(&[x]) {
        let x = x.clone();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let d: Vec<f32> = g.iter().map(|v| v * c).collect();
                x.accumulate_grad(&d);
            }),
        );
    }
    output
}

pub fn sum_all(tape: &mut Tape, x: &Tensor) -> Tensor {
    let s: f32 = x.data().iter().sum();
    let output = Tensor::scalar(s);
    if tape.wants_node(&[x]) {
        let x = x.clone();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                x.accumulate_grad(&vec![g[0]; x.numel()]);
            }),
        );
    }
    output
}

/// Concatenate along the existing leading axis.
pub fn concat0(tape: &mut Tape, inputs: &[&Tensor]) -> Result<Tensor, NumericsError> {
    if inputs.is_empty() {
        return Err(config_err("concat0", "empty input list".into()));
    }
    let rest = inputs[0].shape()[1..].to_vec();
    let mut d0 = 0usize;
    for t in inputs {
        if t.shape().is_empty() || t.shape()[1..] != rest[..] {
            return Err(shape_err(
                "concat0",
                format!("trailing dims differ: {:?} vs {:?}", t.shape(), inputs[0].shape()),
            ));
        }
        d0 += t.shape()[0];
    }
    let mut shape = vec![d0];
    shape.extend_from_slice(&rest);
    let mut out = Vec::with_capacity(shape.iter().product());
    for t in inputs {
        out.extend_from_slice(&t.data());
    }
    let output = Tensor::from_vec(&shape, out)?;

    if tape.wants_node(inputs) {
        let handles: Vec<Tensor> = inputs.iter().map(|t| (*t).clone()).collect();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let mut off = 0usize;
                for t in &handles {
                    let n = t.numel();
                    if t.requires_grad() {
                        t.accumulate_grad(&g[off..off + n]);
                    }
                    off += n;
                }
            }),
        );
    }
    Ok(output)
}

/// Stack equal-shaped tensors along a new leading axis.
pub fn stack_new0(tape: &mut Tape, inputs: &[&Tensor]) -> Result<Tensor, NumericsError> {
    if inputs.is_empty() {
        return Err(config_err("stack_new0", "empty input list".into()));
    }
    let base = inputs[0].shape().to_vec();
    for t in inputs {
        if t.shape() != base {
            return Err(shape_err(
                "stack_new0",
                format!("shapes differ: {:?} vs {:?}", t.shape(), base),
            ));
        }
    }
    let mut shape = vec![inputs.len()];
    shape.extend_from_slice(&base);
    let mut out = Vec::with_capacity(shape.iter().product());
    for t in inputs {
        out.extend_from_slice(&t.data());
    }
    let output = Tensor::from_vec(&shape, out)?;

    if tape.wants_node(inputs) {
        let handles: Vec<Tensor> = inputs.iter().map(|t| (*t).clone()).collect();
        let block: usize = base.iter().product();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                for (j, t) in handles.iter().enumerate() {
                    if t.requires_grad() {
                        t.accumulate_grad(&g[j * block..(j + 1) * block]);
                    }
                }
            }),
        );
    }
    Ok(output)
}

/// Select slice `i` along the leading axis: `[D0, rest..] -> [rest..]`.
pub fn index0(tape: &mut Tape, x: &Tensor, i: usize) -> Result<Tensor, NumericsError> {
    let shape = x.shape().to_vec();
    if shape.is_empty() || i >= shape[0] {
        return Err(config_err("index0", format!("index {i} out of range for {shape:?}")));
    }
    let block: usize = shape[1..].iter().product();
    let out = x.data()[i * block..(i + 1) * block].to_vec();
    let output = Tensor::from_vec(&shape[1..], out)?;
    if tape.wants_node(&[x]) {
        let x = x.clone();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let mut d = vec![0.0f32; x.numel()];
                d[i * block..(i + 1) * block].copy_from_slice(g);
                x.accumulate_grad(&d);
            }),
        );
    }
    Ok(output)
}

/// Mean over the leading axis: `[T, rest..] -> [rest..]`.
pub fn mean0(tape: &mut Tape, x: &Tensor) -> Result<Tensor, NumericsError> {
    let shape = x.shape().to_vec();
    if shape.is_empty() || shape[0] == 0 {
        return Err(config_err("mean0", format!("bad leading axis in {shape:?}")));
    }
    let t = shape[0];
    let block: usize = shape[1..].iter().product();
    let mut out = vec![0.0f32; block];
    {
        let data = x.data();
        for j in 0..t {
            for (o, v) in out.iter_mut().zip(&data[j * block..(j + 1) * block]) {
                *o += v;
            }
        }
    }
    let inv = 1.0 / t as f32;
    for o in out.iter_mut() {
        *o *= inv;
    }
    let output = Tensor::from_vec(&shape[1..], out)?;
    if tape.wants_node(&[x]) {
        let x = x.clone();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let mut d = vec![0.0f32; t * block];
                for j in 0..t {
                    for (dv, gv) in d[j * block..(j + 1) * block].iter_mut().zip(g) {
                        *dv = gv * inv;
                    }
                }
                x.accumulate_grad(&d);
            }),
        );
    }
    Ok(output)
}

/// Nearest-neighbor 2x upsample: `[C,H,W] -> [C,2H,2W]`.
pub fn upsample2x(tape: &mut Tape, x: &Tensor) -> Result<Tensor, NumericsError> {
    let shape = x.shape().to_vec();
    if shape.len() != 3 {
        return Err(shape_err("upsample2x", format!("expected [C,H,W], got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = vec![0.0f32; c * 4 * h * w];
    {
        let data = x.data();
        for ci in 0..c {
            for row in 0..h {
                for col in 0..w {
                    let v = data[(ci * h + row) * w + col];
                    let base = (ci * 2 * h + 2 * row) * 2 * w + 2 * col;
                    out[base] = v;
                    out[base + 1] = v;
                    out[base + 2 * w] = v;
                    out[base + 2 * w + 1] = v;
                }
            }
        }
    }
    let output = Tensor::from_vec(&[c, 2 * h, 2 * w], out)?;
    if tape.wants_node(&[x]) {
        let x = x.clone();
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let mut d = vec![0.0f32; c * h * w];
                for ci in 0..c {
                    for row in 0..h {
                        for col in 0..w {
                            let base = (ci * 2 * h + 2 * row) * 2 * w + 2 * col;
                            d[(ci * h + row) * w + col] =
                                g[base] + g[base + 1] + g[base + 2 * w] + g[base + 2 * w + 1];
                        }
                    }
                }
                x.accumulate_grad(&d);
            }),
        );
    }
    Ok(output)
}

/// Spatial gather on `[C,H,W]`: destination cell `d` reads source cell
/// `map[d]` in every channel; `-1` means zero fill. The index map is not a
/// differentiable input — values pass through, geometry does not.
pub fn gather_cells(
    tape: &mut Tape,
    x: &Tensor,
    map: &Rc<Vec<i64>>,
) -> Result<Tensor, NumericsError> {
    let shape = x.shape().to_vec();
    if shape.len() != 3 {
        return Err(shape_err("gather_cells", format!("expected [C,H,W], got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    if map.len() != plane {
        return Err(shape_err(
            "gather_cells",
            format!("map has {} entries for a {}x{} grid", map.len(), h, w),
        ));
    }
    let mut out = vec![0.0f32; c * plane];
    {
        let data = x.data();
        for ci in 0..c {
            let src = &data[ci * plane..(ci + 1) * plane];
            let dst = &mut out[ci * plane..(ci + 1) * plane];
            for (d, &m) in dst.iter_mut().zip(map.iter()) {
                if m >= 0 {
                    *d = src[m as usize];
                }
            }
        }
    }
    let output = Tensor::from_vec(&shape, out)?;
    if tape.wants_node(&[x]) {
        let x = x.clone();
        let map = Rc::clone(map);
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let mut d = vec![0.0f32; c * plane];
                for ci in 0..c {
                    let gsrc = &g[ci * plane..(ci + 1) * plane];
                    let ddst = &mut d[ci * plane..(ci + 1) * plane];
                    for (gv, &m) in gsrc.iter().zip(map.iter()) {
                        if m >= 0 {
                            ddst[m as usize] += gv;
                        }
                    }
                }
                x.accumulate_grad(&d);
            }),
        );
    }
    Ok(output)
}

/// Broadcast a `[1,H,W]` mask over the channels of a `[C,H,W]` feature.
pub fn mul_mask(tape: &mut Tape, feat: &Tensor, mask: &Tensor) -> Result<Tensor, NumericsError> {
    let fs = feat.shape().to_vec();
    let ms = mask.shape().to_vec();
    if fs.len() != 3 || ms.len() != 3 || ms[0] != 1 || ms[1] != fs[1] || ms[2] != fs[2] {
        return Err(shape_err("mul_mask", format!("feature {fs:?} vs mask {ms:?}")));
    }
    let (c, plane) = (fs[0], fs[1] * fs[2]);
    let mut out = vec![0.0f32; c * plane];
    {
        let fdata = feat.data();
        let mdata = mask.data();
        for ci in 0..c {
            for p in 0..plane {
                out[ci * plane + p] = fdata[ci * plane + p] * mdata[p];
            }
        }
    }
    let output = Tensor::from_vec(&fs, out)?;
    if tape.wants_node(&[feat, mask]) {
        let (feat, mask) = (feat.clone(), mask.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                if feat.requires_grad() {
                    let mdata = mask.data();
                    let mut d = vec![0.0f32; c * plane];
                    for ci in 0..c {
                        for p in 0..plane {
                            d[ci * plane + p] = g[ci * plane + p] * mdata[p];
                        }
                    }
                    drop(mdata);
                    feat.accumulate_grad(&d);
                }
                if mask.requires_grad() {
                    let fdata = feat.data();
                    let mut d = vec![0.0f32; plane];
                    for ci in 0..c {
                        for p in 0..plane {
                            d[p] += g[ci * plane + p] * fdata[ci * plane + p];
                        }
                    }
                    drop(fdata);
                    mask.accumulate_grad(&d);
                }
            }),
        );
    }
    Ok(output)
}

/// Binary cross-entropy of probabilities vs {0,1} targets, averaged over all
/// elements. Inputs are clamped to `[1e-7, 1 - 1e-7]`; the target is a
/// constant.
pub fn bce_mean(tape: &mut Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor, NumericsError> {
    if pred.shape() != target.shape() {
        return Err(shape_err("bce_mean", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.numel();
    let mut loss = 0.0f32;
    {
        let p = pred.data();
        let y = target.data();
        for i in 0..n {
            let pc = p[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= y[i] * pc.ln() + (1.0 - y[i]) * (1.0 - pc).ln();
        }
    }
    let output = Tensor::scalar(loss / n as f32);
    if tape.wants_node(&[pred]) {
        let (pred, target) = (pred.clone(), target.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let p = pred.data();
                let y = target.data();
                let scale = g[0] / n as f32;
                let d: Vec<f32> = (0..n)
                    .map(|i| {
                        if p[i] < BCE_EPS || p[i] > 1.0 - BCE_EPS {
                            0.0 // clamped region: constant loss
                        } else {
                            scale * (-y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]))
                        }
                    })
                    .collect();
                drop(p);
                drop(y);
                pred.accumulate_grad(&d);
            }),
        );
    }
    Ok(output)
}

#[inline]
fn smooth_l1(d: f32) -> f32 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

#[inline]
fn smooth_l1_grad(d: f32) -> f32 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Smooth-L1 (Huber with delta 1) averaged over all elements.
pub fn smooth_l1_mean(
    tape: &mut Tape,
    pred: &Tensor,
    target: &Tensor,
) -> Result<Tensor, NumericsError> {
    if pred.shape() != target.shape() {
        return Err(shape_err(
            "smooth_l1_mean",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.numel();
    let loss: f32 = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(p, t)| smooth_l1(p - t))
        .sum::<f32>()
        / n as f32;
    let output = Tensor::scalar(loss);
    if tape.wants_node(&[pred]) {
        let (pred, target) = (pred.clone(), target.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let p = pred.data();
                let t = target.data();
                let scale = g[0] / n as f32;
                let d: Vec<f32> =
                    p.iter().zip(t.iter()).map(|(pv, tv)| scale * smooth_l1_grad(pv - tv)).collect();
                drop(p);
                drop(t);
                pred.accumulate_grad(&d);
            }),
        );
    }
    Ok(output)
}

/// Smooth-L1 over `[K,H,W]` predictions, counted only where the `[1,H,W]`
/// mask is 1 and averaged over `K * n_foreground` components. All-background
/// targets yield exactly 0.
pub fn smooth_l1_masked_mean(
    tape: &mut Tape,
    pred: &Tensor,
    target: &Tensor,
    mask: &Tensor,
) -> Result<Tensor, NumericsError> {
    let ps = pred.shape().to_vec();
    if ps != target.shape() {
        return Err(shape_err(
            "smooth_l1_masked_mean",
            format!("{:?} vs {:?}", ps, target.shape()),
        ));
    }
    if ps.len() != 3 || mask.shape() != [1, ps[1], ps[2]] {
        return Err(shape_err(
            "smooth_l1_masked_mean",
            format!("pred {:?} vs mask {:?}", ps, mask.shape()),
        ));
    }
    let (k, plane) = (ps[0], ps[1] * ps[2]);
    let n_fg: f32 = mask.data().iter().sum();
    if n_fg == 0.0 {
        // No recorded node: the loss is identically zero with zero gradient.
        return Ok(Tensor::scalar(0.0));
    }
    let denom = n_fg * k as f32;
    let mut loss = 0.0f32;
    {
        let p = pred.data();
        let t = target.data();
        let m = mask.data();
        for ci in 0..k {
            for pix in 0..plane {
                if m[pix] != 0.0 {
                    loss += smooth_l1(p[ci * plane + pix] - t[ci * plane + pix]);
                }
            }
        }
    }
    let output = Tensor::scalar(loss / denom);
    if tape.wants_node(&[pred]) {
        let (pred, target, mask) = (pred.clone(), target.clone(), mask.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let p = pred.data();
                let t = target.data();
                let m = mask.data();
                let scale = g[0] / denom;
                let mut d = vec![0.0f32; k * plane];
                for ci in 0..k {
                    for pix in 0..plane {
                        if m[pix] != 0.0 {
                            let idx = ci * plane + pix;
                            d[idx] = scale * smooth_l1_grad(p[idx] - t[idx]);
                        }
                    }
                }
                drop(p);
                drop(t);
                drop(m);
                pred.accumulate_grad(&d);
            }),
        );
    }
    Ok(output)
}

/// Log-softmax over the channel lane of one spatial cell.
fn log_softmax_lane(data: &[f32], pix: usize, c: usize, plane: usize, out: &mut [f32]) {
    let mut mx = f32::NEG_INFINITY;
    for ci in 0..c {
        mx = mx.max(data[ci * plane + pix]);
    }
    let mut sum = 0.0f32;
    for ci in 0..c {
        sum += (data[ci * plane + pix] - mx).exp();
    }
    let lse = mx + sum.ln();
    for ci in 0..c {
        out[ci] = data[ci * plane + pix] - lse;
    }
}

/// Channelwise KL divergence between `[C,H,W]` feature maps: both inputs are
/// softmaxed along the channel axis per cell, then `D_KL(student || teacher)`
/// is summed over all H*W cells. Computed via log-softmax for stability.
pub fn kl_channelwise(
    tape: &mut Tape,
    student: &Tensor,
    teacher: &Tensor,
) -> Result<Tensor, NumericsError> {
    let shape = student.shape().to_vec();
    if shape != teacher.shape() {
        return Err(shape_err(
            "kl_channelwise",
            format!("{:?} vs {:?}", shape, teacher.shape()),
        ));
    }
    if shape.len() != 3 {
        return Err(shape_err("kl_channelwise", format!("expected [C,H,W], got {shape:?}")));
    }
    let (c, plane) = (shape[0], shape[1] * shape[2]);

    let mut loss = 0.0f32;
    {
        let s = student.data();
        let t = teacher.data();
        let mut ls = vec![0.0f32; c];
        let mut lt = vec![0.0f32; c];
        for pix in 0..plane {
            log_softmax_lane(&s, pix, c, plane, &mut ls);
            log_softmax_lane(&t, pix, c, plane, &mut lt);
            for ci in 0..c {
                loss += ls[ci].exp() * (ls[ci] - lt[ci]);
            }
        }
    }
    let output = Tensor::scalar(loss);

    if tape.wants_node(&[student, teacher]) {
        let (student, teacher) = (student.clone(), teacher.clone());
        tape.record(
            &output,
            Box::new(move |g: &[f32]| {
                let s = student.data();
                let t = teacher.data();
                let need_s = student.requires_grad();
                let need_t = teacher.requires_grad();
                let mut d_s = if need_s { vec![0.0f32; c * plane] } else { Vec::new() };
                let mut d_t = if need_t { vec![0.0f32; c * plane] } else { Vec::new() };
                let mut ls = vec![0.0f32; c];
                let mut lt = vec![0.0f32; c];
                for pix in 0..plane {
                    log_softmax_lane(&s, pix, c, plane, &mut ls);
                    log_softmax_lane(&t, pix, c, plane, &mut lt);
                    let cell_kl: f32 =
                        (0..c).map(|ci| ls[ci].exp() * (ls[ci] - lt[ci])).sum();
                    for ci in 0..c {
                        let p = ls[ci].exp();
                        if need_s {
                            d_s[ci * plane + pix] = g[0] * p * (ls[ci] - lt[ci] - cell_kl);
                        }
                        if need_t {
                            d_t[ci * plane + pix] = g[0] * (lt[ci].exp() - p);
                        }
                    }
                }
                drop(s);
                drop(t);
                if need_s {
                    student.accumulate_grad(&d_s);
                }
                if need_t {
                    teacher.accumulate_grad(&d_t);
                }
            }),
        );
    }
    Ok(output)
}
