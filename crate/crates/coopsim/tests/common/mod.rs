//! Shared test infrastructure: independent f64 reference implementations
//! (oracles) of every differentiable op and of the evaluation metrics, plus
//! the finite-difference gradient-check harness. The oracles deliberately do
//! not call into the crate's forward paths.

#![allow(dead_code)]

pub mod suites;

use coopsim::numerics::{Tape, Tensor};
use coopsim::rng::SimRng;

/// f64 reference implementations.
pub mod oracle {
    /// Nested-loop 2D cross-correlation with zero padding, floor output
    /// sizing, f64 accumulation.
    pub fn conv2d(
        input: &[f64],
        (cin, h, w): (usize, usize, usize),
        kernel: &[f64],
        (cout, kh, kw): (usize, usize, usize),
        bias: &[f64],
        stride: usize,
        pad: usize,
    ) -> (Vec<f64>, (usize, usize, usize)) {
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0f64; cout * oh * ow];
        for co in 0..cout {
            for row in 0..oh {
                for col in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for r in 0..kh {
                            for s in 0..kw {
                                let ih = (row * stride + r) as isize - pad as isize;
                                let iw = (col * stride + s) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                acc += input[(ci * h + ih as usize) * w + iw as usize]
                                    * kernel[((co * cin + ci) * kh + r) * kw + s];
                            }
                        }
                    }
                    out[(co * oh + row) * ow + col] = acc;
                }
            }
        }
        (out, (cout, oh, ow))
    }

    /// Per-cell temporal correlation over `[T,C,H,W]` with a `[C,kt]`
    /// kernel, stride `s`, right-aligned windows (matching the crate's
    /// convention: when frames must drop, the oldest go first).
    pub fn conv1d_time(
        input: &[f64],
        (t_in, c, h, w): (usize, usize, usize, usize),
        kernel: &[f64],
        kt: usize,
        stride: usize,
    ) -> (Vec<f64>, usize) {
        let t_out = (t_in - kt) / stride + 1;
        let start = t_in - kt - (t_out - 1) * stride;
        let plane = h * w;
        let mut out = vec![0.0f64; t_out * c * plane];
        for j in 0..t_out {
            for ci in 0..c {
                for pix in 0..plane {
                    let mut acc = 0.0;
                    for tau in 0..kt {
                        let tsrc = start + j * stride + tau;
                        acc += kernel[ci * kt + tau] * input[(tsrc * c + ci) * plane + pix];
                    }
                    out[(j * c + ci) * plane + pix] = acc;
                }
            }
        }
        (out, t_out)
    }

    pub fn relu(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| v.max(0.0)).collect()
    }

    pub fn sigmoid(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
    }

    /// Softmax along `axis` of an arbitrary shape.
    pub fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0f64; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mx = (0..n).map(|j| x[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (x[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= sum;
                }
            }
        }
        out
    }

    pub fn bce_mean(pred: &[f64], target: &[f64]) -> f64 {
        let eps = 1e-7f64;
        let n = pred.len() as f64;
        pred.iter()
            .zip(target)
            .map(|(&p, &y)| {
                let pc = p.clamp(eps, 1.0 - eps);
                -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n
    }

    pub fn smooth_l1(d: f64) -> f64 {
        let a = d.abs();
        if a < 1.0 {
            0.5 * d * d
        } else {
            a - 0.5
        }
    }

    pub fn smooth_l1_mean(pred: &[f64], target: &[f64]) -> f64 {
        pred.iter().zip(target).map(|(p, t)| smooth_l1(p - t)).sum::<f64>() / pred.len() as f64
    }

    /// Masked smooth-L1 mean over `[K,H,W]` against a `[H*W]` mask,
    /// averaged over K * n_foreground components.
    pub fn smooth_l1_masked_mean(pred: &[f64], target: &[f64], mask: &[f64], k: usize) -> f64 {
        let plane = mask.len();
        let n_fg: f64 = mask.iter().sum();
        if n_fg == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for ci in 0..k {
            for pix in 0..plane {
                if mask[pix] != 0.0 {
                    acc += smooth_l1(pred[ci * plane + pix] - target[ci * plane + pix]);
                }
            }
        }
        acc / (n_fg * k as f64)
    }

    /// Channelwise KL of `[C, plane]` maps: per-cell softmax over channels,
    /// `D_KL(student || teacher)` summed over cells.
    pub fn kl_channelwise(student: &[f64], teacher: &[f64], c: usize, plane: usize) -> f64 {
        let mut total = 0.0;
        for pix in 0..plane {
            let lane = |data: &[f64]| -> Vec<f64> {
                let vals: Vec<f64> = (0..c).map(|ci| data[ci * plane + pix]).collect();
                let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = vals.iter().map(|v| (v - mx).exp()).sum();
                vals.iter().map(|v| (v - mx).exp() / sum).collect()
            };
            let p = lane(student);
            let q = lane(teacher);
            for ci in 0..c {
                total += p[ci] * (p[ci].ln() - q[ci].ln());
            }
        }
        total
    }

    pub fn mean0(x: &[f64], t: usize) -> Vec<f64> {
        let block = x.len() / t;
        let mut out = vec![0.0f64; block];
        for j in 0..t {
            for i in 0..block {
                out[i] += x[j * block + i];
            }
        }
        for o in out.iter_mut() {
            *o /= t as f64;
        }
        out
    }

    pub fn upsample2x(x: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
        let mut out = vec![0.0f64; c * 4 * h * w];
        for ci in 0..c {
            for row in 0..2 * h {
                for col in 0..2 * w {
                    out[(ci * 2 * h + row) * 2 * w + col] = x[(ci * h + row / 2) * w + col / 2];
                }
            }
        }
        out
    }

    pub fn gather_cells(x: &[f64], c: usize, map: &[i64]) -> Vec<f64> {
        let plane = map.len();
        let mut out = vec![0.0f64; c * plane];
        for ci in 0..c {
            for (d, &m) in map.iter().enumerate() {
                if m >= 0 {
                    out[ci * plane + d] = x[ci * plane + m as usize];
                }
            }
        }
        out
    }

    pub fn mul_mask(feat: &[f64], mask: &[f64], c: usize) -> Vec<f64> {
        let plane = mask.len();
        let mut out = vec![0.0f64; c * plane];
        for ci in 0..c {
            for pix in 0..plane {
                out[ci * plane + pix] = feat[ci * plane + pix] * mask[pix];
            }
        }
        out
    }

    /// Reference Adam recurrence (f64): returns theta after each step.
    pub fn adam_trace(
        theta0: &[f64],
        grads: &[Vec<f64>],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Vec<Vec<f64>> {
        let n = theta0.len();
        let mut theta = theta0.to_vec();
        let mut m = vec![0.0f64; n];
        let mut v = vec![0.0f64; n];
        let mut out = Vec::with_capacity(grads.len());
        for (step, g) in grads.iter().enumerate() {
            let t = (step + 1) as i32;
            for i in 0..n {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / (1.0 - beta1.powi(t));
                let v_hat = v[i] / (1.0 - beta2.powi(t));
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            out.push(theta.clone());
        }
        out
    }

    // ---- 7-state Kalman reference (no nalgebra) --------------------------

    pub type M7 = [[f64; 7]; 7];

    pub fn mat7_mul(a: &M7, b: &M7) -> M7 {
        let mut out = [[0.0; 7]; 7];
        for i in 0..7 {
            for k in 0..7 {
                if a[i][k] == 0.0 {
                    continue;
                }
                for j in 0..7 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    pub fn mat7_transpose(a: &M7) -> M7 {
        let mut out = [[0.0; 7]; 7];
        for i in 0..7 {
            for j in 0..7 {
                out[j][i] = a[i][j];
            }
        }
        out
    }

    pub fn kf_predict(state: &mut [f64; 7], cov: &mut M7, dt: f64, q_diag: &[f64; 7]) {
        let mut f = [[0.0; 7]; 7];
        for (i, row) in f.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        f[0][5] = dt;
        f[1][6] = dt;
        let mut new_state = [0.0; 7];
        for i in 0..7 {
            for j in 0..7 {
                new_state[i] += f[i][j] * state[j];
            }
        }
        *state = new_state;
        let mut p = mat7_mul(&mat7_mul(&f, cov), &mat7_transpose(&f));
        for i in 0..7 {
            p[i][i] += q_diag[i];
        }
        *cov = p;
    }

    fn inv5(a: [[f64; 5]; 5]) -> Option<[[f64; 5]; 5]> {
        let mut m = [[0.0f64; 10]; 5];
        for i in 0..5 {
            m[i][..5].copy_from_slice(&a[i]);
            m[i][5 + i] = 1.0;
        }
        for col in 0..5 {
            let pivot = (col..5).max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())?;
            if m[pivot][col].abs() < 1e-300 {
                return None;
            }
            m.swap(col, pivot);
            let d = m[col][col];
            for v in m[col].iter_mut() {
                *v /= d;
            }
            for row in 0..5 {
                if row != col {
                    let factor = m[row][col];
                    for j in 0..10 {
                        m[row][j] -= factor * m[col][j];
                    }
                }
            }
        }
        let mut out = [[0.0; 5]; 5];
        for i in 0..5 {
            out[i].copy_from_slice(&m[i][5..]);
        }
        Some(out)
    }

    fn wrap_angle(a: f64) -> f64 {
        let mut a = a.rem_euclid(std::f64::consts::TAU);
        if a > std::f64::consts::PI {
            a -= std::f64::consts::TAU;
        }
        a
    }

    /// Joseph-form update against measurement (x, y, yaw, w, l).
    pub fn kf_update(state: &mut [f64; 7], cov: &mut M7, z: &[f64; 5], r_diag: &[f64; 5]) {
        // innovation
        let mut y = [0.0f64; 5];
        for i in 0..5 {
            y[i] = z[i] - state[i];
        }
        y[2] = wrap_angle(y[2]);
        // S = P[0..5, 0..5] + R
        let mut s = [[0.0f64; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                s[i][j] = cov[i][j];
            }
            s[i][i] += r_diag[i];
        }
        let s_inv = inv5(s).expect("oracle S must be invertible in tests");
        // K = P H^T S^-1, with H = [I5 | 0]: P H^T is cov[:, 0..5].
        let mut k = [[0.0f64; 5]; 7];
        for i in 0..7 {
            for j in 0..5 {
                for l in 0..5 {
                    k[i][j] += cov[i][l] * s_inv[l][j];
                }
            }
        }
        for i in 0..7 {
            for j in 0..5 {
                state[i] += k[i][j] * y[j];
            }
        }
        state[2] = wrap_angle(state[2]);
        // Joseph: P = (I - K H) P (I - K H)^T + K R K^T
        let mut ikh = [[0.0f64; 7]; 7];
        for (i, row) in ikh.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for i in 0..7 {
            for j in 0..5 {
                ikh[i][j] -= k[i][j];
            }
        }
        let mut p = mat7_mul(&mat7_mul(&ikh, cov), &mat7_transpose(&ikh));
        for i in 0..7 {
            for j in 0..7 {
                let mut krk = 0.0;
                for l in 0..5 {
                    krk += k[i][l] * r_diag[l] * k[j][l];
                }
                p[i][j] += krk;
            }
        }
        *cov = p;
    }

    // ---- brute-force assignment & AP -------------------------------------

    /// Minimum assignment cost by enumerating all permutations (n <= ~8).
    pub fn assignment_bruteforce(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let m = cost[0].len();
        assert!(n <= m, "oracle expects rows <= cols");
        let mut cols: Vec<usize> = (0..m).collect();
        let mut best = f64::INFINITY;
        permute(&mut cols, 0, &mut |perm| {
            let total: f64 = (0..n).map(|i| cost[i][perm[i]]).sum();
            if total < best {
                best = total;
            }
        });
        best
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }
}

// ---- finite-difference gradient checking ----------------------------------

pub struct GradCheckCfg {
    pub tol: f64,
    pub floor: f64,
    pub h: f64,
    /// For deep ReLU networks: skip elements whose one-sided differences
    /// disagree by more than this ratio (a kink sits inside the probe
    /// window, where no finite-difference estimate is meaningful). `None`
    /// uses a two-step-size consistency gate instead, appropriate for
    /// shallow smooth ops.
    pub kink_ratio: Option<f64>,
}

impl Default for GradCheckCfg {
    fn default() -> Self {
        GradCheckCfg { tol: 1e-4, floor: 1e-2, h: 1e-3, kink_ratio: None }
    }
}

/// Compare analytic f32 gradients against central finite differences of an
/// independent f64 loss. Input data is quantized to f32 first so both paths
/// evaluate the same point.
pub fn check_grads(
    label: &str,
    inputs: &[(Vec<usize>, Vec<f64>)],
    forward_f32: impl Fn(&mut Tape, &[Tensor]) -> Tensor,
    loss_f64: impl Fn(&[Vec<f64>]) -> f64,
    cfg: &GradCheckCfg,
) {
    // Quantize through f32.
    let data64: Vec<Vec<f64>> = inputs
        .iter()
        .map(|(_, d)| d.iter().map(|&v| v as f32 as f64).collect())
        .collect();
    let tensors: Vec<Tensor> = inputs
        .iter()
        .zip(&data64)
        .map(|((shape, _), d)| {
            Tensor::param(shape, d.iter().map(|&v| v as f32).collect()).expect("gradcheck input")
        })
        .collect();

    let mut tape = Tape::recording();
    let loss = forward_f32(&mut tape, &tensors);
    assert_eq!(loss.numel(), 1, "{label}: forward must produce a scalar");
    let f32_loss = loss.value() as f64;
    let f64_loss_at_base = loss_f64(&data64);
    assert!(
        (f32_loss - f64_loss_at_base).abs() <= 1e-4 * f64_loss_at_base.abs().max(1.0),
        "{label}: f32 forward {f32_loss} disagrees with f64 oracle {f64_loss_at_base}"
    );
    tape.backward(&loss).expect("backward");

    // Probes that straddle a non-smooth point (ReLU kink, clamp boundary)
    // have no meaningful finite-difference estimate and are skipped — but
    // only a small fraction may be.
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for (ti, tensor) in tensors.iter().enumerate() {
        let analytic = tensor
            .grad()
            .unwrap_or_else(|| panic!("{label}: input {ti} received no gradient"));
        for e in 0..analytic.len() {
            let eval_at = |h: f64| -> f64 {
                let mut shifted = data64.clone();
                shifted[ti][e] += h;
                loss_f64(&shifted)
            };
            let a = analytic[e] as f64;
            checked += 1;
            let fd;
            match cfg.kink_ratio {
                Some(ratio) => {
                    // One-sided slopes split at the base point: a kink inside
                    // the window makes them disagree while the central
                    // difference silently averages the two sides.
                    let f_plus = eval_at(cfg.h);
                    let f_minus = eval_at(-cfg.h);
                    let fwd = (f_plus - f64_loss_at_base) / cfg.h;
                    let bwd = (f64_loss_at_base - f_minus) / cfg.h;
                    fd = (f_plus - f_minus) / (2.0 * cfg.h);
                    let denom = a.abs().max(fd.abs()).max(cfg.floor);
                    if (fwd - bwd).abs() / denom > ratio {
                        skipped += 1;
                        continue;
                    }
                }
                None => {
                    // Two-step-size consistency gate.
                    let fd1 = (eval_at(cfg.h) - eval_at(-cfg.h)) / (2.0 * cfg.h);
                    let fd2 = (eval_at(cfg.h / 2.0) - eval_at(-cfg.h / 2.0)) / cfg.h;
                    let denom = a.abs().max(fd2.abs()).max(cfg.floor);
                    if (fd1 - fd2).abs() / denom > cfg.tol {
                        skipped += 1;
                        continue;
                    }
                    fd = fd2;
                }
            }
            let denom = a.abs().max(fd.abs()).max(cfg.floor);
            let rel = (a - fd).abs() / denom;
            assert!(
                rel < cfg.tol,
                "{label}: input {ti} element {e}: analytic {a} vs fd {fd} (rel {rel:.2e})"
            );
        }
    }
    assert!(
        skipped * 10 <= checked,
        "{label}: {skipped}/{checked} elements sat on non-smooth points; inputs too kinky"
    );
}

/// Random vector in [lo, hi).
pub fn rand_vec(rng: &mut SimRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.range_f64(lo, hi)).collect()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    cov / (vx.sqrt() * vy.sqrt()).max(1e-12)
}
