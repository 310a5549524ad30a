use super::{NumericsError, Tensor};

/// Adam hyperparameters. The learning rate default matches the training
/// setup used throughout this project; the moment decays and epsilon are the
/// standard values.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.002, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Moment buffers are allocated to match `params` (by position); `step`
    /// must always be called with the same parameter list.
    pub fn new(cfg: AdamConfig, params: &[(String, Tensor)]) -> AdamState {
        AdamState {
            cfg,
            step: 0,
            m: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected in-place Adam update. Parameters whose gradient buffer
    /// is absent this step are treated as having zero gradient (their moments
    /// still decay). A non-finite gradient aborts, naming the parameter.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<(), NumericsError> {
        assert_eq!(params.len(), self.m.len(), "parameter list changed under AdamState");
        self.step += 1;
        let c1 = 1.0 - (self.cfg.beta1 as f64).powi(self.step as i32);
        let c2 = 1.0 - (self.cfg.beta2 as f64).powi(self.step as i32);
        let (inv_c1, inv_c2) = ((1.0 / c1) as f32, (1.0 / c2) as f32);

        for (idx, (name, p)) in params.iter().enumerate() {
            let grad = p.grad();
            if let Some(g) = &grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NumericsError::NonFinite {
                        context: format!("gradient of parameter '{name}'"),
                    });
                }
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[i] * inv_c1;
                let v_hat = v[i] * inv_c2;
                data[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
