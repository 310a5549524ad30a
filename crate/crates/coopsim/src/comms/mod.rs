//! Lossy V2X channel: each directed link (src -> dst) is independently
//! interrupted at each timestep with probability `p`. Outcomes come from
//! counter-based streams keyed by (seed, t, src, dst), so a trace is fully
//! determined by (topology, p, seed) regardless of query or build order.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{hash_key, keyed_bernoulli, streams, SimRng};

#[derive(Debug, Error)]
pub enum CommsError {
    #[error("invalid channel configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Packet drop rate in [0, 1]; endpoints are admitted as degenerate
    /// (always-deliver / never-deliver) cases.
    pub p: f64,
    pub seed: u64,
}

fn check_rate(p: f64) -> Result<(), CommsError> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(CommsError::InvalidConfig(format!("drop rate {p} outside [0, 1]")));
    }
    Ok(())
}

/// One Bernoulli link outcome: delivered with probability `1 - p`.
pub fn link_delivered(seed: u64, t: usize, src: usize, dst: usize, p: f64) -> bool {
    keyed_bernoulli(&[seed, streams::CHANNEL, t as u64, src as u64, dst as u64], 1.0 - p)
}

/// Received set for one node at one timestep: every neighbor is included
/// independently with probability `1 - p`.
pub fn sample_received_set(
    neighbors: &[usize],
    dst: usize,
    t: usize,
    p: f64,
    seed: u64,
) -> Result<Vec<usize>, CommsError> {
    check_rate(p)?;
    Ok(neighbors
        .iter()
        .copied()
        .filter(|&src| src != dst && link_delivered(seed, t, src, dst, p))
        .collect())
}

/// Materialized per-timestep, per-directed-link delivery outcomes.
#[derive(Clone, Debug)]
pub struct LinkTrace {
    n_nodes: usize,
    n_frames: usize,
    p: f64,
    seed: u64,
    delivered: Vec<bool>,
}

impl LinkTrace {
    /// Fully-connected topology over `n_nodes`.
    pub fn generate(n_nodes: usize, n_frames: usize, p: f64, seed: u64) -> Result<LinkTrace, CommsError> {
        check_rate(p)?;
        if n_nodes == 0 || n_frames == 0 {
            return Err(CommsError::InvalidConfig("trace needs nodes and frames".into()));
        }
        let mut delivered = vec![false; n_frames * n_nodes * n_nodes];
        for t in 0..n_frames {
            for dst in 0..n_nodes {
                for src in 0..n_nodes {
                    if src != dst {
                        delivered[(t * n_nodes + dst) * n_nodes + src] =
                            link_delivered(seed, t, src, dst, p);
                    }
                }
            }
        }
        Ok(LinkTrace { n_nodes, n_frames, p, seed, delivered })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn drop_rate(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn delivered(&self, t: usize, src: usize, dst: usize) -> bool {
        debug_assert!(t < self.n_frames && src < self.n_nodes && dst < self.n_nodes);
        self.delivered[(t * self.n_nodes + dst) * self.n_nodes + src]
    }

    /// R_dst(t): senders whose message arrived at `dst` this timestep,
    /// ascending.
    pub fn received_set(&self, dst: usize, t: usize) -> Vec<usize> {
        (0..self.n_nodes)
            .filter(|&src| src != dst && self.delivered(t, src, dst))
            .collect()
    }

    /// P_dst(t): union of received sets over the past `k` timesteps
    /// (t-1 .. t-k), truncated at the scenario start. Empty at t = 0.
    pub fn past_contact_set(&self, dst: usize, t: usize, k: usize) -> Vec<usize> {
        let mut present = vec![false; self.n_nodes];
        for tau in 1..=k {
            if tau > t {
                break;
            }
            for src in self.received_set(dst, t - tau) {
                present[src] = true;
            }
        }
        (0..self.n_nodes).filter(|&i| present[i]).collect()
    }

    /// Empirical delivery frequency over all links and timesteps.
    pub fn delivery_rate(&self) -> f64 {
        let links = self.n_nodes * (self.n_nodes - 1);
        if links == 0 {
            return 0.0;
        }
        let hits = self.delivered.iter().filter(|&&d| d).count();
        hits as f64 / (links * self.n_frames) as f64
    }

    /// Audit export: one row per (t, src, dst) directed link.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,src,dst,delivered")?;
        for t in 0..self.n_frames {
            for src in 0..self.n_nodes {
                for dst in 0..self.n_nodes {
                    if src != dst {
                        writeln!(out, "{t},{src},{dst},{}", u8::from(self.delivered(t, src, dst)))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-epoch interruption-probability bounds that widen over training: the
/// upper bound ramps linearly from `p_high_start` to `p_high_end` across the
/// first `ramp_epochs`, then stays at `p_high_end`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub epochs: usize,
    pub ramp_epochs: usize,
    pub p_low: f64,
    pub p_high_start: f64,
    pub p_high_end: f64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            epochs: 40,
            ramp_epochs: 30,
            p_low: 0.0,
            p_high_start: 0.1,
            p_high_end: 1.0,
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<(), CommsError> {
        check_rate(self.p_low)?;
        check_rate(self.p_high_start)?;
        check_rate(self.p_high_end)?;
        if self.p_high_start < self.p_low || self.p_high_end < self.p_high_start {
            return Err(CommsError::InvalidConfig(
                "curriculum bounds must satisfy p_low <= p_high_start <= p_high_end".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(CommsError::InvalidConfig("curriculum needs at least one epoch".into()));
        }
        Ok(())
    }

    /// `(p_low, p_high)` for the given epoch; `p_high` is non-decreasing.
    pub fn bounds(&self, epoch: usize) -> (f64, f64) {
        let high = if self.ramp_epochs <= 1 || epoch + 1 >= self.ramp_epochs {
            self.p_high_end
        } else {
            let frac = epoch as f64 / (self.ramp_epochs - 1) as f64;
            self.p_high_start + frac * (self.p_high_end - self.p_high_start)
        };
        (self.p_low, high)
    }
}

/// Interruption probability for one training iteration: uniform on the
/// epoch's `[p_low, p_high]` range, keyed by (seed, epoch, iteration).
pub fn curriculum_sample_p(
    schedule: &CurriculumSchedule,
    epoch: usize,
    iteration: u64,
    seed: u64,
) -> f64 {
    let (lo, hi) = schedule.bounds(epoch);
    let mut rng =
        SimRng::from_key(&[seed, streams::CURRICULUM, epoch as u64, iteration]);
    rng.range_f64(lo, hi)
}

/// Seed for a per-(epoch, iteration) link trace during training.
pub fn trace_seed(seed: u64, epoch: usize, iteration: u64) -> u64 {
    hash_key(&[seed, streams::TRACE, epoch as u64, iteration])
}
