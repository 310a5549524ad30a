//! Desk-scale, deterministic multi-agent cooperative-perception testbed.
//!
//! The crate simulates a set of cooperation nodes (vehicles and roadside
//! units) that perceive a shared synthetic bird's-eye-view scene, exchange
//! encoded feature maps over a lossy channel, and recover information lost
//! to packet drops from their own cooperation history. It contains:
//!
//! - [`numerics`]: a minimal reverse-mode autodiff tensor engine (conv2d,
//!   temporal conv1d, activations, losses, Adam) used by every learned
//!   component.
//! - [`world`]: the synthetic scenario generator and occupancy-grid sensor
//!   model (range-limited, hard occlusion).
//! - [`comms`]: per-link Bernoulli interruption sampling, link traces, and
//!   the curriculum schedule over interruption probability.
//! - [`pipeline`]: the per-node perception stack — encoder, feature warp,
//!   spatial-attentive fusion, detection decoder, box post-processing.
//! - [`recovery`]: history buffering and the multi-scale spatial-temporal
//!   predictor that synthesizes a pseudo-contributor feature.
//! - [`training`]: loss assembly, teacher guidance, knowledge distillation,
//!   and the curriculum training loop.
//! - [`baseline`]: the Kalman-filter late-fusion baseline (constant-velocity
//!   tracks, Hungarian association, coasting recovery).
//! - [`eval`]: rotated-box average precision, sweep drivers, and CSV/manifest
//!   persistence used by the `coopsim` binary.
//!
//! Everything is reproducible from explicit seeds: scenario generation, link
//! traces, weight init, and training produce byte-identical artifacts across
//! runs.

pub mod baseline;
pub mod comms;
pub mod config;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod recovery;
pub mod rng;
pub mod system;
pub mod training;
pub mod world;
