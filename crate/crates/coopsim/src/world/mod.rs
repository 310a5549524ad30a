//! Synthetic bird's-eye-view scenarios: timestamped world states, agent
//! poses, and per-agent occluded occupancy-grid observations standing in for
//! real sensor data. Generation is a pure function of (config, seed).

mod render;
mod scenario;

pub use render::{ground_truth_boxes, render_observation, visible_objects, Observation};
pub use scenario::{generate_scenario, load_scenario, save_scenario};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),
    #[error("node id {node} out of range (scene has {count} nodes)")]
    NodeOutOfRange { node: usize, count: usize },
}

/// Planar pose; yaw is normalized to (-pi, pi].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Normalize an angle to (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(std::f64::consts::TAU);
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// Canonical orientation of a rectangle: modulo pi, in [-pi/2, pi/2).
/// Rectangles are symmetric under half-turns, so this loses nothing, and it
/// keeps orientation regression well-posed (a footprint cannot reveal which
/// end is the front).
pub fn canonical_box_yaw(a: f64) -> f64 {
    let mut a = a.rem_euclid(std::f64::consts::PI);
    if a >= std::f64::consts::FRAC_PI_2 {
        a -= std::f64::consts::PI;
    }
    a
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Pose2D {
        Pose2D { x, y, yaw: normalize_angle(yaw) }
    }

    /// World point -> this pose's local frame.
    pub fn world_to_local(&self, p: (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (p.0 - self.x, p.1 - self.y);
        let (s, c) = self.yaw.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Local point in this pose's frame -> world.
    pub fn local_to_world(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * p.0 - s * p.1, self.y + s * p.0 + c * p.1)
    }
}

/// A detectable object: rectangular footprint moving at constant velocity
/// with a bounded yaw drift.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: u32,
    pub pose: Pose2D,
    pub length: f64,
    pub width: f64,
    pub velocity: (f64, f64),
    pub yaw_rate: f64,
}

/// One timestep of the world. Agent poses are indexed by node id: vehicles
/// first, then roadside units (whose poses are constant across frames).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub agent_poses: Vec<Pose2D>,
    pub objects: Vec<ObjectState>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_vehicles: usize,
    pub n_rsu: usize,
    pub n_objects: usize,
    /// Objects and agents stay within +/- this extent (meters).
    pub map_half_extent: f64,
    pub frames: usize,
    pub dt: f64,
    pub object_speed_max: f64,
    pub agent_speed_max: f64,
    pub yaw_rate_max: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_vehicles: 3,
            n_rsu: 1,
            n_objects: 12,
            map_half_extent: 24.0,
            frames: 20,
            dt: 0.1,
            object_speed_max: 8.0,
            agent_speed_max: 6.0,
            yaw_rate_max: 0.15,
        }
    }
}

impl ScenarioConfig {
    pub fn n_nodes(&self) -> usize {
        self.n_vehicles + self.n_rsu
    }
}

/// Sensor geometry shared by observations, feature maps, and evaluation: a
/// square window of side `window_m` centered on the owner, `cell_m` per
/// occupancy cell, visibility limited to `max_range`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SensorConfig {
    pub window_m: f64,
    pub cell_m: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { window_m: 51.2, cell_m: 0.4, max_range: 32.0 }
    }
}

impl SensorConfig {
    /// Observation grid side (cells); errors if the window is not a whole
    /// number of cells.
    pub fn grid_size(&self) -> Result<usize, WorldError> {
        let n = self.window_m / self.cell_m;
        let rounded = n.round();
        if (n - rounded).abs() > 1e-9 || rounded < 2.0 {
            return Err(WorldError::InvalidConfig(format!(
                "window {}m is not a whole number of {}m cells",
                self.window_m, self.cell_m
            )));
        }
        Ok(rounded as usize)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub frames: Vec<Frame>,
}
