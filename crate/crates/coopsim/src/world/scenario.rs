use std::fs;
use std::io;
use std::path::Path;

use crate::rng::{streams, SimRng};

use super::{Frame, ObjectState, Pose2D, Scenario, ScenarioConfig, WorldError};

struct Mover {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    drift: f64,
    drift_rate: f64,
}

impl Mover {
    fn pose(&self) -> Pose2D {
        Pose2D::new(self.x, self.y, self.vy.atan2(self.vx) + self.drift)
    }

    /// Constant-velocity step, reflecting at the map boundary. The reflected
    /// displacement never exceeds the free-flight displacement.
    fn step(&mut self, dt: f64, half_extent: f64) {
        self.x += self.vx * dt;
        self.y += self.vy * dt;
        if self.x > half_extent {
            self.x = 2.0 * half_extent - self.x;
            self.vx = -self.vx;
        } else if self.x < -half_extent {
            self.x = -2.0 * half_extent - self.x;
            self.vx = -self.vx;
        }
        if self.y > half_extent {
            self.y = 2.0 * half_extent - self.y;
            self.vy = -self.vy;
        } else if self.y < -half_extent {
            self.y = -2.0 * half_extent - self.y;
            self.vy = -self.vy;
        }
        self.drift += self.drift_rate * dt;
    }
}

fn sample_mover(rng: &mut SimRng, half: f64, speed_lo: f64, speed_hi: f64, drift_max: f64) -> Mover {
    let x = rng.range_f64(-half, half);
    let y = rng.range_f64(-half, half);
    let heading = rng.range_f64(-std::f64::consts::PI, std::f64::consts::PI);
    let speed = rng.range_f64(speed_lo, speed_hi);
    Mover {
        x,
        y,
        vx: speed * heading.cos(),
        vy: speed * heading.sin(),
        drift: 0.0,
        drift_rate: rng.range_f64(-drift_max, drift_max),
    }
}

/// Deterministic scenario synthesis. Objects follow constant-velocity motion
/// with a bounded yaw drift; vehicle agents follow smooth constant-velocity
/// trajectories; roadside units are static.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, WorldError> {
    let n_nodes = config.n_nodes();
    if n_nodes == 0 {
        return Err(WorldError::InvalidConfig("at least one agent is required".into()));
    }
    if !(2..=7).contains(&n_nodes) {
        return Err(WorldError::InvalidConfig(format!(
            "node count {n_nodes} outside the supported 2..=7 range"
        )));
    }
    if config.frames == 0 {
        return Err(WorldError::InvalidConfig("at least one frame is required".into()));
    }
    if config.map_half_extent <= 0.0 || config.dt <= 0.0 {
        return Err(WorldError::InvalidConfig("map extent and dt must be positive".into()));
    }

    let half = config.map_half_extent;
    let placement_half = (half - 1.0).max(0.5);

    // Objects: rejection-sample centers for a minimum separation so scenes
    // are not degenerate piles.
    let mut obj_rng = SimRng::from_key(&[seed, streams::OBJECTS]);
    let mut movers: Vec<Mover> = Vec::with_capacity(config.n_objects);
    let mut dims: Vec<(f64, f64)> = Vec::with_capacity(config.n_objects);
    for _ in 0..config.n_objects {
        let mut candidate = sample_mover(
            &mut obj_rng,
            placement_half,
            0.3 * config.object_speed_max,
            config.object_speed_max,
            config.yaw_rate_max,
        );
        for _attempt in 0..64 {
            let too_close = movers.iter().any(|m| {
                let (dx, dy) = (m.x - candidate.x, m.y - candidate.y);
                (dx * dx + dy * dy).sqrt() < 3.0
            });
            if !too_close {
                break;
            }
            candidate = sample_mover(
                &mut obj_rng,
                placement_half,
                0.3 * config.object_speed_max,
                config.object_speed_max,
                config.yaw_rate_max,
            );
        }
        let length = obj_rng.range_f64(4.2, 4.8);
        let width = obj_rng.range_f64(1.8, 2.1);
        movers.push(candidate);
        dims.push((length, width));
    }

    // Agents: moving vehicles then static roadside units.
    let mut agent_rng = SimRng::from_key(&[seed, streams::AGENTS]);
    let mut vehicles: Vec<Mover> = (0..config.n_vehicles)
        .map(|_| {
            sample_mover(&mut agent_rng, placement_half, 0.2 * config.agent_speed_max, config.agent_speed_max, 0.0)
        })
        .collect();
    let rsu_poses: Vec<Pose2D> = (0..config.n_rsu)
        .map(|_| {
            Pose2D::new(
                agent_rng.range_f64(-placement_half, placement_half),
                agent_rng.range_f64(-placement_half, placement_half),
                agent_rng.range_f64(-std::f64::consts::PI, std::f64::consts::PI),
            )
        })
        .collect();

    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        if t > 0 {
            for m in movers.iter_mut() {
                m.step(config.dt, half);
            }
            for v in vehicles.iter_mut() {
                v.step(config.dt, half);
            }
        }
        let mut agent_poses: Vec<Pose2D> = vehicles.iter().map(|v| v.pose()).collect();
        agent_poses.extend(rsu_poses.iter().copied());
        let objects = movers
            .iter()
            .zip(&dims)
            .enumerate()
            .map(|(id, (m, &(length, width)))| ObjectState {
                id: id as u32,
                pose: m.pose(),
                length,
                width,
                velocity: (m.vx, m.vy),
                yaw_rate: m.drift_rate,
            })
            .collect();
        frames.push(Frame { t, agent_poses, objects });
    }

    Ok(Scenario { config: *config, seed, frames })
}

/// One JSON document per scenario.
pub fn save_scenario(path: &Path, scenario: &Scenario) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(scenario).expect("scenario serializes"))
}

pub fn load_scenario(path: &Path) -> io::Result<Scenario> {
    let json = fs::read_to_string(path)?;
    serde_json::from_str(&json).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
