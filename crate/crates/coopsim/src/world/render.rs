use std::collections::BTreeSet;

use crate::numerics::Tensor;
use crate::pipeline::DetBox;

use super::{Frame, ObjectState, Pose2D, SensorConfig, WorldError};

/// Per-agent occupancy observation: binary grid over the ego-centered,
/// ego-aligned square window.
pub struct Observation {
    pub owner: usize,
    /// `[1, H, W]`, values in {0, 1}. Row index follows ego-frame y, column
    /// index ego-frame x.
    pub grid: Tensor,
}

/// Oriented rectangle in some planar frame.
#[derive(Clone, Copy)]
struct Rect {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    half_l: f64,
    half_w: f64,
}

impl Rect {
    fn from_object_in(pose: &Pose2D, obj: &ObjectState) -> Rect {
        let (cx, cy) = pose.world_to_local((obj.pose.x, obj.pose.y));
        let yaw = obj.pose.yaw - pose.yaw;
        Rect {
            cx,
            cy,
            cos: yaw.cos(),
            sin: yaw.sin(),
            half_l: obj.length / 2.0,
            half_w: obj.width / 2.0,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        u.abs() <= self.half_l && v.abs() <= self.half_w
    }

    /// Does the open segment from `a` to `b` cross this rectangle strictly
    /// before reaching `b`? Slab test in the rectangle's local frame.
    fn blocks_segment(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let to_local = |p: (f64, f64)| {
            let (dx, dy) = (p.0 - self.cx, p.1 - self.cy);
            (self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy)
        };
        let (ax, ay) = to_local(a);
        let (bx, by) = to_local(b);
        let (dx, dy) = (bx - ax, by - ay);
        let mut tmin = f64::NEG_INFINITY;
        let mut tmax = f64::INFINITY;
        for (origin, dir, half) in [(ax, dx, self.half_l), (ay, dy, self.half_w)] {
            if dir.abs() < 1e-12 {
                if origin.abs() > half {
                    return false;
                }
            } else {
                let t1 = (-half - origin) / dir;
                let t2 = (half - origin) / dir;
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                tmin = tmin.max(lo);
                tmax = tmax.min(hi);
                if tmin > tmax {
                    return false;
                }
            }
        }
        // Intersection must lie strictly inside the open segment: past the
        // owner (t > 0) and before the target cell (entry t < 1).
        tmax > 1e-9 && tmin < 1.0 - 1e-6
    }
}

fn check_node(frame: &Frame, node: usize) -> Result<(), WorldError> {
    if node >= frame.agent_poses.len() {
        return Err(WorldError::NodeOutOfRange { node, count: frame.agent_poses.len() });
    }
    Ok(())
}

/// Rasterize object footprints into the ego grid with range limiting and
/// hard occlusion: a footprint cell is occupied iff its center is inside the
/// object, within `max_range` of the owner, and the ray from the owner to
/// the cell center crosses no other object first.
pub fn render_observation(
    frame: &Frame,
    node: usize,
    sensor: &SensorConfig,
) -> Result<Observation, WorldError> {
    let (grid, _) = render_detailed(frame, node, sensor)?;
    Ok(Observation { owner: node, grid })
}

/// Ids of objects contributing at least one visible cell to `node`'s grid.
pub fn visible_objects(
    frame: &Frame,
    node: usize,
    sensor: &SensorConfig,
) -> Result<BTreeSet<u32>, WorldError> {
    let (_, visible) = render_detailed(frame, node, sensor)?;
    Ok(visible)
}

fn render_detailed(
    frame: &Frame,
    node: usize,
    sensor: &SensorConfig,
) -> Result<(Tensor, BTreeSet<u32>), WorldError> {
    check_node(frame, node)?;
    let size = sensor.grid_size()?;
    let cell = sensor.cell_m;
    let half_window = sensor.window_m / 2.0;
    let ego = frame.agent_poses[node];

    let rects: Vec<Rect> = frame.objects.iter().map(|o| Rect::from_object_in(&ego, o)).collect();
    let mut grid = vec![0.0f32; size * size];
    let mut visible = BTreeSet::new();

    for (oi, rect) in rects.iter().enumerate() {
        // Candidate cell window from the rectangle's bounding box.
        let reach = rect.half_l.hypot(rect.half_w);
        let jmin = (((rect.cx - reach + half_window) / cell).floor().max(0.0)) as usize;
        let jmax = (((rect.cx + reach + half_window) / cell).ceil()).min(size as f64) as usize;
        let imin = (((rect.cy - reach + half_window) / cell).floor().max(0.0)) as usize;
        let imax = (((rect.cy + reach + half_window) / cell).ceil()).min(size as f64) as usize;

        for i in imin..imax {
            let y = (i as f64 + 0.5) * cell - half_window;
            for j in jmin..jmax {
                let x = (j as f64 + 0.5) * cell - half_window;
                if !rect.contains(x, y) {
                    continue;
                }
                if x.hypot(y) > sensor.max_range {
                    continue;
                }
                let occluded = rects
                    .iter()
                    .enumerate()
                    .any(|(ok, other)| ok != oi && other.blocks_segment((0.0, 0.0), (x, y)));
                if occluded {
                    continue;
                }
                grid[i * size + j] = 1.0;
                visible.insert(frame.objects[oi].id);
            }
        }
    }

    let tensor = Tensor::from_vec(&[1, size, size], grid).expect("grid shape consistent");
    Ok((tensor, visible))
}

/// All objects whose centers fall inside the ego-centered window, expressed
/// in ego coordinates — occluded or not (cooperative ground truth).
pub fn ground_truth_boxes(
    frame: &Frame,
    node: usize,
    window_m: f64,
) -> Result<Vec<DetBox>, WorldError> {
    check_node(frame, node)?;
    let ego = frame.agent_poses[node];
    let half = window_m / 2.0;
    let mut boxes = Vec::new();
    for obj in &frame.objects {
        let (x, y) = ego.world_to_local((obj.pose.x, obj.pose.y));
        if x >= -half && x < half && y >= -half && y < half {
            boxes.push(DetBox {
                cx: x,
                cy: y,
                width: obj.width,
                length: obj.length,
                yaw: super::canonical_box_yaw(obj.pose.yaw - ego.yaw),
                score: 1.0,
            });
        }
    }
    Ok(boxes)
}
