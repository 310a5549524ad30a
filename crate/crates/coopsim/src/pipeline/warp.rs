use std::rc::Rc;

use crate::numerics::{gather_cells, Tape};
use crate::world::Pose2D;

use super::{FeatureMap, PipelineError};

/// Inverse-mapping index table: destination cell `d` (in the `dst_pose`
/// window) reads the source cell whose center contains the corresponding
/// world point, or -1 outside the source extent. Nearest-neighbor sampling.
pub fn warp_index_map(src_pose: &Pose2D, dst_pose: &Pose2D, size: usize, cell_m: f64) -> Rc<Vec<i64>> {
    let half = size as f64 * cell_m / 2.0;
    let mut map = Vec::with_capacity(size * size);
    for i in 0..size {
        let y = (i as f64 + 0.5) * cell_m - half;
        for j in 0..size {
            let x = (j as f64 + 0.5) * cell_m - half;
            let world = dst_pose.local_to_world((x, y));
            let (sx, sy) = src_pose.world_to_local(world);
            let col = ((sx + half) / cell_m).floor();
            let row = ((sy + half) / cell_m).floor();
            let idx = if col >= 0.0 && col < size as f64 && row >= 0.0 && row < size as f64 {
                row as i64 * size as i64 + col as i64
            } else {
                -1
            };
            map.push(idx);
        }
    }
    Rc::new(map)
}

/// Rigid resample of a feature map into `dst_pose`'s window (same extent and
/// resolution): zero fill outside the source, gradient passes through the
/// gathered values. Identical poses short-circuit to the exact same tensor.
pub fn warp_to(tape: &mut Tape, feat: &FeatureMap, dst_pose: Pose2D) -> Result<FeatureMap, PipelineError> {
    if feat.pose == dst_pose {
        return Ok(FeatureMap { pose: dst_pose, ..feat.clone() });
    }
    let size = feat.height();
    if feat.width() != size {
        return Err(PipelineError::Shape(format!(
            "warp expects square maps, got {}x{}",
            feat.height(),
            feat.width()
        )));
    }
    let map = warp_index_map(&feat.pose, &dst_pose, size, feat.cell_m());
    let data = gather_cells(tape, &feat.data, &map)?;
    Ok(FeatureMap {
        owner: feat.owner,
        timestep: feat.timestep,
        pose: dst_pose,
        extent_m: feat.extent_m,
        data,
    })
}
