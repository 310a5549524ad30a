use crate::world::SensorConfig;

use super::{rotated_iou, DetBox, DetectionMap, PipelineError};

/// Feature-grid geometry: `size` x `size` cells of `cell_m` meters, centered
/// on the ego pose.
#[derive(Clone, Copy, Debug)]
pub struct GridGeom {
    pub size: usize,
    pub cell_m: f64,
}

impl GridGeom {
    /// Geometry of feature maps produced from this sensor's observations
    /// (encoder downsamples by 2).
    pub fn feature_grid(sensor: &SensorConfig) -> Result<GridGeom, PipelineError> {
        let obs = sensor.grid_size().map_err(|e| PipelineError::Config(e.to_string()))?;
        if obs % 2 != 0 {
            return Err(PipelineError::Config(format!(
                "observation grid size {obs} must be even to downsample"
            )));
        }
        Ok(GridGeom { size: obs / 2, cell_m: sensor.cell_m * 2.0 })
    }

    pub fn window_m(&self) -> f64 {
        self.size as f64 * self.cell_m
    }

    /// Ego-frame coordinates of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = self.window_m() / 2.0;
        ((col as f64 + 0.5) * self.cell_m - half, (row as f64 + 0.5) * self.cell_m - half)
    }

    /// Cell containing an ego-frame point, if inside the window.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let half = self.window_m() / 2.0;
        let col = ((x + half) / self.cell_m).floor();
        let row = ((y + half) / self.cell_m).floor();
        if col >= 0.0 && col < self.size as f64 && row >= 0.0 && row < self.size as f64 {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }
}

/// Decode raw classification/regression grids into scored boxes and apply
/// greedy rotated NMS.
pub fn postprocess_grids(
    cls: &[f32],
    reg: &[f32],
    geom: &GridGeom,
    conf_thresh: f64,
    nms_iou: f64,
) -> Vec<DetBox> {
    let n = geom.size * geom.size;
    debug_assert_eq!(cls.len(), n);
    debug_assert_eq!(reg.len(), 6 * n);
    let mut boxes = Vec::new();
    for idx in 0..n {
        let score = cls[idx] as f64;
        if score < conf_thresh {
            continue;
        }
        let (row, col) = (idx / geom.size, idx % geom.size);
        let (cx0, cy0) = geom.cell_center(row, col);
        let dx = reg[idx] as f64;
        let dy = reg[n + idx] as f64;
        let log_w = (reg[2 * n + idx] as f64).clamp(-8.0, 8.0);
        let log_l = (reg[3 * n + idx] as f64).clamp(-8.0, 8.0);
        let sin_yaw = reg[4 * n + idx] as f64;
        let cos_yaw = reg[5 * n + idx] as f64;
        boxes.push(DetBox {
            cx: cx0 + dx * geom.cell_m,
            cy: cy0 + dy * geom.cell_m,
            width: log_w.exp(),
            length: log_l.exp(),
            yaw: sin_yaw.atan2(cos_yaw),
            score,
        });
    }
    nms(boxes, nms_iou)
}

/// Convenience wrapper over a decoded [`DetectionMap`].
pub fn postprocess(
    det: &DetectionMap,
    geom: &GridGeom,
    conf_thresh: f64,
    nms_iou: f64,
) -> Vec<DetBox> {
    postprocess_grids(&det.cls.data(), &det.reg.data(), geom, conf_thresh, nms_iou)
}

/// Greedy NMS: keep boxes in descending score order, suppressing any box
/// whose rotated IoU with a kept box reaches `nms_iou`.
pub fn nms(mut boxes: Vec<DetBox>, nms_iou: f64) -> Vec<DetBox> {
    boxes.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.cx.partial_cmp(&b.cx).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.cy.partial_cmp(&b.cy).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut kept: Vec<DetBox> = Vec::new();
    for b in boxes {
        if kept.iter().all(|k| rotated_iou(k, &b) < nms_iou) {
            kept.push(b);
        }
    }
    kept
}
