use crate::numerics::Tensor;
use crate::pipeline::{DetBox, GridGeom};

/// Per-cell training targets: classification in {0,1}, regression
/// `(dx, dy, log w, log l, sin yaw, cos yaw)` defined on foreground cells,
/// and the foreground mask for the regression loss.
pub struct TargetMap {
    pub cls: Tensor,
    pub reg: Tensor,
    pub mask: Tensor,
    pub n_foreground: usize,
}

/// Assign each ground-truth box to the feature cell containing its center.
/// When two boxes land in one cell the box nearer the cell center wins, with
/// the lower list index breaking exact ties.
pub fn build_targets(gts: &[DetBox], geom: &GridGeom) -> TargetMap {
    let n = geom.size * geom.size;
    let mut cls = vec![0.0f32; n];
    let mut reg = vec![0.0f32; 6 * n];
    let mut mask = vec![0.0f32; n];
    // Winner per cell: (distance to cell center, gt index).
    let mut winner: Vec<Option<(f64, usize)>> = vec![None; n];

    for (gi, gt) in gts.iter().enumerate() {
        let Some((row, col)) = geom.cell_of(gt.cx, gt.cy) else { continue };
        let (ccx, ccy) = geom.cell_center(row, col);
        let dist = (gt.cx - ccx).hypot(gt.cy - ccy);
        let idx = row * geom.size + col;
        let take = match winner[idx] {
            None => true,
            Some((best, _)) => dist < best,
        };
        if take {
            winner[idx] = Some((dist, gi));
        }
    }

    let mut n_fg = 0usize;
    for idx in 0..n {
        let Some((_, gi)) = winner[idx] else { continue };
        let gt = &gts[gi];
        let (row, col) = (idx / geom.size, idx % geom.size);
        let (ccx, ccy) = geom.cell_center(row, col);
        cls[idx] = 1.0;
        mask[idx] = 1.0;
        n_fg += 1;
        reg[idx] = ((gt.cx - ccx) / geom.cell_m) as f32;
        reg[n + idx] = ((gt.cy - ccy) / geom.cell_m) as f32;
        reg[2 * n + idx] = (gt.width.ln()) as f32;
        reg[3 * n + idx] = (gt.length.ln()) as f32;
        reg[4 * n + idx] = gt.yaw.sin() as f32;
        reg[5 * n + idx] = gt.yaw.cos() as f32;
    }

    let size = geom.size;
    TargetMap {
        cls: Tensor::from_vec(&[1, size, size], cls).expect("target shape"),
        reg: Tensor::from_vec(&[6, size, size], reg).expect("target shape"),
        mask: Tensor::from_vec(&[1, size, size], mask).expect("target shape"),
        n_foreground: n_fg,
    }
}
