use crate::pipeline::{rotated_iou, DetBox};

use super::EvalError;

/// Detections and ground truth for one evaluation frame.
#[derive(Clone, Debug, Default)]
pub struct FrameDets {
    pub dets: Vec<DetBox>,
    pub gts: Vec<DetBox>,
}

/// Average precision over a set of frames at one IoU threshold.
///
/// Matching is greedy in globally descending score order; a detection is a
/// true positive when its best-IoU unmatched ground truth in the same frame
/// reaches the threshold (each ground truth matches at most once). AP is the
/// area under the all-point interpolated precision-recall curve.
pub fn average_precision(frames: &[FrameDets], iou_thresh: f64) -> Result<f64, EvalError> {
    let total_gt: usize = frames.iter().map(|f| f.gts.len()).sum();
    if total_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }

    let mut dets: Vec<(usize, &DetBox)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| f.dets.iter().map(move |d| (fi, d)))
        .collect();
    dets.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cx.partial_cmp(&b.1.cx).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.1.cy.partial_cmp(&b.1.cy).unwrap_or(std::cmp::Ordering::Equal))
    });

    let mut gt_used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.gts.len()]).collect();
    let mut tp_flags = Vec::with_capacity(dets.len());
    for (fi, det) in &dets {
        let gts = &frames[*fi].gts;
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_used[*fi][gi] {
                continue;
            }
            let iou = rotated_iou(det, gt);
            if iou >= iou_thresh && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_used[*fi][gi] = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }

    if tp_flags.is_empty() {
        return Ok(0.0);
    }

    // Precision/recall at every rank, then the all-point interpolation:
    // integrate recall steps against the running max precision from the
    // right.
    let mut tp = 0usize;
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    for (rank, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (rank + 1) as f64);
        recalls.push(tp as f64 / total_gt as f64);
    }
    let mut ap = 0.0;
    let mut max_prec = 0.0f64;
    let mut prev_recall_at: Vec<(f64, f64)> = Vec::with_capacity(precisions.len());
    for i in (0..precisions.len()).rev() {
        max_prec = max_prec.max(precisions[i]);
        prev_recall_at.push((recalls[i], max_prec));
    }
    prev_recall_at.reverse();
    let mut prev_recall = 0.0;
    for (recall, prec) in prev_recall_at {
        if recall > prev_recall {
            ap += (recall - prev_recall) * prec;
            prev_recall = recall;
        }
    }
    Ok(ap)
}
