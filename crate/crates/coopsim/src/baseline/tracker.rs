use crate::pipeline::DetBox;

use super::{hungarian, kf_predict, kf_update, KfParams, Track, UpdateOutcome};

/// Association and lifecycle settings for the late-fusion tracker.
#[derive(Clone, Copy, Debug)]
pub struct TrackerConfig {
    /// Association gate on center distance (meters); pairs beyond it are
    /// excluded from matching.
    pub gate_m: f64,
    /// Minimum updates before a track's predictions are trusted (A_min).
    pub min_age: usize,
    /// Maximum consecutive misses before a track is dropped (M_max).
    pub max_misses: usize,
    /// Score multiplier per predicted-only frame.
    pub score_decay: f64,
    pub kf: KfParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gate_m: 3.0,
            min_age: 2,
            max_misses: 3,
            score_decay: 0.9,
            kf: KfParams::default(),
        }
    }
}

/// Merge coasting predictions into the current detections: confirmed tracks
/// (age >= min_age) that matched nothing this frame contribute their
/// predicted box with a decayed score, as long as they have not exceeded
/// the miss budget. Tracks with `misses == 0` were matched (their box is
/// already represented by a current detection).
pub fn late_fuse_recover(tracks: &[Track], current: &[DetBox], cfg: &TrackerConfig) -> Vec<DetBox> {
    let mut out = current.to_vec();
    for track in tracks {
        if track.misses >= 1 && track.misses <= cfg.max_misses && track.age >= cfg.min_age {
            let mut b = track.to_box();
            b.score = track.score * cfg.score_decay.powi(track.misses as i32);
            out.push(b);
        }
    }
    out
}

/// Per-ego-node tracker: predict, associate (Hungarian over gated center
/// distances), update, manage lifecycles, and emit the recovered box set.
pub struct LateFusionTracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
}

impl LateFusionTracker {
    pub fn new(cfg: TrackerConfig) -> LateFusionTracker {
        LateFusionTracker { cfg, tracks: Vec::new(), next_id: 0 }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advance one frame with the current detections; returns the fused
    /// output (detections plus coasting predictions).
    pub fn step(&mut self, detections: &[DetBox], dt: f64) -> Vec<DetBox> {
        let q = self.cfg.kf.process_noise();
        let r = self.cfg.kf.measurement_noise();
        for track in self.tracks.iter_mut() {
            kf_predict(track, dt, &q);
        }

        // Gated assignment on center distance.
        let cost: Vec<Vec<f64>> = self
            .tracks
            .iter()
            .map(|tr| {
                detections
                    .iter()
                    .map(|d| {
                        let dist = (tr.state[0] - d.cx).hypot(tr.state[1] - d.cy);
                        if dist <= self.cfg.gate_m {
                            dist
                        } else {
                            f64::INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        let assignment = hungarian(&cost);

        let mut det_matched = vec![false; detections.len()];
        let mut track_matched = vec![false; self.tracks.len()];
        for &(ti, di) in &assignment.pairs {
            match kf_update(&mut self.tracks[ti], &detections[di], &r) {
                UpdateOutcome::Updated => {
                    self.tracks[ti].age += 1;
                    self.tracks[ti].misses = 0;
                    self.tracks[ti].score = detections[di].score;
                    track_matched[ti] = true;
                    det_matched[di] = true;
                }
                UpdateOutcome::SkippedSingular => {}
            }
        }
        for (ti, matched) in track_matched.iter().enumerate() {
            if !matched {
                self.tracks[ti].misses += 1;
            }
        }
        self.tracks.retain(|t| t.misses <= self.cfg.max_misses);
        for (di, matched) in det_matched.iter().enumerate() {
            if !matched {
                self.tracks.push(Track::from_detection(&detections[di], self.next_id, &self.cfg.kf));
                self.next_id += 1;
            }
        }

        late_fuse_recover(&self.tracks, detections, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, score: f64) -> DetBox {
        DetBox { cx, cy, width: 2.0, length: 4.5, yaw: 0.0, score }
    }

    #[test]
    fn no_interruption_passes_detections_through() {
        let mut tracker = LateFusionTracker::new(TrackerConfig::default());
        for step in 0..4 {
            let dets = vec![det(step as f64 * 0.5, 0.0, 0.9), det(5.0, step as f64 * 0.3, 0.8)];
            let out = tracker.step(&dets, 0.1);
            assert_eq!(out.len(), dets.len(), "step {step}: {out:?}");
        }
    }

    #[test]
    fn missing_object_is_coasted_at_constant_velocity() {
        // Exact CV motion at (1.5, 0) m/s, dt 0.2; detected for 3 frames,
        // missing on the 4th.
        let cfg = TrackerConfig {
            kf: KfParams { r_pos: 1e-3, r_yaw: 1e-3, r_size: 1e-3, ..Default::default() },
            ..Default::default()
        };
        let mut tracker = LateFusionTracker::new(cfg);
        let dt = 0.2;
        let vx = 1.5;
        for step in 0..3 {
            let out = tracker.step(&[det(vx * dt * step as f64, 0.0, 0.9)], dt);
            assert_eq!(out.len(), 1);
        }
        let out = tracker.step(&[], dt);
        assert_eq!(out.len(), 1, "coasted prediction expected");
        let expected_x = vx * dt * 3.0;
        assert!(
            (out[0].cx - expected_x).abs() < 0.05,
            "coasted at {} expected {expected_x}",
            out[0].cx
        );
        assert!(out[0].score < 0.9, "coasted score must decay");
    }

    #[test]
    fn spec_two_frame_history_recovers_within_a_cell() {
        // The minimal trace from the lifecycle rules: detected at t-2 and
        // t-1, missing at t. Recovery error must stay under one cell.
        let mut tracker = LateFusionTracker::new(TrackerConfig::default());
        let dt = 0.2;
        let vx = 3.0;
        tracker.step(&[det(0.0, 0.0, 0.9)], dt);
        tracker.step(&[det(vx * dt, 0.0, 0.9)], dt);
        let out = tracker.step(&[], dt);
        assert_eq!(out.len(), 1);
        let cell_m = 0.6;
        let err = (out[0].cx - vx * dt * 2.0).abs();
        assert!(err < cell_m, "recovery error {err} >= one cell");
    }

    #[test]
    fn track_dropped_after_miss_budget() {
        let cfg = TrackerConfig::default();
        let mut tracker = LateFusionTracker::new(cfg);
        tracker.step(&[det(0.0, 0.0, 0.9)], 0.1);
        tracker.step(&[det(0.0, 0.0, 0.9)], 0.1);
        for miss in 0..cfg.max_misses {
            let out = tracker.step(&[], 0.1);
            assert_eq!(out.len(), 1, "miss {miss} should still coast");
        }
        let out = tracker.step(&[], 0.1);
        assert!(out.is_empty(), "track must drop after exceeding the miss budget");
        assert!(tracker.tracks().is_empty());
    }

    #[test]
    fn unconfirmed_tracks_do_not_coast() {
        let mut tracker = LateFusionTracker::new(TrackerConfig::default());
        tracker.step(&[det(0.0, 0.0, 0.9)], 0.1); // age 1 only
        let out = tracker.step(&[], 0.1);
        assert!(out.is_empty(), "single-frame track must not coast: {out:?}");
    }
}
