//! Output-domain recovery baseline: constant-velocity Kalman tracks over
//! detected boxes, Hungarian association, and a coasting rule that merges
//! predicted boxes with current detections when messages drop out.

mod hungarian;
mod kalman;
mod tracker;

pub use hungarian::{hungarian, Assignment};
pub use kalman::{kf_predict, kf_update, KfParams, Track, UpdateOutcome};
pub use tracker::{late_fuse_recover, LateFusionTracker, TrackerConfig};
