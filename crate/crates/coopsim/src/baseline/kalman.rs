use nalgebra::{SMatrix, SVector};

use crate::pipeline::DetBox;
use crate::world::normalize_angle;

/// Track state: (x, y, yaw, w, l, vx, vy).
pub type StateVec = SVector<f64, 7>;
pub type StateCov = SMatrix<f64, 7, 7>;
type MeasVec = SVector<f64, 5>;
type MeasCov = SMatrix<f64, 5, 5>;

/// Diagonal process / measurement noise (standard deviations) and the
/// initial velocity uncertainty for freshly spawned tracks.
#[derive(Clone, Copy, Debug)]
pub struct KfParams {
    pub q_pos: f64,
    pub q_yaw: f64,
    pub q_size: f64,
    pub q_vel: f64,
    pub r_pos: f64,
    pub r_yaw: f64,
    pub r_size: f64,
    pub init_vel_std: f64,
}

impl Default for KfParams {
    fn default() -> Self {
        KfParams {
            q_pos: 0.5,
            q_yaw: 0.1,
            q_size: 0.05,
            q_vel: 1.0,
            r_pos: 0.5,
            r_yaw: 0.1,
            r_size: 0.2,
            init_vel_std: 5.0,
        }
    }
}

impl KfParams {
    pub fn process_noise(&self) -> StateCov {
        StateCov::from_diagonal(&StateVec::from_column_slice(&[
            self.q_pos * self.q_pos,
            self.q_pos * self.q_pos,
            self.q_yaw * self.q_yaw,
            self.q_size * self.q_size,
            self.q_size * self.q_size,
            self.q_vel * self.q_vel,
            self.q_vel * self.q_vel,
        ]))
    }

    pub fn measurement_noise(&self) -> MeasCov {
        MeasCov::from_diagonal(&MeasVec::from_column_slice(&[
            self.r_pos * self.r_pos,
            self.r_pos * self.r_pos,
            self.r_yaw * self.r_yaw,
            self.r_size * self.r_size,
            self.r_size * self.r_size,
        ]))
    }
}

/// One tracked object.
#[derive(Clone, Debug)]
pub struct Track {
    pub state: StateVec,
    pub cov: StateCov,
    /// Number of successful measurement updates (birth counts as one).
    pub age: usize,
    /// Consecutive frames without a matched measurement.
    pub misses: usize,
    pub id: u64,
    /// Score of the last matched detection.
    pub score: f64,
}

impl Track {
    pub fn from_detection(det: &DetBox, id: u64, params: &KfParams) -> Track {
        let state = StateVec::from_column_slice(&[
            det.cx, det.cy, det.yaw, det.width, det.length, 0.0, 0.0,
        ]);
        let v = params.init_vel_std * params.init_vel_std;
        let cov = StateCov::from_diagonal(&StateVec::from_column_slice(&[
            params.r_pos * params.r_pos,
            params.r_pos * params.r_pos,
            params.r_yaw * params.r_yaw,
            params.r_size * params.r_size,
            params.r_size * params.r_size,
            v,
            v,
        ]));
        Track { state, cov, age: 1, misses: 0, id, score: det.score }
    }

    pub fn to_box(&self) -> DetBox {
        DetBox {
            cx: self.state[0],
            cy: self.state[1],
            yaw: normalize_angle(self.state[2]),
            width: self.state[3].max(1e-3),
            length: self.state[4].max(1e-3),
            score: self.score,
        }
    }
}

/// Constant-velocity prediction: positions advance by velocity * dt, the
/// covariance propagates through the transition and gains process noise.
pub fn kf_predict(track: &mut Track, dt: f64, q: &StateCov) {
    let mut f = StateCov::identity();
    f[(0, 5)] = dt;
    f[(1, 6)] = dt;
    track.state = f * track.state;
    track.state[2] = normalize_angle(track.state[2]);
    track.cov = f * track.cov * f.transpose() + q;
}

/// Result of a measurement update attempt.
#[derive(Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    /// Innovation covariance was singular; the update was skipped.
    SkippedSingular,
}

/// Standard Kalman update against a (x, y, yaw, w, l) box measurement with
/// the yaw innovation wrapped to (-pi, pi]. Uses the Joseph-form covariance
/// update, which keeps the covariance symmetric positive-semidefinite.
pub fn kf_update(track: &mut Track, det: &DetBox, r: &MeasCov) -> UpdateOutcome {
    let mut h = SMatrix::<f64, 5, 7>::zeros();
    for i in 0..5 {
        h[(i, i)] = 1.0;
    }
    let z = MeasVec::from_column_slice(&[det.cx, det.cy, det.yaw, det.width, det.length]);
    let mut innovation = z - h * track.state;
    innovation[2] = normalize_angle(innovation[2]);

    let s = h * track.cov * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else {
        return UpdateOutcome::SkippedSingular;
    };
    let k = track.cov * h.transpose() * s_inv;
    track.state += k * innovation;
    track.state[2] = normalize_angle(track.state[2]);
    let i_kh = StateCov::identity() - k * h;
    track.cov = i_kh * track.cov * i_kh.transpose() + k * r * k.transpose();
    UpdateOutcome::Updated
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64) -> DetBox {
        DetBox { cx, cy, width: 2.0, length: 4.5, yaw: 0.0, score: 0.9 }
    }

    #[test]
    fn predict_advances_position_only() {
        let params = KfParams::default();
        let mut track = Track::from_detection(&det(1.0, 2.0), 0, &params);
        track.state[5] = 1.0; // vx
        kf_predict(&mut track, 0.1, &params.process_noise());
        assert!((track.state[0] - 1.1).abs() < 1e-12);
        assert!((track.state[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_zero_noise_is_stationary() {
        // With zero velocity, zero process noise, and no velocity
        // uncertainty, prediction is the identity on state and covariance.
        let params = KfParams::default();
        let mut track = Track::from_detection(&det(1.0, 2.0), 0, &params);
        track.cov[(5, 5)] = 0.0;
        track.cov[(6, 6)] = 0.0;
        let before_state = track.state;
        let before_cov = track.cov;
        kf_predict(&mut track, 0.5, &StateCov::zeros());
        assert_eq!(track.state, before_state);
        assert_eq!(track.cov, before_cov);
    }

    #[test]
    fn tiny_measurement_noise_pins_posterior_to_measurement() {
        let params = KfParams::default();
        let mut track = Track::from_detection(&det(0.0, 0.0), 0, &params);
        kf_predict(&mut track, 0.1, &params.process_noise());
        let r = MeasCov::from_diagonal(&MeasVec::from_element(1e-9));
        let meas = det(0.7, -0.4);
        assert_eq!(kf_update(&mut track, &meas, &r), UpdateOutcome::Updated);
        assert!((track.state[0] - 0.7).abs() < 1e-3);
        assert!((track.state[1] + 0.4).abs() < 1e-3);
    }

    #[test]
    fn update_at_prediction_shrinks_covariance() {
        let params = KfParams::default();
        let mut track = Track::from_detection(&det(1.0, 1.0), 0, &params);
        kf_predict(&mut track, 0.1, &params.process_noise());
        let before_state = track.state;
        let before_trace = track.cov.trace();
        let meas = DetBox {
            cx: before_state[0],
            cy: before_state[1],
            yaw: before_state[2],
            width: before_state[3],
            length: before_state[4],
            score: 1.0,
        };
        kf_update(&mut track, &meas, &params.measurement_noise());
        for i in 0..7 {
            assert!((track.state[i] - before_state[i]).abs() < 1e-9, "component {i} moved");
        }
        assert!(track.cov.trace() < before_trace, "covariance did not shrink");
    }

    #[test]
    fn yaw_innovation_wraps() {
        let params = KfParams::default();
        let mut track = Track::from_detection(
            &DetBox { cx: 0.0, cy: 0.0, yaw: 3.1, width: 2.0, length: 4.0, score: 1.0 },
            0,
            &params,
        );
        kf_predict(&mut track, 0.1, &params.process_noise());
        // Measurement at -3.1 rad is only ~0.08 rad away through the wrap.
        let meas = DetBox { cx: 0.0, cy: 0.0, yaw: -3.1, width: 2.0, length: 4.0, score: 1.0 };
        kf_update(&mut track, &meas, &params.measurement_noise());
        assert!(
            track.state[2].abs() > 3.0,
            "yaw pulled the short way around, got {}",
            track.state[2]
        );
    }

    #[test]
    fn covariance_stays_symmetric_over_many_cycles() {
        let params = KfParams::default();
        let mut track = Track::from_detection(&det(0.0, 0.0), 0, &params);
        let q = params.process_noise();
        let r = params.measurement_noise();
        for step in 0..100 {
            kf_predict(&mut track, 0.1, &q);
            let meas = det(0.1 * step as f64, 0.05 * step as f64);
            kf_update(&mut track, &meas, &r);
            let asym = (track.cov - track.cov.transpose()).abs().max();
            assert!(asym < 1e-9, "asymmetry {asym} at step {step}");
            // PSD within tolerance: symmetric eigenvalues are real.
            let eigs = track.cov.symmetric_eigenvalues();
            assert!(eigs.iter().all(|&e| e > -1e-9), "eigenvalues {eigs:?}");
        }
    }
}
