//! IMU channels implied by a ground-truth trajectory.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GroundTruth, SynthError};
use crate::geom::{UnitQuaternion, Vec3};
use crate::seqdata::{SensorSequence, SequenceMeta};

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.80665;

/// Sensor error model. All fields default to zero (a perfect IMU).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoiseModel {
    /// Constant gyro bias, rad/s.
    pub gyro_bias: Vec3,
    /// Constant accelerometer bias, m/s^2.
    pub accel_bias: Vec3,
    /// White-noise standard deviation per gyro axis, rad/s.
    pub gyro_sigma: f64,
    /// White-noise standard deviation per accelerometer axis, m/s^2.
    pub accel_sigma: f64,
    /// Yaw drift of the reported orientation, deg/min.
    pub yaw_drift_deg_per_min: f64,
}

impl ImuNoiseModel {
    pub fn is_valid(&self) -> bool {
        self.gyro_sigma >= 0.0
            && self.accel_sigma >= 0.0
            && self.gyro_bias.is_finite()
            && self.accel_bias.is_finite()
            && self.yaw_drift_deg_per_min.is_finite()
    }
}

fn world_acceleration(p: &[Vec3], dt: f64) -> Vec<Vec3> {
    let n = p.len();
    let inv = 1.0 / (dt * dt);
    (0..n)
        .map(|i| {
            let d2 = if i == 0 {
                p[0].scale(2.0) - p[1].scale(5.0) + p[2].scale(4.0) - p[3]
            } else if i == n - 1 {
                p[n - 1].scale(2.0) - p[n - 2].scale(5.0) + p[n - 3].scale(4.0) - p[n - 4]
            } else {
                p[i + 1] - p[i].scale(2.0) + p[i - 1]
            };
            d2.scale(inv)
        })
        .collect()
}

/// Body-frame angular velocity of a device-to-world orientation track.
fn body_rates(q: &[UnitQuaternion], dt: f64) -> Vec<Vec3> {
    let n = q.len();
    (0..n)
        .map(|i| {
            let (a, b, span) = if i == 0 {
                (0, 1, dt)
            } else if i == n - 1 {
                (n - 2, n - 1, dt)
            } else {
                (i - 1, i + 1, 2.0 * dt)
            };
            (q[a].inverse() * q[b]).to_rotation_vector().scale(1.0 / span)
        })
        .collect()
}

/// Renders gyro, accelerometer and orientation channels for `gt`.
///
/// Accelerations come from second differences of the positions (one-sided
/// at the ends), so the output is only as smooth as the input track.
pub fn imu_from_trajectory<R: Rng + ?Sized>(
    gt: &GroundTruth,
    noise: &ImuNoiseModel,
    rng: &mut R,
) -> Result<SensorSequence, SynthError> {
    let n = gt.pos.len();
    if n < 4 {
        return Err(SynthError::TooShort { len: n, min: 4 });
    }
    if !noise.is_valid() {
        return Err(SynthError::InvalidSpec("noise sigmas must be non-negative".into()));
    }
    let dt = (gt.timestamps[n - 1] - gt.timestamps[0]) / (n - 1) as f64;
    let acc_w = world_acceleration(&gt.pos, dt);
    let omega = body_rates(&gt.q_device, dt);
    let gyro_n = Normal::new(0.0, noise.gyro_sigma).expect("sigma checked");
    let acc_n = Normal::new(0.0, noise.accel_sigma).expect("sigma checked");
    let mut draw = |d: &Normal<f64>, sigma: f64| {
        if sigma > 0.0 {
            Vec3::new(d.sample(rng), d.sample(rng), d.sample(rng))
        } else {
            Vec3::ZERO
        }
    };
    let drift = noise.yaw_drift_deg_per_min.to_radians() / 60.0;

    let mut gyro = Vec::with_capacity(n);
    let mut accel = Vec::with_capacity(n);
    let mut q_out = Vec::with_capacity(n);
    for i in 0..n {
        let q = gt.q_device[i];
        let f = q.inverse().rotate(acc_w[i] + Vec3::new(0.0, 0.0, GRAVITY));
        accel.push(f + noise.accel_bias + draw(&acc_n, noise.accel_sigma));
        gyro.push(omega[i] + noise.gyro_bias + draw(&gyro_n, noise.gyro_sigma));
        q_out.push(if drift != 0.0 {
            UnitQuaternion::from_yaw(drift * (gt.timestamps[i] - gt.timestamps[0])) * q
        } else {
            q
        });
    }
    Ok(SensorSequence {
        name: "synthetic".into(),
        timestamps: gt.timestamps.clone(),
        gyro,
        accel,
        q_device: q_out,
        gt_pos: gt.pos.clone(),
        gt_heading: Some(gt.heading.clone()),
        meta: SequenceMeta { rate_hz: 1.0 / dt, device: "synthetic".into(), ..SequenceMeta::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::wrap_angle;
    use crate::synth::{gen_trajectory, GaitSpec, PathKind, TrajectorySpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn render(spec: &TrajectorySpec) -> SensorSequence {
        let gt = gen_trajectory(spec, 1).unwrap();
        imu_from_trajectory(&gt, &ImuNoiseModel::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn stationary() {
        let s = render(&TrajectorySpec::straight(5.0, 0.0));
        assert!(s.accel.iter().all(|a| *a == Vec3::new(0.0, 0.0, GRAVITY)));
        assert!(s.gyro.iter().all(|g| *g == Vec3::ZERO));
    }

    #[test]
    fn constant_velocity_sees_only_gravity() {
        let m = UnitQuaternion::from_axis_angle(Vec3::new(0.3, -1.0, 0.4), 1.1);
        let s = render(&TrajectorySpec::straight(10.0, 1.3).with_heading(0.7).with_mounting(m));
        let expect = m.inverse().rotate(UnitQuaternion::from_yaw(-0.7).rotate(Vec3::new(0.0, 0.0, GRAVITY)));
        for a in &s.accel {
            assert!((*a - expect).norm() < 1e-7, "{a:?}");
        }
    }

    #[test]
    fn circle_centripetal() {
        let s = render(&TrajectorySpec::straight(20.0, 1.0).with_path(PathKind::Circle { radius_m: 2.0 }));
        for i in 0..s.len() {
            let a_w = s.q_device[i].rotate(s.accel[i]) - Vec3::new(0.0, 0.0, GRAVITY);
            let h = a_w.xy()[0].hypot(a_w.xy()[1]);
            assert!((h - 0.5).abs() < 1e-4, "frame {i}: {h}");
            assert!(a_w.z.abs() < 1e-9);
            // turning at v / r = 0.5 rad/s about world z
            assert!((s.gyro[i].z - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn ramped_walk_integrates_to_final_velocity() {
        let spec = TrajectorySpec::straight(20.0, 1.4)
            .with_ramp(4.0)
            .with_path(PathKind::SmoothRandomWalk { max_turn_rate: 0.3, speed_jitter: 0.0, knot_s: 4.0 });
        let s = render(&spec);
        let dt = 1.0 / 200.0;
        let mut v = Vec3::ZERO;
        let aw: Vec<Vec3> =
            (0..s.len()).map(|i| s.q_device[i].rotate(s.accel[i]) - Vec3::new(0.0, 0.0, GRAVITY)).collect();
        for i in 1..s.len() {
            v = v + (aw[i] + aw[i - 1]).scale(0.5 * dt);
        }
        let h = s.gt_heading.as_ref().unwrap()[s.len() - 1];
        let expect = Vec3::new(1.4 * h.cos(), 1.4 * h.sin(), 0.0);
        assert!((v - expect).norm() < 1e-3, "{v:?} vs {expect:?}");
    }

    #[test]
    fn gait_bounce_and_drift() {
        let spec = TrajectorySpec::straight(10.0, 1.2).with_gait(GaitSpec {
            step_hz: 2.0,
            bounce_mps2: 2.0,
            surge_gain: 0.0,
        });
        let gt = gen_trajectory(&spec, 0).unwrap();
        let noise = ImuNoiseModel { yaw_drift_deg_per_min: 6.0, ..Default::default() };
        let s = imu_from_trajectory(&gt, &noise, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let vz: Vec<f64> = s.accel.iter().map(|a| a.z - GRAVITY).collect();
        let peak = vz.iter().cloned().fold(f64::MIN, f64::max);
        assert!((peak - 2.0).abs() < 0.01, "{peak}");
        let last = crate::geom::yaw_of(s.q_device[s.len() - 1]).unwrap().radians();
        let t = s.timestamps[s.len() - 1];
        assert!(wrap_angle(last - (6.0f64).to_radians() * t / 60.0).abs() < 1e-9);
    }

    #[test]
    fn too_short_and_bad_noise() {
        let mut gt = gen_trajectory(&TrajectorySpec::straight(1.0, 1.0), 0).unwrap();
        let bad = ImuNoiseModel { accel_sigma: -1.0, ..Default::default() };
        assert!(imu_from_trajectory(&gt, &bad, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        gt.pos.truncate(3);
        assert!(matches!(
            imu_from_trajectory(&gt, &ImuNoiseModel::default(), &mut ChaCha8Rng::seed_from_u64(0)),
            Err(SynthError::TooShort { len: 3, min: 4 })
        ));
    }
}
