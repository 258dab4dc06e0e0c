//! Strapdown inertial mechanization in the local North-East-Down frame.
//!
//! Conventions used throughout the crate:
//! - attitude is the unit quaternion rotating body-frame vectors into NED (`C_b^n`);
//! - gravity is `[0, 0, +g]` in NED, so a level vehicle at rest senses `f_b = [0, 0, -g]`;
//! - position is geodetic latitude/longitude in radians on a spherical Earth plus
//!   depth in metres, positive down.
//!
//! Earth rotation and transport rate are neglected. The simulator synthesizes its
//! inertial readings with the exact inverse of [`propagate`], so truth and the
//! navigation solution share one model.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{invalid, Error, Result};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

/// Spherical Earth radius used to map NED displacement to latitude/longitude, m.
pub const EARTH_RADIUS: f64 = 6_378_137.0;

/// Gravity vector in NED.
pub fn gravity_ned() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, GRAVITY)
}

/// Geodetic position: latitude and longitude in radians, depth in metres (down positive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub latitude: f64,
    pub longitude: f64,
    pub depth: f64,
}

impl Position {
    pub fn new(latitude: f64, longitude: f64, depth: f64) -> Self {
        Self { latitude, longitude, depth }
    }

    /// Position rate (lat/s, lon/s, m/s) produced by an NED velocity.
    pub fn rate(&self, velocity_ned: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            velocity_ned.x / EARTH_RADIUS,
            velocity_ned.y / (EARTH_RADIUS * self.latitude.cos()),
            velocity_ned.z,
        )
    }

    pub fn offset(&self, delta: &Vector3<f64>) -> Self {
        Self {
            latitude: self.latitude + delta.x,
            longitude: self.longitude + delta.y,
            depth: self.depth + delta.z,
        }
    }

    fn is_finite(&self) -> bool {
        self.latitude.is_finite() && self.longitude.is_finite() && self.depth.is_finite()
    }
}

/// Full navigation solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub position: Position,
    pub velocity_ned: Vector3<f64>,
    /// Body to NED.
    pub attitude: UnitQuaternion<f64>,
    pub time: f64,
}

impl NavState {
    pub fn new(
        position: Position,
        velocity_ned: Vector3<f64>,
        attitude: UnitQuaternion<f64>,
        time: f64,
    ) -> Self {
        Self { position, velocity_ned, attitude, time }
    }

    /// Body-to-NED direction cosine matrix.
    pub fn dcm(&self) -> Matrix3<f64> {
        self.attitude.to_rotation_matrix().into_inner()
    }

    /// Roll, pitch, yaw (ZYX convention), radians.
    pub fn euler(&self) -> (f64, f64, f64) {
        self.attitude.euler_angles()
    }
}

/// One inertial measurement, held constant over the interval that starts at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Specific force in body axes, m/s².
    pub specific_force_body: Vector3<f64>,
    /// Angular rate of body relative to inertial space in body axes, rad/s.
    pub angular_rate_body: Vector3<f64>,
    pub time: f64,
}

impl ImuSample {
    pub fn new(specific_force_body: Vector3<f64>, angular_rate_body: Vector3<f64>, time: f64) -> Self {
        Self { specific_force_body, angular_rate_body, time }
    }

    /// Channel `i` in the fixed ordering (f_x, f_y, f_z, ω_x, ω_y, ω_z).
    pub fn channel(&self, i: usize) -> f64 {
        if i < 3 {
            self.specific_force_body[i]
        } else {
            self.angular_rate_body[i - 3]
        }
    }

    pub fn channels(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.channel(i))
    }

    pub fn from_channels(channels: [f64; 6], time: f64) -> Self {
        Self {
            specific_force_body: Vector3::new(channels[0], channels[1], channels[2]),
            angular_rate_body: Vector3::new(channels[3], channels[4], channels[5]),
            time,
        }
    }

    fn is_finite(&self) -> bool {
        self.specific_force_body.iter().all(|v| v.is_finite())
            && self.angular_rate_body.iter().all(|v| v.is_finite())
            && self.time.is_finite()
    }
}

/// Orientation increment for a constant body rate held over `dt`.
pub fn rotation_increment(angular_rate_body: &Vector3<f64>, dt: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(angular_rate_body * dt)
}

/// Advances the navigation solution by one IMU interval.
///
/// Velocity uses the attitude at the start of the interval (forward Euler),
/// position integrates the mean of the old and new velocity, and attitude is
/// right-multiplied by the exact exponential of the body rate increment.
pub fn propagate(state: &NavState, imu: &ImuSample, dt: f64) -> Result<NavState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid(format!("propagation step must be positive and finite, got {dt}")));
    }
    if !imu.is_finite() {
        return Err(Error::NonFinite("IMU sample"));
    }
    if !(state.position.is_finite()
        && state.velocity_ned.iter().all(|v| v.is_finite())
        && state.time.is_finite())
    {
        return Err(Error::NonFinite("navigation state"));
    }

    let c_bn = state.dcm();
    let accel_ned = c_bn * imu.specific_force_body + gravity_ned();
    let velocity = state.velocity_ned + accel_ned * dt;

    let mean_velocity = (state.velocity_ned + velocity) * 0.5;
    let position = state.position.offset(&(state.position.rate(&mean_velocity) * dt));

    let mut attitude = state.attitude * rotation_increment(&imu.angular_rate_body, dt);
    attitude.renormalize();

    Ok(NavState { position, velocity_ned: velocity, attitude, time: state.time + dt })
}

/// Skew-symmetric cross-product matrix, `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn level_at_rest() -> NavState {
        NavState::new(
            Position::new(32f64.to_radians(), 34f64.to_radians(), 5.0),
            Vector3::zeros(),
            UnitQuaternion::identity(),
            0.0,
        )
    }

    #[test]
    fn gravity_is_down_aligned_standard_gravity() {
        let g = gravity_ned();
        assert_eq!(g, Vector3::new(0.0, 0.0, 9.80665));
        assert_eq!(g.norm(), 9.80665);
        assert_eq!(g.dot(&Vector3::x()), 0.0);
    }

    #[test]
    fn stationary_level_body_stays_put() {
        let imu = ImuSample::new(Vector3::new(0.0, 0.0, -GRAVITY), Vector3::zeros(), 0.0);
        for dt in [1e-3, 0.01, 0.5, 3.0] {
            let next = propagate(&level_at_rest(), &imu, dt).unwrap();
            assert_eq!(next.velocity_ned, Vector3::zeros());
            assert_eq!(next.attitude, UnitQuaternion::identity());
            assert_eq!(next.time, dt);
        }
    }

    #[test]
    fn constant_forward_acceleration() {
        let mut s = level_at_rest();
        for k in 0..100 {
            let imu = ImuSample::new(Vector3::new(1.0, 0.0, -GRAVITY), Vector3::zeros(), k as f64 * 0.01);
            s = propagate(&s, &imu, 0.01).unwrap();
        }
        assert!((s.velocity_ned.x - 1.0).abs() < 1e-3);
        assert!(s.velocity_ned.y.abs() < 1e-12 && s.velocity_ned.z.abs() < 1e-12);
    }

    #[test]
    fn single_axis_yaw_rotation_matches_closed_form() {
        let mut s = level_at_rest();
        for k in 0..100 {
            let imu = ImuSample::new(
                Vector3::new(0.0, 0.0, -GRAVITY),
                Vector3::new(0.0, 0.0, FRAC_PI_2),
                k as f64 * 0.01,
            );
            s = propagate(&s, &imu, 0.01).unwrap();
        }
        // Closed form: rotation of π/2 about body z, which coincides with NED down.
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        assert!(s.attitude.angle_to(&expected) < 1e-9);
        let (roll, pitch, yaw) = s.euler();
        assert!((yaw.to_degrees() - 90.0).abs() < 0.1);
        assert!(roll.abs() < 1e-9 && pitch.abs() < 1e-9);
        assert!(s.velocity_ned.norm() < 1e-12);
    }

    #[test]
    fn quaternion_stays_normalized() {
        let mut s = level_at_rest();
        let imu = ImuSample::new(Vector3::new(0.3, -0.2, -9.7), Vector3::new(0.4, -1.1, 2.3), 0.0);
        for _ in 0..10_000 {
            s = propagate(&s, &imu, 0.01).unwrap();
            assert!((s.attitude.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dcm_round_trip() {
        let q: UnitQuaternion<f64> = UnitQuaternion::from_euler_angles(0.3, -0.7, 2.9);
        let back = UnitQuaternion::from_matrix(&q.to_rotation_matrix().into_inner());
        let d: f64 = (back.quaternion().coords - q.quaternion().coords)
            .norm()
            .min((back.quaternion().coords + q.quaternion().coords).norm());
        assert!(d < 1e-9);
    }

    #[test]
    fn euler_convention_is_body_to_ned_zyx() {
        // Nose pointing east and pitched up: body x maps to (0, cosθ, -sinθ).
        let pitch = 0.2;
        let q = UnitQuaternion::from_euler_angles(0.0, pitch, FRAC_PI_2);
        let nose = q * Vector3::x();
        assert!((nose - Vector3::new(0.0, pitch.cos(), -pitch.sin())).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = level_at_rest();
        let imu = ImuSample::new(Vector3::new(0.0, 0.0, -GRAVITY), Vector3::zeros(), 0.0);
        assert!(matches!(propagate(&s, &imu, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(propagate(&s, &imu, -0.01), Err(Error::InvalidArgument(_))));
        let bad = ImuSample::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros(), 0.0);
        assert!(matches!(propagate(&s, &bad, 0.01), Err(Error::NonFinite(_))));
        let mut bad_state = s;
        bad_state.velocity_ned.y = f64::INFINITY;
        assert!(matches!(propagate(&bad_state, &imu, 0.01), Err(Error::NonFinite(_))));
    }

    #[test]
    fn skew_matches_cross_product() {
        let a = Vector3::new(1.0, -2.0, 0.5);
        let b = Vector3::new(0.3, 0.7, -1.1);
        assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-15);
    }
}
