//! Ground-truth trajectories and synthetic sensor streams.
//!
//! Trajectories are built from smooth kinematic channels (speed, yaw rate, pitch)
//! whose transitions use the quintic smootherstep, so velocity is twice
//! differentiable. The vehicle always moves along its nose and banks into turns.
//! Perfect inertial readings come from [`invert_trajectory`], the exact inverse of
//! [`crate::strapdown::propagate`].

use std::f64::consts::{PI, TAU};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::strapdown::{gravity_ned, ImuSample, NavState, Position, GRAVITY};

/// Stream ids so that IMU and DVL noise drawn from one seed stay independent.
const IMU_STREAM: u64 = 1;
const DVL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrajectoryKind {
    StraightLine,
    /// Straight legs joined by alternating left/right turns.
    TurningLine,
    /// Long parallel legs joined by alternating 180° turns with speed changes.
    LawnMower,
    /// Straight heading with dives and climbs.
    DiveClimb,
    /// Evaluation mission: straight lines, left/right turns and dives.
    EvalMixed,
}

impl TrajectoryKind {
    /// The four shapes used to build the training dataset.
    pub const TRAINING: [TrajectoryKind; 4] = [
        TrajectoryKind::StraightLine,
        TrajectoryKind::TurningLine,
        TrajectoryKind::LawnMower,
        TrajectoryKind::DiveClimb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::StraightLine => "straight-line",
            TrajectoryKind::TurningLine => "turning-line",
            TrajectoryKind::LawnMower => "lawn-mower",
            TrajectoryKind::DiveClimb => "dive-climb",
            TrajectoryKind::EvalMixed => "eval-mixed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            TrajectoryKind::StraightLine,
            TrajectoryKind::TurningLine,
            TrajectoryKind::LawnMower,
            TrajectoryKind::DiveClimb,
            TrajectoryKind::EvalMixed,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// White-noise levels injected into a sensor stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProfile {
    /// Per-sample variance of (f_x, f_y, f_z, ω_x, ω_y, ω_z): (m/s²)² then (rad/s)².
    pub imu_variance: [f64; 6],
    /// Per-measurement variance of the DVL NED velocity, (m/s)².
    pub dvl_variance: [f64; 3],
    pub seed: u64,
}

impl NoiseProfile {
    pub fn new(accel_variance: f64, gyro_variance: f64, dvl_variance: f64, seed: u64) -> Self {
        Self {
            imu_variance: [
                accel_variance,
                accel_variance,
                accel_variance,
                gyro_variance,
                gyro_variance,
                gyro_variance,
            ],
            dvl_variance: [dvl_variance; 3],
            seed,
        }
    }

    /// Same variance on all six inertial channels, as used for dataset series.
    pub fn uniform_imu(variance: f64, seed: u64) -> Self {
        Self { imu_variance: [variance; 6], dvl_variance: [0.0; 3], seed }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: &f64| v.is_finite() && *v >= 0.0;
        if self.imu_variance.iter().all(ok) && self.dvl_variance.iter().all(ok) {
            Ok(())
        } else {
            Err(invalid(format!("noise variances must be finite and non-negative: {self:?}")))
        }
    }
}

/// A DVL velocity fix expressed in NED.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvlMeasurement {
    pub velocity_ned: Vector3<f64>,
    pub time: f64,
}

/// `count` values logarithmically spaced on `[min, max]`, both ends included.
pub fn noise_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && count >= 2) {
        return Err(invalid(format!("noise grid needs 0 < min < max and count >= 2, got [{min}, {max}] x {count}")));
    }
    let (lo, hi) = (min.ln(), max.ln());
    Ok((0..count)
        .map(|i| {
            if i == 0 {
                min
            } else if i == count - 1 {
                max
            } else {
                (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

fn smootherstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

fn smootherstep_slope(x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    30.0 * x * x * (1.0 - x) * (1.0 - x)
}

/// `∫₀ˣ smootherstep`, continued linearly past 1.
fn smootherstep_integral(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        0.5 + (x - 1.0)
    } else {
        x.powi(4) * (2.5 + x * (-3.0 + x))
    }
}

#[derive(Debug, Clone, Copy)]
struct Ramp {
    start: f64,
    duration: f64,
    delta: f64,
}

/// Scalar signal built from an initial value plus smooth steps.
#[derive(Debug, Clone, Default)]
struct Channel {
    initial: f64,
    ramps: Vec<Ramp>,
}

impl Channel {
    fn constant(initial: f64) -> Self {
        Self { initial, ramps: Vec::new() }
    }

    fn step(&mut self, start: f64, duration: f64, delta: f64) {
        self.ramps.push(Ramp { start, duration, delta });
    }

    fn value(&self, t: f64) -> f64 {
        self.initial
            + self
                .ramps
                .iter()
                .map(|r| r.delta * smootherstep((t - r.start) / r.duration))
                .sum::<f64>()
    }

    fn slope(&self, t: f64) -> f64 {
        self.ramps
            .iter()
            .map(|r| r.delta / r.duration * smootherstep_slope((t - r.start) / r.duration))
            .sum()
    }

    /// `∫₀ᵗ value`.
    fn integral(&self, t: f64) -> f64 {
        self.initial * t
            + self
                .ramps
                .iter()
                .map(|r| r.delta * r.duration * smootherstep_integral((t - r.start) / r.duration))
                .sum::<f64>()
    }
}

/// Analytic kinematic description of a trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryProfile {
    speed: Channel,
    yaw_rate: Channel,
    pitch: Channel,
    initial_heading: f64,
    pub initial_position: Position,
    pub duration: f64,
}

impl TrajectoryProfile {
    pub fn speed(&self, t: f64) -> f64 {
        self.speed.value(t)
    }

    pub fn heading(&self, t: f64) -> f64 {
        self.initial_heading + self.yaw_rate.integral(t)
    }

    pub fn yaw_rate(&self, t: f64) -> f64 {
        self.yaw_rate.value(t)
    }

    pub fn pitch(&self, t: f64) -> f64 {
        self.pitch.value(t)
    }

    pub fn pitch_rate(&self, t: f64) -> f64 {
        self.pitch.slope(t)
    }

    /// Bank angle of a coordinated turn.
    pub fn roll(&self, t: f64) -> f64 {
        (self.speed(t) * self.yaw_rate(t) / GRAVITY).atan()
    }

    pub fn attitude(&self, t: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(self.roll(t), self.pitch(t), self.heading(t))
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let (u, psi, theta) = (self.speed(t), self.heading(t), self.pitch(t));
        u * Vector3::new(theta.cos() * psi.cos(), theta.cos() * psi.sin(), -theta.sin())
    }

    /// Body angular rate implied by the Euler-angle rates (ZYX), rad/s.
    pub fn body_rate(&self, t: f64) -> Vector3<f64> {
        let h = 1e-5;
        let roll_rate = (self.roll(t + h) - self.roll(t - h)) / (2.0 * h);
        let (phi, theta) = (self.roll(t), self.pitch(t));
        let (psi_dot, theta_dot) = (self.yaw_rate(t), self.pitch_rate(t));
        Vector3::new(
            roll_rate - psi_dot * theta.sin(),
            theta_dot * phi.cos() + psi_dot * phi.sin() * theta.cos(),
            -theta_dot * phi.sin() + psi_dot * phi.cos() * theta.cos(),
        )
    }

    fn state(&self, t: f64, position: Position) -> NavState {
        NavState::new(position, self.velocity(t), self.attitude(t), t)
    }
}

/// Builds the analytic profile for a trajectory kind.
pub fn trajectory_profile(kind: TrajectoryKind, duration: f64, seed: u64) -> Result<TrajectoryProfile> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(invalid(format!("trajectory duration must be positive, got {duration}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deg = PI / 180.0;
    let start = Position::new(32.0 * deg, 34.0 * deg, 5.0);

    let mut profile = TrajectoryProfile {
        speed: Channel::constant(1.0),
        yaw_rate: Channel::constant(0.0),
        pitch: Channel::constant(0.0),
        initial_heading: 0.0,
        initial_position: start,
        duration,
    };

    // A turn of `angle` radians: rate ramps up, holds, and ramps back down.
    let turn = |ch: &mut Channel, t0: f64, angle: f64, rate: f64, ramp: f64| -> f64 {
        let rate = rate.copysign(angle);
        let hold = (angle / rate - ramp).max(0.0);
        ch.step(t0, ramp, rate);
        ch.step(t0 + ramp + hold, ramp, -rate);
        t0 + 2.0 * ramp + hold
    };

    match kind {
        TrajectoryKind::StraightLine => {
            profile.speed = Channel::constant(rng.random_range(0.8..1.6));
            profile.initial_heading = rng.random_range(0.0..TAU);
        }
        TrajectoryKind::TurningLine => {
            profile.speed = Channel::constant(rng.random_range(0.9..1.5));
            profile.initial_heading = rng.random_range(0.0..TAU);
            let mut t = rng.random_range(10.0..25.0);
            let mut sign = 1.0;
            while t < duration {
                let angle = sign * rng.random_range(45.0..120.0) * deg;
                let rate = rng.random_range(3.0..6.0) * deg;
                t = turn(&mut profile.yaw_rate, t, angle, rate, 3.0);
                t += rng.random_range(15.0..35.0);
                sign = -sign;
            }
        }
        TrajectoryKind::LawnMower => {
            let mut speed = rng.random_range(1.0..1.4);
            profile.speed = Channel::constant(speed);
            profile.initial_heading = rng.random_range(0.0..TAU);
            let mut t = rng.random_range(40.0..60.0);
            let mut sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            while t < duration {
                t = turn(&mut profile.yaw_rate, t, sign * PI, 6.0 * deg, 3.0);
                let target = rng.random_range(0.8..1.6);
                profile.speed.step(t + 2.0, 8.0, target - speed);
                speed = target;
                t += rng.random_range(50.0..70.0);
                sign = -sign;
            }
        }
        TrajectoryKind::DiveClimb => {
            profile.speed = Channel::constant(rng.random_range(0.9..1.4));
            profile.initial_heading = rng.random_range(0.0..TAU);
            let mut t = rng.random_range(15.0..30.0);
            while t < duration {
                let pitch = rng.random_range(10.0..25.0) * deg;
                let hold = rng.random_range(10.0..25.0);
                // Dive, level off, climb back by the same amount, level off.
                profile.pitch.step(t, 4.0, -pitch);
                profile.pitch.step(t + 4.0 + hold, 4.0, pitch);
                t += 8.0 + hold + rng.random_range(10.0..20.0);
                profile.pitch.step(t, 4.0, pitch);
                profile.pitch.step(t + 4.0 + hold, 4.0, -pitch);
                t += 8.0 + hold + rng.random_range(15.0..30.0);
            }
        }
        TrajectoryKind::EvalMixed => {
            // Starts heading north, level, at 1 m/s.
            let jitter = |rng: &mut ChaCha8Rng, x: f64| x * rng.random_range(0.9..1.1);
            let mut t = jitter(&mut rng, 30.0);
            let plan: [(&str, f64); 8] = [
                ("turn", -90.0),
                ("dive", -15.0),
                ("turn", 120.0),
                ("climb", 15.0),
                ("turn", -60.0),
                ("dive", -20.0),
                ("turn", 90.0),
                ("climb", 20.0),
            ];
            for (what, amount) in plan {
                if t >= duration {
                    break;
                }
                match what {
                    "turn" => {
                        let rate = jitter(&mut rng, 5.0) * deg;
                        t = turn(&mut profile.yaw_rate, t, jitter(&mut rng, amount) * deg, rate, 3.0);
                    }
                    _ => {
                        let hold = jitter(&mut rng, 15.0);
                        let p = jitter(&mut rng, amount) * deg;
                        profile.pitch.step(t, 4.0, p);
                        profile.pitch.step(t + 4.0 + hold, 4.0, -p);
                        t += 8.0 + hold;
                    }
                }
                t += jitter(&mut rng, 20.0);
            }
        }
    }
    Ok(profile)
}

fn sample_count(duration: f64, rate: f64) -> Result<usize> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(invalid(format!("sampling rate must be positive, got {rate}")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(invalid(format!("duration must be positive, got {duration}")));
    }
    let n = (duration * rate).round();
    if (duration * rate - n).abs() > 1e-6 || n < 1.0 {
        return Err(invalid(format!("duration × rate must be a positive integer, got {}", duration * rate)));
    }
    Ok(n as usize)
}

/// Samples a profile at `rate`, integrating position with RK4 on sub-steps.
pub fn sample_profile(profile: &TrajectoryProfile, rate: f64) -> Result<Vec<NavState>> {
    let n = sample_count(profile.duration, rate)?;
    let dt = 1.0 / rate;
    const SUBSTEPS: usize = 4;
    let h = dt / SUBSTEPS as f64;

    let mut states = Vec::with_capacity(n);
    let mut position = profile.initial_position;
    for k in 0..n {
        let t = k as f64 * dt;
        states.push(profile.state(t, position));
        for s in 0..SUBSTEPS {
            let t0 = t + s as f64 * h;
            let f = |p: &Position, t: f64| p.rate(&profile.velocity(t));
            let k1 = f(&position, t0);
            let k2 = f(&position.offset(&(k1 * (h / 2.0))), t0 + h / 2.0);
            let k3 = f(&position.offset(&(k2 * (h / 2.0))), t0 + h / 2.0);
            let k4 = f(&position.offset(&(k3 * h)), t0 + h);
            position = position.offset(&((k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0)));
        }
    }
    Ok(states)
}

/// Ground-truth states at `rate` Hz for `duration` seconds (`duration·rate` states).
pub fn generate_trajectory(kind: TrajectoryKind, duration: f64, rate: f64, seed: u64) -> Result<Vec<NavState>> {
    sample_count(duration, rate)?;
    sample_profile(&trajectory_profile(kind, duration, seed)?, rate)
}

fn uniform_step(times: impl Iterator<Item = f64>) -> Result<f64> {
    let times: Vec<f64> = times.collect();
    if times.len() < 2 {
        return Err(invalid("at least two timestamps are required"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(invalid("timestamps must increase"));
    }
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > 1e-9 * dt.max(1.0) + 1e-9 {
            return Err(invalid(format!("non-uniform timestamps at sample {i}: step {step} vs {dt}")));
        }
    }
    Ok(dt)
}

/// Exact inertial readings that make [`crate::strapdown::propagate`] reproduce `states`.
///
/// Sample `k` drives the interval from state `k` to `k + 1`; the final sample
/// repeats the last interval so the output has one sample per state.
pub fn invert_trajectory(states: &[NavState]) -> Result<Vec<ImuSample>> {
    let dt = uniform_step(states.iter().map(|s| s.time))?;
    let mut out = Vec::with_capacity(states.len());
    for w in states.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let rate = (a.attitude.inverse() * b.attitude).scaled_axis() / dt;
        let accel_ned = (b.velocity_ned - a.velocity_ned) / dt;
        let force = a.attitude.inverse() * (accel_ned - gravity_ned());
        out.push(ImuSample::new(force, rate, a.time));
    }
    let mut last = *out.last().expect("at least one interval");
    last.time = states[states.len() - 1].time;
    out.push(last);
    Ok(out)
}

/// Adds independent zero-mean white Gaussian noise to every inertial channel.
pub fn corrupt_imu(perfect: &[ImuSample], profile: &NoiseProfile) -> Result<Vec<ImuSample>> {
    profile.validate()?;
    let std: [f64; 6] = std::array::from_fn(|i| profile.imu_variance[i].sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(IMU_STREAM);
    Ok(perfect
        .iter()
        .map(|s| {
            let mut ch = s.channels();
            for (c, sd) in ch.iter_mut().zip(std) {
                let z: f64 = rng.sample(StandardNormal);
                *c += sd * z;
            }
            ImuSample::from_channels(ch, s.time)
        })
        .collect())
}

/// DVL fixes every `interval` seconds, starting at the first truth state.
pub fn synthesize_dvl(truth: &[NavState], profile: &NoiseProfile, interval: f64) -> Result<Vec<DvlMeasurement>> {
    profile.validate()?;
    let dt = uniform_step(truth.iter().map(|s| s.time))?;
    let stride = interval / dt;
    if !(stride >= 1.0 && (stride - stride.round()).abs() < 1e-6) {
        return Err(invalid(format!("DVL interval {interval} s is not a multiple of the {dt} s truth step")));
    }
    let stride = stride.round() as usize;
    let std: [f64; 3] = std::array::from_fn(|i| profile.dvl_variance[i].sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(DVL_STREAM);
    Ok(truth
        .iter()
        .step_by(stride)
        .map(|s| {
            let noise = Vector3::from_fn(|i, _| {
                let z: f64 = rng.sample(StandardNormal);
                std[i] * z
            });
            DvlMeasurement { velocity_ned: s.velocity_ned + noise, time: s.time }
        })
        .collect())
}
