//! Error-state EKF for INS/DVL velocity aiding.
//!
//! Error state (12): `[δv (3), δε (3), δb_a (3), δb_g (3)]`, all defined as
//! truth minus estimate. `δε` is the small attitude error in NED such that
//! `C_true = (I + [δε]×) Ĉ`. The nominal bias estimates live in the filter and
//! are subtracted from raw IMU readings before mechanization.
//!
//! Process noise `Q^c` holds per-sample variances of the white noise driving
//! each error-rate channel at the IMU rate, so one predict step adds
//! `G Q^c Gᵀ dt²`. This matches the simulator, which injects noise of variance
//! `q` into every IMU sample.

use std::collections::VecDeque;

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};

use crate::error::{invalid, Error, Result};
use crate::sim::DvlMeasurement;
use crate::strapdown::{skew, ImuSample, NavState};

pub const STATE_DIM: usize = 12;

pub type Matrix12 = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type Vector12 = SVector<f64, STATE_DIM>;
pub type Gain = SMatrix<f64, STATE_DIM, 3>;
pub type MeasurementMatrix = SMatrix<f64, 3, STATE_DIM>;

/// Bias random-walk variance shared by all six bias channels.
pub const BIAS_VARIANCE: f64 = 0.001;

/// Added to an innovation-derived Q̂ before it is installed.
pub const ADAPTIVE_JITTER: f64 = 1e-12;

const VEL: usize = 0;
const ATT: usize = 3;
const BA: usize = 6;
const BG: usize = 9;

/// Diagonal continuous process-noise matrix in the order
/// `(q_f^x, q_f^y, q_f^z, q_ω^x, q_ω^y, q_ω^z, ε × 6)`.
pub fn build_qc(q_f: Vector3<f64>, q_w: Vector3<f64>, eps: f64) -> Result<Matrix12> {
    let entries = q_f.iter().chain(q_w.iter()).copied().chain(std::iter::repeat_n(eps, 6));
    let diag = Vector12::from_iterator(entries);
    if let Some(bad) = diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(invalid(format!("process noise entries must be positive, got {bad}")));
    }
    Ok(Matrix12::from_diagonal(&diag))
}

/// `H = [I₃ | 0₃ₓ₉]`: the DVL observes the velocity error.
pub fn measurement_matrix() -> MeasurementMatrix {
    let mut h = MeasurementMatrix::zeros();
    h.fixed_view_mut::<3, 3>(0, VEL).fill_with_identity();
    h
}

/// Default initial covariance: 0.1 m/s velocity, 1° attitude, 0.01 m/s² and 0.001 rad/s biases.
pub fn initial_covariance() -> Matrix12 {
    let att = 1f64.to_radians().powi(2);
    Matrix12::from_diagonal(&Vector12::from_iterator(
        [0.01; 3].into_iter().chain([att; 3]).chain([1e-4; 3]).chain([1e-6; 3]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationRecord {
    pub nu: Vector3<f64>,
    pub time: f64,
}

/// Process noise currently in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessNoise {
    /// Per-sample variances; discretized each step as `G Q^c Gᵀ dt²`.
    Continuous(Matrix12),
    /// Discrete process noise applied verbatim on every predict.
    Discrete(Matrix12),
}

/// Average outer product of the innovations in `window`.
pub fn innovation_covariance(window: &[InnovationRecord]) -> Result<Matrix3<f64>> {
    if window.is_empty() {
        return Err(invalid("innovation window is empty"));
    }
    let sum = window.iter().fold(Matrix3::zeros(), |acc, r| acc + r.nu * r.nu.transpose());
    Ok(sum / window.len() as f64)
}

/// `K C Kᵀ`. Shapes are fixed by the types.
pub fn adapt_q(gain: &Gain, innovation_cov: &Matrix3<f64>) -> Matrix12 {
    gain * innovation_cov * gain.transpose()
}

/// Kalman gain, correction and Joseph-form posterior for any linear measurement.
pub fn joseph_update<const N: usize, const M: usize>(
    p: &SMatrix<f64, N, N>,
    h: &SMatrix<f64, M, N>,
    r: &SMatrix<f64, M, M>,
    nu: &SVector<f64, M>,
) -> Result<(SMatrix<f64, N, M>, SVector<f64, N>, SMatrix<f64, N, N>)> {
    let s = h * p * h.transpose() + r;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ since S and P are symmetric.
    let k = chol.solve(&(h * p)).transpose();
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularInnovation);
    }
    let dx = k * nu;
    let i_kh = SMatrix::<f64, N, N>::identity() - k * h;
    let p_post = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    Ok((k, dx, symmetrize(&p_post)))
}

fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// Positive semidefinite within a tolerance scaled to the matrix magnitude.
pub fn is_psd<const N: usize>(p: &SMatrix<f64, N, N>) -> bool {
    if !p.iter().all(|v| v.is_finite()) {
        return false;
    }
    let scale = p.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    (p + SMatrix::<f64, N, N>::identity() * (1e-10 * scale)).cholesky().is_some()
}

pub fn max_asymmetry<const N: usize>(p: &SMatrix<f64, N, N>) -> f64 {
    (p - p.transpose()).amax()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStateFilter {
    pub delta_x: Vector12,
    pub p: Matrix12,
    pub process_noise: ProcessNoise,
    pub r: Matrix3<f64>,
    pub innovation_window: VecDeque<InnovationRecord>,
    pub window_capacity: usize,
    pub k_last: Gain,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl ErrorStateFilter {
    pub fn new(qc: Matrix12, r: Matrix3<f64>, p0: Matrix12, window_capacity: usize) -> Result<Self> {
        if window_capacity == 0 {
            return Err(invalid("innovation window capacity must be at least 1"));
        }
        if !is_psd(&p0) || !is_psd(&r) {
            return Err(invalid("initial covariance and R must be positive semidefinite"));
        }
        Ok(Self {
            delta_x: Vector12::zeros(),
            p: p0,
            process_noise: ProcessNoise::Continuous(qc),
            r,
            innovation_window: VecDeque::with_capacity(window_capacity),
            window_capacity,
            k_last: Gain::zeros(),
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
        })
    }

    /// Bias-compensated copy of a raw IMU sample.
    pub fn compensate(&self, raw: &ImuSample) -> ImuSample {
        ImuSample::new(
            raw.specific_force_body - self.accel_bias,
            raw.angular_rate_body - self.gyro_bias,
            raw.time,
        )
    }

    pub fn set_continuous_noise(&mut self, qc: Matrix12) {
        self.process_noise = ProcessNoise::Continuous(qc);
    }

    /// Installs a discrete Q̂ that covers `steps` predict intervals, spread evenly.
    pub fn install_discrete_noise(&mut self, q_hat: &Matrix12, steps: usize) {
        let per_step = q_hat / steps.max(1) as f64 + Matrix12::identity() * ADAPTIVE_JITTER;
        self.process_noise = ProcessNoise::Discrete(symmetrize(&per_step));
    }

    /// Discrete process noise added by one predict of length `dt` at attitude `c_bn`.
    pub fn discrete_noise(&self, c_bn: &Matrix3<f64>, dt: f64) -> Matrix12 {
        match &self.process_noise {
            ProcessNoise::Discrete(q) => *q,
            ProcessNoise::Continuous(qc) => {
                let mut qd = Matrix12::zeros();
                let accel = Matrix3::from_diagonal(&qc.diagonal().fixed_rows::<3>(0).into_owned());
                let gyro = Matrix3::from_diagonal(&qc.diagonal().fixed_rows::<3>(3).into_owned());
                let dt2 = dt * dt;
                qd.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&(c_bn * accel * c_bn.transpose() * dt2));
                qd.fixed_view_mut::<3, 3>(ATT, ATT).copy_from(&(c_bn * gyro * c_bn.transpose() * dt2));
                for i in BA..STATE_DIM {
                    qd[(i, i)] = qc[(i, i)] * dt2;
                }
                qd
            }
        }
    }

    /// Error-state transition `Φ = I + F dt` about the current nominal solution.
    pub fn transition(nav: &NavState, imu: &ImuSample, dt: f64) -> Matrix12 {
        let c_bn = nav.dcm();
        let f_ned = c_bn * imu.specific_force_body;
        let mut f = Matrix12::zeros();
        f.fixed_view_mut::<3, 3>(VEL, ATT).copy_from(&(-skew(&f_ned)));
        f.fixed_view_mut::<3, 3>(VEL, BA).copy_from(&(-c_bn));
        f.fixed_view_mut::<3, 3>(ATT, BG).copy_from(&(-c_bn));
        Matrix12::identity() + f * dt
    }

    /// Propagates the error state and covariance across one IMU interval that
    /// starts at `nav` with bias-compensated reading `imu`.
    pub fn predict(&mut self, nav: &NavState, imu: &ImuSample, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid(format!("predict step must be positive, got {dt}")));
        }
        let phi = Self::transition(nav, imu, dt);
        let qd = self.discrete_noise(&nav.dcm(), dt);
        self.delta_x = phi * self.delta_x;
        self.p = symmetrize(&(phi * self.p * phi.transpose() + qd));
        if !is_psd(&self.p) {
            return Err(Error::NotPositiveSemidefinite("predict"));
        }
        Ok(())
    }

    /// DVL update. The innovation is the measured velocity minus the INS
    /// velocity; the correction is left in `delta_x` until [`Self::correct`].
    pub fn update(&mut self, dvl: &DvlMeasurement, nav_velocity: &Vector3<f64>) -> Result<InnovationRecord> {
        let nu = dvl.velocity_ned - nav_velocity;
        if !nu.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("DVL innovation"));
        }
        let h = measurement_matrix();
        let (k, dx, p) = joseph_update(&self.p, &h, &self.r, &nu)?;
        if !is_psd(&p) {
            return Err(Error::NotPositiveSemidefinite("update"));
        }
        self.p = p;
        self.delta_x += dx;
        self.k_last = k;
        let record = InnovationRecord { nu, time: dvl.time };
        if self.innovation_window.len() == self.window_capacity {
            self.innovation_window.pop_front();
        }
        self.innovation_window.push_back(record);
        Ok(record)
    }

    /// Feeds the estimated error back into the nominal state and resets it.
    pub fn correct(&mut self, nav: &mut NavState) {
        let dx = self.delta_x;
        nav.velocity_ned += dx.fixed_rows::<3>(VEL);
        let tilt = UnitQuaternion::from_scaled_axis(dx.fixed_rows::<3>(ATT).into_owned());
        nav.attitude = tilt * nav.attitude;
        nav.attitude.renormalize();
        self.accel_bias += dx.fixed_rows::<3>(BA);
        self.gyro_bias += dx.fixed_rows::<3>(BG);
        self.delta_x = Vector12::zeros();
    }

    /// `innovation_covariance` over the current window.
    pub fn window_covariance(&self) -> Result<Matrix3<f64>> {
        let window: Vec<_> = self.innovation_window.iter().copied().collect();
        innovation_covariance(&window)
    }

    pub fn window_full(&self) -> bool {
        self.innovation_window.len() == self.window_capacity
    }

    /// Velocity block of P.
    pub fn velocity_covariance(&self) -> Matrix3<f64> {
        self.p.fixed_view::<3, 3>(VEL, VEL).into_owned()
    }

    /// Diagonal of the discrete Q a unit step would add at identity attitude.
    pub fn installed_q_diagonal(&self, dt: f64) -> Vector12 {
        self.discrete_noise(&Matrix3::identity(), dt).diagonal()
    }
}
