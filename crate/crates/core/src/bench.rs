//! Monte-Carlo evaluation of process-noise policies on a simulated mission.
//!
//! Every run draws one set of sensor noise and initial navigation error; all
//! policies in a campaign are evaluated on the same draws (common random
//! numbers), so per-run differences between policies can be paired.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::eskf::{
    adapt_q, build_qc, initial_covariance, is_psd, max_asymmetry, ErrorStateFilter, Vector12, BIAS_VARIANCE,
};
use crate::error::{invalid, Error, Result};
use crate::pronet::{Regressor, Variant};
use crate::sim::{corrupt_imu, generate_trajectory, invert_trajectory, synthesize_dvl, DvlMeasurement, NoiseProfile, TrajectoryKind};
use crate::strapdown::{propagate, ImuSample, NavState};

const INIT_STREAM: u64 = 3;

/// Velocity NEES band used for the consistency check (3 DOF, averaged over runs).
pub const NEES_BAND: (f64, f64) = (2.35, 3.72);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Fixed per-sample variances for the accelerometer and gyro channels.
    ConstantQ { q_f: f64, q_w: f64 },
    /// `K C Kᵀ` from a window of `window` innovations, installed after every update.
    InnovationAdaptive { window: usize },
    /// Regressor-predicted variances installed every `tuning_rate` seconds
    /// (`None` never retunes).
    Learned { variant: Variant, tuning_rate: Option<f64> },
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::ConstantQ { q_f, q_w } => format!("constant q_f={q_f} q_w={q_w}"),
            Policy::InnovationAdaptive { window } => format!("adaptive xi={window}"),
            Policy::Learned { variant, .. } => format!("pronet {variant}"),
        }
    }

    /// The six policies of the comparison table, given the true IMU variances.
    pub fn table(q_f: f64, q_w: f64, tuning_rate: f64) -> Vec<Policy> {
        vec![
            Policy::ConstantQ { q_f, q_w },
            Policy::ConstantQ { q_f: 20.0 * q_f, q_w: 20.0 * q_w },
            Policy::InnovationAdaptive { window: 1 },
            Policy::InnovationAdaptive { window: 5 },
            Policy::Learned { variant: Variant::Baseline, tuning_rate: Some(tuning_rate) },
            Policy::Learned { variant: Variant::Detrend, tuning_rate: Some(tuning_rate) },
        ]
    }
}

/// Simulated sensor noise (per-sample variances).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoise {
    pub accel_variance: f64,
    pub gyro_variance: f64,
    pub dvl_variance: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self { accel_variance: 0.01, gyro_variance: 0.001, dvl_variance: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub policy: Policy,
    pub trajectory: TrajectoryKind,
    /// Mission length T, s.
    pub duration: f64,
    /// IMU rate 1/Δt₀, Hz.
    pub imu_rate: f64,
    /// DVL interval Δτ, s.
    pub dvl_interval: f64,
    pub noise: SensorNoise,
    /// Filter measurement variance per axis, (m/s)².
    pub r_variance: f64,
    /// Q the adaptive and learned policies start from.
    pub initial_q_f: f64,
    pub initial_q_w: f64,
    pub bias_variance: f64,
    /// Draw the initial velocity and attitude error from the initial covariance.
    pub initial_error: bool,
    pub mc_runs: usize,
    pub seed: u64,
    /// Keep the per-epoch trace of run 0.
    pub keep_trace: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            policy: Policy::ConstantQ { q_f: 0.01, q_w: 0.001 },
            trajectory: TrajectoryKind::EvalMixed,
            duration: 330.0,
            imu_rate: 100.0,
            dvl_interval: 1.0,
            noise: SensorNoise::default(),
            r_variance: 0.01,
            initial_q_f: 0.01,
            initial_q_w: 0.001,
            bias_variance: BIAS_VARIANCE,
            initial_error: true,
            mc_runs: 100,
            seed: 0,
            keep_trace: false,
        }
    }
}

impl ScenarioConfig {
    fn steps(&self, seconds: f64, what: &str) -> Result<usize> {
        let n = seconds * self.imu_rate;
        if !(n.is_finite() && n >= 1.0 && (n - n.round()).abs() < 1e-6) {
            return Err(invalid(format!("{what} of {seconds} s is not a whole number of IMU steps")));
        }
        Ok(n.round() as usize)
    }

    fn dvl_stride(&self) -> Result<usize> {
        self.steps(self.dvl_interval, "DVL interval")
    }

    fn validate_policy(&self, policy: &Policy, models: &[Regressor]) -> Result<()> {
        match policy {
            Policy::ConstantQ { q_f, q_w } => build_qc(Vector3::repeat(*q_f), Vector3::repeat(*q_w), self.bias_variance).map(|_| ()),
            Policy::InnovationAdaptive { window } if *window == 0 => Err(invalid("adaptive window must be at least 1")),
            Policy::InnovationAdaptive { .. } => Ok(()),
            Policy::Learned { variant, tuning_rate } => {
                if let Some(rate) = tuning_rate {
                    self.steps(*rate, "tuning rate")?;
                }
                model_for(models, *variant).map(|_| ())
            }
        }
    }
}

fn model_for(models: &[Regressor], variant: Variant) -> Result<&Regressor> {
    models
        .iter()
        .find(|m| m.variant == variant)
        .ok_or_else(|| invalid(format!("learned policy needs a trained {variant} model")))
}

/// `sqrt(mean_k Σ_j δv_jk²)`.
pub fn srmse(errors: &[Vector3<f64>]) -> Result<f64> {
    if errors.is_empty() {
        return Err(invalid("srmse of an empty sequence"));
    }
    Ok((errors.iter().map(|e| e.norm_squared()).sum::<f64>() / errors.len() as f64).sqrt())
}

/// `mean_k Σ_j |δv_jk|` (the axis sum is not averaged).
pub fn smae(errors: &[Vector3<f64>]) -> Result<f64> {
    if errors.is_empty() {
        return Err(invalid("smae of an empty sequence"));
    }
    Ok(errors.iter().map(|e| e.abs().sum()).sum::<f64>() / errors.len() as f64)
}

/// One row of the per-epoch filter log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub true_velocity: Vector3<f64>,
    pub est_velocity: Vector3<f64>,
    /// Velocity correction applied at this epoch (zero between DVL fixes).
    pub correction: Vector3<f64>,
    pub p_diagonal: Vector12,
    /// Discrete Q one step would add at identity attitude.
    pub q_diagonal: Vector12,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run: usize,
    pub srmse: f64,
    pub smae: f64,
    /// Post-update velocity NEES at every DVL epoch.
    pub nees: Vec<f64>,
    pub psd_every_epoch: bool,
    pub max_asymmetry: f64,
    pub trace: Option<Vec<TraceRow>>,
}

/// Inputs shared by every policy within one run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub run: usize,
    pub imu: Vec<ImuSample>,
    pub dvl: Vec<DvlMeasurement>,
    pub initial: NavState,
}

/// Ground truth of a campaign: the trajectory is the same for every run.
#[derive(Debug, Clone)]
pub struct Mission {
    pub truth: Vec<NavState>,
    pub perfect_imu: Vec<ImuSample>,
}

impl Mission {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.dvl_stride()?;
        let truth = generate_trajectory(cfg.trajectory, cfg.duration, cfg.imu_rate, cfg.seed)?;
        let perfect_imu = invert_trajectory(&truth)?;
        Ok(Self { truth, perfect_imu })
    }
}

fn run_seed(seed: u64, run: usize) -> u64 {
    // splitmix64 of (seed, run)
    let mut z = seed ^ (run as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noisy sensor streams and perturbed initial state for run `run`.
pub fn run_data(cfg: &ScenarioConfig, mission: &Mission, run: usize) -> Result<RunData> {
    let seed = run_seed(cfg.seed, run);
    let n = &cfg.noise;
    let profile = NoiseProfile::new(n.accel_variance, n.gyro_variance, n.dvl_variance, seed);
    let imu = corrupt_imu(&mission.perfect_imu, &profile)?;
    let dvl = synthesize_dvl(&mission.truth, &profile, cfg.dvl_interval)?;
    let mut initial = mission.truth[0];
    if cfg.initial_error {
        let p0 = initial_covariance();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let mut draw = |var: f64| {
            let z: f64 = rng.sample(StandardNormal);
            var.sqrt() * z
        };
        let dv = Vector3::new(draw(p0[(0, 0)]), draw(p0[(1, 1)]), draw(p0[(2, 2)]));
        let de = Vector3::new(draw(p0[(3, 3)]), draw(p0[(4, 4)]), draw(p0[(5, 5)]));
        // Errors are truth minus estimate.
        initial.velocity_ned -= dv;
        initial.attitude = UnitQuaternion::from_scaled_axis(-de) * initial.attitude;
    }
    Ok(RunData { run, imu, dvl, initial })
}

fn velocity_nees(err: &Vector3<f64>, p_vv: &Matrix3<f64>) -> Result<f64> {
    let chol = p_vv.cholesky().ok_or(Error::NotPositiveSemidefinite("velocity covariance"))?;
    Ok(err.dot(&chol.solve(err)))
}

/// Runs one policy over one run's data: mechanize every IMU epoch, update at
/// every DVL fix, and retune Q as the policy dictates.
pub fn run_policy(
    cfg: &ScenarioConfig,
    policy: &Policy,
    mission: &Mission,
    data: &RunData,
    models: &[Regressor],
) -> Result<RunOutcome> {
    cfg.validate_policy(policy, models)?;
    let n = mission.truth.len();
    if data.imu.len() != n {
        return Err(Error::ShapeMismatch { context: "IMU samples per truth state", expected: n, actual: data.imu.len() });
    }
    let dt = 1.0 / cfg.imu_rate;
    let stride = cfg.dvl_stride()?;
    let (q_f0, q_w0) = match policy {
        Policy::ConstantQ { q_f, q_w } => (*q_f, *q_w),
        _ => (cfg.initial_q_f, cfg.initial_q_w),
    };
    let qc0 = build_qc(Vector3::repeat(q_f0), Vector3::repeat(q_w0), cfg.bias_variance)?;
    let window = match policy {
        Policy::InnovationAdaptive { window } => *window,
        _ => 1,
    };
    let mut filter = ErrorStateFilter::new(qc0, Matrix3::identity() * cfg.r_variance, initial_covariance(), window)?;
    let learned = match policy {
        Policy::Learned { variant, tuning_rate: Some(rate) } => {
            let model = model_for(models, *variant)?;
            Some((model, cfg.steps(*rate, "tuning rate")?))
        }
        _ => None,
    };
    let window_len = learned.map(|(m, _)| m.arch.input_len).unwrap_or(0);

    let mut nav = data.initial;
    let mut errors = Vec::with_capacity(n);
    let mut nees = Vec::with_capacity(data.dvl.len());
    let mut psd = true;
    let mut asym = 0.0f64;
    let mut trace = (cfg.keep_trace && data.run == 0).then(|| Vec::with_capacity(n));
    let mut channels: [Vec<f64>; 6] = Default::default();
    for k in 0..n {
        let truth = &mission.truth[k];
        let mut correction = Vector3::zeros();
        if k % stride == 0 {
            if let Some(fix) = data.dvl.get(k / stride) {
                let before = nav.velocity_ned;
                filter.update(fix, &nav.velocity_ned)?;
                filter.correct(&mut nav);
                correction = nav.velocity_ned - before;
                nees.push(velocity_nees(&(truth.velocity_ned - nav.velocity_ned), &filter.velocity_covariance())?);
                if let Policy::InnovationAdaptive { .. } = policy {
                    if filter.window_full() {
                        let q_hat = adapt_q(&filter.k_last, &filter.window_covariance()?);
                        filter.install_discrete_noise(&q_hat, stride);
                    }
                }
            }
        }
        if let Some((model, every)) = learned {
            if k >= window_len && k % every == 0 {
                let recent = &data.imu[k - window_len..k];
                for (c, buf) in channels.iter_mut().enumerate() {
                    buf.clear();
                    buf.extend(recent.iter().map(|s| s.channel(c)));
                }
                let views: [&[f64]; 6] = std::array::from_fn(|c| channels[c].as_slice());
                let (q_f, q_w) = model.infer_q(&views)?;
                filter.set_continuous_noise(build_qc(q_f, q_w, cfg.bias_variance)?);
            }
        }
        let err = truth.velocity_ned - nav.velocity_ned;
        if !err.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("velocity estimate"));
        }
        errors.push(err);
        psd &= is_psd(&filter.p);
        asym = asym.max(max_asymmetry(&filter.p));
        if let Some(rows) = trace.as_mut() {
            rows.push(TraceRow {
                time: truth.time,
                true_velocity: truth.velocity_ned,
                est_velocity: nav.velocity_ned,
                correction,
                p_diagonal: filter.p.diagonal(),
                q_diagonal: filter.installed_q_diagonal(dt),
            });
        }
        if k + 1 < n {
            let imu = filter.compensate(&data.imu[k]);
            filter.predict(&nav, &imu, dt)?;
            nav = propagate(&nav, &imu, dt)?;
        }
    }
    Ok(RunOutcome {
        run: data.run,
        srmse: srmse(&errors)?,
        smae: smae(&errors)?,
        nees,
        psd_every_epoch: psd,
        max_asymmetry: asym,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub run: usize,
    pub srmse: f64,
    pub smae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub policy: Policy,
    /// Means of the per-run values.
    pub srmse: f64,
    pub smae: f64,
    /// Sorted by run id.
    pub runs: Vec<RunMetrics>,
    /// Time of each DVL epoch and the velocity NEES averaged over runs there.
    pub nees_times: Vec<f64>,
    pub nees_mean: Vec<f64>,
    pub psd_every_epoch: bool,
    pub max_asymmetry: f64,
    pub trace: Option<Vec<TraceRow>>,
}

impl MetricsReport {
    pub fn label(&self) -> String {
        self.policy.label()
    }

    pub fn smae_values(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.smae).collect()
    }

    pub fn srmse_values(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.srmse).collect()
    }

    /// Fraction of DVL epochs at or after `after` seconds whose run-averaged
    /// NEES lies inside `band`.
    pub fn nees_fraction_in_band(&self, band: (f64, f64), after: f64) -> f64 {
        let sel: Vec<f64> =
            self.nees_times.iter().zip(&self.nees_mean).filter(|(t, _)| **t >= after).map(|(_, v)| *v).collect();
        if sel.is_empty() {
            return 0.0;
        }
        sel.iter().filter(|v| **v >= band.0 && **v <= band.1).count() as f64 / sel.len() as f64
    }
}

fn summarize(policy: Policy, mut outcomes: Vec<RunOutcome>, dvl_times: &[f64]) -> Result<MetricsReport> {
    outcomes.sort_by_key(|o| o.run);
    let n = outcomes.len() as f64;
    if outcomes.is_empty() {
        return Err(invalid("campaign needs at least one run"));
    }
    let runs: Vec<RunMetrics> = outcomes.iter().map(|o| RunMetrics { run: o.run, srmse: o.srmse, smae: o.smae }).collect();
    let epochs = outcomes[0].nees.len();
    let nees_mean = (0..epochs).map(|e| outcomes.iter().map(|o| o.nees[e]).sum::<f64>() / n).collect();
    Ok(MetricsReport {
        policy,
        srmse: runs.iter().map(|r| r.srmse).sum::<f64>() / n,
        smae: runs.iter().map(|r| r.smae).sum::<f64>() / n,
        runs,
        nees_times: dvl_times[..epochs].to_vec(),
        nees_mean,
        psd_every_epoch: outcomes.iter().all(|o| o.psd_every_epoch),
        max_asymmetry: outcomes.iter().map(|o| o.max_asymmetry).fold(0.0, f64::max),
        trace: outcomes.into_iter().find(|o| o.run == 0).and_then(|o| o.trace),
    })
}

/// Evaluates every policy on the same `cfg.mc_runs` runs. `cfg.policy` is ignored.
pub fn run_campaign(cfg: &ScenarioConfig, policies: &[Policy], models: &[Regressor]) -> Result<Vec<MetricsReport>> {
    if cfg.mc_runs == 0 {
        return Err(invalid("mc_runs must be at least 1"));
    }
    for p in policies {
        cfg.validate_policy(p, models)?;
    }
    let mission = Mission::new(cfg)?;
    let per_run: Vec<Vec<RunOutcome>> = (0..cfg.mc_runs)
        .into_par_iter()
        .map(|run| {
            let data = run_data(cfg, &mission, run)?;
            policies.iter().map(|p| run_policy(cfg, p, &mission, &data, models)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let stride = cfg.dvl_stride()?;
    let dvl_times: Vec<f64> = mission.truth.iter().step_by(stride).map(|s| s.time).collect();
    let mut by_policy: Vec<Vec<RunOutcome>> = vec![Vec::with_capacity(cfg.mc_runs); policies.len()];
    for run in per_run {
        for (slot, outcome) in by_policy.iter_mut().zip(run) {
            slot.push(outcome);
        }
    }
    policies.iter().zip(by_policy).map(|(p, o)| summarize(*p, o, &dvl_times)).collect()
}

/// Monte-Carlo evaluation of `cfg.policy` alone.
pub fn run_scenario(cfg: &ScenarioConfig, model: Option<&Regressor>) -> Result<MetricsReport> {
    let models: Vec<Regressor> = model.into_iter().cloned().collect();
    let mut reports = run_campaign(cfg, &[cfg.policy], &models)?;
    Ok(reports.remove(0))
}

/// Percentile bootstrap interval of a mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn bootstrap_means(values: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    (0..resamples).map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect()
}

/// Bootstrap interval for `mean(a - b)` over paired samples.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, confidence: f64, seed: u64) -> Result<Interval> {
    if a.is_empty() || a.len() != b.len() {
        return Err(invalid(format!("paired bootstrap needs equal non-empty samples, got {} and {}", a.len(), b.len())));
    }
    if resamples == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid("bootstrap needs resamples > 0 and confidence in (0, 1)"));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut means = bootstrap_means(&diff, resamples, seed);
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(Interval { estimate: mean(&diff), lo: at(tail), hi: at(1.0 - tail) })
}

/// Bootstrap standard error of the mean.
pub fn bootstrap_standard_error(values: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if values.is_empty() || resamples < 2 {
        return Err(invalid("standard error needs values and at least two resamples"));
    }
    let means = bootstrap_means(values, resamples, seed);
    let m = mean(&means);
    Ok((means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let z = vec![Vector3::zeros(); 4];
        assert_eq!(srmse(&z).unwrap(), 0.0);
        assert_eq!(smae(&z).unwrap(), 0.0);
        assert_eq!(srmse(&[Vector3::new(1.0, 0.0, 0.0)]).unwrap(), 1.0);
        assert!((srmse(&[Vector3::repeat(1.0), Vector3::zeros()]).unwrap() - 1.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(smae(&[Vector3::new(1.0, -1.0, 0.5)]).unwrap(), 2.5);
        assert_eq!(smae(&[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)]).unwrap(), 1.5);
        assert!(srmse(&[]).is_err() && smae(&[]).is_err());
    }

    #[test]
    fn bootstrap_brackets_a_clear_difference() {
        let a: Vec<f64> = (0..100).map(|i| 1.0 + 0.01 * ((i * 37) % 11) as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x - 0.05).collect();
        let ci = paired_bootstrap(&a, &b, 2000, 0.9, 1).unwrap();
        assert!((ci.estimate - 0.05).abs() < 1e-12 && ci.lo <= 0.05 + 1e-12 && ci.hi >= 0.05 - 1e-12);
        assert!(ci.excludes_zero());
        let same = paired_bootstrap(&a, &a, 100, 0.9, 1).unwrap();
        assert!(!same.excludes_zero());
        assert!(paired_bootstrap(&a, &b[..3], 100, 0.9, 1).is_err());
    }

    #[test]
    fn table_has_six_policies() {
        let t = Policy::table(0.01, 0.001, 1.0);
        assert_eq!(t.len(), 6);
        assert_eq!(t[1], Policy::ConstantQ { q_f: 0.2, q_w: 0.02 });
    }

    #[test]
    fn learned_policy_without_model_is_rejected() {
        let cfg = ScenarioConfig {
            policy: Policy::Learned { variant: Variant::Detrend, tuning_rate: Some(1.0) },
            duration: 5.0,
            mc_runs: 1,
            ..ScenarioConfig::default()
        };
        assert!(run_scenario(&cfg, None).is_err());
    }
}
