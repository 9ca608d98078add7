//! Ground-truth flight synthesis and sensor simulation.
//!
//! Truth is propagated on SE2(3) with the exact group exponential over each
//! sample interval, so every stored state is reachable from the previous one
//! under its stored inputs. Sensor noise is white Gaussian per delivered
//! sample, drawn from a seeded ChaCha stream.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attitude::{measure_imu, AccelModel, ImuSample, ReferenceEnvironment};
use crate::error::{Error, Result};
use crate::liegroup::{
    se23_exp, so3_exp, so3_log, Mat3, NavState, Rotation, TangentInput, Vec3,
};
use crate::uwb::{observe, AnchorSet, RangeObservation, Topology};

/// Time profile applied multiplicatively to every noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSchedule {
    Constant,
    /// Linear ramp of the scale from `from` at t = 0 to `to` at `duration`,
    /// held afterwards.
    Ramp { from: f64, to: f64, duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_omega: Vec3,
    pub sigma_a: Vec3,
    pub sigma_m: f64,
    pub sigma_range: f64,
    pub seed: u64,
    pub schedule: NoiseSchedule,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec {
            sigma_omega: Vec3::zeros(),
            sigma_a: Vec3::zeros(),
            sigma_m: 0.0,
            sigma_range: 0.0,
            seed: 0,
            schedule: NoiseSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [self.sigma_m, self.sigma_range];
        let mut all = self
            .sigma_omega
            .iter()
            .chain(self.sigma_a.iter())
            .chain(scalars.iter());
        if all.any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::BadParams("noise standard deviations must be >= 0".into()));
        }
        if let NoiseSchedule::Ramp { from, to, duration } = self.schedule {
            if !(from >= 0.0 && to >= 0.0 && duration > 0.0) {
                return Err(Error::BadParams("ramp needs from, to >= 0 and duration > 0".into()));
            }
        }
        Ok(())
    }

    pub fn scale_at(&self, t: f64) -> f64 {
        match self.schedule {
            NoiseSchedule::Constant => 1.0,
            NoiseSchedule::Ramp { from, to, duration } => {
                let u = (t / duration).clamp(0.0, 1.0);
                from + (to - from) * u
            }
        }
    }

    /// Largest scale the schedule reaches.
    pub fn sup_scale(&self) -> f64 {
        match self.schedule {
            NoiseSchedule::Constant => 1.0,
            NoiseSchedule::Ramp { from, to, .. } => from.max(to),
        }
    }

    /// Supremum of the gyro and accelerometer standard deviations.
    pub fn sup_sigma(&self) -> (Vec3, Vec3) {
        let s = self.sup_scale();
        (self.sigma_omega * s, self.sigma_a * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub state: NavState,
    /// Body angular rate applied from `t` to the next sample.
    pub omega: Vec3,
    /// Apparent (non-gravitational) acceleration in the body frame applied
    /// from `t` to the next sample, so that `dV/dt = R a + g`.
    pub a: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub samples: Vec<TruthSample>,
}

impl TruthTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// Gravity input of the true kinematics, `u(0, 0, -g, 1)`.
fn gravity_input(env: &ReferenceEnvironment) -> TangentInput {
    TangentInput::new(Vec3::zeros(), Vec3::zeros(), -env.g_vec, 1.0)
}

/// `exp(-G dt) X exp(U dt)` with `U = u(omega, 0, a, 1)`.
pub fn propagate_truth(
    x: &NavState,
    omega: &Vec3,
    a: &Vec3,
    env: &ReferenceEnvironment,
    dt: f64,
) -> NavState {
    let u = TangentInput::new(*omega, Vec3::zeros(), *a, 1.0);
    let left = se23_exp(&gravity_input(env), -dt);
    let right = se23_exp(&u, dt);
    NavState::from_matrix(&(left * x.to_matrix() * right))
        .expect("truth propagation stays in SE2(3)")
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    Hover {
        position: Vec3,
        yaw: f64,
    },
    /// Level circle at constant speed with heading along the tangent.
    Circle {
        center: Vec3,
        radius: f64,
        period: f64,
        phase: f64,
    },
    /// Sinusoidal motion per axis, with small roll/pitch and yaw oscillation.
    Lissajous {
        center: Vec3,
        amplitude: Vec3,
        frequency: Vec3,
        phase: Vec3,
        yaw_amplitude: f64,
        tilt_amplitude: f64,
        attitude_frequency: f64,
    },
    /// Recorded states; inputs are recovered from consecutive samples.
    Replay { times: Vec<f64>, states: Vec<NavState> },
}

impl TrajectoryKind {
    /// Circle of radius 2 m and period 10 s around the given center.
    pub fn circle(center: Vec3) -> Self {
        TrajectoryKind::Circle {
            center,
            radius: 2.0,
            period: 10.0,
            phase: 0.0,
        }
    }

    pub fn lissajous(center: Vec3) -> Self {
        TrajectoryKind::Lissajous {
            center,
            amplitude: Vec3::new(1.5, 1.0, 0.3),
            frequency: Vec3::new(0.1, 0.15, 0.05),
            phase: Vec3::new(0.0, FRAC_PI_2, 0.0),
            yaw_amplitude: 0.8,
            tilt_amplitude: 0.1,
            attitude_frequency: 0.07,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryParams {
    pub duration: f64,
    /// Sample rate in Hz.
    pub rate: f64,
}

/// Analytic motion: position, velocity, acceleration, attitude, body rate.
struct Motion {
    p: Vec3,
    v: Vec3,
    vdot: Vec3,
    r: Rotation,
    omega: Vec3,
}

fn zyx(yaw: f64, pitch: f64, roll: f64) -> Rotation {
    so3_exp(&Vec3::new(0.0, 0.0, yaw))
        * so3_exp(&Vec3::new(0.0, pitch, 0.0))
        * so3_exp(&Vec3::new(roll, 0.0, 0.0))
}

/// Body rates for ZYX Euler angles and their derivatives.
fn zyx_body_rate(pitch: f64, roll: f64, dyaw: f64, dpitch: f64, droll: f64) -> Vec3 {
    Vec3::new(
        droll - dyaw * pitch.sin(),
        dpitch * roll.cos() + dyaw * pitch.cos() * roll.sin(),
        -dpitch * roll.sin() + dyaw * pitch.cos() * roll.cos(),
    )
}

fn analytic_motion(kind: &TrajectoryKind, t: f64) -> Motion {
    match kind {
        TrajectoryKind::Hover { position, yaw } => Motion {
            p: *position,
            v: Vec3::zeros(),
            vdot: Vec3::zeros(),
            r: Rotation::about_z(*yaw),
            omega: Vec3::zeros(),
        },
        TrajectoryKind::Circle {
            center,
            radius,
            period,
            phase,
        } => {
            let w = 2.0 * PI / period;
            let th = w * t + phase;
            let (s, c) = th.sin_cos();
            Motion {
                p: center + Vec3::new(c, s, 0.0) * *radius,
                v: Vec3::new(-s, c, 0.0) * (radius * w),
                vdot: Vec3::new(c, s, 0.0) * (-radius * w * w),
                r: Rotation::about_z(th + FRAC_PI_2),
                omega: Vec3::new(0.0, 0.0, w),
            }
        }
        TrajectoryKind::Lissajous {
            center,
            amplitude,
            frequency,
            phase,
            yaw_amplitude,
            tilt_amplitude,
            attitude_frequency,
        } => {
            let mut p = *center;
            let mut v = Vec3::zeros();
            let mut vdot = Vec3::zeros();
            for i in 0..3 {
                let w = 2.0 * PI * frequency[i];
                let th = w * t + phase[i];
                p[i] += amplitude[i] * th.sin();
                v[i] = amplitude[i] * w * th.cos();
                vdot[i] = -amplitude[i] * w * w * th.sin();
            }
            let wa = 2.0 * PI * attitude_frequency;
            let yaw = yaw_amplitude * (wa * t).sin();
            let dyaw = yaw_amplitude * wa * (wa * t).cos();
            let pitch = tilt_amplitude * (1.3 * wa * t).sin();
            let dpitch = tilt_amplitude * 1.3 * wa * (1.3 * wa * t).cos();
            let roll = tilt_amplitude * (1.7 * wa * t).cos();
            let droll = -tilt_amplitude * 1.7 * wa * (1.7 * wa * t).sin();
            Motion {
                p,
                v,
                vdot,
                r: zyx(yaw, pitch, roll),
                omega: zyx_body_rate(pitch, roll, dyaw, dpitch, droll),
            }
        }
        TrajectoryKind::Replay { .. } => unreachable!("replay has no analytic motion"),
    }
}

/// Samples a truth trajectory at `params.rate`.
///
/// Analytic kinds are integrated with [`propagate_truth`] using inputs taken
/// at the midpoint of each interval; the acceleration input is expressed in
/// the propagated body frame so position tracks the analytic path closely.
pub fn generate_trajectory(
    kind: &TrajectoryKind,
    params: &TrajectoryParams,
    env: &ReferenceEnvironment,
) -> Result<TruthTrajectory> {
    if let TrajectoryKind::Replay { times, states } = kind {
        return replay(times, states, env);
    }
    validate_kind(kind)?;
    if !(params.rate > 0.0) || !(params.duration > 0.0) {
        return Err(Error::BadParams("trajectory needs rate > 0 and duration > 0".into()));
    }
    let dt = 1.0 / params.rate;
    let steps = (params.duration * params.rate).round() as usize;
    let m0 = analytic_motion(kind, 0.0);
    let mut state = NavState::new(m0.r, m0.p, m0.v);
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let mid = analytic_motion(kind, t + 0.5 * dt);
        let r_mid = state.r * so3_exp(&(mid.omega * (0.5 * dt)));
        let a = r_mid.transpose() * (mid.vdot - env.g_vec);
        samples.push(TruthSample {
            t,
            state,
            omega: mid.omega,
            a,
        });
        state = propagate_truth(&state, &mid.omega, &a, env, dt);
    }
    Ok(TruthTrajectory { samples })
}

fn validate_kind(kind: &TrajectoryKind) -> Result<()> {
    let ok = match kind {
        TrajectoryKind::Hover { position, yaw } => {
            position.iter().all(|c| c.is_finite()) && yaw.is_finite()
        }
        TrajectoryKind::Circle { radius, period, .. } => *radius > 0.0 && *period > 0.0,
        TrajectoryKind::Lissajous {
            amplitude,
            frequency,
            attitude_frequency,
            tilt_amplitude,
            ..
        } => {
            amplitude.iter().all(|a| a.is_finite())
                && frequency.iter().all(|f| *f >= 0.0)
                && *attitude_frequency >= 0.0
                && tilt_amplitude.abs() < FRAC_PI_2
        }
        TrajectoryKind::Replay { .. } => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::BadParams(format!("invalid trajectory parameters: {kind:?}")))
    }
}

/// Keeps the recorded states and recovers the inputs between them.
fn replay(times: &[f64], states: &[NavState], env: &ReferenceEnvironment) -> Result<TruthTrajectory> {
    if times.len() != states.len() {
        return Err(Error::BadParams("replay times and states differ in length".into()));
    }
    if times.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: times.len(),
        });
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::BadParams("replay times must increase".into()));
    }
    let n = times.len();
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let j = if k + 1 < n { k } else { k - 1 };
        let dt = times[j + 1] - times[j];
        let (x0, x1) = (&states[j], &states[j + 1]);
        let omega = so3_log(&(x0.r.transpose() * x1.r)) / dt;
        let vdot = (x1.v - x0.v) / dt;
        let r_mid = x0.r * so3_exp(&(omega * (0.5 * dt)));
        let a = r_mid.transpose() * (vdot - env.g_vec);
        samples.push(TruthSample {
            t: times[k],
            state: states[k],
            omega,
            a,
        });
    }
    Ok(TruthTrajectory { samples })
}

/// Savitzky-Golay differentiator settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SavitzkyGolay {
    pub window: usize,
    pub order: usize,
}

impl Default for SavitzkyGolay {
    fn default() -> Self {
        SavitzkyGolay {
            window: 11,
            order: 3,
        }
    }
}

/// Derivative weights for a polynomial fit over `window` points evaluated
/// at offset `at` inside the window.
fn sg_weights(window: usize, order: usize, at: usize) -> DVector<f64> {
    let vander = DMatrix::from_fn(window, order + 1, |k, j| {
        (k as f64 - at as f64).powi(j as i32)
    });
    let pinv = vander
        .pseudo_inverse(1e-12)
        .expect("Vandermonde pseudo-inverse");
    pinv.row(1).transpose()
}

/// Velocity from uniformly sampled positions by local polynomial fitting.
///
/// Interior samples use the centered window; the first and last half-window
/// samples are evaluated off-center on the first or last full window.
pub fn reconstruct_velocity(
    times: &[f64],
    positions: &[Vec3],
    sg: SavitzkyGolay,
) -> Result<Vec<Vec3>> {
    let n = positions.len();
    if n < 5 {
        return Err(Error::TooFewSamples { needed: 5, got: n });
    }
    if times.len() != n {
        return Err(Error::BadParams("times and positions differ in length".into()));
    }
    let h = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(h > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-6 * h.max(1e-9)) {
        return Err(Error::BadParams("velocity reconstruction needs a uniform rate".into()));
    }
    if sg.window.is_multiple_of(2) || sg.order + 1 > sg.window || sg.order < 1 {
        return Err(Error::BadParams(format!("invalid Savitzky-Golay settings {sg:?}")));
    }
    let mut window = sg.window.min(if !n.is_multiple_of(2) { n } else { n - 1 });
    let order = sg.order.min(window - 1);
    if window < order + 1 {
        window = order + 1;
    }
    let half = window / 2;
    let weights: Vec<DVector<f64>> = (0..window).map(|at| sg_weights(window, order, at)).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - window);
        let w = &weights[i - start];
        let mut v = Vec3::zeros();
        for (k, wk) in w.iter().enumerate() {
            v += positions[start + k] * *wk;
        }
        out.push(v / h);
    }
    Ok(out)
}

/// A ranging epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeEpoch {
    pub t: f64,
    pub obs: RangeObservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub imu: Vec<ImuSample>,
    pub ranges: Vec<RangeEpoch>,
}

#[derive(Debug, Clone)]
pub struct SensorSetup<'a> {
    pub anchors: &'a AnchorSet,
    pub topology: Topology,
    pub env: ReferenceEnvironment,
    pub noise: NoiseSpec,
    pub accel_model: AccelModel,
    /// Body-frame lever arm from the vehicle origin to the UWB tag.
    pub tag_offset: Vec3,
    /// Ranging is produced on every `range_decimation`-th truth sample.
    pub range_decimation: usize,
}

/// Synthesizes IMU samples on every truth sample and noisy ranging epochs.
///
/// IMU and ranging noise come from independent streams of the same seed, so
/// changing the ranging rate leaves the IMU noise untouched.
pub fn simulate_measurements(truth: &TruthTrajectory, setup: &SensorSetup<'_>) -> Result<Measurements> {
    setup.noise.validate()?;
    if setup.range_decimation == 0 {
        return Err(Error::BadParams("range decimation must be >= 1".into()));
    }
    let mut imu_rng = ChaCha8Rng::seed_from_u64(setup.noise.seed);
    imu_rng.set_stream(1);
    let mut range_rng = ChaCha8Rng::seed_from_u64(setup.noise.seed);
    range_rng.set_stream(2);

    let mut imu = Vec::with_capacity(truth.len());
    let mut ranges = Vec::with_capacity(truth.len() / setup.range_decimation + 1);
    for (k, s) in truth.samples.iter().enumerate() {
        let vdot = s.state.r * s.a + setup.env.g_vec;
        imu.push(measure_imu(
            s.t,
            &s.state,
            &s.omega,
            &vdot,
            &setup.env,
            &setup.noise,
            setup.accel_model,
            &mut imu_rng,
        ));
        if k % setup.range_decimation == 0 {
            let mut obs = observe(
                &s.state.p,
                setup.anchors,
                setup.topology,
                Some((&s.state.r, &setup.tag_offset)),
            );
            let sigma = setup.noise.sigma_range * setup.noise.scale_at(s.t);
            for d in obs.values_mut() {
                let n: f64 = rand::Rng::sample(&mut range_rng, rand_distr::StandardNormal);
                *d += sigma * n;
            }
            ranges.push(RangeEpoch { t: s.t, obs });
        }
    }
    Ok(Measurements { imu, ranges })
}

/// Attitude that best aligns body vectors with their references
/// (SVD solution of Wahba's problem).
pub fn wahba(body: &[Vec3], reference: &[Vec3], weights: &[f64]) -> Rotation {
    let mut b = Mat3::zeros();
    for ((v, r), w) in body.iter().zip(reference).zip(weights) {
        b += *w * r * v.transpose();
    }
    Rotation::project(&b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attitude::build_triads;
    use crate::uwb::{toa_solve, RangeObservation};
    use approx::assert_relative_eq;

    fn env() -> ReferenceEnvironment {
        ReferenceEnvironment::default()
    }

    #[test]
    fn hover_force_balance() {
        let env = env();
        let r = so3_exp(&Vec3::new(0.2, -0.1, 0.7));
        let v = Vec3::new(1.0, -0.5, 0.25);
        let mut x = NavState::new(r, Vec3::new(1.0, 2.0, 3.0), v);
        let a = r.transpose() * (-env.g_vec);
        for k in 1..=100 {
            x = propagate_truth(&x, &Vec3::zeros(), &a, &env, 0.01);
            assert_relative_eq!(x.v, v, epsilon = 1e-12);
            assert_relative_eq!(x.p, Vec3::new(1.0, 2.0, 3.0) + v * (k as f64 * 0.01), epsilon = 1e-11);
        }
    }

    #[test]
    fn free_fall_gains_g_dt() {
        let env = env();
        let mut x = NavState::identity();
        for k in 1..=50 {
            let next = propagate_truth(&x, &Vec3::new(0.1, 0.0, 0.3), &Vec3::zeros(), &env, 0.02);
            assert_relative_eq!(next.v.z - x.v.z, env.g() * 0.02, epsilon = 1e-12);
            x = next;
            assert_relative_eq!(x.p.z, 0.5 * env.g() * (k as f64 * 0.02).powi(2), epsilon = 1e-10);
        }
    }

    #[test]
    fn circle_closes_and_keeps_speed() {
        let env = env();
        let kind = TrajectoryKind::circle(Vec3::new(0.0, 0.0, 1.5));
        let traj = generate_trajectory(&kind, &TrajectoryParams { duration: 10.0, rate: 500.0 }, &env).unwrap();
        let first = traj.samples[0].state;
        let last = traj.samples.last().unwrap().state;
        assert!((first.p - last.p).norm() < 1e-6);
        assert!((first.v - last.v).norm() < 1e-6);
        assert!((first.r.matrix() - last.r.matrix()).norm() < 1e-6);
        let speed = 2.0 * PI * 2.0 / 10.0;
        for s in &traj.samples {
            assert_relative_eq!(s.state.v.norm(), speed, epsilon = 1e-9);
        }
    }

    #[test]
    fn hover_at_replica_start() {
        let p0 = Vec3::new(-0.061, 1.244, 1.506);
        let kind = TrajectoryKind::Hover { position: p0, yaw: 0.0 };
        let traj = generate_trajectory(&kind, &TrajectoryParams { duration: 2.0, rate: 100.0 }, &env()).unwrap();
        assert_eq!(traj.len(), 201);
        for s in &traj.samples {
            assert!((s.state.p - p0).norm() < 1e-12);
        }
    }

    #[test]
    fn lissajous_tracks_analytic_path() {
        let kind = TrajectoryKind::lissajous(Vec3::new(0.0, 0.0, 1.5));
        let traj = generate_trajectory(&kind, &TrajectoryParams { duration: 20.0, rate: 500.0 }, &env()).unwrap();
        for s in traj.samples.iter().step_by(250) {
            let m = analytic_motion(&kind, s.t);
            assert!((s.state.p - m.p).norm() < 1e-3);
            assert!((s.state.r.matrix() - m.r.matrix()).norm() < 1e-3);
        }
    }

    #[test]
    fn replay_reproduces_positions() {
        let kind = TrajectoryKind::lissajous(Vec3::new(0.0, 0.0, 1.5));
        let env = env();
        let src = generate_trajectory(&kind, &TrajectoryParams { duration: 2.0, rate: 100.0 }, &env).unwrap();
        let times: Vec<f64> = src.samples.iter().map(|s| s.t).collect();
        let states: Vec<NavState> = src.samples.iter().map(|s| s.state).collect();
        let rep = generate_trajectory(
            &TrajectoryKind::Replay { times, states },
            &TrajectoryParams { duration: 0.0, rate: 0.0 },
            &env,
        )
        .unwrap();
        for (a, b) in src.samples.iter().zip(&rep.samples) {
            assert_eq!(a.state.p, b.state.p);
        }
    }

    #[test]
    fn bad_params_rejected() {
        let kind = TrajectoryKind::Circle {
            center: Vec3::zeros(),
            radius: -1.0,
            period: 10.0,
            phase: 0.0,
        };
        let err = generate_trajectory(&kind, &TrajectoryParams { duration: 1.0, rate: 100.0 }, &env());
        assert!(matches!(err, Err(Error::BadParams(_))));
    }

    fn sample_times(n: usize, h: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * h).collect()
    }

    #[test]
    fn velocity_of_linear_motion_is_exact() {
        let t = sample_times(40, 0.01);
        let v0 = Vec3::new(0.3, -1.2, 2.0);
        let p: Vec<Vec3> = t.iter().map(|&s| Vec3::new(1.0, 2.0, 3.0) + v0 * s).collect();
        for v in reconstruct_velocity(&t, &p, SavitzkyGolay::default()).unwrap() {
            assert!((v - v0).norm() < 1e-9);
        }
        let still: Vec<Vec3> = t.iter().map(|_| Vec3::new(4.0, 5.0, 6.0)).collect();
        for v in reconstruct_velocity(&t, &still, SavitzkyGolay::default()).unwrap() {
            assert!(v.norm() < 1e-9);
        }
    }

    #[test]
    fn velocity_of_sinusoid() {
        let t = sample_times(300, 0.01);
        let w = 2.0 * PI;
        let p: Vec<Vec3> = t.iter().map(|&s| Vec3::new((w * s).sin(), 0.0, 0.0)).collect();
        let v = reconstruct_velocity(&t, &p, SavitzkyGolay::default()).unwrap();
        let worst = t
            .iter()
            .zip(&v)
            .map(|(&s, v)| (v.x - w * (w * s).cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01 * w, "{worst}");
    }

    #[test]
    fn velocity_needs_five_samples() {
        let t = sample_times(4, 0.01);
        let p = vec![Vec3::zeros(); 4];
        assert!(matches!(
            reconstruct_velocity(&t, &p, SavitzkyGolay::default()),
            Err(Error::TooFewSamples { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn noise_streams_are_deterministic() {
        let anchors = AnchorSet::new(
            vec![
                Vec3::new(-4.0, -4.0, 0.2),
                Vec3::new(4.0, -4.0, 2.8),
                Vec3::new(4.0, 4.0, 0.2),
                Vec3::new(-4.0, 4.0, 2.8),
                Vec3::new(0.0, 0.0, 3.0),
            ],
            3,
        )
        .unwrap();
        let env = env();
        let traj = generate_trajectory(
            &TrajectoryKind::circle(Vec3::new(0.0, 0.0, 1.5)),
            &TrajectoryParams { duration: 1.0, rate: 100.0 },
            &env,
        )
        .unwrap();
        let mut noise = NoiseSpec::zero();
        noise.sigma_omega = Vec3::repeat(0.01);
        noise.sigma_a = Vec3::repeat(0.05);
        noise.sigma_m = 0.2;
        noise.sigma_range = 0.05;
        noise.seed = 42;
        let setup = SensorSetup {
            anchors: &anchors,
            topology: Topology::TdoaRing,
            env,
            noise,
            accel_model: AccelModel::Full,
            tag_offset: Vec3::new(-0.012, 0.001, 0.091),
            range_decimation: 1,
        };
        let a = simulate_measurements(&traj, &setup).unwrap();
        let b = simulate_measurements(&traj, &setup).unwrap();
        assert_eq!(a, b);
        let mut other = setup.clone();
        other.noise.seed = 43;
        assert_ne!(a, simulate_measurements(&traj, &other).unwrap());
    }

    #[test]
    fn zero_noise_measurements_invert_to_truth() {
        let anchors = AnchorSet::new(
            vec![
                Vec3::new(-4.0, -4.0, 0.2),
                Vec3::new(4.0, -4.0, 2.8),
                Vec3::new(4.0, 4.0, 0.2),
                Vec3::new(-4.0, 4.0, 2.8),
                Vec3::new(0.0, 0.5, 3.0),
            ],
            3,
        )
        .unwrap();
        let env = env();
        let traj = generate_trajectory(
            &TrajectoryKind::lissajous(Vec3::new(0.0, 0.0, 1.5)),
            &TrajectoryParams { duration: 2.0, rate: 200.0 },
            &env,
        )
        .unwrap();
        let setup = SensorSetup {
            anchors: &anchors,
            topology: Topology::Toa,
            env,
            noise: NoiseSpec::zero(),
            accel_model: AccelModel::Full,
            tag_offset: Vec3::zeros(),
            range_decimation: 1,
        };
        let m = simulate_measurements(&traj, &setup).unwrap();
        let dt = 1.0 / 200.0;
        for k in 0..traj.len() - 1 {
            let s = &traj.samples[k];
            let imu = &m.imu[k];
            let next = propagate_truth(&s.state, &imu.omega_m, &imu.a_m, &env, dt);
            assert!((next.to_matrix() - traj.samples[k + 1].state.to_matrix()).amax() < 1e-9);
            let RangeObservation::Toa(r) = &m.ranges[k].obs else { unreachable!() };
            assert!((toa_solve(&anchors, r).unwrap().p - s.state.p).norm() < 1e-9);
        }

        // low-frequency accelerometer: attitude is recoverable from the triads
        let hover = generate_trajectory(
            &TrajectoryKind::Hover { position: Vec3::new(0.0, 0.0, 1.0), yaw: 0.7 },
            &TrajectoryParams { duration: 0.1, rate: 100.0 },
            &env,
        )
        .unwrap();
        let mut lf = setup.clone();
        lf.accel_model = AccelModel::LowFrequency;
        let m = simulate_measurements(&hover, &lf).unwrap();
        for (s, imu) in hover.samples.iter().zip(&m.imu) {
            let t = build_triads(&imu.a_m, &imu.m_m, &env, &[1.0, 1.0, 1.0]).unwrap();
            let r = wahba(&t.v, &t.r, &t.s);
            assert!((r.matrix() - s.state.r.matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn ramp_schedule() {
        let mut n = NoiseSpec::zero();
        n.schedule = NoiseSchedule::Ramp { from: 1.0, to: 3.0, duration: 10.0 };
        assert_eq!(n.scale_at(0.0), 1.0);
        assert_eq!(n.scale_at(5.0), 2.0);
        assert_eq!(n.scale_at(20.0), 3.0);
        assert_eq!(n.sup_scale(), 3.0);
    }
}
