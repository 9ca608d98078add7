//! IMU measurement models and vector triads for attitude observation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::liegroup::{Mat3, NavState, Vec3};
use crate::sim::NoiseSpec;

/// Cross products below this norm are considered degenerate.
pub const DEGENERACY_EPS: f64 = 1e-6;
/// Default gravitational acceleration (m/s^2).
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Gyroscope (rad/s, body frame).
    pub omega_m: Vec3,
    /// Accelerometer specific force (m/s^2, body frame).
    pub a_m: Vec3,
    /// Magnetometer (normalized field units, body frame).
    pub m_m: Vec3,
}

/// Gravity and magnetic field expressed in the NED inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceEnvironment {
    pub g_vec: Vec3,
    pub m_r: Vec3,
}

impl ReferenceEnvironment {
    pub fn new(g: f64, m_r: Vec3) -> Result<Self> {
        let g_vec = Vec3::new(0.0, 0.0, g);
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::BadParams(format!("gravity must be positive, got {g}")));
        }
        if g_vec.cross(&m_r).norm() <= DEGENERACY_EPS * m_r.norm().max(1.0) {
            return Err(Error::BadParams(
                "magnetic reference is parallel to gravity".into(),
            ));
        }
        Ok(ReferenceEnvironment { g_vec, m_r })
    }

    pub fn g(&self) -> f64 {
        self.g_vec.z
    }
}

impl Default for ReferenceEnvironment {
    fn default() -> Self {
        ReferenceEnvironment {
            g_vec: Vec3::new(0.0, 0.0, STANDARD_GRAVITY),
            m_r: Vec3::new(-1.3, 0.0, 1.5),
        }
    }
}

/// Accelerometer model used when synthesizing measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccelModel {
    /// `a_m = R^T (dV/dt - g)`.
    #[default]
    Full,
    /// `a_m = -R^T g`, ignoring vehicle acceleration.
    LowFrequency,
}

/// Synthesizes one IMU sample from the true state and motion.
#[allow(clippy::too_many_arguments)]
pub fn measure_imu<R: Rng + ?Sized>(
    t: f64,
    truth: &NavState,
    omega: &Vec3,
    vdot: &Vec3,
    env: &ReferenceEnvironment,
    noise: &NoiseSpec,
    model: AccelModel,
    rng: &mut R,
) -> ImuSample {
    let rt = truth.r.transpose();
    let specific = match model {
        AccelModel::Full => rt * (vdot - env.g_vec),
        AccelModel::LowFrequency => rt * (-env.g_vec),
    };
    let scale = noise.scale_at(t);
    let n_omega = gaussian3(rng).component_mul(&noise.sigma_omega) * scale;
    let n_a = gaussian3(rng).component_mul(&noise.sigma_a) * scale;
    let n_m = gaussian3(rng) * (noise.sigma_m * scale);
    ImuSample {
        t,
        omega_m: omega + n_omega,
        a_m: specific + n_a,
        m_m: rt * env.m_r + n_m,
    }
}

pub(crate) fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Three body-frame unit vectors paired with their inertial references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriadSet {
    pub v: [Vec3; 3],
    pub r: [Vec3; 3],
    pub s: [f64; 3],
}

pub const DEFAULT_WEIGHTS: [f64; 3] = [1.0, 1.0, 1.0];

fn check_weights(s: &[f64; 3]) -> Result<()> {
    let sum: f64 = s.iter().sum();
    if s.iter().any(|w| !(*w >= 0.0)) || (sum - 3.0).abs() > 1e-9 {
        return Err(Error::BadParams(format!(
            "triad weights must be nonnegative and sum to 3, got {s:?}"
        )));
    }
    Ok(())
}

/// Normalizes `(x, y, x cross y)` into a unit triad, failing when `x` or
/// `x cross y` is too small to normalize.
fn unit_triad(x: &Vec3, y: &Vec3, what: &str) -> Result<[Vec3; 3]> {
    let nx = x.norm();
    let ny = y.norm();
    let c = x.cross(y);
    let nc = c.norm();
    if nx <= DEGENERACY_EPS || ny <= DEGENERACY_EPS || nc <= DEGENERACY_EPS {
        return Err(Error::DegenerateTriads(format!(
            "{what}: |x| = {nx:e}, |y| = {ny:e}, |x cross y| = {nc:e}"
        )));
    }
    Ok([x / nx, y / ny, c / nc])
}

/// Builds the accelerometer/magnetometer triad and its inertial references.
pub fn build_triads(
    a_m: &Vec3,
    m_m: &Vec3,
    env: &ReferenceEnvironment,
    s: &[f64; 3],
) -> Result<TriadSet> {
    check_weights(s)?;
    let v = unit_triad(a_m, m_m, "body measurements")?;
    let r = unit_triad(&(-env.g_vec), &env.m_r, "inertial references")?;
    Ok(TriadSet { v, r, s: *s })
}

/// `(M_r, M_B) = (sum s_i r_i r_i^T, sum s_i v_i v_i^T)`.
pub fn weighting_matrices(t: &TriadSet) -> (Mat3, Mat3) {
    let mut m_r = Mat3::zeros();
    let mut m_b = Mat3::zeros();
    for i in 0..3 {
        m_r += t.s[i] * t.r[i] * t.r[i].transpose();
        m_b += t.s[i] * t.v[i] * t.v[i].transpose();
    }
    (m_r, m_b)
}

/// Triads from two tags at `g1`, `g2` (inertial) and a 6-axis IMU.
///
/// The vehicle origin sits midway between the tags and `s1_body` is the
/// body-frame vector from the origin to the first tag.
pub fn two_tag_triads(
    g1: &Vec3,
    g2: &Vec3,
    a_m: &Vec3,
    s1_body: &Vec3,
    env: &ReferenceEnvironment,
) -> Result<TriadSet> {
    if (g1 - g2).norm() <= DEGENERACY_EPS {
        return Err(Error::DegenerateTriads("tag positions coincide".into()));
    }
    let p = 0.5 * (g1 + g2);
    let lever = g1 - p;
    let [v1, v2, v3] = unit_triad(a_m, s1_body, "body measurements")?;
    let [r1, r2, r3] = unit_triad(&(-env.g_vec), &lever, "inertial references")?;
    Ok(TriadSet {
        v: [v1, v2, v3],
        r: [r1, r2, r3],
        s: DEFAULT_WEIGHTS,
    })
}
