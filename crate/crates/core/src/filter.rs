//! Nonlinear stochastic complementary navigation filter on SE2(3).
//!
//! Each discrete step computes geometric corrections from the current
//! estimate, predicts with the IMU through the group exponential and then
//! left-multiplies by the exponential of the correction input. The
//! covariance-bound estimate `sigma_hat` is adapted alongside the attitude
//! correction and integrated with explicit Euler.
//!
//! The attitude can be carried as a rotation matrix or as a unit quaternion.
//! Both forms share the same translational update, so they coincide up to
//! floating-point rounding.

use crate::attitude::{build_triads, ImuSample, ReferenceEnvironment, TriadSet};
use crate::error::{Error, Result};
use crate::liegroup::{
    quat_to_rot, se23_exp, skew, Mat3, Mat5, NavState, Rotation, TangentInput,
    UnitQuaternion, Vec3,
};
use crate::uwb::{self, AnchorSet, RangeObservation, DEFAULT_MAX_CONDITION};

/// `sigma_hat` components below this trigger a warning.
pub const SIGMA_WARN_FLOOR: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterGains {
    pub k1: f64,
    pub kv: f64,
    pub ka: f64,
    pub gamma_sigma: f64,
    pub epsilon: f64,
    pub k_sigma: f64,
    /// Triad confidence weights, summing to 3.
    pub s: [f64; 3],
}

impl Default for FilterGains {
    fn default() -> Self {
        FilterGains {
            k1: 3.0,
            kv: 3.0,
            ka: 70.0,
            gamma_sigma: 0.1,
            epsilon: 0.5,
            k_sigma: 0.1,
            s: [1.0, 1.0, 1.0],
        }
    }
}

impl FilterGains {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("k1", self.k1),
            ("kv", self.kv),
            ("ka", self.ka),
            ("gamma_sigma", self.gamma_sigma),
            ("epsilon", self.epsilon),
            ("k_sigma", self.k_sigma),
        ];
        for (name, value) in named {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::BadParams(format!("gain {name} must be positive, got {value}")));
            }
        }
        let sum: f64 = self.s.iter().sum();
        if self.s.iter().any(|w| !(*w >= 0.0)) || (sum - 3.0).abs() > 1e-9 {
            return Err(Error::BadParams(format!(
                "triad weights must be nonnegative and sum to 3, got {:?}",
                self.s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attitude {
    Matrix(Rotation),
    Quaternion(UnitQuaternion),
}

impl Attitude {
    pub fn rotation(&self) -> Rotation {
        match self {
            Attitude::Matrix(r) => *r,
            Attitude::Quaternion(q) => quat_to_rot(q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub attitude: Attitude,
    pub p_hat: Vec3,
    pub v_hat: Vec3,
    pub sigma_hat: Vec3,
    pub t: f64,
}

impl FilterState {
    pub fn new(attitude: Attitude, p_hat: Vec3, v_hat: Vec3, sigma_hat: Vec3, t: f64) -> Self {
        FilterState {
            attitude,
            p_hat,
            v_hat,
            sigma_hat,
            t,
        }
    }

    pub fn rotation(&self) -> Rotation {
        self.attitude.rotation()
    }

    pub fn nav_state(&self) -> NavState {
        NavState::new(self.rotation(), self.p_hat, self.v_hat)
    }

    fn with_nav(&self, attitude: Attitude, x: &NavState) -> Self {
        FilterState {
            attitude,
            p_hat: x.p,
            v_hat: x.v,
            ..*self
        }
    }
}

/// Innovation terms driving the continuous-time filter.
///
/// `w_a` excludes gravity; see [`DiscreteCorrection`] for the form used by
/// the discrete update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionTerms {
    pub e_r: f64,
    pub d_v: Mat3,
    pub w_omega: Vec3,
    pub w_v: Vec3,
    pub w_a: Vec3,
    pub sigma_dot: Vec3,
}

impl CorrectionTerms {
    pub fn zero() -> Self {
        CorrectionTerms {
            e_r: 0.0,
            d_v: Mat3::zeros(),
            w_omega: Vec3::zeros(),
            w_v: Vec3::zeros(),
            w_a: Vec3::zeros(),
            sigma_dot: Vec3::zeros(),
        }
    }
}

/// Correction applied by [`update`], with gravity folded into `w_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteCorrection {
    pub w_omega: Vec3,
    pub w_v: Vec3,
    pub w_a: Vec3,
    pub sigma_dot: Vec3,
}

impl DiscreteCorrection {
    pub fn from_terms(w: &CorrectionTerms, env: &ReferenceEnvironment) -> Self {
        DiscreteCorrection {
            w_omega: w.w_omega,
            w_v: w.w_v,
            w_a: w.w_a - env.g_vec,
            sigma_dot: w.sigma_dot,
        }
    }

    /// Gravity compensation alone, with `sigma_hat` held.
    pub fn gravity_only(env: &ReferenceEnvironment) -> Self {
        DiscreteCorrection {
            w_omega: Vec3::zeros(),
            w_v: Vec3::zeros(),
            w_a: -env.g_vec,
            sigma_dot: Vec3::zeros(),
        }
    }

    pub fn input(&self) -> TangentInput {
        TangentInput::new(self.w_omega, self.w_v, self.w_a, 1.0)
    }
}

/// Attitude, adaptation and translational corrections from the current
/// estimate, a measurement triad and a reconstructed position `p_y`.
pub fn correction_terms(
    state: &FilterState,
    triads: &TriadSet,
    p_y: &Vec3,
    gains: &FilterGains,
) -> CorrectionTerms {
    let r_hat = state.rotation();
    let rt = r_hat.transpose();
    let mut e_r = 0.0;
    let mut x = Vec3::zeros();
    for i in 0..3 {
        let v_hat = rt * triads.r[i];
        let s = triads.s[i];
        e_r += s * (1.0 - triads.v[i].dot(&v_hat));
        x += s * triads.v[i].cross(&v_hat);
    }
    e_r *= 0.25;
    let d_v = Mat3::from_diagonal(&x);
    let sigma_dot = gains.gamma_sigma * (e_r + 2.0) / 8.0 * e_r.exp() * (d_v * x)
        - gains.k_sigma * gains.gamma_sigma * state.sigma_hat;
    let w_omega = -0.5 * gains.k1 * (r_hat * x)
        - (e_r + 2.0) / (8.0 * (e_r + 1.0)) * (r_hat * (d_v * state.sigma_hat));
    let dp = p_y - state.p_hat;
    let w_v = -(gains.kv / gains.epsilon) * dp - w_omega.cross(&state.p_hat);
    let w_a = -gains.ka * dp - w_omega.cross(&state.v_hat);
    CorrectionTerms {
        e_r,
        d_v,
        w_omega,
        w_v,
        w_a,
        sigma_dot,
    }
}

/// Propagates the estimate with the IMU through `X exp(U dt)`,
/// `U = u(omega_m, 0, a_m, 1)`.
///
/// The exponential carries a unit entry coupling velocity into position,
/// which leaves the product outside the group until the matching update is
/// applied. The returned state holds the in-group part; [`update`] accounts
/// for the coupling.
pub fn predict(state: &FilterState, imu: &ImuSample, dt: f64) -> FilterState {
    let u = TangentInput::new(imu.omega_m, Vec3::zeros(), imu.a_m, 1.0);
    let x = state.nav_state().to_matrix() * se23_exp(&u, dt);
    let nav = top_rows(&x);
    let attitude = match state.attitude {
        Attitude::Matrix(_) => Attitude::Matrix(nav.r),
        Attitude::Quaternion(q) => {
            let dq = UnitQuaternion::from_rotation_vector(&(imu.omega_m * dt));
            Attitude::Quaternion((q * dq).normalized())
        }
    };
    state.with_nav(attitude, &nav)
}

/// Reads `(R, P, V)` from the top three rows, re-orthonormalizing `R`.
fn top_rows(x: &Mat5) -> NavState {
    let r = Rotation::from_matrix_unchecked(x.fixed_view::<3, 3>(0, 0).into_owned()).renormalized();
    NavState::new(
        r,
        x.fixed_view::<3, 1>(0, 3).into_owned(),
        x.fixed_view::<3, 1>(0, 4).into_owned(),
    )
}

/// The left factor applied by [`update`]: `exp(-W dt) N(dt)`, where `N(dt)`
/// restores the velocity-to-position coupling dropped by [`predict`].
pub fn update_factor(w: &DiscreteCorrection, dt: f64) -> Mat5 {
    let mut n = Mat5::identity();
    n[(4, 3)] = dt;
    se23_exp(&w.input(), -dt) * n
}

/// Applies the correction `exp(-W dt)` and advances `sigma_hat` by Euler.
pub fn update(state: &FilterState, w: &DiscreteCorrection, dt: f64) -> FilterState {
    let g = update_factor(w, dt);
    let nav = top_rows(&(g * state.nav_state().to_matrix()));
    let attitude = match state.attitude {
        Attitude::Matrix(_) => Attitude::Matrix(nav.r),
        Attitude::Quaternion(q) => {
            let dq = UnitQuaternion::from_rotation_vector(&(-w.w_omega * dt));
            Attitude::Quaternion((dq * q).normalized())
        }
    };
    let mut out = state.with_nav(attitude, &nav);
    out.sigma_hat = state.sigma_hat + dt * w.sigma_dot;
    out.t = state.t + dt;
    out
}

/// Time derivative of the attitude in the form carried by the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttitudeRate {
    Matrix(Mat3),
    /// `(dq0/dt, dq/dt)`.
    Quaternion(f64, Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub attitude: AttitudeRate,
    pub p_dot: Vec3,
    pub v_dot: Vec3,
    pub sigma_dot: Vec3,
}

/// Continuous-time filter dynamics (gravity enters `v_dot` explicitly and
/// `w.w_a` excludes it).
pub fn continuous_rhs(
    state: &FilterState,
    imu: &ImuSample,
    w: &CorrectionTerms,
    env: &ReferenceEnvironment,
) -> StateDerivative {
    let r_hat = state.rotation();
    let wx = skew(&w.w_omega);
    let attitude = match state.attitude {
        Attitude::Matrix(r) => {
            AttitudeRate::Matrix(r.matrix() * skew(&imu.omega_m) - wx * r.matrix())
        }
        Attitude::Quaternion(q) => {
            let body = q * UnitQuaternion {
                q0: 0.0,
                q: imu.omega_m,
            };
            let inertial = UnitQuaternion {
                q0: 0.0,
                q: w.w_omega,
            } * q;
            AttitudeRate::Quaternion(
                0.5 * (body.q0 - inertial.q0),
                0.5 * (body.q - inertial.q),
            )
        }
    };
    StateDerivative {
        attitude,
        p_dot: state.v_hat - wx * state.p_hat - w.w_v,
        v_dot: r_hat * imu.a_m + env.g_vec - wx * state.v_hat - w.w_a,
        sigma_dot: w.sigma_dot,
    }
}

/// Why a step skipped its measurement correction.
#[derive(Debug, Clone, PartialEq)]
pub enum Dropout {
    NoRanging,
    Geometry(String),
    Triads(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub e_r: f64,
    /// `|P_y - P_hat|` before the step, NaN on dropout.
    pub py_residual: f64,
    pub p_y: Option<Vec3>,
    pub sigma_hat: Vec3,
    pub dropout: Option<Dropout>,
    pub aux_clamped: bool,
    pub sigma_below_floor: bool,
}

/// Filter configuration shared across steps.
#[derive(Debug, Clone)]
pub struct NavFilter {
    pub anchors: AnchorSet,
    pub env: ReferenceEnvironment,
    pub gains: FilterGains,
    /// Body-frame lever arm from the vehicle origin to the UWB tag.
    pub tag_offset: Vec3,
    pub max_condition: f64,
}

impl NavFilter {
    pub fn new(anchors: AnchorSet, env: ReferenceEnvironment, gains: FilterGains) -> Result<Self> {
        gains.validate()?;
        Ok(NavFilter {
            anchors,
            env,
            gains,
            tag_offset: Vec3::zeros(),
            max_condition: DEFAULT_MAX_CONDITION,
        })
    }

    pub fn with_tag_offset(mut self, tag_offset: Vec3) -> Self {
        self.tag_offset = tag_offset;
        self
    }

    /// Reconstructed vehicle position from a ranging epoch, removing the tag
    /// lever arm with the current attitude estimate.
    pub fn reconstruct_position(
        &self,
        r_hat: &Rotation,
        ranges: &RangeObservation,
    ) -> Result<(Vec3, bool)> {
        let fix = uwb::solve(&self.anchors, ranges, self.max_condition)?;
        Ok((fix.p - r_hat * &self.tag_offset, fix.aux_clamped))
    }

    /// One discrete filter step.
    ///
    /// Corrections are computed from the incoming estimate and the
    /// measurements at its time stamp, then prediction and correction are
    /// applied. When ranging is absent, the geometry is degenerate or the
    /// triads cannot be formed, only prediction and gravity compensation are
    /// applied and the reason is reported in the diagnostics.
    pub fn step(
        &self,
        state: &FilterState,
        imu: &ImuSample,
        ranges: Option<&RangeObservation>,
        dt: f64,
    ) -> (FilterState, Diagnostics) {
        let r_hat = state.rotation();
        let correction = match ranges {
            None => Err(Dropout::NoRanging),
            Some(obs) => self
                .reconstruct_position(&r_hat, obs)
                .map_err(|e| Dropout::Geometry(e.to_string()))
                .and_then(|(p_y, clamped)| {
                    build_triads(&imu.a_m, &imu.m_m, &self.env, &self.gains.s)
                        .map(|t| (p_y, clamped, t))
                        .map_err(|e| Dropout::Triads(e.to_string()))
                }),
        };
        let predicted = predict(state, imu, dt);
        match correction {
            Ok((p_y, aux_clamped, triads)) => {
                let terms = correction_terms(state, &triads, &p_y, &self.gains);
                let next = update(&predicted, &DiscreteCorrection::from_terms(&terms, &self.env), dt);
                let sigma_below_floor = next.sigma_hat.min() < SIGMA_WARN_FLOOR;
                if sigma_below_floor {
                    log::warn!("sigma_hat component below {SIGMA_WARN_FLOOR}: {:?}", next.sigma_hat);
                }
                let diag = Diagnostics {
                    e_r: terms.e_r,
                    py_residual: (p_y - state.p_hat).norm(),
                    p_y: Some(p_y),
                    sigma_hat: next.sigma_hat,
                    dropout: None,
                    aux_clamped,
                    sigma_below_floor,
                };
                (next, diag)
            }
            Err(reason) => {
                let next = update(&predicted, &DiscreteCorrection::gravity_only(&self.env), dt);
                let diag = Diagnostics {
                    e_r: f64::NAN,
                    py_residual: f64::NAN,
                    p_y: None,
                    sigma_hat: next.sigma_hat,
                    dropout: Some(reason),
                    aux_clamped: false,
                    sigma_below_floor: false,
                };
                (next, diag)
            }
        }
    }

    /// [`NavFilter::step`] for a quaternion-attitude state.
    pub fn quaternion_step(
        &self,
        state: &FilterState,
        imu: &ImuSample,
        ranges: Option<&RangeObservation>,
        dt: f64,
    ) -> Result<(FilterState, Diagnostics)> {
        if !matches!(state.attitude, Attitude::Quaternion(_)) {
            return Err(Error::BadParams("quaternion_step needs a quaternion state".into()));
        }
        Ok(self.step(state, imu, ranges, dt))
    }
}
