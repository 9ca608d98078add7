//! Rotation, quaternion and SE2(3) primitives.
//!
//! Navigation states live on the extended special Euclidean group SE2(3),
//! embedded as 5x5 matrices
//!
//! ```text
//!     | R  P  V |
//! X = | 0  1  0 |
//!     | 0  0  1 |
//! ```
//!
//! and group inputs as elements of the submanifold
//!
//! ```text
//!     | [w]x  v  a |
//! u = |  0    0  0 |
//!     |  0    e  0 |
//! ```
//!
//! where `e` couples the velocity column into the position column under the
//! matrix exponential (so `P` picks up `V dt` during propagation).

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix5, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat5 = Matrix5<f64>;

/// Group membership tolerance for `R^T R = I` and `det R = 1`.
pub const ROTATION_TOL: f64 = 1e-9;
/// Drift above which a rotation block is projected back onto SO(3).
pub const REORTHONORMALIZE_TOL: f64 = 1e-12;
/// Antisymmetry violation accepted by [`vex`].
pub const VEX_TOL: f64 = 1e-6;
/// Angle below which `so3_exp` uses the second-order Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-6;
/// Angle below which the SE2(3) Jacobian coefficients use their power series.
const SERIES_ANGLE: f64 = 0.1;

/// Maps `v` to the skew-symmetric matrix `[v]x` with `[v]x w = v x w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`].
pub fn vex(m: &Mat3) -> Result<Vec3> {
    let violation = (m + m.transpose()).norm();
    if violation > VEX_TOL {
        return Err(Error::NotAntisymmetric(violation));
    }
    Ok(vex_unchecked(m))
}

/// Reads the vector from the antisymmetric part of `m` without validation.
fn vex_unchecked(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Anti-symmetric projection `(M - M^T) / 2`.
pub fn pa(m: &Mat3) -> Mat3 {
    0.5 * (m - m.transpose())
}

/// `vex(pa(m))`.
pub fn upsilon(m: &Mat3) -> Vec3 {
    vex_unchecked(&pa(m))
}

/// Normalized Euclidean attitude distance `Tr(I - R) / 4`, in `[0, 1]`.
pub fn attitude_distance(r: &Rotation) -> f64 {
    (3.0 - r.0.trace()) / 4.0
}

/// Weighted attitude distance `Tr(M - M R) / 4`.
pub fn weighted_distance(m: &Mat3, r: &Rotation) -> f64 {
    (m - m * r.0).trace() / 4.0
}

/// A 3x3 special orthogonal matrix (body-to-inertial attitude).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates `m` against the SO(3) invariants at [`ROTATION_TOL`].
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let drift = orthogonality_drift(&m);
        let det = m.determinant();
        if !drift.is_finite() || drift > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotInGroup(format!(
                "rotation block has |R^T R - I|_F = {drift:e}, det = {det}"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without checking; callers guarantee membership.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Nearest rotation to `m` in the Frobenius sense (polar factor via SVD).
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u requested");
        let v_t = svd.v_t.expect("svd v_t requested");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u_fixed = u;
            u_fixed.column_mut(2).neg_mut();
            r = u_fixed * v_t;
        }
        Rotation(r)
    }

    /// Projects back onto SO(3) when drift exceeds [`REORTHONORMALIZE_TOL`].
    pub fn renormalized(self) -> Self {
        if orthogonality_drift(&self.0) > REORTHONORMALIZE_TOL {
            Rotation::project(&self.0)
        } else {
            self
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Rotation about the body z axis.
    pub fn about_z(angle: f64) -> Self {
        so3_exp(&Vec3::new(0.0, 0.0, angle))
    }

    /// `|R^T R - I|_F`.
    pub fn drift(&self) -> f64 {
        orthogonality_drift(&self.0)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

fn orthogonality_drift(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vec3) -> Rotation {
    let theta = w.norm();
    let k = skew(w);
    if theta < SMALL_ANGLE {
        return Rotation(Mat3::identity() + k + 0.5 * k * k);
    }
    let half_sin = (0.5 * theta).sin();
    let a = theta.sin() / theta;
    let b = 2.0 * half_sin * half_sin / (theta * theta);
    Rotation(Mat3::identity() + a * k + b * k * k)
}

/// Principal logarithm, returning a rotation vector with angle in `[0, pi]`.
pub fn so3_log(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < SMALL_ANGLE {
        return vex_unchecked(&pa(m));
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // near pi the antisymmetric part vanishes; take the axis from R + I
        let b = (m + Mat3::identity()) * 0.5;
        let (i, _) = (0..3)
            .map(|i| (i, b[(i, i)]))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mut axis = b.column(i).into_owned();
        axis /= axis.norm();
        return axis * theta;
    }
    vex_unchecked(&pa(m)) * (theta / theta.sin())
}

/// Power-series/closed-form coefficients of the SE2(3) exponential blocks.
///
/// `J = I + c1 [w]x + c2 [w]x^2` is the SO(3) left Jacobian and
/// `G = I/2 + c2 [w]x + c3 [w]x^2` is its second-order companion
/// (`sum_k [w]x^k / (k + 2)!`).
fn jacobian_coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SERIES_ANGLE {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        let c1 = 0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40_320.0;
        let c2 = 1.0 / 6.0 - t2 / 120.0 + t4 / 5_040.0 - t6 / 362_880.0;
        let c3 = 1.0 / 24.0 - t2 / 720.0 + t4 / 40_320.0 - t6 / 3_628_800.0;
        return (c1, c2, c3);
    }
    let half_sin = (0.5 * theta).sin();
    let one_minus_cos = 2.0 * half_sin * half_sin;
    let c1 = one_minus_cos / t2;
    let c2 = (theta - theta.sin()) / (t2 * theta);
    let c3 = (0.5 * t2 - one_minus_cos) / (t2 * t2);
    (c1, c2, c3)
}

/// Left Jacobian of SO(3), `sum_k [w]x^k / (k + 1)!`.
pub fn so3_left_jacobian(w: &Vec3) -> Mat3 {
    let (c1, c2, _) = jacobian_coefficients(w.norm());
    let k = skew(w);
    Mat3::identity() + c1 * k + c2 * k * k
}

/// An element of the group-input submanifold: angular rate, position-slot
/// vector, acceleration-slot vector and the velocity-to-position coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentInput {
    pub omega: Vec3,
    pub vslot: Vec3,
    pub a: Vec3,
    pub eps: f64,
}

impl TangentInput {
    pub fn new(omega: Vec3, vslot: Vec3, a: Vec3, eps: f64) -> Self {
        TangentInput {
            omega,
            vslot,
            a,
            eps,
        }
    }

    pub fn zero() -> Self {
        TangentInput::new(Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), 0.0)
    }

    /// The 5x5 embedding.
    pub fn to_matrix(&self) -> Mat5 {
        let mut m = Mat5::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.omega));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vslot);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.a);
        m[(4, 3)] = self.eps;
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        TangentInput::new(self.omega * s, self.vslot * s, self.a * s, self.eps * s)
    }
}

/// Closed-form `expm(u dt)`.
///
/// The rotation block is `so3_exp(w dt)`, the acceleration column maps through
/// the left Jacobian and the position column additionally receives the
/// acceleration coupled in through `eps`.
pub fn se23_exp(u: &TangentInput, dt: f64) -> Mat5 {
    let phi = u.omega * dt;
    let rho = u.vslot * dt;
    let alpha = u.a * dt;
    let e = u.eps * dt;

    let (c1, c2, c3) = jacobian_coefficients(phi.norm());
    let k = skew(&phi);
    let k2 = k * k;
    let jac = Mat3::identity() + c1 * k + c2 * k2;
    let second = 0.5 * Mat3::identity() + c2 * k + c3 * k2;

    let mut out = Mat5::identity();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(so3_exp(&phi).matrix());
    out.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&(jac * rho + e * (second * alpha)));
    out.fixed_view_mut::<3, 1>(0, 4).copy_from(&(jac * alpha));
    out[(4, 3)] = e;
    out
}

/// Attitude, position and velocity bundled as an SE2(3) element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub r: Rotation,
    pub p: Vec3,
    pub v: Vec3,
}

impl NavState {
    pub fn new(r: Rotation, p: Vec3, v: Vec3) -> Self {
        NavState { r, p, v }
    }

    pub fn identity() -> Self {
        NavState::new(Rotation::identity(), Vec3::zeros(), Vec3::zeros())
    }

    /// The 5x5 homogeneous navigation matrix.
    pub fn to_matrix(&self) -> Mat5 {
        let mut m = Mat5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.r.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.p);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.v);
        m
    }

    /// Extracts a state from a 5x5 matrix, re-orthonormalizing the rotation
    /// block when it has drifted.
    pub fn from_matrix(m: &Mat5) -> Result<Self> {
        const BOTTOM: [[f64; 5]; 2] = [[0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0]];
        let mut dev = 0.0f64;
        for (r, row) in BOTTOM.iter().enumerate() {
            for (c, want) in row.iter().enumerate() {
                dev = dev.max((m[(3 + r, c)] - want).abs());
            }
        }
        if !(dev <= ROTATION_TOL) {
            return Err(Error::NotInGroup(format!(
                "bottom rows deviate from [0 0 0 1 0; 0 0 0 0 1] by {dev:e}"
            )));
        }
        let block: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
        let drift = orthogonality_drift(&block);
        if !(drift <= 1e-6) || block.determinant() <= 0.0 {
            return Err(Error::NotInGroup(format!(
                "rotation block has |R^T R - I|_F = {drift:e}"
            )));
        }
        Ok(NavState {
            r: Rotation(block).renormalized(),
            p: m.fixed_view::<3, 1>(0, 3).into_owned(),
            v: m.fixed_view::<3, 1>(0, 4).into_owned(),
        })
    }
}

/// Matrix product `x y`, re-extracted as a navigation state.
pub fn compose(x: &Mat5, y: &Mat5) -> Result<NavState> {
    NavState::from_matrix(&(x * y))
}

/// Unit quaternion `[q0, q]` with scalar part `q0` (Hamilton convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub q0: f64,
    pub q: Vec3,
}

impl UnitQuaternion {
    /// Builds a unit quaternion, normalizing the input.
    pub fn new(q0: f64, q: Vec3) -> Self {
        UnitQuaternion { q0, q }.normalized()
    }

    pub fn identity() -> Self {
        UnitQuaternion {
            q0: 1.0,
            q: Vec3::zeros(),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.q0 * self.q0 + self.q.norm_squared()).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        UnitQuaternion {
            q0: self.q0 / n,
            q: self.q / n,
        }
    }

    pub fn conjugate(&self) -> Self {
        UnitQuaternion {
            q0: self.q0,
            q: -self.q,
        }
    }

    pub fn neg(&self) -> Self {
        UnitQuaternion {
            q0: -self.q0,
            q: -self.q,
        }
    }

    /// Quaternion of the rotation `so3_exp(w)`: `[cos(|w|/2), sin(|w|/2) w/|w|]`.
    pub fn from_rotation_vector(w: &Vec3) -> Self {
        let theta = w.norm();
        let half = 0.5 * theta;
        let k = if theta < SMALL_ANGLE {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        UnitQuaternion {
            q0: half.cos(),
            q: w * k,
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.q0 * other.q0 + self.q.dot(&other.q)
    }

    /// Spherical linear interpolation along the shorter arc.
    pub fn slerp(&self, other: &Self, t: f64) -> Self {
        let mut end = *other;
        let mut cos = self.dot(other);
        if cos < 0.0 {
            end = end.neg();
            cos = -cos;
        }
        if cos > 1.0 - 1e-12 {
            return UnitQuaternion::new(
                self.q0 + t * (end.q0 - self.q0),
                self.q + (end.q - self.q) * t,
            );
        }
        let angle = cos.acos();
        let s = angle.sin();
        let wa = ((1.0 - t) * angle).sin() / s;
        let wb = (t * angle).sin() / s;
        UnitQuaternion::new(wa * self.q0 + wb * end.q0, self.q * wa + end.q * wb)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q0, self.q.x, self.q.y, self.q.z]
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    /// Hamilton product.
    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        UnitQuaternion {
            q0: self.q0 * rhs.q0 - self.q.dot(&rhs.q),
            q: rhs.q * self.q0 + self.q * rhs.q0 + self.q.cross(&rhs.q),
        }
    }
}

/// `R_Q = (q0^2 - |q|^2) I + 2 q q^T + 2 q0 [q]x`.
pub fn quat_to_rot(q: &UnitQuaternion) -> Rotation {
    let v = q.q;
    let m = (q.q0 * q.q0 - v.norm_squared()) * Mat3::identity()
        + 2.0 * v * v.transpose()
        + 2.0 * q.q0 * skew(&v);
    Rotation(m)
}

/// Shepperd's method; the returned quaternion has `q0 >= 0`.
pub fn rot_to_quat(r: &Rotation) -> UnitQuaternion {
    let m = r.matrix();
    let tr = m.trace();
    let pivots = [tr, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    let (idx, _) = pivots
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    let (q0, x, y, z) = match idx {
        0 => {
            let s = 2.0 * (1.0 + tr).sqrt();
            (
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        }
        1 => {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            (
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        }
        2 => {
            let s = 2.0 * (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).sqrt();
            (
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        }
        _ => {
            let s = 2.0 * (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).sqrt();
            (
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        }
    };
    let q = UnitQuaternion::new(q0, Vec3::new(x, y, z));
    if q.q0 < 0.0 {
        q.neg()
    } else {
        q
    }
}
