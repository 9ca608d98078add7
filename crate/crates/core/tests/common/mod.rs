#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix5, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use uwbnav::liegroup::Rotation;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

pub fn gaussian_vec(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

/// Uniformly distributed rotation from a normalized Gaussian quaternion,
/// built with the textbook quaternion-to-matrix formula.
pub fn random_rotation_matrix(rng: &mut impl Rng) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn random_rotation(rng: &mut impl Rng) -> Rotation {
    Rotation::from_matrix(random_rotation_matrix(rng)).unwrap()
}

/// Random symmetric positive definite matrix.
pub fn random_spd(rng: &mut impl Rng) -> Matrix3<f64> {
    let b = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    b * b.transpose() + Matrix3::identity() * 0.05
}

pub fn cross_matrix(y: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -y.z, y.y, y.z, 0.0, -y.x, -y.y, y.x, 0.0)
}

/// Scaling-and-squaring Taylor matrix exponential.
pub fn expm5(m: &Matrix5<f64>) -> Matrix5<f64> {
    let norm = m.norm();
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(squarings);
    let mut term = Matrix5::identity();
    let mut sum = Matrix5::identity();
    for k in 1..30 {
        term = term * a / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Eight anchors jittered around the corners of an 8 m x 8 m x 3 m box.
pub fn box_anchors(rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(8);
    for k in 0..8 {
        let corner = Vector3::new(
            if k & 1 == 0 { -4.0 } else { 4.0 },
            if k & 2 == 0 { -4.0 } else { 4.0 },
            if k & 4 == 0 { 0.2 } else { 2.8 },
        );
        out.push(corner + uniform_vec(rng, 0.5));
    }
    out
}
