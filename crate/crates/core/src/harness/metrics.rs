//! Error metrics and the per-tick CSV outputs.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::dataset::Dataset;
use crate::liegroup::{attitude_distance, quat_to_rot, rot_to_quat, NavState, UnitQuaternion, Vec3};

/// Errors of one estimate against truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Errors {
    /// `tr(I - R_hat R^T) / 4`, in `[0, 1]`.
    pub att: f64,
    pub pos: f64,
    pub vel: f64,
}

pub fn errors(estimate: &NavState, truth: &NavState) -> Errors {
    Errors {
        att: attitude_distance(&(estimate.r * truth.r.transpose())),
        pos: (estimate.p - truth.p).norm(),
        vel: (estimate.v - truth.v).norm(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub t: f64,
    pub att_err: f64,
    pub pos_err: f64,
    pub vel_err: f64,
    pub sigma_norm: f64,
    pub e_r: f64,
    pub py_residual: f64,
}

/// Filter output at one tick, with the diagnostics of the step leaving it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub state: NavState,
    pub sigma_hat: Vec3,
    pub e_r: f64,
    pub py_residual: f64,
}

impl EstimateRow {
    pub fn metrics(&self, truth: &NavState) -> MetricsRow {
        let e = errors(&self.state, truth);
        MetricsRow {
            t: self.t,
            att_err: e.att,
            pos_err: e.pos,
            vel_err: e.vel,
            sigma_norm: self.sigma_hat.norm(),
            e_r: self.e_r,
            py_residual: self.py_residual,
        }
    }
}

const METRICS_HEADER: [&str; 7] = ["t", "att_err", "pos_err", "vel_err", "sigma_norm", "e_r", "py_residual"];

const ESTIMATES_HEADER: [&str; 16] = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "sigma_x", "sigma_y",
    "sigma_z", "e_r", "py_residual",
];

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(
            [r.t, r.att_err, r.pos_err, r.vel_err, r.sigma_norm, r.e_r, r.py_residual].map(fmt),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_estimates(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ESTIMATES_HEADER)?;
    for r in rows {
        let q = rot_to_quat(&r.state.r).to_array();
        let (p, v, s) = (r.state.p, r.state.v, r.sigma_hat);
        w.write_record(
            [
                r.t, p.x, p.y, p.z, q[0], q[1], q[2], q[3], v.x, v.y, v.z, s.x, s.y, s.z, r.e_r,
                r.py_residual,
            ]
            .map(fmt),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = ESTIMATES_HEADER
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| Error::Schema {
                file: path.to_path_buf(),
                row: 1,
                column: name.to_string(),
                message: "missing column".into(),
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut v = [0.0; 16];
        for (k, &c) in cols.iter().enumerate() {
            let raw = rec.get(c).unwrap_or("");
            v[k] = raw.parse().map_err(|_| Error::Schema {
                file: path.to_path_buf(),
                row: line,
                column: ESTIMATES_HEADER[k].to_string(),
                message: format!("expected a number, got `{raw}`"),
            })?;
        }
        let q = UnitQuaternion::new(v[4], Vec3::new(v[5], v[6], v[7]));
        out.push(EstimateRow {
            t: v[0],
            state: NavState::new(quat_to_rot(&q), Vec3::new(v[1], v[2], v[3]), Vec3::new(v[8], v[9], v[10])),
            sigma_hat: Vec3::new(v[11], v[12], v[13]),
            e_r: v[14],
            py_residual: v[15],
        });
    }
    Ok(out)
}

/// Metrics of saved estimates against a dataset's truth.
pub fn metrics_against(estimates: &[EstimateRow], truth: &Dataset) -> Vec<MetricsRow> {
    estimates.iter().map(|e| e.metrics(&truth.truth_at(e.t))).collect()
}

/// Summary statistics of one error series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesStats {
    pub final_value: f64,
    pub last_half_mean: f64,
    pub last_half_median: f64,
    pub last_half_max: f64,
}

pub fn series_stats(values: &[f64]) -> SeriesStats {
    let n = values.len();
    if n == 0 {
        return SeriesStats {
            final_value: f64::NAN,
            last_half_mean: f64::NAN,
            last_half_median: f64::NAN,
            last_half_max: f64::NAN,
        };
    }
    let tail = &values[n / 2..];
    SeriesStats {
        final_value: values[n - 1],
        last_half_mean: tail.iter().sum::<f64>() / tail.len() as f64,
        last_half_median: median(tail),
        last_half_max: tail.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Earliest time after which the series stays at or below `threshold`.
pub fn time_to_threshold(times: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    let last_above = values.iter().rposition(|&v| !(v <= threshold));
    match last_above {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::so3_exp;

    #[test]
    fn errors_vanish_at_truth() {
        let s = NavState::new(so3_exp(&Vec3::new(0.3, -0.2, 1.0)), Vec3::new(1.0, 2.0, 3.0), Vec3::x());
        let e = errors(&s, &s);
        assert!(e.att.abs() < 1e-15 && e.pos == 0.0 && e.vel == 0.0);
    }

    #[test]
    fn attitude_error_of_half_turn_is_one() {
        let a = NavState::new(so3_exp(&(Vec3::z() * std::f64::consts::PI)), Vec3::zeros(), Vec3::zeros());
        let b = NavState::identity();
        assert!((errors(&a, &b).att - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_and_stats() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(time_to_threshold(&t, &[5.0, 0.1, 2.0, 0.1], 0.3), Some(3.0));
        assert_eq!(time_to_threshold(&t, &[0.1; 4], 0.3), Some(0.0));
        assert_eq!(time_to_threshold(&t, &[0.1, 0.1, 0.1, 1.0], 0.3), None);
        let s = series_stats(&[9.0, 9.0, 1.0, 3.0]);
        assert_eq!((s.final_value, s.last_half_mean, s.last_half_max), (3.0, 2.0, 3.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn estimates_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("estimates.csv");
        let row = EstimateRow {
            t: 0.01,
            state: NavState::new(so3_exp(&Vec3::new(0.1, 0.2, 0.3)), Vec3::new(1.0, -2.0, 0.5), Vec3::y()),
            sigma_hat: Vec3::new(0.1, 0.0, -0.2),
            e_r: 0.25,
            py_residual: f64::NAN,
        };
        write_estimates(&path, &[row]).unwrap();
        let back = read_estimates(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back[0].state.r.matrix() - row.state.r.matrix()).norm() < 1e-14);
        assert_eq!(back[0].state.p, row.state.p);
        assert!(back[0].py_residual.is_nan());
    }
}
