//! Flight logs on disk and their alignment to the filter rate.
//!
//! A dataset directory holds:
//!
//! | file        | columns                                        |
//! |-------------|------------------------------------------------|
//! | anchors.csv | `id,x,y,z`                                     |
//! | truth.csv   | `t,px,py,pz,qw,qx,qy,qz` and optional `vx,vy,vz` |
//! | imu.csv     | `t,wx,wy,wz,ax,ay,az` and optional `mx,my,mz`  |
//! | tdoa.csv    | `t,i,j,d` with `d = |P - h_j| - |P - h_i|`     |
//! | toa.csv     | `t,i,d` (used when `tdoa.csv` is absent)       |
//!
//! Times are in seconds, angles in radians, lengths in metres. Truth
//! quaternions map body to world.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attitude::{ImuSample, ReferenceEnvironment};
use crate::error::{Error, Result};
use crate::liegroup::{quat_to_rot, rot_to_quat, NavState, UnitQuaternion, Vec3};
use crate::sim::{reconstruct_velocity, Measurements, SavitzkyGolay, TruthTrajectory};
use crate::uwb::{
    AnchorSet, RangeObservation, TdoaRanges, TdoaTopology, ToaRanges, Topology,
};

/// Slack when comparing sample times with tick times.
pub const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub t: f64,
    pub state: NavState,
}

/// One time difference of arrival between anchors `i` and `j` (indices into
/// the anchor list).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdoaRow {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaRow {
    pub t: f64,
    pub i: usize,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RangeRows {
    Tdoa(Vec<TdoaRow>),
    Toa(Vec<ToaRow>),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub anchors: AnchorSet,
    pub anchor_ids: Vec<i64>,
    pub truth: Vec<TruthRecord>,
    pub imu: Vec<ImuSample>,
    pub has_magnetometer: bool,
    pub ranges: RangeRows,
}

/// Filter-rate sample: IMU held at its latest value, the ranging epoch
/// assembled from the latest value of each pair, and interpolated truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub t: f64,
    pub imu: ImuSample,
    pub ranges: Option<RangeObservation>,
    pub truth: NavState,
}

struct Table {
    file: PathBuf,
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn read(file: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(file)
            .map_err(|e| Error::from(e).context(file.display().to_string()))?;
        let headers = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::from(e).context(file.display().to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec));
        }
        Ok(Table {
            file: file.to_path_buf(),
            headers,
            rows,
        })
    }

    fn has(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            file: self.file.clone(),
            row: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })
    }

    fn f64_at(&self, row: usize, col: usize) -> Result<f64> {
        let (line, rec) = &self.rows[row];
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Schema {
                file: self.file.clone(),
                row: *line,
                column: self.headers[col].clone(),
                message: format!("expected a finite number, got `{raw}`"),
            })
    }

    fn i64_at(&self, row: usize, col: usize) -> Result<i64> {
        let (line, rec) = &self.rows[row];
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<i64>().map_err(|_| Error::Schema {
            file: self.file.clone(),
            row: *line,
            column: self.headers[col].clone(),
            message: format!("expected an integer id, got `{raw}`"),
        })
    }

    fn vec3_at(&self, row: usize, cols: &[usize; 3]) -> Result<Vec3> {
        Ok(Vec3::new(
            self.f64_at(row, cols[0])?,
            self.f64_at(row, cols[1])?,
            self.f64_at(row, cols[2])?,
        ))
    }

    fn cols3(&self, names: [&str; 3]) -> Result<[usize; 3]> {
        Ok([self.col(names[0])?, self.col(names[1])?, self.col(names[2])?])
    }

    fn check_clock(&self, times: &[f64], strict: bool) -> Result<()> {
        for (k, w) in times.windows(2).enumerate() {
            if w[1] < w[0] || (strict && w[1] == w[0]) {
                return Err(Error::Clock {
                    file: self.file.clone(),
                    row: self.rows[k + 1].0,
                });
            }
        }
        Ok(())
    }

    fn line(&self, row: usize) -> usize {
        self.rows[row].0
    }
}

/// Anchor positions from an `id,x,y,z` file, in file order.
pub fn read_anchors(file: &Path) -> Result<Vec<Vec3>> {
    Ok(read_anchor_table(file)?.1)
}

fn read_anchor_table(file: &Path) -> Result<(Vec<i64>, Vec<Vec3>)> {
    let table = Table::read(file)?;
    let id = table.col("id")?;
    let xyz = table.cols3(["x", "y", "z"])?;
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut positions = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        let this = table.i64_at(r, id)?;
        if ids.contains(&this) {
            return Err(Error::Schema {
                file: table.file.clone(),
                row: table.line(r),
                column: "id".into(),
                message: format!("duplicate anchor id {this}"),
            });
        }
        ids.push(this);
        positions.push(table.vec3_at(r, &xyz)?);
    }
    Ok((ids, positions))
}

/// Truth records; velocity is reconstructed from positions when absent.
pub fn read_truth(file: &Path) -> Result<Vec<TruthRecord>> {
    let table = Table::read(file)?;
    let t = table.col("t")?;
    let p = table.cols3(["px", "py", "pz"])?;
    let qw = table.col("qw")?;
    let q = table.cols3(["qx", "qy", "qz"])?;
    let v = if table.has("vx") {
        Some(table.cols3(["vx", "vy", "vz"])?)
    } else {
        None
    };
    let n = table.rows.len();
    let mut times = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let time = table.f64_at(r, t)?;
        let quat = UnitQuaternion {
            q0: table.f64_at(r, qw)?,
            q: table.vec3_at(r, &q)?,
        };
        if (quat.norm() - 1.0).abs() > 1e-3 {
            return Err(Error::Schema {
                file: table.file.clone(),
                row: table.line(r),
                column: "qw".into(),
                message: format!("quaternion norm {} is not 1", quat.norm()),
            });
        }
        let vel = match &v {
            Some(c) => table.vec3_at(r, c)?,
            None => Vec3::zeros(),
        };
        times.push(time);
        out.push(TruthRecord {
            t: time,
            state: NavState::new(quat_to_rot(&quat.normalized()), table.vec3_at(r, &p)?, vel),
        });
    }
    table.check_clock(&times, true)?;
    if v.is_none() {
        let positions: Vec<Vec3> = out.iter().map(|s| s.state.p).collect();
        let vel = velocity_from_positions(&times, &positions)
            .map_err(|e| e.context(file.display().to_string()))?;
        for (s, v) in out.iter_mut().zip(vel) {
            s.state.v = v;
        }
    }
    Ok(out)
}

/// Smoothed velocity, resampling to a uniform grid when the log is jittery.
fn velocity_from_positions(times: &[f64], positions: &[Vec3]) -> Result<Vec<Vec3>> {
    let sg = SavitzkyGolay::default();
    if let Ok(v) = reconstruct_velocity(times, positions, sg) {
        return Ok(v);
    }
    let n = times.len();
    let h = (times[n - 1] - times[0]) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|k| times[0] + k as f64 * h).collect();
    let resampled: Vec<Vec3> = grid.iter().map(|&t| lerp_at(times, positions, t)).collect();
    let v_grid = reconstruct_velocity(&grid, &resampled, sg)?;
    Ok(times.iter().map(|&t| lerp_at(&grid, &v_grid, t)).collect())
}

fn lerp_at(times: &[f64], values: &[Vec3], t: f64) -> Vec3 {
    let k = times.partition_point(|&s| s <= t);
    if k == 0 {
        return values[0];
    }
    if k == times.len() {
        return values[k - 1];
    }
    let a = (t - times[k - 1]) / (times[k] - times[k - 1]);
    values[k - 1] + (values[k] - values[k - 1]) * a
}

/// IMU samples. Without magnetometer columns, `m_m` is zero and the second
/// value is `false`; `require_magnetometer` turns that into a schema error.
pub fn read_imu(file: &Path, require_magnetometer: bool) -> Result<(Vec<ImuSample>, bool)> {
    let table = Table::read(file)?;
    let t = table.col("t")?;
    let w = table.cols3(["wx", "wy", "wz"])?;
    let a = table.cols3(["ax", "ay", "az"])?;
    let has_mag = table.has("mx") || require_magnetometer;
    let m = if has_mag {
        Some(table.cols3(["mx", "my", "mz"])?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        out.push(ImuSample {
            t: table.f64_at(r, t)?,
            omega_m: table.vec3_at(r, &w)?,
            a_m: table.vec3_at(r, &a)?,
            m_m: match &m {
                Some(c) => table.vec3_at(r, c)?,
                None => Vec3::zeros(),
            },
        });
    }
    let times: Vec<f64> = out.iter().map(|s| s.t).collect();
    table.check_clock(&times, true)?;
    Ok((out, m.is_some()))
}

fn anchor_index(table: &Table, row: usize, col: usize, index: &HashMap<i64, usize>) -> Result<usize> {
    let id = table.i64_at(row, col)?;
    index.get(&id).copied().ok_or_else(|| Error::Schema {
        file: table.file.clone(),
        row: table.line(row),
        column: table.headers[col].clone(),
        message: format!("unknown anchor id {id}"),
    })
}

pub fn read_tdoa(file: &Path, ids: &[i64]) -> Result<Vec<TdoaRow>> {
    let table = Table::read(file)?;
    let index: HashMap<i64, usize> = ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
    let (t, i, j, d) = (table.col("t")?, table.col("i")?, table.col("j")?, table.col("d")?);
    let mut out = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        let row = TdoaRow {
            t: table.f64_at(r, t)?,
            i: anchor_index(&table, r, i, &index)?,
            j: anchor_index(&table, r, j, &index)?,
            d: table.f64_at(r, d)?,
        };
        if row.i == row.j {
            return Err(Error::Schema {
                file: table.file.clone(),
                row: table.line(r),
                column: "j".into(),
                message: "pair must name two different anchors".into(),
            });
        }
        out.push(row);
    }
    let times: Vec<f64> = out.iter().map(|s| s.t).collect();
    table.check_clock(&times, false)?;
    Ok(out)
}

pub fn read_toa(file: &Path, ids: &[i64]) -> Result<Vec<ToaRow>> {
    let table = Table::read(file)?;
    let index: HashMap<i64, usize> = ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
    let (t, i, d) = (table.col("t")?, table.col("i")?, table.col("d")?);
    let mut out = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        out.push(ToaRow {
            t: table.f64_at(r, t)?,
            i: anchor_index(&table, r, i, &index)?,
            d: table.f64_at(r, d)?,
        });
    }
    let times: Vec<f64> = out.iter().map(|s| s.t).collect();
    table.check_clock(&times, false)?;
    Ok(out)
}

impl Dataset {
    /// Reads a dataset directory.
    pub fn load(dir: &Path, dim: usize, require_magnetometer: bool) -> Result<Self> {
        let (ids, positions) = read_anchor_table(&dir.join("anchors.csv"))?;
        let anchors = AnchorSet::new(positions, dim)?;
        let truth = read_truth(&dir.join("truth.csv"))?;
        let (imu, has_magnetometer) = read_imu(&dir.join("imu.csv"), require_magnetometer)?;
        let tdoa = dir.join("tdoa.csv");
        let ranges = if tdoa.exists() {
            RangeRows::Tdoa(read_tdoa(&tdoa, &ids)?)
        } else {
            RangeRows::Toa(read_toa(&dir.join("toa.csv"), &ids)?)
        };
        Ok(Dataset {
            anchors,
            anchor_ids: ids,
            truth,
            imu,
            has_magnetometer,
            ranges,
        })
    }

    /// Dataset view of a simulated flight. Ranging epochs are split into
    /// per-pair rows.
    pub fn from_simulation(
        anchors: AnchorSet,
        truth: &TruthTrajectory,
        meas: &Measurements,
    ) -> Self {
        let n = anchors.len();
        let mut tdoa = Vec::new();
        let mut toa = Vec::new();
        for epoch in &meas.ranges {
            match &epoch.obs {
                RangeObservation::Toa(r) => {
                    toa.extend(r.d.iter().enumerate().map(|(i, &d)| ToaRow { t: epoch.t, i, d }));
                }
                RangeObservation::Tdoa(r) => match r.topology {
                    TdoaTopology::MainBs => {
                        tdoa.extend(r.diffs.iter().enumerate().map(|(k, &d)| TdoaRow {
                            t: epoch.t,
                            i: 0,
                            j: k + 1,
                            d,
                        }));
                    }
                    TdoaTopology::Ring => {
                        tdoa.extend(r.diffs.iter().enumerate().map(|(k, &d)| TdoaRow {
                            t: epoch.t,
                            i: k,
                            j: (k + 1) % n,
                            d,
                        }));
                    }
                },
            }
        }
        let ranges = if toa.is_empty() {
            RangeRows::Tdoa(tdoa)
        } else {
            RangeRows::Toa(toa)
        };
        Dataset {
            anchor_ids: (0..n as i64).collect(),
            anchors,
            truth: truth
                .samples
                .iter()
                .map(|s| TruthRecord { t: s.t, state: s.state })
                .collect(),
            imu: meas.imu.clone(),
            has_magnetometer: true,
            ranges,
        }
    }

    /// Writes the dataset files into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let f = |v: f64| format!("{v}");

        let mut w = csv::Writer::from_path(dir.join("anchors.csv"))?;
        w.write_record(["id", "x", "y", "z"])?;
        for (id, p) in self.anchor_ids.iter().zip(self.anchors.anchors()) {
            w.write_record([id.to_string(), f(p.x), f(p.y), f(p.z)])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("truth.csv"))?;
        w.write_record(["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"])?;
        for s in &self.truth {
            let q = rot_to_quat(&s.state.r).to_array();
            let (p, v) = (s.state.p, s.state.v);
            w.write_record([
                f(s.t), f(p.x), f(p.y), f(p.z), f(q[0]), f(q[1]), f(q[2]), f(q[3]),
                f(v.x), f(v.y), f(v.z),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("imu.csv"))?;
        if self.has_magnetometer {
            w.write_record(["t", "wx", "wy", "wz", "ax", "ay", "az", "mx", "my", "mz"])?;
        } else {
            w.write_record(["t", "wx", "wy", "wz", "ax", "ay", "az"])?;
        }
        for s in &self.imu {
            let (o, a, m) = (s.omega_m, s.a_m, s.m_m);
            let mut rec = vec![f(s.t), f(o.x), f(o.y), f(o.z), f(a.x), f(a.y), f(a.z)];
            if self.has_magnetometer {
                rec.extend([f(m.x), f(m.y), f(m.z)]);
            }
            w.write_record(&rec)?;
        }
        w.flush()?;

        let id = |k: usize| self.anchor_ids[k].to_string();
        match &self.ranges {
            RangeRows::Tdoa(rows) => {
                let mut w = csv::Writer::from_path(dir.join("tdoa.csv"))?;
                w.write_record(["t", "i", "j", "d"])?;
                for r in rows {
                    w.write_record([f(r.t), id(r.i), id(r.j), f(r.d)])?;
                }
                w.flush()?;
            }
            RangeRows::Toa(rows) => {
                let mut w = csv::Writer::from_path(dir.join("toa.csv"))?;
                w.write_record(["t", "i", "d"])?;
                for r in rows {
                    w.write_record([f(r.t), id(r.i), f(r.d)])?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }

    /// Truth state at `t`: linear interpolation of position and velocity,
    /// spherical interpolation of attitude. Clamped to the recorded span.
    pub fn truth_at(&self, t: f64) -> NavState {
        interpolate_truth(&self.truth, t)
    }

    /// Resamples every stream onto ticks `t0 + k dt` over the common span.
    ///
    /// When the IMU log lacks magnetometer samples, they are synthesized from
    /// truth with `sigma_m` noise drawn from `seed`.
    pub fn align(
        &self,
        dt: f64,
        topology: Topology,
        env: &ReferenceEnvironment,
        sigma_m: f64,
        seed: u64,
    ) -> Result<Vec<Tick>> {
        if !(dt > 0.0) {
            return Err(Error::BadParams(format!("dt must be positive, got {dt}")));
        }
        if self.imu.is_empty() || self.truth.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        match (&self.ranges, topology) {
            (RangeRows::Toa(_), Topology::Toa) => {}
            (RangeRows::Tdoa(_), Topology::TdoaMain | Topology::TdoaRing) => {}
            _ => {
                return Err(Error::Config(format!(
                    "dataset ranging does not support topology {topology:?}"
                )))
            }
        }
        let t0 = self.imu[0].t.max(self.truth[0].t);
        let t1 = self.imu[self.imu.len() - 1].t.min(self.truth[self.truth.len() - 1].t);
        if t1 < t0 {
            return Err(Error::BadParams("IMU and truth logs do not overlap".into()));
        }
        let steps = ((t1 - t0) / dt + TIME_TOL).floor() as usize;
        let mut mag_rng = ChaCha8Rng::seed_from_u64(seed);
        mag_rng.set_stream(3);

        let mut held = RangeHold::new(self.anchors.len());
        let (mut imu_k, mut range_k) = (0usize, 0usize);
        let mut ticks = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = t0 + k as f64 * dt;
            while imu_k + 1 < self.imu.len() && self.imu[imu_k + 1].t <= t + TIME_TOL {
                imu_k += 1;
            }
            range_k = held.absorb(&self.ranges, range_k, t + TIME_TOL);
            let truth = self.truth_at(t);
            let mut imu = self.imu[imu_k];
            if !self.has_magnetometer {
                let n = crate::attitude::gaussian3(&mut mag_rng);
                imu.m_m = truth.r.transpose() * env.m_r + n * sigma_m;
            }
            ticks.push(Tick {
                t,
                imu,
                ranges: held.observation(topology),
                truth,
            });
        }
        Ok(ticks)
    }
}

fn interpolate_truth(truth: &[TruthRecord], t: f64) -> NavState {
    let k = truth.partition_point(|s| s.t <= t);
    if k == 0 {
        return truth[0].state;
    }
    if k == truth.len() || (t - truth[k - 1].t).abs() <= TIME_TOL {
        return truth[k - 1].state;
    }
    let (a, b) = (&truth[k - 1], &truth[k]);
    let s = (t - a.t) / (b.t - a.t);
    let qa = rot_to_quat(&a.state.r);
    let qb = rot_to_quat(&b.state.r);
    NavState::new(
        quat_to_rot(&qa.slerp(&qb, s)),
        a.state.p + (b.state.p - a.state.p) * s,
        a.state.v + (b.state.v - a.state.v) * s,
    )
}

/// Latest value of every anchor pair (TDOA) or anchor (TOA).
struct RangeHold {
    n: usize,
    pairs: HashMap<(usize, usize), f64>,
    toa: Vec<Option<f64>>,
}

impl RangeHold {
    fn new(n: usize) -> Self {
        RangeHold {
            n,
            pairs: HashMap::new(),
            toa: vec![None; n],
        }
    }

    fn absorb(&mut self, rows: &RangeRows, mut k: usize, until: f64) -> usize {
        match rows {
            RangeRows::Tdoa(rows) => {
                while k < rows.len() && rows[k].t <= until {
                    let r = rows[k];
                    self.pairs.insert((r.i, r.j), r.d);
                    self.pairs.remove(&(r.j, r.i));
                    k += 1;
                }
            }
            RangeRows::Toa(rows) => {
                while k < rows.len() && rows[k].t <= until {
                    self.toa[rows[k].i] = Some(rows[k].d);
                    k += 1;
                }
            }
        }
        k
    }

    /// `|P - h_b| - |P - h_a|` if held in either orientation.
    fn diff(&self, a: usize, b: usize) -> Option<f64> {
        self.pairs
            .get(&(a, b))
            .copied()
            .or_else(|| self.pairs.get(&(b, a)).map(|d| -d))
    }

    fn main_bs(&self) -> Option<TdoaRanges> {
        let diffs: Option<Vec<f64>> = (1..self.n).map(|i| self.diff(0, i)).collect();
        diffs.map(|diffs| TdoaRanges {
            topology: TdoaTopology::MainBs,
            diffs,
        })
    }

    fn ring(&self) -> Option<TdoaRanges> {
        let diffs: Option<Vec<f64>> = (0..self.n).map(|j| self.diff(j, (j + 1) % self.n)).collect();
        diffs.map(|diffs| TdoaRanges {
            topology: TdoaTopology::Ring,
            diffs,
        })
    }

    /// Observation for the requested topology, converting from the other
    /// TDOA topology when only its pairs are held.
    fn observation(&self, topology: Topology) -> Option<RangeObservation> {
        match topology {
            Topology::Toa => {
                let d: Option<Vec<f64>> = self.toa.iter().copied().collect();
                d.map(|d| RangeObservation::Toa(ToaRanges { d }))
            }
            Topology::TdoaMain => self
                .main_bs()
                .or_else(|| self.ring().map(|r| r.to_main_bs()))
                .map(RangeObservation::Tdoa),
            Topology::TdoaRing => self
                .ring()
                .or_else(|| self.main_bs().map(|r| r.to_ring()))
                .map(RangeObservation::Tdoa),
        }
    }
}
