//! UWB ranging models and linear least-squares multilateration.
//!
//! Three measurement topologies are supported. TOA gives absolute distances
//! to every anchor. TDOA gives range differences, either all referenced to
//! the first anchor (main base station) or chained through consecutive
//! anchors and closed back onto the first (ring). The TDOA solvers estimate
//! the augmented unknown `[P, |P - h1|]` so both stay linear.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::liegroup::{Rotation, Vec3};

/// Default ceiling on the condition number of the least-squares matrix.
pub const DEFAULT_MAX_CONDITION: f64 = 1e8;
/// Anchors closer than this are treated as coincident.
pub const COINCIDENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<Vec3>,
    dim: usize,
}

impl AnchorSet {
    /// Builds an anchor set for 2D or 3D positioning.
    ///
    /// Only the dimension and pairwise separation are validated here. The
    /// anchor count required by each topology is checked by
    /// [`geometry_check`] and by the solvers.
    pub fn new(anchors: Vec<Vec3>, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::BadParams(format!("dim must be 2 or 3, got {dim}")));
        }
        if anchors.iter().any(|h| !h.iter().all(|c| c.is_finite())) {
            return Err(Error::BadParams("anchor coordinates must be finite".into()));
        }
        for i in 0..anchors.len() {
            for j in i + 1..anchors.len() {
                if (anchors[i] - anchors[j]).norm() <= COINCIDENT_TOL {
                    return Err(Error::BadParams(format!(
                        "anchors {} and {} coincide",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(AnchorSet { anchors, dim })
    }

    pub fn anchors(&self) -> &[Vec3] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest anchor count for which `topology` yields a determined system.
    pub fn min_count(&self, topology: Topology) -> usize {
        match topology {
            Topology::Toa => self.dim + 1,
            // ring rows telescope, so both TDOA forms have N - 1 independent rows
            Topology::TdoaMain | Topology::TdoaRing => self.dim + 2,
        }
    }

    /// Anchor coordinates restricted to the positioning dimension.
    fn coords(&self, i: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim, self.anchors[i].iter().copied().take(self.dim))
    }

    fn check_count(&self, topology: Topology) -> Result<()> {
        let needed = self.min_count(topology);
        if self.len() < needed {
            return Err(Error::GeometryDegenerate(format!(
                "{topology:?} in {}D needs at least {needed} anchors, got {}",
                self.dim,
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    Toa,
    TdoaMain,
    TdoaRing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TdoaTopology {
    MainBs,
    Ring,
}

impl From<TdoaTopology> for Topology {
    fn from(t: TdoaTopology) -> Self {
        match t {
            TdoaTopology::MainBs => Topology::TdoaMain,
            TdoaTopology::Ring => Topology::TdoaRing,
        }
    }
}

/// Tag-to-anchor distances, aligned with the anchor order.
#[derive(Debug, Clone, PartialEq)]
pub struct ToaRanges {
    pub d: Vec<f64>,
}

/// Range differences `d_{j,i} = |P - h_j| - |P - h_i|`.
///
/// Main base station: `d_{2,1}, d_{3,1}, ..., d_{N,1}`.
/// Ring: `d_{2,1}, d_{3,2}, ..., d_{N,N-1}, d_{1,N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaRanges {
    pub topology: TdoaTopology,
    pub diffs: Vec<f64>,
}

impl TdoaRanges {
    /// Re-expresses the differences in main base station form.
    pub fn to_main_bs(&self) -> TdoaRanges {
        let diffs = match self.topology {
            TdoaTopology::MainBs => self.diffs.clone(),
            TdoaTopology::Ring => {
                let n = self.diffs.len();
                let mut acc = 0.0;
                self.diffs[..n.saturating_sub(1)]
                    .iter()
                    .map(|d| {
                        acc += d;
                        acc
                    })
                    .collect()
            }
        };
        TdoaRanges {
            topology: TdoaTopology::MainBs,
            diffs,
        }
    }

    /// Re-expresses the differences in ring form.
    pub fn to_ring(&self) -> TdoaRanges {
        let diffs = match self.topology {
            TdoaTopology::Ring => self.diffs.clone(),
            TdoaTopology::MainBs => {
                let mut out = Vec::with_capacity(self.diffs.len() + 1);
                let mut prev = 0.0;
                for &d in &self.diffs {
                    out.push(d - prev);
                    prev = d;
                }
                out.push(-prev);
                out
            }
        };
        TdoaRanges {
            topology: TdoaTopology::Ring,
            diffs,
        }
    }
}

/// A ranging epoch in any of the supported topologies.
#[derive(Debug, Clone, PartialEq)]
pub enum RangeObservation {
    Toa(ToaRanges),
    Tdoa(TdoaRanges),
}

impl RangeObservation {
    pub fn topology(&self) -> Topology {
        match self {
            RangeObservation::Toa(_) => Topology::Toa,
            RangeObservation::Tdoa(r) => r.topology.into(),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            RangeObservation::Toa(r) => &r.d,
            RangeObservation::Tdoa(r) => &r.diffs,
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            RangeObservation::Toa(r) => &mut r.d,
            RangeObservation::Tdoa(r) => &mut r.diffs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionFix {
    pub p: Vec3,
    /// Estimated `|P - h1|` in TDOA modes.
    pub aux_range: Option<f64>,
    pub condition_number: f64,
    /// Set when a negative `aux_range` estimate was clamped to zero.
    pub aux_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryReport {
    pub rank: usize,
    pub condition_number: f64,
    pub admissible: bool,
}

/// Checks anchor count, rank and conditioning of the anchor-difference
/// matrix for `topology`.
pub fn geometry_check(anchors: &AnchorSet, topology: Topology) -> GeometryReport {
    geometry_check_with(anchors, topology, DEFAULT_MAX_CONDITION)
}

pub fn geometry_check_with(
    anchors: &AnchorSet,
    topology: Topology,
    max_condition: f64,
) -> GeometryReport {
    let n = anchors.len();
    let dim = anchors.dim();
    if n < 2 {
        return GeometryReport {
            rank: 0,
            condition_number: f64::INFINITY,
            admissible: false,
        };
    }
    let h1 = anchors.coords(0);
    let a = DMatrix::from_fn(n - 1, dim, |r, c| anchors.coords(r + 1)[c] - h1[c]);
    let (rank, cond) = rank_and_condition(&a);
    let admissible =
        n >= anchors.min_count(topology) && rank == dim && cond <= max_condition;
    GeometryReport {
        rank,
        condition_number: cond,
        admissible,
    }
}

fn rank_and_condition(a: &DMatrix<f64>) -> (usize, f64) {
    let s = a.singular_values();
    let s_max = s.max();
    let s_min = s.min();
    let tol = s_max * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > tol).count();
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    (rank, cond)
}

/// Least squares `min |A x - b|` via thin QR, rejecting rank-deficient or
/// ill-conditioned systems.
fn solve_least_squares(
    a: DMatrix<f64>,
    b: DVector<f64>,
    max_condition: f64,
) -> Result<(DVector<f64>, f64)> {
    let (rank, cond) = rank_and_condition(&a);
    if rank < a.ncols() {
        return Err(Error::GeometryDegenerate(format!(
            "least-squares matrix has rank {rank} < {}",
            a.ncols()
        )));
    }
    if !(cond <= max_condition) {
        return Err(Error::GeometryDegenerate(format!(
            "condition number {cond:e} exceeds ceiling {max_condition:e}"
        )));
    }
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let x = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::GeometryDegenerate("singular triangular factor".into()))?;
    Ok((x, cond))
}

fn to_vec3(x: &DVector<f64>, dim: usize) -> Vec3 {
    let mut p = Vec3::zeros();
    for i in 0..dim {
        p[i] = x[i];
    }
    p
}

/// Exact tag-to-anchor distances.
pub fn toa_ranges(p: &Vec3, anchors: &AnchorSet) -> ToaRanges {
    ToaRanges {
        d: anchors.anchors().iter().map(|h| (h - p).norm()).collect(),
    }
}

pub fn toa_solve(anchors: &AnchorSet, ranges: &ToaRanges) -> Result<PositionFix> {
    toa_solve_with(anchors, ranges, DEFAULT_MAX_CONDITION)
}

pub fn toa_solve_with(
    anchors: &AnchorSet,
    ranges: &ToaRanges,
    max_condition: f64,
) -> Result<PositionFix> {
    anchors.check_count(Topology::Toa)?;
    check_len(ranges.d.len(), anchors.len(), "TOA ranges")?;
    let n = anchors.len();
    let dim = anchors.dim();
    let h1 = anchors.coords(0);
    let d1 = ranges.d[0];
    let mut a = DMatrix::zeros(n - 1, dim);
    let mut b = DVector::zeros(n - 1);
    for i in 1..n {
        let hi = anchors.coords(i);
        a.row_mut(i - 1).copy_from(&(&hi - &h1).transpose());
        b[i - 1] = 0.5
            * (d1 * d1 - ranges.d[i] * ranges.d[i] + hi.norm_squared() - h1.norm_squared());
    }
    let (x, cond) = solve_least_squares(a, b, max_condition)?;
    Ok(PositionFix {
        p: to_vec3(&x, dim),
        aux_range: None,
        condition_number: cond,
        aux_clamped: false,
    })
}

/// Exact range differences for `topology`. With `tag_offset = (R, v_c)` the
/// ranging point is `P + R v_c`.
pub fn tdoa_ranges(
    p: &Vec3,
    anchors: &AnchorSet,
    topology: TdoaTopology,
    tag_offset: Option<(&Rotation, &Vec3)>,
) -> TdoaRanges {
    let tag = match tag_offset {
        Some((r, vc)) => p + r * vc,
        None => *p,
    };
    let dist: Vec<f64> = anchors.anchors().iter().map(|h| (tag - h).norm()).collect();
    let n = dist.len();
    let diffs = match topology {
        TdoaTopology::MainBs => (1..n).map(|i| dist[i] - dist[0]).collect(),
        TdoaTopology::Ring => (0..n).map(|j| dist[(j + 1) % n] - dist[j]).collect(),
    };
    TdoaRanges { topology, diffs }
}

pub fn tdoa_solve_main_bs(anchors: &AnchorSet, ranges: &TdoaRanges) -> Result<PositionFix> {
    tdoa_solve_main_bs_with(anchors, ranges, DEFAULT_MAX_CONDITION)
}

pub fn tdoa_solve_main_bs_with(
    anchors: &AnchorSet,
    ranges: &TdoaRanges,
    max_condition: f64,
) -> Result<PositionFix> {
    if ranges.topology != TdoaTopology::MainBs {
        return Err(Error::BadParams("expected main base station differences".into()));
    }
    anchors.check_count(Topology::TdoaMain)?;
    let n = anchors.len();
    check_len(ranges.diffs.len(), n - 1, "main base station differences")?;
    let dim = anchors.dim();
    let h1 = anchors.coords(0);
    let mut a = DMatrix::zeros(n - 1, dim + 1);
    let mut b = DVector::zeros(n - 1);
    for i in 1..n {
        let hi = anchors.coords(i);
        let d = ranges.diffs[i - 1];
        let row = i - 1;
        for c in 0..dim {
            a[(row, c)] = h1[c] - hi[c];
        }
        a[(row, dim)] = -d;
        b[row] = 0.5 * (d * d + h1.norm_squared() - hi.norm_squared());
    }
    let (x, cond) = solve_least_squares(a, b, max_condition)?;
    Ok(augmented_fix(&x, dim, cond))
}

pub fn tdoa_solve_ring(anchors: &AnchorSet, ranges: &TdoaRanges) -> Result<PositionFix> {
    tdoa_solve_ring_with(anchors, ranges, DEFAULT_MAX_CONDITION)
}

pub fn tdoa_solve_ring_with(
    anchors: &AnchorSet,
    ranges: &TdoaRanges,
    max_condition: f64,
) -> Result<PositionFix> {
    if ranges.topology != TdoaTopology::Ring {
        return Err(Error::BadParams("expected ring differences".into()));
    }
    anchors.check_count(Topology::TdoaRing)?;
    let n = anchors.len();
    check_len(ranges.diffs.len(), n, "ring differences")?;
    let dim = anchors.dim();
    let mut a = DMatrix::zeros(n, dim + 1);
    let mut b = DVector::zeros(n);
    // |P - h_j| = |P - h_1| + s, with s the running sum of earlier differences
    let mut s = 0.0;
    for j in 0..n {
        let hj = anchors.coords(j);
        let hk = anchors.coords((j + 1) % n);
        let d = ranges.diffs[j];
        for c in 0..dim {
            a[(j, c)] = hj[c] - hk[c];
        }
        a[(j, dim)] = -d;
        b[j] = 0.5 * (d * d + hj.norm_squared() - hk.norm_squared() + 2.0 * d * s);
        s += d;
    }
    let (x, cond) = solve_least_squares(a, b, max_condition)?;
    Ok(augmented_fix(&x, dim, cond))
}

fn augmented_fix(x: &DVector<f64>, dim: usize, cond: f64) -> PositionFix {
    let raw = x[dim];
    let aux_clamped = raw < 0.0;
    if aux_clamped {
        log::warn!("negative reference range estimate {raw} clamped to 0");
    }
    PositionFix {
        p: to_vec3(x, dim),
        aux_range: Some(raw.max(0.0)),
        condition_number: cond,
        aux_clamped,
    }
}

/// Dispatches to the solver matching the observation's topology.
pub fn solve(
    anchors: &AnchorSet,
    obs: &RangeObservation,
    max_condition: f64,
) -> Result<PositionFix> {
    match obs {
        RangeObservation::Toa(r) => toa_solve_with(anchors, r, max_condition),
        RangeObservation::Tdoa(r) => match r.topology {
            TdoaTopology::MainBs => tdoa_solve_main_bs_with(anchors, r, max_condition),
            TdoaTopology::Ring => tdoa_solve_ring_with(anchors, r, max_condition),
        },
    }
}

/// Exact observation of `topology` for a tag at `p + R v_c`.
pub fn observe(
    p: &Vec3,
    anchors: &AnchorSet,
    topology: Topology,
    tag_offset: Option<(&Rotation, &Vec3)>,
) -> RangeObservation {
    match topology {
        Topology::Toa => {
            let tag = match tag_offset {
                Some((r, vc)) => p + r * vc,
                None => *p,
            };
            RangeObservation::Toa(toa_ranges(&tag, anchors))
        }
        Topology::TdoaMain => {
            RangeObservation::Tdoa(tdoa_ranges(p, anchors, TdoaTopology::MainBs, tag_offset))
        }
        Topology::TdoaRing => {
            RangeObservation::Tdoa(tdoa_ranges(p, anchors, TdoaTopology::Ring, tag_offset))
        }
    }
}

fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::BadParams(format!("{what}: expected {want} values, got {got}")));
    }
    Ok(())
}
