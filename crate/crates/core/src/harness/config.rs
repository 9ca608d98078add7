//! Run configuration, read from a TOML file.
//!
//! Every key is optional; omitted keys take the values of the reference
//! experiment (gains, initial estimate offsets, magnetometer reference,
//! noise levels, tag lever arm and a 100 Hz filter rate).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attitude::{AccelModel, ReferenceEnvironment, STANDARD_GRAVITY};
use crate::error::{Error, Result};
use crate::filter::FilterGains;
use crate::liegroup::{rot_to_quat, so3_exp, UnitQuaternion, Vec3};
use crate::sim::{NoiseSchedule, NoiseSpec, TrajectoryKind};
use crate::uwb::{AnchorSet, Topology, DEFAULT_MAX_CONDITION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Synthetic,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyName {
    Toa,
    TdoaMain,
    #[default]
    TdoaRing,
}

impl From<TopologyName> for Topology {
    fn from(t: TopologyName) -> Self {
        match t {
            TopologyName::Toa => Topology::Toa,
            TopologyName::TdoaMain => Topology::TdoaMain,
            TopologyName::TdoaRing => Topology::TdoaRing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Matrix,
    Quaternion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AccelModelName {
    #[default]
    Full,
    LowFrequency,
}

impl From<AccelModelName> for AccelModel {
    fn from(m: AccelModelName) -> Self {
        match m {
            AccelModelName::Full => AccelModel::Full,
            AccelModelName::LowFrequency => AccelModel::LowFrequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsConfig {
    pub k1: f64,
    pub kv: f64,
    pub ka: f64,
    pub gamma_sigma: f64,
    pub epsilon: f64,
    pub k_sigma: f64,
    pub s: [f64; 3],
}

impl Default for GainsConfig {
    fn default() -> Self {
        let g = FilterGains::default();
        GainsConfig {
            k1: g.k1,
            kv: g.kv,
            ka: g.ka,
            gamma_sigma: g.gamma_sigma,
            epsilon: g.epsilon,
            k_sigma: g.k_sigma,
            s: g.s,
        }
    }
}

impl GainsConfig {
    pub fn to_gains(&self) -> FilterGains {
        FilterGains {
            k1: self.k1,
            kv: self.kv,
            ka: self.ka,
            gamma_sigma: self.gamma_sigma,
            epsilon: self.epsilon,
            k_sigma: self.k_sigma,
            s: self.s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub p_hat: [f64; 3],
    pub v_hat: [f64; 3],
    /// Initial attitude estimate as `[qw, qx, qy, qz]`.
    pub attitude: [f64; 4],
    pub sigma_hat: [f64; 3],
    /// Start the estimate at the true state instead of the values above.
    pub from_truth: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            p_hat: [-2.0, -3.0, 0.0],
            v_hat: [0.0; 3],
            attitude: [1.0, 0.0, 0.0, 0.0],
            sigma_hat: [0.0; 3],
            from_truth: false,
        }
    }
}

impl InitConfig {
    pub fn quaternion(&self) -> UnitQuaternion {
        let [w, x, y, z] = self.attitude;
        UnitQuaternion::new(w, Vec3::new(x, y, z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant,
    Ramp { from: f64, to: f64, duration: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_omega: [f64; 3],
    pub sigma_a: [f64; 3],
    pub sigma_m: f64,
    pub sigma_range: f64,
    pub schedule: ScheduleConfig,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_omega: [0.005; 3],
            sigma_a: [0.05; 3],
            sigma_m: 0.2,
            sigma_range: 0.05,
            schedule: ScheduleConfig::Constant,
        }
    }
}

impl NoiseConfig {
    pub fn to_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            sigma_omega: Vec3::from(self.sigma_omega),
            sigma_a: Vec3::from(self.sigma_a),
            sigma_m: self.sigma_m,
            sigma_range: self.sigma_range,
            seed,
            schedule: match self.schedule {
                ScheduleConfig::Constant => NoiseSchedule::Constant,
                ScheduleConfig::Ramp { from, to, duration } => {
                    NoiseSchedule::Ramp { from, to, duration }
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub g: f64,
    pub m_r: [f64; 3],
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            g: STANDARD_GRAVITY,
            m_r: [-1.3, 0.0, 1.5],
        }
    }
}

impl EnvConfig {
    pub fn to_env(&self) -> Result<ReferenceEnvironment> {
        ReferenceEnvironment::new(self.g, Vec3::from(self.m_r))
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Anchors given inline or through an `id,x,y,z` CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub dim: usize,
    pub positions: Vec<[f64; 3]>,
    pub file: Option<PathBuf>,
}

/// Eight anchors spread over a 7 m x 7 m x 2.6 m volume.
pub const DEFAULT_ANCHORS: [[f64; 3]; 8] = [
    [-3.5, -3.4, 0.15],
    [3.4, -3.5, 2.65],
    [3.5, 3.4, 0.25],
    [-3.4, 3.5, 2.55],
    [-3.5, -3.5, 2.7],
    [3.5, -3.4, 0.2],
    [3.4, 3.5, 2.6],
    [-3.5, 3.4, 0.3],
];

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            dim: 3,
            positions: DEFAULT_ANCHORS.to_vec(),
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Hover {
        #[serde(default = "replica_start")]
        position: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
    Circle {
        center: [f64; 3],
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    Lissajous {
        center: [f64; 3],
        amplitude: [f64; 3],
        /// Per-axis frequency in Hz.
        frequency: [f64; 3],
        #[serde(default)]
        phase: [f64; 3],
        #[serde(default)]
        yaw_amplitude: f64,
        #[serde(default)]
        tilt_amplitude: f64,
        #[serde(default)]
        attitude_frequency: f64,
    },
    /// Lissajous flight starting at the reference initial position and
    /// velocity.
    #[default]
    Replica,
}

fn replica_start() -> [f64; 3] {
    REPLICA_START_POSITION
}

fn default_radius() -> f64 {
    2.0
}

fn default_period() -> f64 {
    10.0
}

pub const REPLICA_START_POSITION: [f64; 3] = [-0.061, 1.244, 1.506];
pub const REPLICA_START_VELOCITY: [f64; 3] = [-0.4708, 0.1308, -0.3363];

impl TrajectoryConfig {
    pub fn to_kind(&self) -> TrajectoryKind {
        match self {
            TrajectoryConfig::Hover { position, yaw } => TrajectoryKind::Hover {
                position: Vec3::from(*position),
                yaw: *yaw,
            },
            TrajectoryConfig::Circle {
                center,
                radius,
                period,
                phase,
            } => TrajectoryKind::Circle {
                center: Vec3::from(*center),
                radius: *radius,
                period: *period,
                phase: *phase,
            },
            TrajectoryConfig::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
                yaw_amplitude,
                tilt_amplitude,
                attitude_frequency,
            } => TrajectoryKind::Lissajous {
                center: Vec3::from(*center),
                amplitude: Vec3::from(*amplitude),
                frequency: Vec3::from(*frequency),
                phase: Vec3::from(*phase),
                yaw_amplitude: *yaw_amplitude,
                tilt_amplitude: *tilt_amplitude,
                attitude_frequency: *attitude_frequency,
            },
            TrajectoryConfig::Replica => replica_kind(),
        }
    }
}

/// Sinusoidal flight with `P(0)` and `V(0)` at the reference start values.
pub fn replica_kind() -> TrajectoryKind {
    let freq = Vec3::new(0.1, 0.05, 0.1);
    let v0 = Vec3::from(REPLICA_START_VELOCITY);
    let amplitude = Vec3::from_fn(|i, _| v0[i] / (2.0 * std::f64::consts::PI * freq[i]));
    TrajectoryKind::Lissajous {
        center: Vec3::from(REPLICA_START_POSITION),
        amplitude,
        frequency: freq,
        phase: Vec3::zeros(),
        yaw_amplitude: 0.6,
        tilt_amplitude: 0.08,
        attitude_frequency: 0.05,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub topology: TopologyName,
    pub variant: Variant,
    /// Filter period in seconds.
    pub dt: f64,
    /// Synthetic flight duration in seconds.
    pub duration: f64,
    pub seed: u64,
    /// Truth and IMU rate of synthetic flights (Hz).
    pub sim_rate: f64,
    /// Ranging epoch rate of synthetic flights (Hz).
    pub range_rate: f64,
    pub accel_model: AccelModelName,
    /// Body-frame lever arm from the vehicle origin to the UWB tag (m).
    pub tag_offset: [f64; 3],
    pub max_condition: f64,
    /// Dataset directory for `mode = "dataset"`.
    pub dataset_dir: Option<PathBuf>,
    /// Synthesize magnetometer samples from truth when the IMU file has none.
    pub synthesize_magnetometer: bool,
    pub out_dir: PathBuf,
    /// Position error threshold for the time-to-threshold summary (m).
    pub pos_threshold: f64,
    pub gains: GainsConfig,
    pub init: InitConfig,
    pub noise: NoiseConfig,
    pub env: EnvConfig,
    pub anchors: AnchorConfig,
    pub trajectory: TrajectoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Synthetic,
            topology: TopologyName::TdoaRing,
            variant: Variant::Matrix,
            dt: 0.01,
            duration: 60.0,
            seed: 1,
            sim_rate: 500.0,
            range_rate: 100.0,
            accel_model: AccelModelName::Full,
            tag_offset: [-0.012, 0.001, 0.091],
            max_condition: DEFAULT_MAX_CONDITION,
            dataset_dir: None,
            synthesize_magnetometer: false,
            out_dir: PathBuf::from("out"),
            pos_threshold: 0.3,
            gains: GainsConfig::default(),
            init: InitConfig::default(),
            noise: NoiseConfig::default(),
            env: EnvConfig::default(),
            anchors: AnchorConfig::default(),
            trajectory: TrajectoryConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(f) = &self.anchors.file {
            if f.is_relative() {
                self.anchors.file = Some(base.join(f));
            }
        }
        if let Some(d) = &self.dataset_dir {
            if d.is_relative() {
                self.dataset_dir = Some(base.join(d));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("duration", self.duration),
            ("sim_rate", self.sim_rate),
            ("range_rate", self.range_rate),
            ("max_condition", self.max_condition),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        self.gains
            .to_gains()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.noise
            .to_spec(self.seed)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.env.to_env()?;
        if let Some(f) = &self.anchors.file {
            if !f.exists() {
                return Err(Error::Config(format!("anchor file {} not found", f.display())));
            }
        }
        if self.mode == Mode::Dataset {
            match &self.dataset_dir {
                Some(d) if d.is_dir() => {}
                Some(d) => {
                    return Err(Error::Config(format!("dataset directory {} not found", d.display())))
                }
                None => return Err(Error::Config("dataset mode needs dataset_dir".into())),
            }
        }
        let q = self.init.attitude;
        if q.iter().map(|c| c * c).sum::<f64>() <= 0.0 {
            return Err(Error::Config("initial attitude quaternion is zero".into()));
        }
        Ok(())
    }

    pub fn gains(&self) -> FilterGains {
        self.gains.to_gains()
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        self.noise.to_spec(self.seed)
    }

    /// Anchors from the inline list, or from the anchor file if given.
    pub fn anchor_set(&self) -> Result<AnchorSet> {
        let positions = match &self.anchors.file {
            Some(f) => crate::harness::dataset::read_anchors(f)?,
            None => self.anchors.positions.iter().map(|p| Vec3::from(*p)).collect(),
        };
        AnchorSet::new(positions, self.anchors.dim).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn topology(&self) -> Topology {
        self.topology.into()
    }
}

/// Initial attitude given as a rotation vector, for building configs.
pub fn attitude_from_rotation_vector(w: Vec3) -> [f64; 4] {
    rot_to_quat(&so3_exp(&w)).to_array()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_values() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let g = cfg.gains();
        assert_eq!((g.k1, g.kv, g.ka), (3.0, 3.0, 70.0));
        assert_eq!((g.gamma_sigma, g.epsilon, g.k_sigma), (0.1, 0.5, 0.1));
        assert_eq!(cfg.init.p_hat, [-2.0, -3.0, 0.0]);
        assert_eq!(cfg.init.sigma_hat, [0.0; 3]);
        assert_eq!(cfg.env.m_r, [-1.3, 0.0, 1.5]);
        assert_eq!(cfg.noise.sigma_m, 0.2);
        assert_eq!(cfg.noise.sigma_range, 0.05);
        assert_eq!(cfg.tag_offset, [-0.012, 0.001, 0.091]);
        assert_eq!(cfg.dt, 0.01);
        cfg.validate().unwrap();
        assert_eq!(cfg.anchor_set().unwrap().len(), 8);
    }

    #[test]
    fn replica_starts_at_reference_state() {
        let env = ReferenceEnvironment::default();
        let traj = crate::sim::generate_trajectory(
            &replica_kind(),
            &crate::sim::TrajectoryParams { duration: 1.0, rate: 100.0 },
            &env,
        )
        .unwrap();
        let s0 = traj.samples[0].state;
        assert!((s0.p - Vec3::from(REPLICA_START_POSITION)).norm() < 1e-12);
        assert!((s0.v - Vec3::from(REPLICA_START_VELOCITY)).norm() < 1e-12);
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let text = r#"
            topology = "tdoa-main"
            variant = "quaternion"
            seed = 7
            [gains]
            ka = 50.0
            [noise.schedule]
            kind = "ramp"
            from = 1.0
            to = 2.0
            duration = 10.0
            [trajectory]
            kind = "circle"
            center = [0.0, 0.0, 1.5]
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.topology, TopologyName::TdoaMain);
        assert_eq!(cfg.variant, Variant::Quaternion);
        assert_eq!(cfg.gains.ka, 50.0);
        assert_eq!(cfg.gains.k1, 3.0);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        let cfg = RunConfig::from_toml("dt = -0.01").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig::from_toml("[gains]\nk1 = 0.0").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig::from_toml("mode = \"dataset\"").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
