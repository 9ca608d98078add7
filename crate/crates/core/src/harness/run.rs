//! Experiment orchestration: build the streams, run the filter, summarize.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{Attitude, Dropout, FilterState, NavFilter};
use crate::harness::config::{Mode, RunConfig, TopologyName, Variant};
use crate::harness::dataset::{Dataset, Tick};
use crate::harness::metrics::{
    self, series_stats, time_to_threshold, EstimateRow, MetricsRow, SeriesStats,
};
use crate::liegroup::{quat_to_rot, rot_to_quat, Vec3};
use crate::sim::{generate_trajectory, simulate_measurements, SensorSetup, TrajectoryParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropoutCounts {
    pub no_ranging: usize,
    pub geometry: usize,
    pub triads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub topology: TopologyName,
    pub variant: Variant,
    pub steps: usize,
    pub duration: f64,
    pub att_err: SeriesStats,
    pub pos_err: SeriesStats,
    pub vel_err: SeriesStats,
    pub pos_threshold: f64,
    pub time_to_pos_threshold: Option<f64>,
    pub dropouts: DropoutCounts,
    pub aux_clamped: usize,
    pub sigma_floor_warnings: usize,
    /// RMS error of the reconstructed position over the second half.
    pub py_rms_last_half: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub estimates: Vec<EstimateRow>,
    pub metrics: Vec<MetricsRow>,
    pub summary: Summary,
}

/// Simulated flight as a dataset, following the config's trajectory,
/// sensors and noise.
pub fn synthesize(cfg: &RunConfig) -> Result<Dataset> {
    let env = cfg.env.to_env()?;
    let anchors = cfg.anchor_set()?;
    let decimation = cfg.sim_rate / cfg.range_rate;
    if decimation < 1.0 - 1e-9 || (decimation - decimation.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "sim_rate {} must be an integer multiple of range_rate {}",
            cfg.sim_rate, cfg.range_rate
        )));
    }
    let truth = generate_trajectory(
        &cfg.trajectory.to_kind(),
        &TrajectoryParams {
            duration: cfg.duration,
            rate: cfg.sim_rate,
        },
        &env,
    )?;
    let setup = SensorSetup {
        anchors: &anchors,
        topology: cfg.topology(),
        env,
        noise: cfg.noise_spec(),
        accel_model: cfg.accel_model.into(),
        tag_offset: Vec3::from(cfg.tag_offset),
        range_decimation: decimation.round() as usize,
    };
    let meas = simulate_measurements(&truth, &setup)?;
    Ok(Dataset::from_simulation(anchors, &truth, &meas))
}

/// The dataset a config describes: simulated, or read from `dataset_dir`.
pub fn load_or_synthesize(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.mode {
        Mode::Synthetic => synthesize(cfg),
        Mode::Dataset => {
            let dir = cfg
                .dataset_dir
                .as_deref()
                .ok_or_else(|| Error::Config("dataset mode needs dataset_dir".into()))?;
            Dataset::load(dir, cfg.anchors.dim, !cfg.synthesize_magnetometer)
        }
    }
}

pub fn initial_state(cfg: &RunConfig, first: &Tick) -> FilterState {
    let (r, p, v) = if cfg.init.from_truth {
        (first.truth.r, first.truth.p, first.truth.v)
    } else {
        (
            quat_to_rot(&cfg.init.quaternion()),
            Vec3::from(cfg.init.p_hat),
            Vec3::from(cfg.init.v_hat),
        )
    };
    let attitude = match cfg.variant {
        Variant::Matrix => Attitude::Matrix(r),
        Variant::Quaternion => Attitude::Quaternion(rot_to_quat(&r)),
    };
    FilterState::new(attitude, p, v, Vec3::from(cfg.init.sigma_hat), first.t)
}

#[derive(Debug, Clone, Copy, Default)]
struct Counters {
    dropouts: DropoutCounts,
    aux_clamped: usize,
    sigma_floor: usize,
}

/// Runs the filter over the ticks. Row `k` holds the estimate at tick `k`
/// and the diagnostics of the step that leaves it.
fn run_filter(
    filter: &NavFilter,
    init: FilterState,
    ticks: &[Tick],
    dt: f64,
) -> Result<(Vec<EstimateRow>, Vec<Option<Vec3>>, Counters)> {
    let mut rows = Vec::with_capacity(ticks.len());
    let mut fixes = Vec::with_capacity(ticks.len());
    let mut counters = Counters::default();
    let mut state = init;
    for (k, tick) in ticks.iter().enumerate() {
        let nav = state.nav_state();
        if !(nav.p.iter().chain(nav.v.iter()).chain(state.sigma_hat.iter()).all(|x| x.is_finite())) {
            return Err(Error::Numerical(format!("estimate diverged at t = {}", tick.t)));
        }
        let mut row = EstimateRow {
            t: tick.t,
            state: nav,
            sigma_hat: state.sigma_hat,
            e_r: f64::NAN,
            py_residual: f64::NAN,
        };
        if k + 1 == ticks.len() {
            rows.push(row);
            fixes.push(None);
            break;
        }
        let (next, diag) = filter.step(&state, &tick.imu, tick.ranges.as_ref(), dt);
        match &diag.dropout {
            None => {}
            Some(Dropout::NoRanging) => counters.dropouts.no_ranging += 1,
            Some(Dropout::Geometry(_)) => counters.dropouts.geometry += 1,
            Some(Dropout::Triads(_)) => counters.dropouts.triads += 1,
        }
        counters.aux_clamped += diag.aux_clamped as usize;
        counters.sigma_floor += diag.sigma_below_floor as usize;
        row.e_r = diag.e_r;
        row.py_residual = diag.py_residual;
        rows.push(row);
        fixes.push(diag.p_y);
        state = next;
    }
    Ok((rows, fixes, counters))
}

/// Runs the filter over prepared ticks and summarizes the result.
pub fn run_on_ticks(cfg: &RunConfig, anchors: crate::uwb::AnchorSet, ticks: &[Tick]) -> Result<RunOutput> {
    if ticks.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: ticks.len(),
        });
    }
    let filter = NavFilter::new(anchors, cfg.env.to_env()?, cfg.gains())?
        .with_tag_offset(Vec3::from(cfg.tag_offset));
    let filter = NavFilter {
        max_condition: cfg.max_condition,
        ..filter
    };
    let init = initial_state(cfg, &ticks[0]);
    let (estimates, fixes, counters) = run_filter(&filter, init, ticks, cfg.dt)?;
    let metrics: Vec<MetricsRow> = estimates
        .iter()
        .zip(ticks)
        .map(|(e, tick)| e.metrics(&tick.truth))
        .collect();

    let times: Vec<f64> = metrics.iter().map(|m| m.t).collect();
    let att: Vec<f64> = metrics.iter().map(|m| m.att_err).collect();
    let pos: Vec<f64> = metrics.iter().map(|m| m.pos_err).collect();
    let vel: Vec<f64> = metrics.iter().map(|m| m.vel_err).collect();
    let half = ticks.len() / 2;
    let sq: Vec<f64> = fixes[half..]
        .iter()
        .zip(&ticks[half..])
        .filter_map(|(f, tick)| f.map(|p| (p - tick.truth.p).norm_squared()))
        .collect();
    let py_rms_last_half = if sq.is_empty() {
        f64::NAN
    } else {
        (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
    };
    let summary = Summary {
        seed: cfg.seed,
        topology: cfg.topology,
        variant: cfg.variant,
        steps: ticks.len() - 1,
        duration: ticks[ticks.len() - 1].t - ticks[0].t,
        att_err: series_stats(&att),
        pos_err: series_stats(&pos),
        vel_err: series_stats(&vel),
        pos_threshold: cfg.pos_threshold,
        time_to_pos_threshold: time_to_threshold(&times, &pos, cfg.pos_threshold),
        dropouts: counters.dropouts,
        aux_clamped: counters.aux_clamped,
        sigma_floor_warnings: counters.sigma_floor,
        py_rms_last_half,
    };
    Ok(RunOutput {
        estimates,
        metrics,
        summary,
    })
}

/// Builds the streams a config describes and runs the filter on them.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = load_or_synthesize(cfg)?;
    let env = cfg.env.to_env()?;
    let ticks = data.align(cfg.dt, cfg.topology(), &env, cfg.noise.sigma_m, cfg.seed)?;
    log::info!(
        "running {} ticks at dt = {} ({:?}, {:?})",
        ticks.len(),
        cfg.dt,
        cfg.topology,
        cfg.variant
    );
    run_on_ticks(cfg, data.anchors.clone(), &ticks)
}

/// Writes `metrics.csv`, `estimates.csv`, `summary.json` and the effective
/// `config.toml` into `dir`.
pub fn write_outputs(out: &RunOutput, cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    metrics::write_metrics(&dir.join("metrics.csv"), &out.metrics)?;
    metrics::write_estimates(&dir.join("estimates.csv"), &out.estimates)?;
    let json = serde_json::to_string_pretty(&out.summary)
        .map_err(|e| Error::Numerical(format!("summary serialization: {e}")))?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}
