//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line to
//! stderr (bypassing output capture) and then asserts.

mod common;

use std::io::Write;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use uwbnav::attitude::{build_triads, weighting_matrices, ImuSample, ReferenceEnvironment, DEFAULT_WEIGHTS};
use uwbnav::filter::{
    continuous_rhs, correction_terms, predict, update, Attitude, AttitudeRate, DiscreteCorrection,
    FilterGains, FilterState, NavFilter,
};
use uwbnav::harness::config::{TopologyName, Variant};
use uwbnav::harness::metrics::median;
use uwbnav::harness::run::{run_experiment, run_on_ticks, synthesize, write_outputs};
use uwbnav::harness::RunConfig;
use uwbnav::liegroup::{pa, skew, upsilon, vex, weighted_distance, Rotation, UnitQuaternion};
use uwbnav::uwb::{geometry_check, observe, solve, tdoa_ranges, toa_ranges, AnchorSet, TdoaTopology, Topology, DEFAULT_MAX_CONDITION};

fn report(id: u32, name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id} [{tag}] {name}: {detail}");
}

fn verdict(id: u32, name: &str, passed: bool, detail: String) {
    report(id, name, passed, &detail);
    assert!(passed, "criterion {id} ({name}) failed: {detail}");
}

#[test]
fn c1_multilateration_exactness() {
    let mut rng = common::rng(1);
    let start = Instant::now();
    let (mut toa, mut main, mut ring) = (0.0f64, 0.0f64, 0.0f64);
    let mut scenes = 0;
    while scenes < 10_000 {
        let anchors = AnchorSet::new(common::box_anchors(&mut rng), 3).unwrap();
        if !geometry_check(&anchors, Topology::TdoaRing).admissible {
            continue;
        }
        let p = common::uniform_vec(&mut rng, 3.5) + Vector3::new(0.0, 0.0, 1.5);
        let err = |t| (solve(&anchors, &observe(&p, &anchors, t, None), DEFAULT_MAX_CONDITION).unwrap().p - p).norm();
        toa = toa.max(err(Topology::Toa));
        main = main.max(err(Topology::TdoaMain));
        ring = ring.max(err(Topology::TdoaRing));
        scenes += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = toa <= 1e-9 && main <= 1e-6 && ring <= 1e-6 && secs <= 5.0;
    verdict(
        1,
        "multilateration exactness",
        passed,
        format!("{scenes} scenes, max error TOA {toa:.2e} m, main {main:.2e} m, ring {ring:.2e} m, {secs:.2} s"),
    );
}

/// Weighting matrix of three random non-collinear unit directions.
fn random_reference_weights(rng: &mut impl Rng) -> Matrix3<f64> {
    loop {
        let dirs: [Vector3<f64>; 3] = std::array::from_fn(|_| common::gaussian_vec(rng).normalize());
        let raw: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..1.0));
        let total: f64 = raw.iter().sum();
        let m: Matrix3<f64> = (0..3).map(|i| dirs[i] * dirs[i].transpose() * (3.0 * raw[i] / total)).sum();
        if m.symmetric_eigenvalues().min() > 1e-3 {
            return m;
        }
    }
}

#[test]
fn c2_upsilon_bounds() {
    let mut rng = common::rng(2);
    let mut violations = 0;
    let mut tightest: f64 = f64::INFINITY;
    for _ in 0..10_000 {
        let m_r = random_reference_weights(&mut rng);
        let r = common::random_rotation(&mut rng);
        let m_bar = Matrix3::identity() * m_r.trace() - m_r;
        let eig = m_bar.symmetric_eigenvalues();
        let u = upsilon(&(m_r * r.matrix())).norm_squared();
        let dist = weighted_distance(&m_r, &r);
        let upper = 2.0 * eig.max() * dist;
        if u > upper + 1e-10 {
            violations += 1;
        }
        tightest = tightest.min(upper - u);
        let tr = r.matrix().trace();
        if tr > -1.0 && u < 0.5 * eig.min() * dist * (1.0 + tr) - 1e-10 {
            violations += 1;
        }
    }
    verdict(2, "upsilon bounds", violations == 0, format!("10000 samples, {violations} violations, min upper slack {tightest:.2e}"));
}

#[test]
fn c3_identity_suite() {
    let mut rng = common::rng(3);
    let env = ReferenceEnvironment::default();
    let mut worst = [0.0f64; 6];
    for _ in 0..1000 {
        let r = common::random_rotation(&mut rng);
        let rm = *r.matrix();
        let y = common::uniform_vec(&mut rng, 5.0);
        worst[0] = worst[0].max((skew(&(rm * y)) - rm * skew(&y) * rm.transpose()).abs().max());

        let m = Matrix3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        worst[1] = worst[1].max(((m * skew(&y)).trace() + 2.0 * vex(&pa(&m)).unwrap().dot(&y)).abs());

        let r_hat = common::random_rotation(&mut rng);
        let a_m = r.transpose() * (-env.g_vec);
        let m_m = r.transpose() * env.m_r;
        let t = build_triads(&a_m, &m_m, &env, &DEFAULT_WEIGHTS).unwrap();
        let (m_r, _) = weighting_matrices(&t);
        let r_tilde = rm * r_hat.matrix().transpose();
        let mut axis = Vector3::zeros();
        let mut outer = Matrix3::zeros();
        for i in 0..3 {
            let v_hat = r_hat.matrix().transpose() * t.r[i];
            axis += r_hat.matrix() * t.v[i].cross(&v_hat) * (0.5 * t.s[i]);
            outer += r_hat.matrix() * v_hat * t.v[i].transpose() * r_hat.matrix().transpose() * t.s[i];
        }
        worst[2] = worst[2].max((upsilon(&(m_r * r_tilde)) - axis).abs().max());
        let e_lhs = 0.25 * (m_r * (Matrix3::identity() - r_tilde)).trace();
        worst[3] = worst[3].max((e_lhs - 0.25 * (m_r - outer).trace()).abs());

        let anchors = AnchorSet::new(common::box_anchors(&mut rng), 3).unwrap();
        let p = common::uniform_vec(&mut rng, 3.0) + Vector3::new(0.0, 0.0, 1.5);
        let h = anchors.anchors();
        for (hi, d) in h.iter().zip(toa_ranges(&p, &anchors).d) {
            let rhs = hi.norm_squared() + p.norm_squared() - 2.0 * hi.dot(&p);
            worst[4] = worst[4].max((d * d - rhs).abs());
        }
        for (k, d) in tdoa_ranges(&p, &anchors, TdoaTopology::MainBs, None).diffs.into_iter().enumerate() {
            let (hi, hj) = (h[0], h[k + 1]);
            let lhs = 0.5 * (d * d + hi.norm_squared() - hj.norm_squared());
            worst[5] = worst[5].max((lhs - ((hi - hj).dot(&p) - d * (p - hi).norm())).abs());
        }
    }
    let names = ["rotated skew", "trace/skew", "correction axis", "error function", "squared range", "squared difference"];
    let passed = worst.iter().all(|&w| w <= 1e-10);
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(3, "identity suite", passed, format!("1000 instances each; {detail}"));
}

#[test]
fn c4_group_preservation() {
    let env = ReferenceEnvironment::default();
    let mut rng = common::rng(4);
    let set = AnchorSet::new(common::box_anchors(&mut rng), 3).unwrap();
    let filter = NavFilter::new(set.clone(), env, FilterGains::default()).unwrap();
    let zero = Vector3::zeros();
    let mut m = FilterState::new(Attitude::Matrix(Rotation::identity()), zero, zero, zero, 0.0);
    let mut q = FilterState { attitude: Attitude::Quaternion(UnitQuaternion::identity()), ..m };
    let (mut worst_m, mut worst_q) = (0.0f64, 0.0f64);
    let mut r_true = Rotation::identity();
    for _ in 0..100_000 {
        r_true = r_true * uwbnav::liegroup::so3_exp(&common::uniform_vec(&mut rng, 0.05));
        let imu = ImuSample {
            t: 0.0,
            omega_m: common::uniform_vec(&mut rng, 2.0) + common::gaussian_vec(&mut rng) * 0.05,
            a_m: r_true.transpose() * (-env.g_vec) + common::gaussian_vec(&mut rng) * 0.5,
            m_m: r_true.transpose() * env.m_r + common::gaussian_vec(&mut rng) * 0.2,
        };
        let mut obs = observe(&common::uniform_vec(&mut rng, 3.0), &set, Topology::TdoaRing, None);
        for d in obs.values_mut() {
            *d += 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        m = filter.step(&m, &imu, Some(&obs), 0.01).0;
        q = filter.quaternion_step(&q, &imu, Some(&obs), 0.01).unwrap().0;
        let r = *m.rotation().matrix();
        worst_m = worst_m.max((r.transpose() * r - Matrix3::identity()).norm());
        let Attitude::Quaternion(qq) = q.attitude else { unreachable!() };
        worst_q = worst_q.max((qq.norm() - 1.0).abs());
    }
    verdict(
        4,
        "group preservation",
        worst_m <= 1e-9 && worst_q <= 1e-12,
        format!("100000 steps, max |R^T R - I|_F {worst_m:.2e}, max ||Q| - 1| {worst_q:.2e}"),
    );
}

#[test]
fn c5_variant_equivalence() {
    let cfg = RunConfig {
        duration: 10.0,
        seed: 5,
        ..RunConfig::default()
    };
    let data = synthesize(&cfg).unwrap();
    let env = cfg.env.to_env().unwrap();
    let ticks = data.align(cfg.dt, cfg.topology(), &env, cfg.noise.sigma_m, cfg.seed).unwrap();
    let ticks = &ticks[..1001];
    let matrix = run_on_ticks(&cfg, data.anchors.clone(), ticks).unwrap();
    let quaternion = run_on_ticks(&RunConfig { variant: Variant::Quaternion, ..cfg.clone() }, data.anchors.clone(), ticks).unwrap();
    let (mut att, mut pos, mut vel) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in matrix.estimates.iter().zip(&quaternion.estimates) {
        att = att.max((a.state.r.matrix() - b.state.r.matrix()).norm());
        pos = pos.max((a.state.p - b.state.p).norm());
        vel = vel.max((a.state.v - b.state.v).norm());
    }
    verdict(
        5,
        "variant equivalence",
        att <= 1e-6 && pos <= 1e-6 && vel <= 1e-6,
        format!("1000 steps at dt = 0.01, max gap attitude {att:.2e}, position {pos:.2e} m, velocity {vel:.2e} m/s"),
    );
}

/// Max over the last half is within 5x the median over the last half.
fn bounded(values: &[f64]) -> bool {
    let tail = &values[values.len() / 2..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    tail.iter().all(|v| v.is_finite()) && max <= 5.0 * median(tail)
}

#[test]
fn c6_replica_convergence() {
    let start = Instant::now();
    let seeds: Vec<u64> = (1..=20).collect();
    let outputs: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                s.spawn(move || {
                    let cfg = RunConfig { seed, ..RunConfig::default() };
                    run_experiment(&cfg)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let secs = start.elapsed().as_secs_f64();
    let mut pos = Vec::new();
    let mut att = Vec::new();
    let mut vel = Vec::new();
    let mut unbounded = Vec::new();
    let mut diverged = 0;
    for (seed, out) in seeds.iter().zip(outputs) {
        let Ok(out) = out else {
            diverged += 1;
            continue;
        };
        pos.push(out.summary.pos_err.last_half_mean);
        att.push(out.summary.att_err.last_half_mean);
        vel.push(out.summary.vel_err.last_half_mean);
        let series: [(&str, Vec<f64>); 4] = [
            ("att", out.metrics.iter().map(|m| m.att_err).collect()),
            ("pos", out.metrics.iter().map(|m| m.pos_err).collect()),
            ("vel", out.metrics.iter().map(|m| m.vel_err).collect()),
            ("sigma", out.metrics.iter().map(|m| m.sigma_norm).collect()),
        ];
        for (name, values) in &series {
            if !bounded(values) {
                unbounded.push(format!("{seed}:{name}"));
            }
        }
    }
    let (mp, ma, mv) = (median(&pos), median(&att), median(&vel));
    let passed = diverged == 0 && unbounded.is_empty() && mp <= 0.3 && ma <= 0.05 && mv <= 0.3 && secs <= 60.0;
    verdict(
        6,
        "replica convergence",
        passed,
        format!(
            "20 seeds, median steady-state position {mp:.3} m, attitude {ma:.2e}, velocity {mv:.3} m/s; \
             {diverged} diverged; envelope exceeded in {} series [{}]; {secs:.1} s",
            unbounded.len(),
            unbounded.join(" ")
        ),
    );
}

/// Smooth excitation signals sampled at `t`.
fn excitation(t: f64, env: &ReferenceEnvironment) -> (ImuSample, Vector3<f64>) {
    let r = uwbnav::liegroup::so3_exp(&Vector3::new(0.3 * (0.7 * t).sin(), 0.2 * (1.1 * t).cos(), 0.5 * t));
    let imu = ImuSample {
        t,
        omega_m: Vector3::new(0.4 * (1.3 * t).cos(), -0.3 * (0.9 * t).sin(), 0.5),
        a_m: r.transpose() * (-env.g_vec) + Vector3::new(0.3 * t.sin(), 0.2, -0.1 * t.cos()),
        m_m: r.transpose() * env.m_r,
    };
    let p_y = Vector3::new((0.5 * t).cos(), (0.5 * t).sin(), 1.5 + 0.2 * t.sin());
    (imu, p_y)
}

fn discrete_end(init: &FilterState, horizon: f64, dt: f64, gains: &FilterGains, env: &ReferenceEnvironment) -> FilterState {
    let steps = (horizon / dt).round() as usize;
    let mut s = *init;
    for k in 0..steps {
        let (imu, p_y) = excitation(k as f64 * dt, env);
        let triads = build_triads(&imu.a_m, &imu.m_m, env, &gains.s).unwrap();
        let w = correction_terms(&s, &triads, &p_y, gains);
        s = update(&predict(&s, &imu, dt), &DiscreteCorrection::from_terms(&w, env), dt);
    }
    s
}

/// RK4 on the continuous dynamics with inputs held over each filter period.
fn continuous_end(init: &FilterState, horizon: f64, dt: f64, gains: &FilterGains, env: &ReferenceEnvironment) -> FilterState {
    let steps = (horizon / dt).round() as usize;
    let sub = 50;
    let h = dt / sub as f64;
    let mut s = *init;
    let shift = |s: &FilterState, d: &uwbnav::filter::StateDerivative, a: f64| {
        let AttitudeRate::Matrix(r_dot) = d.attitude else { unreachable!() };
        let r = Rotation::from_matrix_unchecked(s.rotation().matrix() + r_dot * a);
        FilterState {
            attitude: Attitude::Matrix(r),
            p_hat: s.p_hat + d.p_dot * a,
            v_hat: s.v_hat + d.v_dot * a,
            sigma_hat: s.sigma_hat + d.sigma_dot * a,
            t: s.t + a,
        }
    };
    for k in 0..steps {
        let (imu, p_y) = excitation(k as f64 * dt, env);
        let triads = build_triads(&imu.a_m, &imu.m_m, env, &gains.s).unwrap();
        let f = |x: &FilterState| continuous_rhs(x, &imu, &correction_terms(x, &triads, &p_y, gains), env);
        for _ in 0..sub {
            let k1 = f(&s);
            let k2 = f(&shift(&s, &k1, 0.5 * h));
            let k3 = f(&shift(&s, &k2, 0.5 * h));
            let k4 = f(&shift(&s, &k3, h));
            let mut next = shift(&s, &k1, h / 6.0);
            next = shift(&next, &k2, h / 3.0);
            next = shift(&next, &k3, h / 3.0);
            s = shift(&next, &k4, h / 6.0);
        }
    }
    s
}

#[test]
fn c7_discrete_continuous_consistency() {
    let env = ReferenceEnvironment::default();
    let gains = FilterGains::default();
    let init = FilterState::new(
        Attitude::Matrix(uwbnav::liegroup::so3_exp(&Vector3::new(0.4, -0.3, 0.8))),
        Vector3::new(-2.0, -3.0, 0.0),
        Vector3::zeros(),
        Vector3::new(0.1, -0.1, 0.05),
        0.0,
    );
    let horizon = 2.0;
    let levels = [0.02, 0.01, 0.005];
    let gaps: Vec<f64> = levels
        .iter()
        .map(|&dt| {
            let a = discrete_end(&init, horizon, dt, &gains, &env);
            let b = continuous_end(&init, horizon, dt, &gains, &env);
            (a.rotation().matrix() - b.rotation().matrix()).norm()
                + (a.p_hat - b.p_hat).norm()
                + (a.v_hat - b.v_hat).norm()
                + (a.sigma_hat - b.sigma_hat).norm()
        })
        .collect();
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    let passed = ratios.iter().all(|&r| r >= 1.9);
    verdict(
        7,
        "discrete/continuous consistency",
        passed,
        format!(
            "end-point gaps {:.3e} / {:.3e} / {:.3e} at dt = 0.02 / 0.01 / 0.005, ratios {:.2}, {:.2}",
            gaps[0], gaps[1], gaps[2], ratios[0], ratios[1]
        ),
    );
}

#[test]
fn c8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    for variant in [Variant::Matrix, Variant::Quaternion] {
        let cfg = RunConfig {
            seed: 8,
            duration: 20.0,
            variant,
            ..RunConfig::default()
        };
        let mut files = Vec::new();
        for run in 0..2 {
            let out_dir = dir.path().join(format!("{variant:?}-{run}"));
            write_outputs(&run_experiment(&cfg).unwrap(), &cfg, &out_dir).unwrap();
            files.push(std::fs::read(out_dir.join("metrics.csv")).unwrap());
        }
        identical &= files[0] == files[1] && !files[0].is_empty();
    }
    verdict(8, "determinism", identical, "same seed gives byte-identical metrics.csv for both variants".into());
}

#[test]
fn c9_dataset_run() {
    let Some(dir) = std::env::var_os("UWBNAV_UTIL_DIR") else {
        report(9, "dataset run", true, "skipped, UWBNAV_UTIL_DIR not set");
        return;
    };
    let cfg = RunConfig {
        mode: uwbnav::harness::config::Mode::Dataset,
        dataset_dir: Some(dir.into()),
        synthesize_magnetometer: true,
        topology: TopologyName::TdoaRing,
        dt: 0.01,
        ..RunConfig::default()
    };
    match run_experiment(&cfg) {
        Ok(out) => {
            let s = &out.summary;
            let passed = s.pos_err.last_half_mean < s.py_rms_last_half;
            verdict(
                9,
                "dataset run",
                passed,
                format!(
                    "{} steps, steady-state position error {:.3} m vs raw reconstruction RMS {:.3} m",
                    s.steps, s.pos_err.last_half_mean, s.py_rms_last_half
                ),
            );
        }
        Err(e) => verdict(9, "dataset run", false, format!("run failed: {e}")),
    }
}
