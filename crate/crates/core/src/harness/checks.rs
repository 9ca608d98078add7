//! Self-checks run by the `check` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attitude::{build_triads, ImuSample, ReferenceEnvironment, DEFAULT_WEIGHTS};
use crate::filter::{Attitude, FilterGains, FilterState, NavFilter};
use crate::harness::config::RunConfig;
use crate::liegroup::{se23_exp, so3_exp, so3_log, Mat5, Rotation, TangentInput, Vec3};
use crate::uwb::{self, geometry_check_with, AnchorSet, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.random_range(-scale..scale))
}

fn taylor_exp(m: &Mat5) -> Mat5 {
    let mut term = Mat5::identity();
    let mut sum = Mat5::identity();
    for k in 1..40 {
        term = term * m / k as f64;
        sum += term;
    }
    sum
}

fn check_so3(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let w = random_vec(rng, 1.7);
        let back = so3_log(&so3_exp(&w));
        worst = worst.max((back - w).norm());
    }
    CheckResult::new("so3 exp/log round trip", worst < 1e-9, format!("max error {worst:.3e}"))
}

fn check_se23(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let u = TangentInput::new(random_vec(rng, 2.0), random_vec(rng, 2.0), random_vec(rng, 2.0), rng.random_range(0.0..1.0));
        let dt = rng.random_range(0.001..0.5);
        worst = worst.max((se23_exp(&u, dt) - taylor_exp(&(u.to_matrix() * dt))).norm());
    }
    CheckResult::new("SE2(3) exponential", worst < 1e-10, format!("max error {worst:.3e}"))
}

fn check_multilateration(anchors: &AnchorSet, rng: &mut ChaCha8Rng) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for topology in [Topology::Toa, Topology::TdoaMain, Topology::TdoaRing] {
        let name = format!("{topology:?} exact recovery");
        if !geometry_check_with(anchors, topology, uwb::DEFAULT_MAX_CONDITION).admissible {
            out.push(CheckResult::new(&name, true, "skipped: geometry inadmissible".into()));
            continue;
        }
        let mut worst = 0.0f64;
        let mut failure = None;
        for _ in 0..500 {
            let p = random_vec(rng, 2.5) + Vec3::new(0.0, 0.0, 1.4);
            let obs = uwb::observe(&p, anchors, topology, None);
            match uwb::solve(anchors, &obs, uwb::DEFAULT_MAX_CONDITION) {
                Ok(fix) => worst = worst.max((fix.p - p).norm()),
                Err(e) => failure = Some(e.to_string()),
            }
        }
        let passed = failure.is_none() && worst < 1e-6;
        let detail = failure.unwrap_or_else(|| format!("max error {worst:.3e} m"));
        out.push(CheckResult::new(&name, passed, detail));
    }
    out
}

fn check_equilibrium(anchors: &AnchorSet) -> CheckResult {
    let env = ReferenceEnvironment::default();
    let filter = match NavFilter::new(anchors.clone(), env, FilterGains::default()) {
        Ok(f) => f,
        Err(e) => return CheckResult::new("zero-error equilibrium", false, e.to_string()),
    };
    let r = so3_exp(&Vec3::new(0.1, -0.2, 0.7));
    let p = Vec3::new(0.5, -0.3, 1.2);
    let a_m = r.transpose() * (-env.g_vec);
    let imu = ImuSample {
        t: 0.0,
        omega_m: Vec3::zeros(),
        a_m,
        m_m: r.transpose() * env.m_r,
    };
    let obs = uwb::observe(&p, anchors, Topology::Toa, None);
    let mut state = FilterState::new(Attitude::Matrix(r), p, Vec3::zeros(), Vec3::zeros(), 0.0);
    for _ in 0..2000 {
        state = filter.step(&state, &imu, Some(&obs), 0.01).0;
    }
    let drift = (state.p_hat - p).norm() + state.v_hat.norm() + (state.rotation().matrix() - r.matrix()).norm();
    CheckResult::new("zero-error equilibrium", drift < 1e-8, format!("drift {drift:.3e} after 2000 steps"))
}

fn check_group(anchors: &AnchorSet, rng: &mut ChaCha8Rng) -> CheckResult {
    let env = ReferenceEnvironment::default();
    let filter = match NavFilter::new(anchors.clone(), env, FilterGains::default()) {
        Ok(f) => f,
        Err(e) => return CheckResult::new("group preservation", false, e.to_string()),
    };
    let mut state = FilterState::new(
        Attitude::Matrix(Rotation::identity()),
        Vec3::zeros(),
        Vec3::zeros(),
        Vec3::zeros(),
        0.0,
    );
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let r_true = so3_exp(&random_vec(rng, 3.0));
        let imu = ImuSample {
            t: 0.0,
            omega_m: random_vec(rng, 2.0),
            a_m: r_true.transpose() * (-env.g_vec) + random_vec(rng, 0.5),
            m_m: r_true.transpose() * env.m_r + random_vec(rng, 0.2),
        };
        if build_triads(&imu.a_m, &imu.m_m, &env, &DEFAULT_WEIGHTS).is_err() {
            continue;
        }
        let obs = uwb::observe(&random_vec(rng, 2.0), anchors, Topology::Toa, None);
        state = filter.step(&state, &imu, Some(&obs), 0.01).0;
        worst = worst.max(state.rotation().drift()).max((state.rotation().matrix().determinant() - 1.0).abs());
    }
    CheckResult::new("group preservation", worst < 1e-9, format!("max drift {worst:.3e}"))
}

/// Runs every self-check against the config's anchors.
pub fn run_checks(cfg: &RunConfig) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![check_so3(&mut rng), check_se23(&mut rng)];
    match cfg.anchor_set() {
        Ok(anchors) => {
            let report = geometry_check_with(&anchors, cfg.topology(), cfg.max_condition);
            out.push(CheckResult::new(
                "configured geometry",
                report.admissible,
                format!("rank {}, condition {:.3e}", report.rank, report.condition_number),
            ));
            out.extend(check_multilateration(&anchors, &mut rng));
            out.push(check_equilibrium(&anchors));
            out.push(check_group(&anchors, &mut rng));
        }
        Err(e) => out.push(CheckResult::new("anchors", false, e.to_string())),
    }
    out
}
