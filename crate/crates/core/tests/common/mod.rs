//! Independent oracles shared by the integration tests and the acceptance
//! target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slungload::cables::segment_force;
use slungload::controller::{accel_box, qp_project, ControllerParams, DroneController, InfoSet, ModeFlags};
use slungload::dynamics::{Actuation, Integrator, SimParams, WindForces, WorldState};
use slungload::extensions::reshape::ReshapeMessage;
use slungload::campaign::RunConfig;
use slungload::{Mat3, Vec3};

/// Separable box-QP objective `w_t‖a − a_t‖² + w_e‖a‖²` of one axis.
fn axis_cost(a: f64, target: f64, w_t: f64, w_e: f64) -> f64 {
    w_t * (a - target).powi(2) + w_e * a * a
}

/// Grid minimizer on `[lo, hi]` with successive zooming.  The objective is
/// a sum of per-axis terms under a box, so per-axis minimization is exact.
fn grid_min(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut best = (lo, f(lo));
    for _ in 0..12 {
        let n = 200;
        for k in 0..=n {
            let x = a + (b - a) * k as f64 / n as f64;
            let v = f(x);
            if v < best.1 {
                best = (x, v);
            }
        }
        let w = (b - a) / n as f64;
        a = (best.0 - 2.0 * w).max(lo);
        b = (best.0 + 2.0 * w).min(hi);
    }
    best
}

pub struct QpOracleReport {
    pub instances: usize,
    pub worst_gap: f64,
    pub worst_kkt: f64,
}

/// Closed-form projection against a brute-force minimizer on random
/// instances; also reports the projected-gradient KKT residual.
pub fn qp_brute_force(instances: usize, seed: u64) -> QpOracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let params = ControllerParams {
            w_t: rng.gen_range(0.2..3.0),
            w_e: rng.gen_range(0.0..0.5),
            theta_max: rng.gen_range(0.2..0.9),
            ..ControllerParams::default()
        };
        let target = Vec3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(-40.0..80.0));
        let t_ff = rng.gen_range(0.0..60.0);
        let (a, _) = qp_project(&target, t_ff, &params);
        let (lo, hi) = accel_box(t_ff, &params);
        let mut closed = 0.0;
        let mut grid = 0.0;
        for k in 0..3 {
            let f = |x: f64| axis_cost(x, target[k], params.w_t, params.w_e);
            closed += f(a[k]);
            grid += grid_min(lo[k], hi[k], f).1;
            let g = 2.0 * (params.w_t + params.w_e) * a[k] - 2.0 * params.w_t * target[k];
            let proj = (a[k] - g).clamp(lo[k], hi[k]);
            worst_kkt = worst_kkt.max((a[k] - proj).abs());
        }
        worst_gap = worst_gap.max(closed - grid);
    }
    QpOracleReport { instances, worst_gap, worst_kkt }
}

/// Taut, actuated five-drone world suitable for order checks.
pub fn taut_world() -> (SimParams, WorldState, Vec<Actuation>) {
    let params = SimParams { initial_chord: 1.262, ..SimParams::default() };
    let mut w = WorldState::initial(&params, Vec3::new(0.0, 0.0, 3.0));
    w.payload.v = Vec3::new(0.3, -0.2, 0.05);
    for (i, d) in w.drones.iter_mut().enumerate() {
        d.v = Vec3::new(0.1 * i as f64, 0.05, 0.0);
        d.w = Vec3::new(0.02, -0.01, 0.03 * i as f64);
    }
    let share = params.m_payload * params.g / params.n_drones as f64;
    let act = (0..params.n_drones)
        .map(|i| Actuation { thrust: params.m_drone * params.g + share + 0.5 * i as f64, torque: Vec3::new(0.01, 0.0, -0.005) })
        .collect();
    (params, w, act)
}

fn flatten(w: &WorldState) -> Vec<f64> {
    let mut v = Vec::new();
    for d in &w.drones {
        v.extend_from_slice(d.p.as_slice());
        v.extend_from_slice(d.v.as_slice());
        v.extend_from_slice(d.r.as_slice());
    }
    v.extend_from_slice(w.payload.p.as_slice());
    v.extend_from_slice(w.payload.v.as_slice());
    v
}

fn integrate(max_substep: f64, seconds: f64) -> Vec<f64> {
    let (mut params, mut w, act) = taut_world();
    params.max_substep = max_substep;
    let wind = WindForces::calm(params.n_drones);
    let mut integ = Integrator::new();
    for _ in 0..(seconds / params.dt).round() as usize {
        integ.step(&mut w, &act, &wind, params.dt, &params).expect("integration");
    }
    flatten(&w)
}

/// Log₂ error ratios of the world integrator under substep halving
/// against a fine reference.
pub fn world_order_slopes() -> Vec<f64> {
    let seconds = 0.05;
    let reference = integrate(2e-4 / 64.0, seconds);
    let errs: Vec<f64> = [2e-4, 1e-4, 5e-5]
        .iter()
        .map(|&h| integrate(h, seconds).iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    errs.windows(2).map(|e| (e[0] / e[1]).log2()).collect()
}

/// Worst deviation from closed-form free flight after one second with every
/// rope cut and motors off.
pub fn ballistic_error() -> f64 {
    let params = SimParams::default();
    let mut w = WorldState::initial(&params, Vec3::new(0.0, 0.0, 3.0));
    for r in w.ropes.iter_mut() {
        r.severed = true;
    }
    for (i, d) in w.drones.iter_mut().enumerate() {
        d.v = Vec3::new(1.0, -0.5 * i as f64, 2.0);
    }
    w.payload.v = Vec3::new(-0.3, 0.4, 1.0);
    let p0: Vec<(Vec3, Vec3)> = w.drones.iter().map(|d| (d.p, d.v)).chain([(w.payload.p, w.payload.v)]).collect();
    let act = vec![Actuation::default(); params.n_drones];
    let wind = WindForces::calm(params.n_drones);
    let mut integ = Integrator::new();
    for _ in 0..1000 {
        integ.step(&mut w, &act, &wind, params.dt, &params).unwrap();
    }
    let t = 1.0;
    let g = Vec3::new(0.0, 0.0, -params.g);
    let now: Vec<Vec3> = w.drones.iter().map(|d| d.p).chain([w.payload.p]).collect();
    p0.iter().zip(&now).map(|((p, v), q)| (p + v * t + 0.5 * g * t * t - q).norm()).fold(0.0, f64::max)
}

/// Number of randomized segment states that produced a pushing force.
pub fn compressive_segments(samples: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    let v3 = |rng: &mut ChaCha8Rng, s: f64| Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s));
    for _ in 0..samples {
        let pa = v3(&mut rng, 0.3);
        let pb = v3(&mut rng, 0.3);
        let va = v3(&mut rng, 40.0);
        let vb = v3(&mut rng, 40.0);
        let rest = rng.gen_range(0.05..0.3);
        let f = segment_force(&pa, &pb, &va, &vb, 25_000.0, rng.gen_range(0.0..200.0), rest);
        let along = f.dot(&(pb - pa));
        if along < 0.0 || ((pb - pa).norm() <= rest && f != Vec3::zeros()) {
            bad += 1;
        }
    }
    bad
}

/// Hover run: static reference, no wind, no faults.
pub fn hover_config(seconds: f64) -> RunConfig {
    let mut c = RunConfig::default();
    c.tag = "hover".into();
    c.reference.a = 0.0;
    c.reference.h_z = 0.0;
    c.sim.duration = seconds;
    c.wind.enabled = false;
    c
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    nalgebra::Rotation3::from_scaled_axis(axis * 0.5).into_inner()
}

/// Drives two full-stack controllers for drone `i` from worlds that differ
/// only in peer drones and peer ropes.  Returns the number of ticks whose
/// outputs differ in any bit, and whether the two InfoSets ever differed.
pub fn isolation_mismatches(ticks: usize, seed: u64) -> (usize, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = RunConfig::default();
    let mut params = cfg.controller.clone();
    params.sync_plant(&cfg.sim);
    let modes = ModeFlags { ff: true, l1: true, mpc: true, reshape: true };
    let chain = cfg.sim.chain();
    let i = 3;
    let mut a = DroneController::new(i, &cfg.sim, &params, modes, cfg.reference, &cfg.extensions);
    let mut b = a.clone();
    let mut world = WorldState::initial(&cfg.sim, cfg.reference.sample(0.0).p);
    let mut mismatches = 0;
    let mut info_differs = false;
    let inbox: Vec<ReshapeMessage> = Vec::new();
    for k in 0..ticks {
        world.t = k as f64 * cfg.sim.dt;
        world.drones[i].p += Vec3::new(1e-4, -2e-4, 5e-5);
        world.drones[i].v = Vec3::new(0.2, 0.1, -0.05) * (k as f64 * 0.01).sin();
        world.payload.v = Vec3::new(0.5, -0.3, 0.02) * (k as f64 * 0.02).cos();
        let mut peer = world.clone();
        for j in (0..cfg.sim.n_drones).filter(|&j| j != i) {
            let d = &mut peer.drones[j];
            d.p += Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            d.v = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            d.r = random_rotation(&mut rng);
            d.w = Vec3::new(rng.gen_range(-2.0..2.0), 0.0, rng.gen_range(-2.0..2.0));
            for bead in peer.ropes[j].bead_p.iter_mut() {
                *bead += Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            }
            peer.ropes[j].severed = rng.gen_bool(0.3);
        }
        let ia = InfoSet::observe(&world, i, &chain);
        let ib = InfoSet::observe(&peer, i, &chain);
        info_differs |= ia != ib;
        let oa = a.tick(&ia, &inbox);
        let ob = b.tick(&ib, &inbox);
        let same = oa.f.to_bits() == ob.f.to_bits()
            && oa.tau.iter().zip(ob.tau.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            && oa.message == ob.message;
        mismatches += usize::from(!same);
    }
    (mismatches, info_differs)
}
