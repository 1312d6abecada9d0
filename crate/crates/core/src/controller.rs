//! Per-drone baseline cascade.
//!
//! slot → anti-swing shift → outer PD → (L1 injection) → single-step QP
//! projection (or MPC) → thrust with tension feed-forward → Euler-angle PD.
//!
//! A controller only ever sees an [`InfoSet`]: its own rigid-body state, its
//! own rope tension, the payload velocity and the clock.  Peer states cannot
//! reach it through this API.

use serde::{Deserialize, Serialize};

use crate::cables::BeadChainParams;
use crate::dynamics::{Actuation, DroneState, SimParams, WorldState};
use crate::extensions::l1::{L1Config, L1State};
use crate::extensions::mpc::{MpcConfig, MpcController, MpcStep};
use crate::extensions::reshape::{smoothstep, ReshapeAgent, ReshapeConfig, ReshapeMessage};
use crate::math::{euler_zyx, Vec3};
use crate::qpsolver::QpStatus;

/// Lemniscate of Gerono-style figure eight with a sinusoidal altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lemniscate {
    pub a: f64,
    pub period: f64,
    pub z0: f64,
    pub h_z: f64,
}

impl Default for Lemniscate {
    fn default() -> Self {
        Self { a: 3.0, period: 12.0, z0: 3.0, h_z: 0.35 }
    }
}

/// Reference sample: position, velocity and acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSample {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
}

impl Lemniscate {
    pub fn sample(&self, t: f64) -> RefSample {
        let w = std::f64::consts::TAU / self.period;
        let phi = w * t;
        let (s, c) = phi.sin_cos();
        let d = 1.0 + s * s;
        let a = self.a;
        let p = Vec3::new(a * c / d, a * s * c / d, self.z0 + self.h_z * s);
        let dp = Vec3::new(-a * s * (3.0 - s * s) / (d * d), a * (1.0 - 3.0 * s * s) / (d * d), self.h_z * c);
        let d3 = d * d * d;
        let ddp = Vec3::new(
            -a * c * (3.0 - 12.0 * s * s + s.powi(4)) / d3,
            a * s * c * (6.0 * s * s - 10.0) / d3,
            -self.h_z * s,
        );
        RefSample { p, v: dp * w, a: ddp * (w * w) }
    }
}

/// How attitude PD gains are scaled into torques.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TorqueScaling {
    /// `τ = K_p e + K_d ė` with gains in N·m/rad.
    Raw,
    /// `τ = J (K_p e + K_d ė)` with gains in rad/s² per rad.
    Inertia,
}

/// Which payload velocity drives the anti-swing terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwingVelocity {
    /// The measured payload velocity `v_L`.
    Absolute,
    /// `v_L − v_L^d`: only the swing about the reference motion.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    pub kp_xy: f64,
    pub kd_xy: f64,
    pub kp_z: f64,
    pub kd_z: f64,
    pub kp_att: f64,
    pub kd_att: f64,
    pub torque_scaling: TorqueScaling,
    pub k_swing: f64,
    pub w_swing: f64,
    pub s_max: f64,
    pub swing_velocity: SwingVelocity,
    pub d_rope: f64,
    pub w_t: f64,
    pub w_e: f64,
    pub theta_max: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub tau_max: f64,
    /// Smoothstep ramp on the feed-forward during pickup (off by default).
    pub pickup_ramp: bool,
    pub pickup_ramp_time: f64,
    /// Plant knowledge copied from [`SimParams`] at run start.
    #[serde(skip)]
    pub m_drone: f64,
    #[serde(skip)]
    pub g: f64,
    #[serde(skip)]
    pub inertia: [f64; 3],
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            kp_xy: 30.0,
            kd_xy: 15.0,
            kp_z: 100.0,
            kd_z: 24.0,
            kp_att: 25.0,
            kd_att: 4.0,
            torque_scaling: TorqueScaling::Raw,
            k_swing: 0.8,
            w_swing: 0.3,
            s_max: 0.3,
            swing_velocity: SwingVelocity::Absolute,
            d_rope: 1.25,
            w_t: 1.0,
            w_e: 0.02,
            theta_max: 0.6,
            f_min: 0.0,
            f_max: 150.0,
            tau_max: 10.0,
            pickup_ramp: false,
            pickup_ramp_time: 2.0,
            m_drone: 1.5,
            g: 9.81,
            inertia: [0.02, 0.02, 0.04],
        }
    }
}

impl ControllerParams {
    pub fn kappa_qp(&self) -> f64 {
        self.w_t / (self.w_t + self.w_e)
    }

    pub fn a_tilt(&self) -> f64 {
        self.g * self.theta_max.tan()
    }

    /// Copies the plant constants the controller is allowed to know.
    pub fn sync_plant(&mut self, sim: &SimParams) {
        self.m_drone = sim.m_drone;
        self.g = sim.g;
        self.inertia = sim.inertia;
        self.f_min = sim.f_min;
        self.f_max = sim.f_max;
        self.tau_max = sim.tau_max;
    }
}

/// Everything a drone controller may read at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoSet {
    t: f64,
    own: DroneState,
    tension: f64,
    payload_velocity: Vec3,
}

impl InfoSet {
    pub fn new(t: f64, own: DroneState, tension: f64, payload_velocity: Vec3) -> Self {
        Self { t, own, tension, payload_velocity }
    }

    /// Extracts drone `i`'s admissible signals from the world.
    pub fn observe(world: &WorldState, i: usize, chain: &BeadChainParams) -> Self {
        Self::new(world.t, world.drones[i].clone(), world.tension(i, chain), world.payload.v)
    }

    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn own(&self) -> &DroneState {
        &self.own
    }
    pub fn tension(&self) -> f64 {
        self.tension
    }
    pub fn payload_velocity(&self) -> &Vec3 {
        &self.payload_velocity
    }
}

/// Layer switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeFlags {
    pub ff: bool,
    pub l1: bool,
    pub mpc: bool,
    pub reshape: bool,
}

impl Default for ModeFlags {
    fn default() -> Self {
        Self { ff: true, l1: false, mpc: false, reshape: false }
    }
}

/// Diagnostic signals recorded with each command.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlDebug {
    pub a_target: Vec3,
    pub a_cmd: Vec3,
    pub t_ff: f64,
    pub code: u8,
    pub thrust_saturated: bool,
    pub u_ad: f64,
    pub mpc_slack: f64,
    pub mpc_status: Option<QpStatus>,
    pub mpc_iterations: usize,
    pub slot_offset: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub f: f64,
    pub tau: Vec3,
    pub debug: ControlDebug,
    /// Broadcast emitted this tick, if any.
    pub message: Option<ReshapeMessage>,
}

impl ControlOutput {
    pub fn actuation(&self) -> Actuation {
        Actuation { thrust: self.f, torque: self.tau }
    }
}

/// `p_slot = pL_d + δ_i + d_rope ê₃`, `v_slot = vL_d`.
pub fn slot(reference: &RefSample, delta: &Vec3, d_rope: f64) -> (Vec3, Vec3) {
    (reference.p + delta + Vec3::new(0.0, 0.0, d_rope), reference.v)
}

/// Horizontal slot shift opposing the payload velocity, saturated at `s_max`.
pub fn anti_swing_shift(vl: &Vec3, k_swing: f64, s_max: f64) -> Vec3 {
    let perp = Vec3::new(vl.x, vl.y, 0.0);
    let raw = -k_swing * perp;
    let n = raw.norm();
    if n <= s_max {
        raw
    } else {
        raw * (s_max / n)
    }
}

pub fn outer_pd(e_p: &Vec3, e_v: &Vec3, vl: &Vec3, params: &ControllerParams) -> Vec3 {
    let c = params;
    Vec3::new(
        c.kp_xy * e_p.x + c.kd_xy * e_v.x - c.w_swing * c.k_swing * vl.x,
        c.kp_xy * e_p.y + c.kd_xy * e_v.y - c.w_swing * c.k_swing * vl.y,
        c.kp_z * e_p.z + c.kd_z * e_v.z,
    )
}

/// Vertical acceleration interval implied by the thrust box.
pub fn az_bounds(t_ff: f64, params: &ControllerParams) -> (f64, f64) {
    let m = params.m_drone;
    ((params.f_min - t_ff) / m - params.g, (params.f_max - t_ff) / m - params.g)
}

/// Acceleration box of the projection, `(lower, upper)`.
pub fn accel_box(t_ff: f64, params: &ControllerParams) -> (Vec3, Vec3) {
    let a = params.a_tilt();
    let (lo, hi) = az_bounds(t_ff, params);
    (Vec3::new(-a, -a, lo), Vec3::new(a, a, hi))
}

/// Per-axis tri-state (0 interior, 1 lower, 2 upper) packed as `x + 3y + 9z`.
pub fn active_code(a: &Vec3, lo: &Vec3, hi: &Vec3) -> u8 {
    let mut code = 0u8;
    let mut w = 1u8;
    for k in 0..3 {
        let tol = 1e-9 * (1.0 + a[k].abs());
        let s = if a[k] <= lo[k] + tol {
            1
        } else if a[k] >= hi[k] - tol {
            2
        } else {
            0
        };
        code += s * w;
        w *= 3;
    }
    code
}

/// Closed-form solution of the separable projection QP
/// `min w_t‖a − a_target‖² + w_e‖a‖²` over the acceleration box.
pub fn qp_project(a_target: &Vec3, t_ff: f64, params: &ControllerParams) -> (Vec3, u8) {
    let (lo, hi) = accel_box(t_ff, params);
    let k = params.kappa_qp();
    let a = Vec3::new(
        (k * a_target.x).clamp(lo.x, hi.x),
        (k * a_target.y).clamp(lo.y, hi.y),
        (k * a_target.z).clamp(lo.z, hi.z),
    );
    (a, active_code(&a, &lo, &hi))
}

/// `f = clamp(m (g + a_z) + T_ff, f_min, f_max)`; second value flags the clamp.
pub fn thrust_command(a_z: f64, t_ff: f64, params: &ControllerParams) -> (f64, bool) {
    let raw = params.m_drone * (params.g + a_z) + t_ff;
    let f = raw.clamp(params.f_min, params.f_max);
    (f, f != raw)
}

/// Small-angle attitude setpoints `(roll_d, pitch_d)`.
pub fn attitude_cmd(a_x: f64, a_y: f64, params: &ControllerParams) -> (f64, f64) {
    let t = params.theta_max;
    ((-a_y / params.g).clamp(-t, t), (a_x / params.g).clamp(-t, t))
}

/// Per-axis PD on roll/pitch Euler errors and the projected yaw error.
pub fn attitude_pd(state: &DroneState, roll_d: f64, pitch_d: f64, params: &ControllerParams) -> Vec3 {
    let (roll, pitch, _) = euler_zyx(&state.r);
    let r = &state.r;
    let e = Vec3::new(roll_d - roll, pitch_d - pitch, -(r[(1, 0)] - r[(0, 1)]) / 2.0);
    let mut tau = params.kp_att * e - params.kd_att * state.w;
    if params.torque_scaling == TorqueScaling::Inertia {
        tau = tau.component_mul(&Vec3::from(params.inertia));
    }
    tau.map(|x| x.clamp(-params.tau_max, params.tau_max))
}

/// One drone's controller with its private layer states.
#[derive(Debug, Clone)]
pub struct DroneController {
    index: usize,
    nominal_offset: Vec3,
    params: ControllerParams,
    modes: ModeFlags,
    reference: Lemniscate,
    l1: Option<L1State>,
    mpc: Option<MpcController>,
    reshape: Option<ReshapeAgent>,
}

/// Extension-layer settings shared by all drones of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtensionConfig {
    pub l1: L1Config,
    pub mpc: MpcConfig,
    pub reshape: ReshapeConfig,
}

impl DroneController {
    pub fn new(
        index: usize,
        sim: &SimParams,
        params: &ControllerParams,
        modes: ModeFlags,
        reference: Lemniscate,
        ext: &ExtensionConfig,
    ) -> Self {
        let mut params = params.clone();
        params.sync_plant(sim);
        let l1 = modes.l1.then(|| L1State::new(ext.l1.clone(), params.kp_z, params.kd_z));
        let mpc = modes.mpc.then(|| MpcController::new(ext.mpc.clone()));
        let reshape = modes.reshape.then(|| ReshapeAgent::new(index, sim, ext.reshape.clone()));
        Self { index, nominal_offset: sim.ring_offset(index), params, modes, reference, l1, mpc, reshape }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn l1(&self) -> Option<&L1State> {
        self.l1.as_ref()
    }

    pub fn reshape(&self) -> Option<&ReshapeAgent> {
        self.reshape.as_ref()
    }

    /// One control update.  `inbox` holds reshape broadcasts delivered so
    /// far (the only cross-drone channel).
    pub fn tick(&mut self, info: &InfoSet, inbox: &[ReshapeMessage]) -> ControlOutput {
        let c = &self.params;
        let t = info.t();
        let own = info.own();
        let vl = info.payload_velocity();

        let mut message = None;
        let delta = match self.reshape.as_mut() {
            Some(agent) => {
                message = agent.observe(t, info.tension());
                agent.receive(inbox);
                agent.offset(t)
            }
            None => self.nominal_offset,
        };

        let r = self.reference.sample(t);
        let (p_slot, v_slot) = slot(&r, &delta, c.d_rope);
        let vl = match c.swing_velocity {
            SwingVelocity::Absolute => *vl,
            SwingVelocity::Relative => vl - r.v,
        };
        let shift = anti_swing_shift(&vl, c.k_swing, c.s_max);
        let e_p = p_slot + shift - own.p;
        let e_v = v_slot - own.v;
        let mut a_target = outer_pd(&e_p, &e_v, &vl, c);

        let mut u_ad = 0.0;
        if let Some(l1) = self.l1.as_mut() {
            u_ad = l1.update([e_p.z, e_v.z]);
            a_target.z += u_ad;
        }

        let mut t_ff = if self.modes.ff { info.tension() } else { 0.0 };
        if c.pickup_ramp && self.modes.ff {
            t_ff *= smoothstep((t / c.pickup_ramp_time).clamp(0.0, 1.0));
        }

        let mut dbg = ControlDebug { a_target, t_ff, u_ad, slot_offset: delta, ..Default::default() };
        let (a_cmd, code) = match self.mpc.as_mut() {
            Some(mpc) => {
                let step: MpcStep = mpc.step(t, info.tension(), &e_p, &e_v, &a_target, r.a, t_ff, c);
                dbg.mpc_slack = step.slack;
                dbg.mpc_status = Some(step.status);
                dbg.mpc_iterations = step.iterations;
                (step.a0, step.code)
            }
            None => qp_project(&a_target, t_ff, c),
        };
        dbg.a_cmd = a_cmd;
        dbg.code = code;

        let (f, sat) = thrust_command(a_cmd.z, t_ff, c);
        dbg.thrust_saturated = sat;
        let (roll_d, pitch_d) = attitude_cmd(a_cmd.x, a_cmd.y, c);
        let tau = attitude_pd(own, roll_d, pitch_d, c);
        ControlOutput { f, tau, debug: dbg, message }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::from_euler_zyx;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> ControllerParams {
        ControllerParams::default()
    }

    #[test]
    fn reference_examples() {
        let l = Lemniscate::default();
        let r = l.sample(0.0);
        assert_relative_eq!(r.p, Vec3::new(3.0, 0.0, 3.0), epsilon = 1e-12);
        let r2 = l.sample(12.0);
        assert!((r.p - r2.p).norm() < 1e-12);
        let t = 3.7;
        assert!((l.sample(t).p - l.sample(t + 12.0).p).norm() < 1e-12);
    }

    #[test]
    fn reference_derivatives_match_finite_differences() {
        let l = Lemniscate::default();
        let h = 1e-5;
        for k in 0..50 {
            let t = 0.243 * k as f64;
            let (a, b, c) = (l.sample(t - h), l.sample(t), l.sample(t + h));
            let v_fd = (c.p - a.p) / (2.0 * h);
            let a_fd = (c.v - a.v) / (2.0 * h);
            assert!((v_fd - b.v).norm() < 1e-8);
            assert!((a_fd - b.a).norm() < 1e-7);
        }
    }

    #[test]
    fn peak_horizontal_acceleration() {
        let l = Lemniscate::default();
        let peak = (0..120_000)
            .map(|k| {
                let a = l.sample(k as f64 * 1e-4).a;
                (a.x * a.x + a.y * a.y).sqrt()
            })
            .fold(0.0, f64::max);
        assert!((peak - 2.47).abs() < 0.01, "{peak}");
    }

    #[test]
    fn slot_example() {
        let r = RefSample { p: Vec3::new(3.0, 0.0, 3.0), v: Vec3::new(0.1, 0.2, 0.3), a: Vec3::zeros() };
        let (p, v) = slot(&r, &Vec3::new(0.8, 0.0, 0.0), 1.25);
        assert_relative_eq!(p, Vec3::new(3.8, 0.0, 4.25), epsilon = 1e-12);
        assert_eq!(v, r.v);
    }

    #[test]
    fn anti_swing_examples() {
        assert_eq!(anti_swing_shift(&Vec3::zeros(), 0.8, 0.3), Vec3::zeros());
        assert_relative_eq!(anti_swing_shift(&Vec3::new(0.25, 0.0, 5.0), 0.8, 0.3), Vec3::new(-0.2, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(anti_swing_shift(&Vec3::new(1.0, 0.0, -1.0), 0.8, 0.3), Vec3::new(-0.3, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn outer_pd_examples() {
        let p = params();
        let z = Vec3::zeros();
        assert_eq!(outer_pd(&z, &z, &z, &p), z);
        assert_relative_eq!(outer_pd(&Vec3::new(0.1, 0.0, 0.0), &z, &z, &p), Vec3::new(3.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(outer_pd(&Vec3::new(0.0, 0.0, 0.1), &z, &z, &p), Vec3::new(0.0, 0.0, 10.0), epsilon = 1e-12);
    }

    #[test]
    fn projection_examples() {
        let p = params();
        let (a, code) = qp_project(&Vec3::zeros(), 19.62, &p);
        assert_eq!(a, Vec3::zeros());
        assert_eq!(code, 0);
        let (a, _) = qp_project(&Vec3::new(2.0, 0.0, 0.0), 19.62, &p);
        assert_relative_eq!(a.x, 1.9608, epsilon = 1e-4);
        let (a, code) = qp_project(&Vec3::new(10.0, 0.0, 0.0), 19.62, &p);
        assert_relative_eq!(a.x, 9.81 * 0.6f64.tan(), epsilon = 1e-12);
        assert_eq!(code, 2);
    }

    #[test]
    fn az_bound_examples() {
        let p = params();
        assert_relative_eq!(az_bounds(0.0, &p).1, 90.19, epsilon = 1e-9);
        assert_relative_eq!(az_bounds(19.62, &p).0, -22.89, epsilon = 1e-9);
    }

    #[test]
    fn thrust_examples() {
        let p = params();
        assert_relative_eq!(thrust_command(0.0, 19.62, &p).0, 34.335, epsilon = 1e-9);
        assert_relative_eq!(thrust_command(0.0, 0.0, &p).0, 14.715, epsilon = 1e-9);
        let (f, sat) = thrust_command(200.0, 19.62, &p);
        assert_eq!(f, 150.0);
        assert!(sat);
    }

    #[test]
    fn attitude_examples() {
        let p = params();
        let (_, pitch) = attitude_cmd(6.711, 0.0, &p);
        assert_relative_eq!(pitch, 0.6);
        let level = DroneState::at_rest(Vec3::zeros());
        assert_eq!(attitude_pd(&level, 0.0, 0.0, &p), Vec3::zeros());
        let tau = attitude_pd(&level, 0.0, 0.1, &p);
        assert_relative_eq!(tau.y, 2.5, epsilon = 1e-12);
        let tilted = DroneState { r: from_euler_zyx(0.0, 0.0, 0.2), ..level };
        assert!(attitude_pd(&tilted, 0.0, 0.0, &p).z < 0.0);
    }

    #[test]
    fn severed_rope_drops_feedforward_share() {
        let sim = SimParams::default();
        let mut world = WorldState::initial(&sim, Lemniscate::default().sample(0.0).p);
        let chain = sim.chain();
        let mut ctl = DroneController::new(0, &sim, &params(), ModeFlags::default(), Lemniscate::default(), &ExtensionConfig::default());
        let info = InfoSet::new(0.0, world.drones[0].clone(), 19.62, Vec3::zeros());
        let on = ctl.tick(&info, &[]);
        world.ropes[0].severed = true;
        let info = InfoSet::observe(&world, 0, &chain);
        let off = ctl.tick(&info, &[]);
        assert_relative_eq!(on.f - off.f, 19.62, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn projection_is_kkt_optimal(
            x in -20.0..20.0f64, y in -20.0..20.0f64, z in -60.0..120.0f64, tff in 0.0..60.0f64,
        ) {
            let p = params();
            let target = Vec3::new(x, y, z);
            let (a, _) = qp_project(&target, tff, &p);
            let (lo, hi) = accel_box(tff, &p);
            for k in 0..3 {
                // Gradient of w_t(a - t)² + w_e a².
                let grad = 2.0 * p.w_t * (a[k] - target[k]) + 2.0 * p.w_e * a[k];
                if a[k] > lo[k] && a[k] < hi[k] {
                    prop_assert!(grad.abs() < 1e-9);
                } else if a[k] <= lo[k] {
                    // Lower bound active: multiplier = grad ≥ 0.
                    prop_assert!(grad >= -1e-9);
                } else {
                    prop_assert!(grad <= 1e-9);
                }
            }
        }

        #[test]
        fn anti_swing_continuous_at_saturation(theta in 0.0..std::f64::consts::TAU, eps in 1e-9..1e-6f64) {
            let r = 0.3 / 0.8;
            let dir = Vec3::new(theta.cos(), theta.sin(), 0.0);
            let inside = anti_swing_shift(&(dir * (r - eps)), 0.8, 0.3);
            let outside = anti_swing_shift(&(dir * (r + eps)), 0.8, 0.3);
            prop_assert!((inside - outside).norm() < 1e-5);
        }
    }
}
