//! Plant: quadrotor rigid bodies, point-mass payload, bead-chain ropes,
//! severance events and the fixed-step RK3 integrator.

use serde::{Deserialize, Serialize};

use crate::cables::{chain_forces, BeadChainParams, RopeBeadChain};
use crate::error::{Error, Result};
use crate::math::{orthonormalize, skew, Mat3, Vec3, E3};

/// Physical and numerical plant parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub n_drones: usize,
    /// Drone mass (kg).
    pub m_drone: f64,
    /// Payload mass (kg).
    pub m_payload: f64,
    /// Rope rest length (m).
    pub rope_length: f64,
    /// Per-segment rope stiffness (N/m).
    pub k_s: f64,
    /// Formation ring radius (m).
    pub ring_radius: f64,
    pub g: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Per-axis torque limit (N·m).
    pub tau_max: f64,
    /// Physics / control tick (s).
    pub dt: f64,
    /// Simulated duration (s).
    pub duration: f64,
    /// Principal moments of inertia (kg·m²).
    pub inertia: [f64; 3],
    pub n_beads: usize,
    /// Rope shape-mode time constant used to size the beads (s).
    pub tau_rope: f64,
    /// Damping ratio of the single-bead rope element.
    pub rope_zeta: f64,
    /// Apply gravity to the beads.
    pub bead_gravity: bool,
    /// Largest internal RK3 step (s); the rope chain is stiff.
    pub max_substep: f64,
    /// Initial drone-to-attachment chord (m); below the rest length the
    /// ropes start slack and the payload settles onto them.
    pub initial_chord: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            n_drones: 5,
            m_drone: 1.5,
            m_payload: 10.0,
            rope_length: 1.25,
            k_s: 25_000.0,
            ring_radius: 0.8,
            g: 9.81,
            f_min: 0.0,
            f_max: 150.0,
            tau_max: 10.0,
            dt: 1e-3,
            duration: 30.0,
            inertia: [0.02, 0.02, 0.04],
            n_beads: 8,
            tau_rope: 6.3e-3,
            rope_zeta: 1.2,
            bead_gravity: false,
            max_substep: 2e-4,
            initial_chord: 1.17,
        }
    }
}

impl SimParams {
    pub fn tau_pend(&self) -> f64 {
        std::f64::consts::TAU * (self.rope_length / self.g).sqrt()
    }

    pub fn chain(&self) -> BeadChainParams {
        BeadChainParams::from_timescale(
            self.n_beads,
            self.k_s,
            self.rope_length,
            self.tau_rope,
            self.rope_zeta,
            self.bead_gravity,
        )
    }

    /// Nominal horizontal offset of drone `i` on the formation ring.
    pub fn ring_offset(&self, i: usize) -> Vec3 {
        let phi = std::f64::consts::TAU * i as f64 / self.n_drones as f64;
        Vec3::new(self.ring_radius * phi.cos(), self.ring_radius * phi.sin(), 0.0)
    }

    pub fn inertia_matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&Vec3::from(self.inertia))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m_drone", self.m_drone),
            ("m_payload", self.m_payload),
            ("rope_length", self.rope_length),
            ("k_s", self.k_s),
            ("ring_radius", self.ring_radius),
            ("g", self.g),
            ("tau_max", self.tau_max),
            ("dt", self.dt),
            ("duration", self.duration),
            ("tau_rope", self.tau_rope),
            ("rope_zeta", self.rope_zeta),
            ("max_substep", self.max_substep),
            ("initial_chord", self.initial_chord),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.inertia.iter().any(|j| *j <= 0.0) {
            return Err(Error::Config("inertia must be positive".into()));
        }
        if !(self.f_min < self.f_max) {
            return Err(Error::Config("f_min must be below f_max".into()));
        }
        if self.n_drones < 2 || self.n_beads < 1 {
            return Err(Error::Config("need at least two drones and one bead per rope".into()));
        }
        if self.dt > 1e-3 + 1e-15 {
            return Err(Error::Config("physics tick must not exceed 1 ms".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub p: Vec3,
    pub v: Vec3,
    /// World-from-body rotation.
    pub r: Mat3,
    /// Body angular velocity.
    pub w: Vec3,
}

impl DroneState {
    pub fn at_rest(p: Vec3) -> Self {
        Self { p, v: Vec3::zeros(), r: Mat3::identity(), w: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadState {
    pub p: Vec3,
    pub v: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: f64,
    pub drones: Vec<DroneState>,
    pub payload: PayloadState,
    pub ropes: Vec<RopeBeadChain>,
    /// Surviving rope indices, ascending.
    pub survivors: Vec<usize>,
}

impl WorldState {
    /// Drones on the ring at slot altitude above `payload_ref`, payload
    /// hanging `initial_chord` below them, everything at rest.
    pub fn initial(params: &SimParams, payload_ref: Vec3) -> Self {
        let top = payload_ref + params.rope_length * E3;
        let payload_p = top - params.initial_chord * E3;
        let drones: Vec<DroneState> =
            (0..params.n_drones).map(|i| DroneState::at_rest(top + params.ring_offset(i))).collect();
        let ropes = (0..params.n_drones)
            .map(|i| {
                let attach = params.ring_offset(i);
                RopeBeadChain::straight(&drones[i].p, &(payload_p + attach), attach, params.n_beads)
            })
            .collect();
        Self {
            t: 0.0,
            drones,
            payload: PayloadState { p: payload_p, v: Vec3::zeros() },
            ropes,
            survivors: (0..params.n_drones).collect(),
        }
    }

    /// Drone-side tension of rope `i`.
    pub fn tension(&self, i: usize, chain: &BeadChainParams) -> f64 {
        self.ropes[i].drone_side_tension(&self.drones[i].p, &self.drones[i].v, chain)
    }

    pub fn chord(&self, i: usize) -> f64 {
        self.ropes[i].chord(&self.drones[i].p, &self.payload.p)
    }

    /// Total mechanical energy: kinetic, gravitational and elastic.
    pub fn energy(&self, params: &SimParams) -> f64 {
        let chain = params.chain();
        let j = params.inertia_matrix();
        let mut e = 0.0;
        for d in &self.drones {
            e += 0.5 * params.m_drone * d.v.norm_squared() + params.m_drone * params.g * d.p.z;
            e += 0.5 * d.w.dot(&(j * d.w));
        }
        e += 0.5 * params.m_payload * self.payload.v.norm_squared() + params.m_payload * params.g * self.payload.p.z;
        for (i, rope) in self.ropes.iter().enumerate() {
            if rope.severed {
                continue;
            }
            for (p, v) in rope.bead_p.iter().zip(&rope.bead_v) {
                e += 0.5 * chain.m_bead * v.norm_squared();
                if chain.gravity {
                    e += chain.m_bead * params.g * p.z;
                }
            }
            e += rope.elastic_energy(&self.drones[i].p, &self.payload.p, &chain);
        }
        e
    }

    fn check_finite(&self) -> Result<()> {
        let bad = |v: &Vec3| !v.iter().all(|x| x.is_finite()) || v.norm() > 1e6;
        for (i, d) in self.drones.iter().enumerate() {
            if bad(&d.p) || bad(&d.v) || bad(&d.w) || !d.r.iter().all(|x| x.is_finite()) {
                return Err(Error::Divergence { t: self.t, reason: format!("drone {i} state") });
            }
        }
        if bad(&self.payload.p) || bad(&self.payload.v) {
            return Err(Error::Divergence { t: self.t, reason: "payload state".into() });
        }
        Ok(())
    }
}

/// Per-drone actuator command held over one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    pub thrust: f64,
    pub torque: Vec3,
}

/// Disturbance forces held over one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindForces {
    pub drones: Vec<Vec3>,
    pub payload: Vec3,
}

impl WindForces {
    pub fn calm(n: usize) -> Self {
        Self { drones: vec![Vec3::zeros(); n], payload: Vec3::zeros() }
    }
}

/// Translational drone acceleration.  `cable_force` is the rope force acting
/// on the drone (pointing down the rope when taut).
pub fn drone_accel(state: &DroneState, f: f64, cable_force: &Vec3, wind: &Vec3, params: &SimParams) -> Result<Vec3> {
    if !f.is_finite() || !cable_force.iter().chain(wind.iter()).all(|x| x.is_finite()) {
        return Err(Error::Precondition("non-finite drone input".into()));
    }
    let m = params.m_drone;
    Ok((f * (state.r * E3) - m * params.g * E3 + cable_force + wind) / m)
}

/// Payload acceleration from the rope forces of the surviving cables.
pub fn payload_accel(rope_forces: &[Vec3], wind: &Vec3, params: &SimParams) -> Result<Vec3> {
    if rope_forces.is_empty() {
        return Err(Error::Precondition("payload needs at least one surviving rope".into()));
    }
    let sum: Vec3 = rope_forces.iter().sum();
    Ok(-params.g * E3 + (sum + wind) / params.m_payload)
}

/// Rigid-body rotational kinematics and dynamics: `(Ṙ, ω̇)`.
pub fn attitude_dynamics(r: &Mat3, w: &Vec3, torque: &Vec3, inertia: &Mat3) -> (Mat3, Vec3) {
    let r_dot = r * skew(w);
    let jw = inertia * w;
    let w_dot = Vec3::new(
        (torque.x - (w.y * jw.z - w.z * jw.y)) / inertia[(0, 0)],
        (torque.y - (w.z * jw.x - w.x * jw.z)) / inertia[(1, 1)],
        (torque.z - (w.x * jw.y - w.y * jw.x)) / inertia[(2, 2)],
    );
    (r_dot, w_dot)
}

/// One rope severance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub t_star: f64,
    pub drone: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSchedule {
    pub events: Vec<FaultEvent>,
    /// Accept dwell times shorter than one pendulum period (probe runs).
    pub subthreshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleViolation {
    TooManyFaults { faults: usize, limit: usize },
    DwellTooShort { event: usize, dwell: f64, required: f64 },
    NotOrdered { event: usize },
    IndexOutOfRange { event: usize, drone: usize },
    RepeatedIndex { event: usize, drone: usize },
    BadTime { event: usize, t_star: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub violations: Vec<ScheduleViolation>,
    /// `dwell − τ_pend` for each consecutive pair.
    pub dwell_margins: Vec<f64>,
}

impl ScheduleReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl FaultSchedule {
    pub fn new(events: Vec<FaultEvent>) -> Self {
        Self { events, subthreshold: false }
    }

    pub fn validate(&self, params: &SimParams) -> ScheduleReport {
        let n = params.n_drones;
        let tau = params.tau_pend();
        let mut violations = Vec::new();
        let mut margins = Vec::new();
        if self.events.len() + 2 > n {
            violations.push(ScheduleViolation::TooManyFaults { faults: self.events.len(), limit: n.saturating_sub(2) });
        }
        let mut seen = Vec::new();
        for (k, ev) in self.events.iter().enumerate() {
            if !(ev.t_star.is_finite() && ev.t_star >= 0.0) {
                violations.push(ScheduleViolation::BadTime { event: k, t_star: ev.t_star });
            }
            if ev.drone >= n {
                violations.push(ScheduleViolation::IndexOutOfRange { event: k, drone: ev.drone });
            } else if seen.contains(&ev.drone) {
                violations.push(ScheduleViolation::RepeatedIndex { event: k, drone: ev.drone });
            }
            seen.push(ev.drone);
            if k > 0 {
                let dwell = ev.t_star - self.events[k - 1].t_star;
                if dwell <= 0.0 {
                    violations.push(ScheduleViolation::NotOrdered { event: k });
                }
                margins.push(dwell - tau);
                if dwell < tau && !self.subthreshold {
                    violations.push(ScheduleViolation::DwellTooShort { event: k, dwell, required: tau });
                }
            }
        }
        ScheduleReport { violations, dwell_margins: margins }
    }

    /// Tick index at which each event is applied (nearest tick).
    pub fn event_ticks(&self, dt: f64) -> Vec<u64> {
        self.events.iter().map(|e| (e.t_star / dt).round() as u64).collect()
    }
}

/// Severs the rope of `event.drone`.  Kinematic states are left untouched.
pub fn apply_fault(world: &mut WorldState, event: &FaultEvent) -> Result<()> {
    let pos = world
        .survivors
        .iter()
        .position(|&s| s == event.drone)
        .ok_or_else(|| Error::Schedule(format!("drone {} is not a survivor", event.drone)))?;
    world.survivors.remove(pos);
    world.ropes[event.drone].severed = true;
    for v in world.ropes[event.drone].bead_v.iter_mut() {
        *v = Vec3::zeros();
    }
    Ok(())
}

const DRONE_DIM: usize = 18;

/// Fixed-step Kutta RK3 over the packed plant state with scratch buffers
/// reused across calls.
#[derive(Debug, Default)]
pub struct Integrator {
    y: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    tmp: Vec<f64>,
    bead_acc: Vec<Vec3>,
}

struct Rhs<'a> {
    params: &'a SimParams,
    chain: BeadChainParams,
    inertia: Mat3,
    act: &'a [Actuation],
    wind: &'a WindForces,
    severed: Vec<bool>,
    attach: Vec<Vec3>,
}

#[inline]
fn v3(y: &[f64], o: usize) -> Vec3 {
    Vec3::new(y[o], y[o + 1], y[o + 2])
}

#[inline]
fn put(y: &mut [f64], o: usize, v: &Vec3) {
    y[o] = v.x;
    y[o + 1] = v.y;
    y[o + 2] = v.z;
}

fn mat_at(y: &[f64], o: usize) -> Mat3 {
    Mat3::new(y[o], y[o + 1], y[o + 2], y[o + 3], y[o + 4], y[o + 5], y[o + 6], y[o + 7], y[o + 8])
}

fn put_mat(y: &mut [f64], o: usize, m: &Mat3) {
    for r in 0..3 {
        for c in 0..3 {
            y[o + 3 * r + c] = m[(r, c)];
        }
    }
}

impl Rhs<'_> {
    fn eval(&self, y: &[f64], dy: &mut [f64], bead_acc: &mut Vec<Vec3>) {
        let n = self.params.n_drones;
        let nb = self.params.n_beads;
        let g = self.params.g;
        let m = self.params.m_drone;
        let pl_o = n * DRONE_DIM;
        let pl = v3(y, pl_o);
        let vl = v3(y, pl_o + 3);
        let mut payload_force = self.wind.payload - self.params.m_payload * g * E3;
        bead_acc.resize(nb, Vec3::zeros());
        let mut bp = vec![Vec3::zeros(); nb];
        let mut bv = vec![Vec3::zeros(); nb];
        for i in 0..n {
            let o = i * DRONE_DIM;
            let p = v3(y, o);
            let v = v3(y, o + 3);
            let r = mat_at(y, o + 6);
            let w = v3(y, o + 15);
            let ro = pl_o + 6 + i * 6 * nb;
            for j in 0..nb {
                bp[j] = v3(y, ro + 6 * j);
                bv[j] = v3(y, ro + 6 * j + 3);
            }
            let end = pl + self.attach[i];
            let (f_drone, f_payload) =
                chain_forces(&bp, &bv, self.severed[i], (&p, &v), (&end, &vl), &self.chain, g, bead_acc);
            payload_force += f_payload;
            let a = self.act[i];
            let acc = (a.thrust * (r * E3) - m * g * E3 + f_drone + self.wind.drones[i]) / m;
            let (r_dot, w_dot) = attitude_dynamics(&r, &w, &a.torque, &self.inertia);
            put(dy, o, &v);
            put(dy, o + 3, &acc);
            put_mat(dy, o + 6, &r_dot);
            put(dy, o + 15, &w_dot);
            for j in 0..nb {
                if self.severed[i] {
                    put(dy, ro + 6 * j, &Vec3::zeros());
                    put(dy, ro + 6 * j + 3, &Vec3::zeros());
                } else {
                    put(dy, ro + 6 * j, &bv[j]);
                    put(dy, ro + 6 * j + 3, &bead_acc[j]);
                }
            }
        }
        put(dy, pl_o, &vl);
        put(dy, pl_o + 3, &(payload_force / self.params.m_payload));
    }
}

impl Integrator {
    pub fn new() -> Self {
        Self::default()
    }

    fn pack(world: &WorldState, y: &mut Vec<f64>) {
        y.clear();
        for d in &world.drones {
            y.extend_from_slice(d.p.as_slice());
            y.extend_from_slice(d.v.as_slice());
            for r in 0..3 {
                for c in 0..3 {
                    y.push(d.r[(r, c)]);
                }
            }
            y.extend_from_slice(d.w.as_slice());
        }
        y.extend_from_slice(world.payload.p.as_slice());
        y.extend_from_slice(world.payload.v.as_slice());
        for rope in &world.ropes {
            for (p, v) in rope.bead_p.iter().zip(&rope.bead_v) {
                y.extend_from_slice(p.as_slice());
                y.extend_from_slice(v.as_slice());
            }
        }
    }

    fn unpack(world: &mut WorldState, y: &[f64]) {
        let n = world.drones.len();
        for (i, d) in world.drones.iter_mut().enumerate() {
            let o = i * DRONE_DIM;
            d.p = v3(y, o);
            d.v = v3(y, o + 3);
            d.r = orthonormalize(&mat_at(y, o + 6));
            d.w = v3(y, o + 15);
        }
        let pl_o = n * DRONE_DIM;
        world.payload.p = v3(y, pl_o);
        world.payload.v = v3(y, pl_o + 3);
        let mut o = pl_o + 6;
        for rope in world.ropes.iter_mut() {
            for j in 0..rope.bead_p.len() {
                rope.bead_p[j] = v3(y, o);
                rope.bead_v[j] = v3(y, o + 3);
                o += 6;
            }
        }
    }

    /// Advances the world by `dt` with actuation and wind held constant.
    /// Internally `dt` is split into equal RK3 substeps no longer than
    /// `params.max_substep`; rotations are re-projected after each substep.
    pub fn step(
        &mut self,
        world: &mut WorldState,
        act: &[Actuation],
        wind: &WindForces,
        dt: f64,
        params: &SimParams,
    ) -> Result<()> {
        if dt > 1e-3 + 1e-15 || dt <= 0.0 {
            return Err(Error::Precondition(format!("step size {dt} outside (0, 1 ms]")));
        }
        if act.len() != params.n_drones || wind.drones.len() != params.n_drones {
            return Err(Error::Precondition("control/wind vectors must cover every drone".into()));
        }
        let rhs = Rhs {
            params,
            chain: params.chain(),
            inertia: params.inertia_matrix(),
            act,
            wind,
            severed: world.ropes.iter().map(|r| r.severed).collect(),
            attach: world.ropes.iter().map(|r| r.payload_attach).collect(),
        };
        let substeps = (dt / params.max_substep - 1e-9).ceil().max(1.0) as usize;
        let h = dt / substeps as f64;
        for _ in 0..substeps {
            Self::pack(world, &mut self.y);
            let len = self.y.len();
            for b in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.tmp] {
                b.resize(len, 0.0);
            }
            rhs.eval(&self.y, &mut self.k1, &mut self.bead_acc);
            for k in 0..len {
                self.tmp[k] = self.y[k] + 0.5 * h * self.k1[k];
            }
            rhs.eval(&self.tmp, &mut self.k2, &mut self.bead_acc);
            for k in 0..len {
                self.tmp[k] = self.y[k] - h * self.k1[k] + 2.0 * h * self.k2[k];
            }
            rhs.eval(&self.tmp, &mut self.k3, &mut self.bead_acc);
            for k in 0..len {
                self.y[k] += h / 6.0 * (self.k1[k] + 4.0 * self.k2[k] + self.k3[k]);
            }
            Self::unpack(world, &self.y);
            world.t += h;
        }
        world.check_finite()
    }
}

/// Generic Kutta RK3 step, exposed for order checks on arbitrary ODEs.
pub fn rk3_step<F>(y: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let k1 = f(y);
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = f(&y2);
    let y3: Vec<f64> = y.iter().zip(&k1).zip(&k2).map(|((a, k1), k2)| a - h * k1 + 2.0 * h * k2).collect();
    let k3 = f(&y3);
    y.iter()
        .zip(k1.iter().zip(k2.iter().zip(&k3)))
        .map(|(a, (k1, (k2, k3)))| a + h / 6.0 * (k1 + 4.0 * k2 + k3))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hover_world(params: &SimParams) -> WorldState {
        WorldState::initial(params, Vec3::new(0.0, 0.0, 3.0))
    }

    #[test]
    fn drone_accel_examples() {
        let p = SimParams::default();
        let s = DroneState::at_rest(Vec3::zeros());
        let a = drone_accel(&s, p.m_drone * p.g + 19.62, &Vec3::new(0.0, 0.0, -19.62), &Vec3::zeros(), &p).unwrap();
        assert!(a.norm() < 1e-12);
        let a = drone_accel(&s, 0.0, &Vec3::zeros(), &Vec3::zeros(), &p).unwrap();
        assert_relative_eq!(a.z, -p.g);
        let a = drone_accel(&s, p.m_drone * p.g, &Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0), &p).unwrap();
        assert_relative_eq!(a.x, 1.0 / 1.5, epsilon = 1e-12);
        assert!(a.z.abs() < 1e-12);
        assert!(drone_accel(&s, f64::NAN, &Vec3::zeros(), &Vec3::zeros(), &p).is_err());
    }

    #[test]
    fn payload_accel_examples() {
        let p = SimParams::default();
        let five = vec![Vec3::new(0.0, 0.0, 19.62); 5];
        assert!(payload_accel(&five, &Vec3::zeros(), &p).unwrap().norm() < 1e-12);
        let three = vec![Vec3::new(0.0, 0.0, p.m_payload * p.g / 3.0); 3];
        assert!(payload_accel(&three, &Vec3::zeros(), &p).unwrap().norm() < 1e-12);
        assert!(payload_accel(&[], &Vec3::zeros(), &p).is_err());
    }

    #[test]
    fn attitude_dynamics_examples() {
        let j = Mat3::from_diagonal(&Vec3::new(0.02, 0.03, 0.04));
        let (rd, wd) = attitude_dynamics(&Mat3::identity(), &Vec3::zeros(), &Vec3::zeros(), &j);
        assert_eq!(rd, Mat3::zeros());
        assert_eq!(wd, Vec3::zeros());
        let (_, wd) = attitude_dynamics(&Mat3::identity(), &Vec3::zeros(), &Vec3::new(0.02 * 3.0, 0.0, 0.0), &j);
        assert_relative_eq!(wd.x, 3.0, epsilon = 1e-12);
        let (_, wd) = attitude_dynamics(&Mat3::identity(), &Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), &j);
        assert_eq!(wd, Vec3::zeros());
    }

    #[test]
    fn schedule_validation() {
        let p = SimParams::default();
        let v4 = FaultSchedule::new(vec![FaultEvent { t_star: 12.0, drone: 0 }, FaultEvent { t_star: 17.0, drone: 2 }]);
        let r = v4.validate(&p);
        assert!(r.is_valid());
        assert_relative_eq!(r.dwell_margins[0], 5.0 - 2.2428, epsilon = 1e-3);

        let mut short = FaultSchedule::new(vec![FaultEvent { t_star: 12.0, drone: 0 }, FaultEvent { t_star: 13.12, drone: 2 }]);
        assert!(matches!(short.validate(&p).violations[0], ScheduleViolation::DwellTooShort { .. }));
        short.subthreshold = true;
        assert!(short.validate(&p).is_valid());

        let four = FaultSchedule::new((0..4).map(|k| FaultEvent { t_star: 5.0 + 3.0 * k as f64, drone: k }).collect());
        assert!(matches!(four.validate(&p).violations[0], ScheduleViolation::TooManyFaults { .. }));

        let dup = FaultSchedule::new(vec![FaultEvent { t_star: 12.0, drone: 1 }, FaultEvent { t_star: 17.0, drone: 1 }]);
        assert!(matches!(dup.validate(&p).violations[0], ScheduleViolation::RepeatedIndex { .. }));
    }

    #[test]
    fn fault_keeps_kinematics_and_zeroes_tension() {
        let p = SimParams::default();
        let mut w = hover_world(&p);
        // Stretch the ropes a little so they carry load.
        for d in w.drones.iter_mut() {
            d.p.z += 0.09;
        }
        let before = w.clone();
        apply_fault(&mut w, &FaultEvent { t_star: 0.0, drone: 0 }).unwrap();
        assert_eq!(w.survivors, vec![1, 2, 3, 4]);
        assert_eq!(w.payload, before.payload);
        assert_eq!(w.drones, before.drones);
        assert_eq!(w.tension(0, &p.chain()), 0.0);
        assert!(w.tension(1, &p.chain()) > 0.0);
        assert!(apply_fault(&mut w, &FaultEvent { t_star: 0.0, drone: 0 }).is_err());
    }

    #[test]
    fn severed_rope_stays_silent() {
        let p = SimParams::default();
        let mut w = hover_world(&p);
        apply_fault(&mut w, &FaultEvent { t_star: 0.0, drone: 3 }).unwrap();
        let act = vec![Actuation { thrust: p.m_drone * p.g, torque: Vec3::zeros() }; 5];
        let mut integ = Integrator::new();
        for _ in 0..200 {
            integ.step(&mut w, &act, &WindForces::calm(5), p.dt, &p).unwrap();
            assert_eq!(w.tension(3, &p.chain()), 0.0);
        }
    }

    #[test]
    fn rotation_stays_orthonormal() {
        let p = SimParams::default();
        let mut w = hover_world(&p);
        w.drones[0].w = Vec3::new(3.0, -2.0, 5.0);
        let act = vec![Actuation { thrust: 0.0, torque: Vec3::new(0.1, 0.05, -0.02) }; 5];
        let mut integ = Integrator::new();
        for _ in 0..100 {
            integ.step(&mut w, &act, &WindForces::calm(5), p.dt, &p).unwrap();
            let r = w.drones[0].r;
            assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rk3_generic_is_third_order() {
        // y' = -y + sin t style autonomous system: (y, t).
        let f = |y: &[f64]| vec![-y[0] * y[0] + y[1].cos(), 1.0];
        let run = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = vec![0.5, 0.0];
            for _ in 0..n {
                y = rk3_step(&y, h, f);
            }
            y[0]
        };
        let reference = run(20_000);
        let e1 = (run(20) - reference).abs();
        let e2 = (run(40) - reference).abs();
        let slope = (e1 / e2).log2();
        assert!(slope > 2.8 && slope < 3.2, "slope {slope}");
    }

    #[test]
    fn invalid_step_size_rejected() {
        let p = SimParams::default();
        let mut w = hover_world(&p);
        let act = vec![Actuation { thrust: 0.0, torque: Vec3::zeros() }; 5];
        assert!(Integrator::new().step(&mut w, &act, &WindForces::calm(5), 2e-3, &p).is_err());
    }
}
