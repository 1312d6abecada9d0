//! Fault-triggered formation reshape.
//!
//! The drone whose rope parts sees its own tension collapse, confirms it
//! for `τ_det`, and broadcasts its index once (⌈log₂N⌉ bits).  On receipt
//! every survivor computes the same equiangular reassignment and blends
//! towards it with a quintic smoothstep.  Successive faults superpose their
//! increments, each with its own smoothstep, so the slot trajectory stays
//! C² even when a fault arrives mid-transition.  Survivors also watch their
//! own tension for the matching load step; those latches are diagnostic.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::SimParams;
use crate::math::{wrap_angle, Vec3};

/// `s(τ) = 10τ³ − 15τ⁴ + 6τ⁵`, clamped to `[0, 1]` outside the unit interval.
pub fn smoothstep(tau: f64) -> f64 {
    let x = tau.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

pub fn smoothstep_d1(tau: f64) -> f64 {
    if !(0.0..=1.0).contains(&tau) {
        return 0.0;
    }
    30.0 * tau * tau * (1.0 - tau) * (1.0 - tau)
}

pub fn smoothstep_d2(tau: f64) -> f64 {
    if !(0.0..=1.0).contains(&tau) {
        return 0.0;
    }
    60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau)
}

/// Bits needed to name one of `n` drones.
pub fn index_bits(n: usize) -> u32 {
    (n.max(2) as f64).log2().ceil() as u32
}

/// Equiangular reassignment that preserves cyclic order and minimises total
/// angular travel.  Input: survivors with their current slot angles.
/// Output: the same survivors with unwrapped target angles (target − source
/// is the actual travel).
pub fn reshape_targets(survivors: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let ns = survivors.len();
    if ns < 2 {
        return survivors.to_vec();
    }
    let mut order: Vec<(usize, f64)> = survivors.to_vec();
    order.sort_by(|a, b| a.1.rem_euclid(TAU).total_cmp(&b.1.rem_euclid(TAU)));
    let spacing = TAU / ns as f64;

    let mut best: Option<(f64, f64, usize)> = None;
    for r in 0..ns {
        let dev: Vec<f64> = (0..ns).map(|k| wrap_angle(order[(r + k) % ns].1 - spacing * k as f64)).collect();
        let (c, cost) = circular_l1_center(&dev);
        if best.map_or(true, |(bc, _, _)| cost < bc - 1e-12) {
            best = Some((cost, c, r));
        }
    }
    let (_, c, r) = best.expect("at least two survivors");
    let mut out: Vec<(usize, f64)> = (0..ns)
        .map(|k| {
            let (id, src) = order[(r + k) % ns];
            let tgt = c + spacing * k as f64;
            (id, src + wrap_angle(tgt - src))
        })
        .collect();
    out.sort_by_key(|x| x.0);
    out
}

/// Minimiser of `Σ|wrap(d_k − c)|`.  The optimum lies on a median interval;
/// ties are broken by the circular mean clamped into that interval.
fn circular_l1_center(d: &[f64]) -> (f64, f64) {
    let cost = |c: f64| d.iter().map(|x| wrap_angle(x - c).abs()).sum::<f64>();
    let mut cands: Vec<(f64, f64)> = d.iter().map(|&c| (cost(c), c)).collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = cands[0].0;
    let ties: Vec<f64> = cands.iter().filter(|x| x.0 <= best + 1e-12).map(|x| x.1).collect();
    if ties.len() == 1 {
        return (ties[0], best);
    }
    // Unwrap the tied points around the first one and clamp the mean.
    let base = ties[0];
    let un: Vec<f64> = ties.iter().map(|t| base + wrap_angle(t - base)).collect();
    let (lo, hi) = un.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mean = base + d.iter().map(|x| wrap_angle(x - base)).sum::<f64>() / d.len() as f64;
    let c = wrap_angle(mean.clamp(lo, hi));
    (c, cost(c))
}

/// Minimum-norm tensions holding unit weight at a point below the cable
/// anchors, under symmetric load sharing with the given direction geometry.
pub fn static_tensions(angles: &[f64], radius: f64, elevation: f64) -> Vec<f64> {
    let n = angles.len();
    let mut u = DMatrix::zeros(3, n);
    for (j, a) in angles.iter().enumerate() {
        let d = Vec3::new(radius * a.cos(), radius * a.sin(), elevation).normalize();
        u.set_column(j, &d);
    }
    let w = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let gram = &u * u.transpose();
    let lambda = gram.lu().solve(&w).unwrap_or_else(|| DVector::zeros(3));
    (u.transpose() * lambda).iter().copied().collect()
}

/// Worst-case static tension before and after reshaping `nominal` with
/// drone `severed` removed, and the relative reduction.
pub fn static_reduction(nominal: &[f64], severed: usize, radius: f64, elevation: f64) -> (f64, f64, f64) {
    let survivors: Vec<(usize, f64)> = nominal.iter().copied().enumerate().filter(|(i, _)| *i != severed).collect();
    let before: Vec<f64> = survivors.iter().map(|x| x.1).collect();
    let after: Vec<f64> = reshape_targets(&survivors).iter().map(|x| x.1).collect();
    let worst = |a: &[f64]| static_tensions(a, radius, elevation).into_iter().fold(0.0, f64::max);
    let (b, a) = (worst(&before), worst(&after));
    (b, a, 1.0 - a / b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReshapeConfig {
    pub t_fault: f64,
    pub tau_det: f64,
    pub t_trans: f64,
    /// Detectors ignore the pickup transient before this time (s).
    pub arm_time: f64,
    /// Baseline window for the load-step detector: `[t − lag − span, t − lag]`.
    pub baseline_span: f64,
    pub baseline_lag: f64,
}

impl Default for ReshapeConfig {
    fn default() -> Self {
        Self { t_fault: 0.5, tau_det: 0.1, t_trans: 5.0, arm_time: 5.0, baseline_span: 0.2, baseline_lag: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signature {
    /// Own tension collapsed below the threshold (own rope parted).
    Drop,
    /// Own tension stepped up by more than the threshold (a peer parted).
    Rise,
}

/// Persistence detector on the drone's own tension trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TensionLatch {
    cfg: ReshapeConfig,
    signature: Signature,
    refractory: f64,
    history: VecDeque<(f64, f64)>,
    onset: Option<(f64, f64)>,
    last_fire: Option<f64>,
}

impl TensionLatch {
    pub fn new(cfg: ReshapeConfig, signature: Signature, refractory: f64) -> Self {
        Self { cfg, signature, refractory, history: VecDeque::new(), onset: None, last_fire: None }
    }

    fn baseline(&self, t: f64) -> Option<f64> {
        let end = t - self.cfg.baseline_lag;
        let start = end - self.cfg.baseline_span;
        let (s, n) = self
            .history
            .iter()
            .filter(|(ts, _)| *ts >= start - 1e-9 && *ts <= end + 1e-9)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    }

    /// Feeds one sample; returns `true` on the tick the latch fires.
    pub fn update(&mut self, t: f64, tension: f64) -> bool {
        let keep = self.cfg.baseline_lag + self.cfg.baseline_span + 1e-9;
        self.history.push_back((t, tension));
        while self.history.front().is_some_and(|(ts, _)| t - ts > keep) {
            self.history.pop_front();
        }
        if t < self.cfg.arm_time {
            self.onset = None;
            return false;
        }
        if self.last_fire.is_some_and(|tf| t - tf < self.refractory) {
            return false;
        }
        let active = match (self.signature, self.onset) {
            (Signature::Drop, _) => tension < self.cfg.t_fault,
            (Signature::Rise, Some((_, base))) => tension - base > self.cfg.t_fault,
            (Signature::Rise, None) => self.baseline(t).is_some_and(|b| tension - b > self.cfg.t_fault),
        };
        if !active {
            self.onset = None;
            return false;
        }
        if self.onset.is_none() {
            let base = self.baseline(t).unwrap_or(tension);
            self.onset = Some((t, base));
        }
        let start = self.onset.map_or(t, |o| o.0);
        if t - start >= self.cfg.tau_det - 1e-9 {
            self.last_fire = Some(t);
            self.onset = None;
            return true;
        }
        false
    }

    pub fn last_fire(&self) -> Option<f64> {
        self.last_fire
    }
}

/// The one inter-drone message type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReshapeMessage {
    pub seq: u32,
    pub fault_index: usize,
    pub sent_tick: u64,
    pub bits: u32,
}

/// Shared one-shot broadcast bus: a message posted during tick `k` is
/// delivered from tick `k + 1` on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReshapeBus {
    messages: Vec<ReshapeMessage>,
}

impl ReshapeBus {
    pub fn post(&mut self, mut msg: ReshapeMessage) {
        if self.messages.iter().any(|m| m.fault_index == msg.fault_index) {
            return;
        }
        msg.seq = self.messages.len() as u32;
        self.messages.push(msg);
    }

    /// Messages visible at `tick`.
    pub fn inbox(&self, tick: u64) -> Vec<ReshapeMessage> {
        self.messages.iter().filter(|m| m.sent_tick < tick).copied().collect()
    }

    pub fn total_bits(&self) -> u64 {
        self.messages.iter().map(|m| m.bits as u64).sum()
    }

    pub fn messages(&self) -> &[ReshapeMessage] {
        &self.messages
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Plan {
    t_start: f64,
    /// Angle increment per drone (zero for non-participants).
    increments: Vec<f64>,
    /// Change of the centring shift contributed by this plan.
    center_step: Vec3,
}

/// Per-drone reshape supervisor.
#[derive(Debug, Clone, PartialEq)]
pub struct ReshapeAgent {
    index: usize,
    n: usize,
    radius: f64,
    cfg: ReshapeConfig,
    nominal: Vec<f64>,
    final_angles: Vec<f64>,
    alive: Vec<bool>,
    plans: Vec<Plan>,
    seen: Vec<usize>,
    own_latch: TensionLatch,
    peer_latch: TensionLatch,
    peer_latches: Vec<f64>,
    broadcast: bool,
    tick: u64,
}

impl ReshapeAgent {
    pub fn new(index: usize, sim: &SimParams, cfg: ReshapeConfig) -> Self {
        let n = sim.n_drones;
        let nominal: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
        let tp = sim.tau_pend();
        Self {
            index,
            n,
            radius: sim.ring_radius,
            own_latch: TensionLatch::new(cfg.clone(), Signature::Drop, f64::INFINITY),
            peer_latch: TensionLatch::new(cfg.clone(), Signature::Rise, tp),
            cfg,
            final_angles: nominal.clone(),
            nominal,
            alive: vec![true; n],
            plans: vec![],
            seen: vec![],
            peer_latches: vec![],
            broadcast: false,
            tick: 0,
        }
    }

    /// Runs the local detectors; returns a broadcast when this drone's own
    /// rope is confirmed lost.
    pub fn observe(&mut self, t: f64, tension: f64) -> Option<ReshapeMessage> {
        let tick = self.tick;
        self.tick += 1;
        if self.peer_latch.update(t, tension) {
            self.peer_latches.push(t);
        }
        if !self.broadcast && self.own_latch.update(t, tension) {
            self.broadcast = true;
            return Some(ReshapeMessage { seq: 0, fault_index: self.index, sent_tick: tick, bits: index_bits(self.n) });
        }
        None
    }

    /// Processes delivered broadcasts; new ones start a transition now.
    pub fn receive_at(&mut self, t: f64, inbox: &[ReshapeMessage]) {
        for m in inbox {
            if self.seen.contains(&m.fault_index) || m.fault_index >= self.n {
                continue;
            }
            self.seen.push(m.fault_index);
            self.alive[m.fault_index] = false;
            let survivors: Vec<(usize, f64)> =
                (0..self.n).filter(|&j| self.alive[j]).map(|j| (j, self.final_angles[j])).collect();
            if survivors.len() < 2 {
                continue;
            }
            let mut increments = vec![0.0; self.n];
            for (j, tgt) in reshape_targets(&survivors) {
                increments[j] = tgt - self.final_angles[j];
                self.final_angles[j] = tgt;
            }
            let ids: Vec<usize> = survivors.iter().map(|s| s.0).collect();
            let new_center = self.center_of(&ids);
            let applied: Vec3 = self.plans.iter().map(|p| p.center_step).sum();
            self.plans.push(Plan { t_start: t, increments, center_step: new_center - applied });
        }
    }

    /// Same as [`receive_at`](Self::receive_at) using the last observed time.
    pub fn receive(&mut self, inbox: &[ReshapeMessage]) {
        let t = self.last_time();
        self.receive_at(t, inbox);
    }

    fn last_time(&self) -> f64 {
        self.own_latch.history.back().map(|x| x.0).unwrap_or(0.0)
    }

    fn ring(&self, a: f64) -> Vec3 {
        Vec3::new(self.radius * a.cos(), self.radius * a.sin(), 0.0)
    }

    /// Mean displacement of `ids` from their nominal slots at the final angles.
    fn center_of(&self, ids: &[usize]) -> Vec3 {
        let s: Vec3 = ids.iter().map(|&j| self.ring(self.final_angles[j]) - self.ring(self.nominal[j])).sum();
        s / ids.len().max(1) as f64
    }

    fn blend(&self, plan: &Plan, t: f64) -> f64 {
        smoothstep((t - plan.t_start) / self.cfg.t_trans)
    }

    /// Slot angle of drone `j` at time `t`.
    pub fn angle(&self, j: usize, t: f64) -> f64 {
        self.nominal[j] + self.plans.iter().map(|p| self.blend(p, t) * p.increments[j]).sum::<f64>()
    }

    /// Horizontal slot offset of this drone at time `t`.
    pub fn offset(&self, t: f64) -> Vec3 {
        let center: Vec3 = self.plans.iter().map(|p| self.blend(p, t) * p.center_step).sum();
        self.ring(self.angle(self.index, t)) - center
    }

    pub fn known_faults(&self) -> &[usize] {
        &self.seen
    }

    pub fn peer_latches(&self) -> &[f64] {
        &self.peer_latches
    }

    pub fn final_angles(&self) -> &[f64] {
        &self.final_angles
    }
}
