//! Rope models.
//!
//! The truth model is a chain of `n_beads` point masses joined by
//! `n_beads + 1` tension-only Kelvin–Voigt segments running from the drone
//! (node 0) to the payload attachment point (last node).  The reduced model
//! replaces the chain by a single quasi-static spring of stiffness
//! `k_s / n_seg` acting on the chord between the two ends.

use serde::{Deserialize, Serialize};

use crate::math::{Vec3, E3};

/// Chord lengths below this are treated as coincident endpoints.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-9;

/// Headline shape-mode deviation budget per rope (N).
pub const REDUCTION_BUDGET: f64 = 0.076;

/// Slack-run and duty-cycle thresholds of the admissibility gate.
pub const SLACK_RUN_MAX: f64 = 0.040;
pub const SLACK_DUTY_MAX: f64 = 0.025;
/// Tension below which a rope counts as slack (N).
pub const SLACK_EPS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeadChainParams {
    pub n_beads: usize,
    /// Segment stiffness (N/m).
    pub k_s: f64,
    /// Segment damping (N·s/m).
    pub c_s: f64,
    /// Mass of each bead (kg).
    pub m_bead: f64,
    /// Unstretched rope length (m).
    pub rest_length: f64,
    /// Whether bead weight acts on the chain.
    pub gravity: bool,
}

impl BeadChainParams {
    /// Derives bead mass and damping from the rope time constant
    /// `tau_rope = 2π·sqrt(m_bead / k_s)` and the damping ratio of the
    /// single-bead element.
    pub fn from_timescale(
        n_beads: usize,
        k_s: f64,
        rest_length: f64,
        tau_rope: f64,
        zeta: f64,
        gravity: bool,
    ) -> Self {
        let m_bead = k_s * (tau_rope / std::f64::consts::TAU).powi(2);
        let c_s = 2.0 * zeta * (k_s * m_bead).sqrt();
        Self { n_beads, k_s, c_s, m_bead, rest_length, gravity }
    }

    pub fn n_segments(&self) -> usize {
        self.n_beads + 1
    }

    pub fn segment_rest(&self) -> f64 {
        self.rest_length / self.n_segments() as f64
    }

    pub fn lumped(&self) -> LumpedCable {
        LumpedCable { k_eff: self.k_s / self.n_segments() as f64, rest_length: self.rest_length }
    }

    /// Eigenvalue of the element-level shape mode: one bead on one segment,
    /// `m s² + c s + k = 0`, slow root.  This is the mode whose damping ratio
    /// the segment damping is calibrated against.
    pub fn element_mode(&self) -> ComplexRoot {
        quadratic_roots(self.m_bead, self.c_s, self.k_s).slow
    }

    /// Modes of the chain with both ends held fixed.
    ///
    /// Stiffness and damping share the tridiagonal pattern, so the modal
    /// equations decouple: `s² + (c/m) μ_j s + (k/m) μ_j = 0` with
    /// `μ_j = 2 − 2 cos(jπ/(n+1))`.  Returned slowest first.
    pub fn chain_modes(&self) -> Vec<(ComplexRoot, ComplexRoot)> {
        let n = self.n_beads;
        (1..=n)
            .map(|j| {
                let mu = 2.0 - 2.0 * (j as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
                let r = quadratic_roots(1.0, self.c_s * mu / self.m_bead, self.k_s * mu / self.m_bead);
                (r.slow, r.fast)
            })
            .collect()
    }
}

/// A complex number `re + i·im`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexRoot {
    pub re: f64,
    pub im: f64,
}

struct RootPair {
    slow: ComplexRoot,
    fast: ComplexRoot,
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> RootPair {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Numerically stable pair.
        let q = -0.5 * (b + s);
        let r1 = q / a;
        let r2 = c / q;
        let (slow, fast) = if r1.abs() < r2.abs() { (r1, r2) } else { (r2, r1) };
        RootPair { slow: ComplexRoot { re: slow, im: 0.0 }, fast: ComplexRoot { re: fast, im: 0.0 } }
    } else {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a);
        RootPair { slow: ComplexRoot { re, im }, fast: ComplexRoot { re, im: -im } }
    }
}

/// Reduced quasi-static rope: `T = k_eff · (ℓ − L)⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumpedCable {
    pub k_eff: f64,
    pub rest_length: f64,
}

impl LumpedCable {
    pub fn tension(&self, chord: f64) -> f64 {
        self.k_eff * (chord - self.rest_length).max(0.0)
    }
}

/// Tension-only Kelvin–Voigt segment force acting on endpoint `a`.
///
/// The force points from `a` towards `b`; it is zero whenever the segment is
/// not stretched or the spring-damper sum would push.
pub fn segment_force(pa: &Vec3, pb: &Vec3, va: &Vec3, vb: &Vec3, k: f64, c: f64, rest: f64) -> Vec3 {
    let d = pb - pa;
    let len = d.norm();
    if len < MIN_SEGMENT_LENGTH {
        log::trace!("coincident segment endpoints");
        return Vec3::zeros();
    }
    if len <= rest {
        return Vec3::zeros();
    }
    let u = d / len;
    let rate = u.dot(&(vb - va));
    let mag = (k * (len - rest) + c * rate).max(0.0);
    u * mag
}

/// A rope discretized into beads.  The drone end is the drone centre of mass,
/// the payload end is `payload position + payload_attach`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopeBeadChain {
    pub bead_p: Vec<Vec3>,
    pub bead_v: Vec<Vec3>,
    /// Attachment point relative to the payload centre of mass.
    pub payload_attach: Vec3,
    pub severed: bool,
}

impl RopeBeadChain {
    /// Beads evenly spaced on the straight line between the two ends, at rest.
    pub fn straight(drone_p: &Vec3, attach_p: &Vec3, payload_attach: Vec3, n_beads: usize) -> Self {
        let n_seg = (n_beads + 1) as f64;
        let bead_p = (1..=n_beads)
            .map(|j| drone_p + (attach_p - drone_p) * (j as f64 / n_seg))
            .collect();
        Self { bead_p, bead_v: vec![Vec3::zeros(); n_beads], payload_attach, severed: false }
    }

    /// Scalar tension of the drone-side segment; zero once severed.
    pub fn drone_side_tension(&self, drone_p: &Vec3, drone_v: &Vec3, params: &BeadChainParams) -> f64 {
        if self.severed {
            return 0.0;
        }
        segment_force(drone_p, &self.bead_p[0], drone_v, &self.bead_v[0], params.k_s, params.c_s, params.segment_rest())
            .norm()
    }

    /// End-to-end chord between drone and payload attachment.
    pub fn chord(&self, drone_p: &Vec3, payload_p: &Vec3) -> f64 {
        (drone_p - (payload_p + self.payload_attach)).norm()
    }

    /// Forces on the drone and on the payload, and bead accelerations
    /// written into `bead_acc`.
    pub fn forces(
        &self,
        drone: (&Vec3, &Vec3),
        payload: (&Vec3, &Vec3),
        params: &BeadChainParams,
        g: f64,
        bead_acc: &mut [Vec3],
    ) -> (Vec3, Vec3) {
        chain_forces(&self.bead_p, &self.bead_v, self.severed, drone, (&(payload.0 + self.payload_attach), payload.1), params, g, bead_acc)
    }

    /// Stored elastic energy of all segments (tension-only springs).
    pub fn elastic_energy(&self, drone_p: &Vec3, payload_p: &Vec3, params: &BeadChainParams) -> f64 {
        if self.severed {
            return 0.0;
        }
        let rest = params.segment_rest();
        let end = payload_p + self.payload_attach;
        let mut prev = *drone_p;
        let mut e = 0.0;
        for p in self.bead_p.iter().chain(std::iter::once(&end)) {
            let stretch = ((p - prev).norm() - rest).max(0.0);
            e += 0.5 * params.k_s * stretch * stretch;
            prev = *p;
        }
        e
    }
}

/// Force evaluation on raw bead slices, shared with the integrator.
#[allow(clippy::too_many_arguments)]
pub(crate) fn chain_forces(
    bead_p: &[Vec3],
    bead_v: &[Vec3],
    severed: bool,
    drone: (&Vec3, &Vec3),
    end: (&Vec3, &Vec3),
    params: &BeadChainParams,
    g: f64,
    bead_acc: &mut [Vec3],
) -> (Vec3, Vec3) {
    let nb = bead_p.len();
    if severed {
        for a in bead_acc.iter_mut() {
            *a = Vec3::zeros();
        }
        return (Vec3::zeros(), Vec3::zeros());
    }
    let rest = params.segment_rest();
    let (k, c) = (params.k_s, params.c_s);
    let grav = if params.gravity { -g * E3 } else { Vec3::zeros() };
    for a in bead_acc.iter_mut() {
        *a = grav;
    }
    let inv_m = 1.0 / params.m_bead;
    // Segment 0: drone -> bead 0.
    let f0 = segment_force(drone.0, &bead_p[0], drone.1, &bead_v[0], k, c, rest);
    bead_acc[0] -= f0 * inv_m;
    for j in 0..nb - 1 {
        let f = segment_force(&bead_p[j], &bead_p[j + 1], &bead_v[j], &bead_v[j + 1], k, c, rest);
        bead_acc[j] += f * inv_m;
        bead_acc[j + 1] -= f * inv_m;
    }
    let fl = segment_force(&bead_p[nb - 1], end.0, &bead_v[nb - 1], end.1, k, c, rest);
    bead_acc[nb - 1] += fl * inv_m;
    (f0, -fl)
}

/// Result of comparing bead-chain tension against the lumped model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionFidelity {
    pub max_deviation: f64,
    pub taut_samples: usize,
    pub budget: f64,
    pub headroom: f64,
    pub pass: bool,
}

/// Maximum `|T_true − T_qs|` over samples where the lumped model is taut.
pub fn reduction_fidelity(t_true: &[f64], chord: &[f64], lumped: &LumpedCable, headroom: f64) -> ReductionFidelity {
    let mut max_dev: f64 = 0.0;
    let mut taut = 0;
    for (t, l) in t_true.iter().zip(chord) {
        if *l > lumped.rest_length {
            taut += 1;
            max_dev = max_dev.max((t - lumped.tension(*l)).abs());
        }
    }
    ReductionFidelity {
        max_deviation: max_dev,
        taut_samples: taut,
        budget: REDUCTION_BUDGET,
        headroom,
        pass: max_dev <= headroom * REDUCTION_BUDGET,
    }
}

/// Slack statistics over an evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackAudit {
    /// Longest slack run per rope (s).
    pub max_run: Vec<f64>,
    /// Slack fraction per rope over the samples where it was a survivor.
    pub duty: Vec<f64>,
    /// Total slack samples over total survivor samples.
    pub aggregate_duty: f64,
    pub run_limit: f64,
    pub duty_limit: f64,
}

impl SlackAudit {
    pub fn worst_run(&self) -> f64 {
        self.max_run.iter().copied().fold(0.0, f64::max)
    }
    pub fn h1a_pass(&self) -> bool {
        self.worst_run() <= self.run_limit
    }
    pub fn h1b_pass(&self) -> bool {
        self.aggregate_duty <= self.duty_limit
    }
}

/// Slack-run audit.  `tensions[r][k]` is the tension of rope `r` at sample
/// `k`; `active[r][k]` marks samples where the rope is a survivor and inside
/// the evaluation window.  Samples are spaced `dt` apart.
pub fn slack_audit(tensions: &[Vec<f64>], active: &[Vec<bool>], dt: f64, eps: f64) -> SlackAudit {
    let mut max_run = Vec::with_capacity(tensions.len());
    let mut duty = Vec::with_capacity(tensions.len());
    let (mut slack_total, mut active_total) = (0usize, 0usize);
    for (trace, mask) in tensions.iter().zip(active) {
        let (mut run, mut best, mut slack, mut n) = (0usize, 0usize, 0usize, 0usize);
        for (t, on) in trace.iter().zip(mask) {
            if !*on {
                run = 0;
                continue;
            }
            n += 1;
            if *t < eps {
                slack += 1;
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        max_run.push(best as f64 * dt);
        duty.push(if n > 0 { slack as f64 / n as f64 } else { 0.0 });
        slack_total += slack;
        active_total += n;
    }
    SlackAudit {
        max_run,
        duty,
        aggregate_duty: if active_total > 0 { slack_total as f64 / active_total as f64 } else { 0.0 },
        run_limit: SLACK_RUN_MAX,
        duty_limit: SLACK_DUTY_MAX,
    }
}

/// Per-rope deviation from the survivor mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryStats {
    pub rms: f64,
    pub p95: f64,
    pub peak: f64,
}

/// Asymmetry `ε_i = T_i − mean_{survivors} T` pooled over ropes and samples.
pub fn tension_asymmetry(tensions: &[Vec<f64>], active: &[Vec<bool>]) -> AsymmetryStats {
    let n = tensions.first().map_or(0, Vec::len);
    let mut dev = Vec::new();
    for k in 0..n {
        let members: Vec<usize> = (0..tensions.len()).filter(|&r| active[r][k]).collect();
        if members.is_empty() {
            continue;
        }
        let mean = members.iter().map(|&r| tensions[r][k]).sum::<f64>() / members.len() as f64;
        dev.extend(members.iter().map(|&r| (tensions[r][k] - mean).abs()));
    }
    if dev.is_empty() {
        return AsymmetryStats { rms: 0.0, p95: 0.0, peak: 0.0 };
    }
    let rms = (dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64).sqrt();
    let peak = dev.iter().copied().fold(0.0, f64::max);
    dev.sort_by(|a, b| a.total_cmp(b));
    let idx = ((0.95 * dev.len() as f64).ceil() as usize).clamp(1, dev.len()) - 1;
    AsymmetryStats { rms, p95: dev[idx], peak }
}
