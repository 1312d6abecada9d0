//! Post-run evaluation.
//!
//! Everything here is a pure function of a [`Trace`] plus the run's fault
//! list and a few constants, so stored traces can be re-scored without the
//! simulator.  Traces may be sampled at any uniform spacing; windows and
//! hold times are converted to sample counts from the spacing.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cables::{slack_audit, SLACK_EPS};
use crate::dynamics::FaultEvent;
use crate::error::{Error, Result};
use crate::math::Vec3;

pub const SCHEMA_VERSION: u32 = 1;

/// Per-drone columns of a trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DroneTrace {
    pub p: Vec<Vec3>,
    pub v: Vec<Vec3>,
    /// Roll, pitch, yaw.
    pub rpy: Vec<Vec3>,
    pub thrust: Vec<f64>,
    pub tension: Vec<f64>,
    /// Rope still attached.
    pub active: Vec<bool>,
    pub code: Vec<u8>,
    pub u_ad: Vec<f64>,
    pub wind: Vec<Vec3>,
}

/// Columnar time series of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub t: Vec<f64>,
    pub payload_p: Vec<Vec3>,
    pub payload_v: Vec<Vec3>,
    pub ref_p: Vec<Vec3>,
    pub ref_v: Vec<Vec3>,
    pub payload_wind: Vec<Vec3>,
    pub drones: Vec<DroneTrace>,
}

impl Trace {
    pub fn new(n_drones: usize) -> Self {
        Self { drones: vec![DroneTrace::default(); n_drones], ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sample spacing (assumed uniform).
    pub fn dt(&self) -> f64 {
        if self.t.len() < 2 {
            return 0.0;
        }
        (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64
    }

    /// Payload tracking error `p_L − p_L^d`.
    pub fn error(&self) -> Vec<Vec3> {
        self.payload_p.iter().zip(&self.ref_p).map(|(p, r)| p - r).collect()
    }

    /// Every `stride`-th sample.
    pub fn decimate(&self, stride: usize) -> Trace {
        let s = stride.max(1);
        let pick = |v: &Vec<Vec3>| v.iter().step_by(s).copied().collect::<Vec<_>>();
        Trace {
            t: self.t.iter().step_by(s).copied().collect(),
            payload_p: pick(&self.payload_p),
            payload_v: pick(&self.payload_v),
            ref_p: pick(&self.ref_p),
            ref_v: pick(&self.ref_v),
            payload_wind: pick(&self.payload_wind),
            drones: self
                .drones
                .iter()
                .map(|d| DroneTrace {
                    p: pick(&d.p),
                    v: pick(&d.v),
                    rpy: pick(&d.rpy),
                    thrust: d.thrust.iter().step_by(s).copied().collect(),
                    tension: d.tension.iter().step_by(s).copied().collect(),
                    active: d.active.iter().step_by(s).copied().collect(),
                    code: d.code.iter().step_by(s).copied().collect(),
                    u_ad: d.u_ad.iter().step_by(s).copied().collect(),
                    wind: pick(&d.wind),
                })
                .collect(),
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for (pre, _) in Self::payload_groups() {
            for ax in ["x", "y", "z"] {
                h.push(format!("{pre}_{ax}"));
            }
        }
        for i in 0..self.drones.len() {
            for g in ["p", "v", "wind"] {
                for ax in ["x", "y", "z"] {
                    h.push(format!("d{i}_{g}_{ax}"));
                }
            }
            for c in ["roll", "pitch", "yaw", "thrust", "tension", "active", "code", "u_ad"] {
                h.push(format!("d{i}_{c}"));
            }
        }
        h
    }

    fn payload_groups() -> [(&'static str, fn(&Trace) -> &Vec<Vec3>); 5] {
        [
            ("pl", |t| &t.payload_p),
            ("vl", |t| &t.payload_v),
            ("ref", |t| &t.ref_p),
            ("vref", |t| &t.ref_v),
            ("wl", |t| &t.payload_wind),
        ]
    }

    /// CSV with a `#schema_version=` comment line.  Floats use the shortest
    /// representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#schema_version={SCHEMA_VERSION}")?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        let mut row: Vec<String> = Vec::new();
        for k in 0..self.len() {
            row.clear();
            row.push(self.t[k].to_string());
            for (_, get) in Self::payload_groups() {
                row.extend(get(self)[k].iter().map(f64::to_string));
            }
            for d in &self.drones {
                for v in [&d.p[k], &d.v[k], &d.wind[k]] {
                    row.extend(v.iter().map(f64::to_string));
                }
                row.extend(d.rpy[k].iter().map(f64::to_string));
                row.push(d.thrust[k].to_string());
                row.push(d.tension[k].to_string());
                row.push(u8::from(d.active[k]).to_string());
                row.push(d.code[k].to_string());
                row.push(d.u_ad[k].to_string());
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Trace> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = rdr.headers()?.clone();
        let n_drones = headers.iter().filter(|h| h.ends_with("_tension")).count();
        let mut tr = Trace::new(n_drones);
        let expected = tr.header();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Config("trace header does not match schema".into()));
        }
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad trace value {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            let mut it = vals.into_iter();
            let mut next = || it.next().expect("row length checked by csv reader");
            tr.t.push(next());
            let v3 = |n: &mut dyn FnMut() -> f64| Vec3::new(n(), n(), n());
            tr.payload_p.push(v3(&mut next));
            tr.payload_v.push(v3(&mut next));
            tr.ref_p.push(v3(&mut next));
            tr.ref_v.push(v3(&mut next));
            tr.payload_wind.push(v3(&mut next));
            for d in tr.drones.iter_mut() {
                d.p.push(v3(&mut next));
                d.v.push(v3(&mut next));
                d.wind.push(v3(&mut next));
                d.rpy.push(v3(&mut next));
                d.thrust.push(next());
                d.tension.push(next());
                d.active.push(next() != 0.0);
                d.code.push(next() as u8);
                d.u_ad.push(next());
            }
        }
        Ok(tr)
    }
}

/// Constants the metrics need besides the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub window: (f64, f64),
    pub tau_pend: f64,
    pub recovery_threshold: f64,
    pub recovery_hold: f64,
    pub dc_window: f64,
    pub smoothing: f64,
    /// `P_v` of the altitude channel.
    pub p_v: [[f64; 2]; 2],
    pub f_max: f64,
    pub w_max: f64,
    pub thresholds: Thresholds,
    /// Ceiling for the "time over ceiling" column, when MPC is on.
    pub t_ceiling: Option<f64>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            window: (8.0, 30.0),
            tau_pend: 2.0 * std::f64::consts::PI * (1.25f64 / 9.81).sqrt(),
            recovery_threshold: 0.35,
            recovery_hold: 0.3,
            dc_window: 0.2,
            smoothing: 0.01,
            p_v: crate::analysis::lyap_solve(100.0, 24.0).expect("canonical gains are Hurwitz"),
            f_max: 150.0,
            w_max: 1.0,
            thresholds: Thresholds::default(),
            t_ceiling: None,
        }
    }
}

/// Pre-registered acceptance thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub rmse: f64,
    pub sag_mm: f64,
    pub tension: f64,
    pub h1a_ms: f64,
    pub h1b_pct: f64,
    pub h3_pct: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { rmse: 0.35, sag_mm: 100.0, tension: 120.0, h1a_ms: 40.0, h1b_pct: 2.5, h3_pct: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultMetrics {
    pub t_star: f64,
    pub drone: usize,
    pub peak_error_mm: f64,
    /// `None` when the error never re-enters the threshold.
    pub t_rec: Option<f64>,
    pub iae: f64,
    pub sag_mm: f64,
    pub chi_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub h1a_ms: f64,
    pub h1b_pct: f64,
    pub h3_pct: f64,
    pub h1a_pass: bool,
    pub h1b_pass: bool,
    pub h3_pass: bool,
}

impl GateReport {
    pub fn pass(&self) -> bool {
        self.h1a_pass && self.h1b_pass && self.h3_pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorAudit {
    pub max_ratio: Vec<f64>,
    /// Seconds above `0.9·f_max`, per drone.
    pub time_above_90: Vec<f64>,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub rmse_3d: f64,
    pub rmse_xy: f64,
    pub rmse_z: f64,
    /// Worst post-fault sag (mm); `None` without faults.
    pub peak_sag_mm: Option<f64>,
    /// Mean `z_ref − z_L` over the window (mm).
    pub cruise_sag_mm: f64,
    pub peak_tension: f64,
    pub faults: Vec<FaultMetrics>,
    /// Peak-excursion ratio per consecutive fault pair.
    pub rho_peak: Vec<Option<f64>>,
    /// Lyapunov-proxy ratio `V(t₂⁻)/V(t₁⁻)` per consecutive fault pair.
    pub rho_proxy: Vec<Option<f64>>,
    pub gates: GateReport,
    pub actuator: ActuatorAudit,
    pub wind_clip_fraction: f64,
    pub time_over_ceiling: Option<f64>,
    pub pass_rmse: bool,
    pub pass_sag: bool,
    pub pass_tension: bool,
}

impl RunMetrics {
    pub fn pass(&self) -> bool {
        self.pass_rmse && self.pass_sag && self.pass_tension && self.gates.pass()
    }
}

fn to_samples(seconds: f64, dt: f64) -> usize {
    if dt <= 0.0 {
        return 0;
    }
    (seconds / dt).round() as usize
}

/// Sample indices with `a ≤ t ≤ b`.
fn window_range(t: &[f64], a: f64, b: f64) -> std::ops::Range<usize> {
    let eps = 1e-9;
    let lo = t.partition_point(|&x| x < a - eps);
    let hi = t.partition_point(|&x| x <= b + eps);
    lo..hi.max(lo)
}

/// RMS of `‖e‖` over the samples in `[a, b]`.
pub fn rmse(t: &[f64], err: &[Vec3], a: f64, b: f64, proj: impl Fn(&Vec3) -> f64) -> f64 {
    let r = window_range(t, a, b);
    if r.is_empty() {
        return 0.0;
    }
    let n = r.len() as f64;
    (err[r].iter().map(|e| proj(e).powi(2)).sum::<f64>() / n).sqrt()
}

/// Time after `t_star` until `‖e‖ < threshold` holds for `hold` seconds.
pub fn recovery_time(t: &[f64], err_norm: &[f64], t_star: f64, threshold: f64, hold: f64) -> Option<f64> {
    let start = t.partition_point(|&x| x < t_star - 1e-9);
    let dt = if t.len() > 1 { t[1] - t[0] } else { return None };
    let need = to_samples(hold, dt);
    let mut run_start = None;
    for k in start..t.len() {
        if err_norm[k] < threshold {
            let s = *run_start.get_or_insert(k);
            if k - s >= need {
                return Some((t[s] - t_star).max(0.0));
            }
        } else {
            run_start = None;
        }
    }
    None
}

/// `∫‖e‖dt` over `[t_star, t_star + horizon]` (rectangle rule).
pub fn iae(t: &[f64], err_norm: &[f64], t_star: f64, horizon: f64) -> f64 {
    let r = window_range(t, t_star, t_star + horizon);
    if r.len() < 2 {
        return 0.0;
    }
    let dt = t[1] - t[0];
    // Half-open so that `horizon / dt` samples are counted.
    let n = to_samples(horizon, dt).min(r.len());
    err_norm[r.start..r.start + n].iter().sum::<f64>() * dt
}

/// Centered moving average over `width` samples (shrinking at the edges).
fn smooth(x: &[f64], width: usize) -> Vec<f64> {
    let h = width / 2;
    if h == 0 {
        return x.to_vec();
    }
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..x.len())
        .map(|i| {
            let a = i.saturating_sub(h);
            let b = (i + h + 1).min(x.len());
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// `V = ξᵀ P_v ξ` with `ξ = (e_z, ė_z)`; `ė_z` by central difference of the
/// smoothed error.
pub fn lyapunov_proxy(t: &[f64], e_z: &[f64], p_v: &[[f64; 2]; 2], smoothing: f64) -> Vec<f64> {
    let n = e_z.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let dt = t[1] - t[0];
    let s = smooth(e_z, to_samples(smoothing, dt));
    (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let d = (s[b] - s[a]) / (t[b] - t[a]);
            let e = e_z[k];
            p_v[0][0] * e * e + 2.0 * p_v[0][1] * e * d + p_v[1][1] * d * d
        })
        .collect()
}

/// Peak excursion of `e` over `[t_k, t_k + horizon]` relative to its mean
/// over the `dc` seconds ending at `t_k`.
pub fn peak_excursion(t: &[f64], e: &[f64], t_k: f64, horizon: f64, dc: f64) -> f64 {
    let pre = window_range(t, t_k - dc, t_k);
    let pre = pre.start..pre.end.saturating_sub(1).max(pre.start);
    let offset = if pre.is_empty() { 0.0 } else { e[pre.clone()].iter().sum::<f64>() / pre.len() as f64 };
    e[window_range(t, t_k, t_k + horizon)].iter().map(|x| (x - offset).abs()).fold(0.0, f64::max)
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0 && den.is_finite()).then(|| num / den)
}

/// Value just before `t_k`.
fn before(t: &[f64], x: &[f64], t_k: f64) -> f64 {
    let k = t.partition_point(|&s| s < t_k - 1e-9);
    x[k.saturating_sub(1)]
}

/// Slack-run, duty and active-set gates over the window, survivors only.
pub fn domain_gates(trace: &Trace, window: (f64, f64), thresholds: &Thresholds) -> GateReport {
    let r = window_range(&trace.t, window.0, window.1);
    let dt = trace.dt();
    let tensions: Vec<Vec<f64>> = trace.drones.iter().map(|d| d.tension[r.clone()].to_vec()).collect();
    let active: Vec<Vec<bool>> = trace.drones.iter().map(|d| d.active[r.clone()].to_vec()).collect();
    let slack = slack_audit(&tensions, &active, dt, SLACK_EPS);
    let (mut changes, mut total) = (0usize, 0usize);
    for d in &trace.drones {
        for k in r.clone().skip(1) {
            if d.active[k] && d.active[k - 1] {
                total += 1;
                changes += usize::from(d.code[k] != d.code[k - 1]);
            }
        }
    }
    let h1a_ms = slack.worst_run() * 1e3;
    let h1b_pct = slack.aggregate_duty * 100.0;
    let h3_pct = if total > 0 { 100.0 * changes as f64 / total as f64 } else { 0.0 };
    GateReport {
        h1a_ms,
        h1b_pct,
        h3_pct,
        h1a_pass: h1a_ms <= thresholds.h1a_ms + 1e-9,
        h1b_pass: h1b_pct <= thresholds.h1b_pct,
        h3_pass: h3_pct <= thresholds.h3_pct,
    }
}

pub fn actuator_audit(trace: &Trace, f_max: f64) -> ActuatorAudit {
    let dt = trace.dt();
    let max_ratio: Vec<f64> = trace.drones.iter().map(|d| d.thrust.iter().fold(0.0, |m, f| f64::max(m, f / f_max))).collect();
    let time_above_90 = trace.drones.iter().map(|d| d.thrust.iter().filter(|&&f| f > 0.9 * f_max).count() as f64 * dt).collect();
    let saturated = max_ratio.iter().any(|&r| r >= 1.0);
    ActuatorAudit { max_ratio, time_above_90, saturated }
}

/// Scores one run.
pub fn evaluate(trace: &Trace, faults: &[FaultEvent], s: &MetricSettings) -> RunMetrics {
    let t = &trace.t;
    let err = trace.error();
    let norm: Vec<f64> = err.iter().map(|e| e.norm()).collect();
    let ez: Vec<f64> = err.iter().map(|e| e.z).collect();
    let (a, b) = s.window;
    let rmse_3d = rmse(t, &err, a, b, |e| e.norm());
    let rmse_xy = rmse(t, &err, a, b, |e| (e.x * e.x + e.y * e.y).sqrt());
    let rmse_z = rmse(t, &err, a, b, |e| e.z);
    let w = window_range(t, a, b);
    let cruise_sag_mm = if w.is_empty() { 0.0 } else { -1e3 * ez[w.clone()].iter().sum::<f64>() / w.len() as f64 };

    let peak_tension = trace
        .drones
        .iter()
        .flat_map(|d| d.tension[w.clone()].iter().zip(&d.active[w.clone()]).filter(|x| *x.1).map(|x| *x.0))
        .fold(0.0, f64::max);

    let v = lyapunov_proxy(t, &ez, &s.p_v, s.smoothing);
    let end = t.last().copied().unwrap_or(0.0);
    let mut fm = Vec::with_capacity(faults.len());
    for (k, f) in faults.iter().enumerate() {
        let gap = faults.get(k + 1).map_or(end - f.t_star, |n| n.t_star - f.t_star);
        let horizon = s.tau_pend.min(gap);
        let r = window_range(t, f.t_star, f.t_star + horizon);
        let peak = norm[r.clone()].iter().copied().fold(0.0, f64::max);
        let sag_r = window_range(t, f.t_star, f.t_star + s.tau_pend);
        let sag = ez[sag_r].iter().map(|e| (-e).max(0.0)).fold(0.0, f64::max);
        let v0 = before(t, &v, f.t_star);
        let chi = v[r].iter().map(|x| x - v0).fold(0.0, f64::max);
        fm.push(FaultMetrics {
            t_star: f.t_star,
            drone: f.drone,
            peak_error_mm: 1e3 * peak,
            t_rec: recovery_time(t, &norm, f.t_star, s.recovery_threshold, s.recovery_hold),
            iae: iae(t, &norm, f.t_star, horizon),
            sag_mm: 1e3 * sag,
            chi_hat: chi,
        });
    }
    let mut rho_peak = vec![];
    let mut rho_proxy = vec![];
    for k in 1..faults.len() {
        let (t1, t2) = (faults[k - 1].t_star, faults[k].t_star);
        let h1 = s.tau_pend.min(t2 - t1);
        let h2 = s.tau_pend.min(faults.get(k + 1).map_or(end, |f| f.t_star) - t2);
        let e1 = peak_excursion(t, &ez, t1, h1, s.dc_window);
        let e2 = peak_excursion(t, &ez, t2, h2, s.dc_window);
        rho_peak.push(ratio(e2, e1));
        rho_proxy.push(ratio(before(t, &v, t2), before(t, &v, t1)));
    }

    let gates = domain_gates(trace, s.window, &s.thresholds);
    let actuator = actuator_audit(trace, s.f_max);
    let clip_tol = s.w_max * (1.0 - 1e-9);
    let (mut clipped, mut bodies) = (0usize, 0usize);
    for k in 0..trace.len() {
        for f in trace.drones.iter().map(|d| &d.wind[k]).chain(std::iter::once(&trace.payload_wind[k])) {
            bodies += 1;
            clipped += usize::from(f.norm() >= clip_tol);
        }
    }
    let dt = trace.dt();
    let time_over_ceiling = s.t_ceiling.map(|c| {
        let over = (0..trace.len())
            .filter(|&k| trace.drones.iter().any(|d| d.active[k] && d.tension[k] > c))
            .count();
        over as f64 * dt / (trace.len() as f64 * dt).max(f64::MIN_POSITIVE)
    });
    let peak_sag_mm = fm.iter().map(|f| f.sag_mm).reduce(f64::max);
    RunMetrics {
        schema_version: SCHEMA_VERSION,
        rmse_3d,
        rmse_xy,
        rmse_z,
        peak_sag_mm,
        cruise_sag_mm,
        peak_tension,
        faults: fm,
        rho_peak,
        rho_proxy,
        gates,
        actuator,
        wind_clip_fraction: if bodies > 0 { clipped as f64 / bodies as f64 } else { 0.0 },
        time_over_ceiling,
        pass_rmse: rmse_3d <= s.thresholds.rmse,
        pass_sag: peak_sag_mm.map_or(true, |x| x <= s.thresholds.sag_mm),
        pass_tension: peak_tension <= s.thresholds.tension,
    }
}
