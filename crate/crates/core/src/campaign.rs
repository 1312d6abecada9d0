//! Run configuration, the simulation loop, artifact I/O and the campaign
//! matrix.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::lyap_solve;
use crate::controller::{ControllerParams, DroneController, ExtensionConfig, InfoSet, Lemniscate, ModeFlags};
use crate::dynamics::{apply_fault, Actuation, FaultEvent, FaultSchedule, Integrator, SimParams, WindForces, WorldState};
use crate::error::{Error, Result};
use crate::extensions::reshape::ReshapeBus;
use crate::math::{euler_zyx, Vec3};
use crate::metrics::{evaluate, MetricSettings, RunMetrics, Thresholds, Trace};
use crate::qpsolver::QpStatus;
use crate::wind::{body_force, DrydenGust, DrydenParams};

/// Everything that defines one run.  Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tag: String,
    /// Free-form sweep labels carried into the summary.
    pub sweep: BTreeMap<String, f64>,
    pub sim: SimParams,
    pub controller: ControllerParams,
    pub modes: ModeFlags,
    pub faults: FaultSchedule,
    pub wind: DrydenParams,
    pub reference: Lemniscate,
    pub extensions: ExtensionConfig,
    pub thresholds: Thresholds,
    /// Stored trace keeps every `trace_stride`-th tick.
    pub trace_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tag: "custom".into(),
            sweep: BTreeMap::new(),
            sim: SimParams::default(),
            controller: ControllerParams::default(),
            modes: ModeFlags::default(),
            faults: FaultSchedule::default(),
            wind: DrydenParams::default(),
            reference: Lemniscate::default(),
            extensions: ExtensionConfig::default(),
            thresholds: Thresholds::default(),
            trace_stride: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let report = self.faults.validate(&self.sim);
        if !report.is_valid() {
            return Err(Error::Schedule(format!("{:?}", report.violations)));
        }
        lyap_solve(self.controller.kp_z, self.controller.kd_z)?;
        lyap_solve(self.controller.kp_xy, self.controller.kd_xy)?;
        if self.trace_stride == 0 {
            return Err(Error::Config("trace_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Metric constants implied by this configuration.
    pub fn metric_settings(&self) -> Result<MetricSettings> {
        Ok(MetricSettings {
            tau_pend: self.sim.tau_pend(),
            p_v: lyap_solve(self.controller.kp_z, self.controller.kd_z)?,
            f_max: self.sim.f_max,
            w_max: self.wind.w_max,
            thresholds: self.thresholds,
            t_ceiling: self.modes.mpc.then_some(self.extensions.mpc.t_max),
            ..MetricSettings::default()
        })
    }
}

/// MPC solver bookkeeping over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MpcStats {
    pub solves: u64,
    pub solved: u64,
    pub max_iterations: usize,
    pub max_slack: f64,
    pub slack_ticks: u64,
}

impl MpcStats {
    pub fn all_solved(&self) -> bool {
        self.solves == self.solved
    }
}

/// Outcome of one run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: RunConfig,
    /// Full-rate trace (may be truncated on divergence).
    pub trace: Trace,
    pub metrics: RunMetrics,
    pub mpc: MpcStats,
    pub broadcast_bits: u64,
    pub l1_projection_hits: u64,
    pub failure: Option<String>,
}

/// Runs one configuration.  Divergence is reported in `failure` together
/// with the partial trace; only invalid configurations return `Err`.
pub fn simulate(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let sim = &cfg.sim;
    let chain = sim.chain();
    let n = sim.n_drones;
    let steps = (sim.duration / sim.dt).round() as u64;
    let fault_ticks = cfg.faults.event_ticks(sim.dt);

    let mut world = WorldState::initial(sim, cfg.reference.sample(0.0).p);
    let mut ctl: Vec<DroneController> = (0..n)
        .map(|i| DroneController::new(i, sim, &cfg.controller, cfg.modes, cfg.reference, &cfg.extensions))
        .collect();
    let mut gust = DrydenGust::new(cfg.wind.clone(), sim.dt);
    let mut integrator = Integrator::new();
    let mut bus = ReshapeBus::default();
    let mut trace = Trace::new(n);
    let mut mpc = MpcStats::default();
    let mut act = vec![Actuation::default(); n];
    let mut failure = None;

    for k in 0..=steps {
        let t = k as f64 * sim.dt;
        world.t = t;
        for (ev, &tick) in cfg.faults.events.iter().zip(&fault_ticks) {
            if tick == k {
                apply_fault(&mut world, ev)?;
                log::debug!("{}: rope {} severed at t = {t:.3}", cfg.tag, ev.drone);
            }
        }

        let gv = gust.velocity();
        let mut wind = WindForces::calm(n);
        if cfg.wind.enabled {
            for i in 0..n {
                wind.drones[i] = body_force(&gv, &world.drones[i].v, &cfg.wind).0;
            }
            wind.payload = body_force(&gv, &world.payload.v, &cfg.wind).0;
        }

        let inbox = bus.inbox(k);
        let reference = cfg.reference.sample(t);
        trace.t.push(t);
        trace.payload_p.push(world.payload.p);
        trace.payload_v.push(world.payload.v);
        trace.ref_p.push(reference.p);
        trace.ref_v.push(reference.v);
        trace.payload_wind.push(wind.payload);
        for i in 0..n {
            let info = InfoSet::observe(&world, i, &chain);
            let out = ctl[i].tick(&info, &inbox);
            if let Some(mut m) = out.message {
                m.sent_tick = k;
                bus.post(m);
            }
            if let Some(status) = out.debug.mpc_status {
                mpc.solves += 1;
                mpc.solved += u64::from(status == QpStatus::Solved);
                mpc.max_iterations = mpc.max_iterations.max(out.debug.mpc_iterations);
                mpc.max_slack = mpc.max_slack.max(out.debug.mpc_slack);
                mpc.slack_ticks += u64::from(out.debug.mpc_slack > 1e-6);
            }
            act[i] = out.actuation();
            let d = &world.drones[i];
            let (roll, pitch, yaw) = euler_zyx(&d.r);
            let dt = &mut trace.drones[i];
            dt.p.push(d.p);
            dt.v.push(d.v);
            dt.rpy.push(Vec3::new(roll, pitch, yaw));
            dt.thrust.push(out.f);
            dt.tension.push(info.tension());
            dt.active.push(!world.ropes[i].severed);
            dt.code.push(out.debug.code);
            dt.u_ad.push(out.debug.u_ad);
            dt.wind.push(wind.drones[i]);
        }

        if k == steps {
            break;
        }
        if let Err(e) = integrator.step(&mut world, &act, &wind, sim.dt, sim) {
            log::warn!("{}: {e}", cfg.tag);
            failure = Some(e.to_string());
            break;
        }
        gust.advance();
    }

    let metrics = evaluate(&trace, &cfg.faults.events, &cfg.metric_settings()?);
    let l1_projection_hits = ctl.iter().filter_map(|c| c.l1().map(|l| l.projection_hits())).sum();
    Ok(RunArtifacts {
        config: cfg.clone(),
        trace,
        metrics,
        mpc,
        broadcast_bits: bus.total_bits(),
        l1_projection_hits,
        failure,
    })
}

/// Compact, serialisable run outcome (no trace).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub group: String,
    pub tag: String,
    pub sweep: BTreeMap<String, f64>,
    pub metrics: Option<RunMetrics>,
    pub mpc: MpcStats,
    pub broadcast_bits: u64,
    pub l1_projection_hits: u64,
    pub failure: Option<String>,
    /// SHA-256 over the stored trace CSV and metrics JSON.
    pub hash: String,
}

impl RunRecord {
    fn from_artifacts(id: &str, group: &str, a: &RunArtifacts, hash: String) -> Self {
        Self {
            id: id.into(),
            group: group.into(),
            tag: a.config.tag.clone(),
            sweep: a.config.sweep.clone(),
            metrics: Some(a.metrics.clone()),
            mpc: a.mpc,
            broadcast_bits: a.broadcast_bits,
            l1_projection_hits: a.l1_projection_hits,
            failure: a.failure.clone(),
            hash,
        }
    }

    pub fn ok(&self) -> bool {
        self.failure.is_none() && self.metrics.is_some()
    }
}

/// Serialises the stored trace and metrics and returns their joint hash.
pub fn artifact_bytes(a: &RunArtifacts, full_rate: bool) -> Result<(Vec<u8>, Vec<u8>, String)> {
    let stride = if full_rate { 1 } else { a.config.trace_stride };
    let mut csv = Vec::new();
    if stride == 1 {
        a.trace.write_csv(&mut csv)?;
    } else {
        a.trace.decimate(stride).write_csv(&mut csv)?;
    }
    let json = serde_json::to_vec_pretty(&a.metrics)?;
    let mut h = Sha256::new();
    h.update(&csv);
    h.update(&json);
    Ok((csv, json, hex::encode(h.finalize())))
}

/// Writes `config.toml`, `trace.csv`, `metrics.json` and `record.json`.
pub fn write_run(dir: &Path, id: &str, group: &str, a: &RunArtifacts, full_rate: bool) -> Result<RunRecord> {
    fs::create_dir_all(dir)?;
    let (csv, json, hash) = artifact_bytes(a, full_rate)?;
    fs::write(dir.join("config.toml"), a.config.to_toml()?)?;
    fs::write(dir.join("trace.csv"), csv)?;
    fs::write(dir.join("metrics.json"), json)?;
    let rec = RunRecord::from_artifacts(id, group, a, hash);
    fs::write(dir.join("record.json"), serde_json::to_vec_pretty(&rec)?)?;
    Ok(rec)
}

/// Re-scores a stored run directory from its config and trace.
pub fn rescore(dir: &Path) -> Result<RunMetrics> {
    let cfg = RunConfig::from_toml(&fs::read_to_string(dir.join("config.toml"))?)?;
    let trace = Trace::read_csv(fs::File::open(dir.join("trace.csv"))?)?;
    Ok(evaluate(&trace, &cfg.faults.events, &cfg.metric_settings()?))
}

// ---------------------------------------------------------------------------
// Campaign matrix.

pub const GROUPS: [&str; 8] = ["V", "P2-A", "P2-B", "P2-C", "P2-D", "dwell", "gamma", "probe"];

fn ev(t_star: f64, drone: usize) -> FaultEvent {
    FaultEvent { t_star, drone }
}

/// Capability variant `V1`–`V6`.
pub fn variant(tag: &str) -> Result<RunConfig> {
    let mut c = RunConfig { tag: tag.into(), ..RunConfig::default() };
    match tag {
        "V1" => c.wind.enabled = false,
        "V2" => {}
        "V3" => c.faults = FaultSchedule::new(vec![ev(12.0, 0)]),
        "V4" | "V6" => c.faults = FaultSchedule::new(vec![ev(12.0, 0), ev(17.0, 2)]),
        "V5" => c.faults = FaultSchedule::new(vec![ev(12.0, 0), ev(22.0, 2)]),
        _ => return Err(Error::Config(format!("unknown variant {tag}"))),
    }
    if tag == "V6" {
        c.modes = ModeFlags { ff: true, l1: true, mpc: true, reshape: true };
        c.extensions.mpc.horizon = 10;
    }
    Ok(c)
}

/// Fault-free L1 rescue configuration: light payload, no feed-forward.
pub fn rescue(m_payload: f64, gamma: f64) -> RunConfig {
    let mut c = RunConfig { tag: "rescue".into(), ..RunConfig::default() };
    c.wind.enabled = false;
    c.sim.m_payload = m_payload;
    c.modes = ModeFlags { ff: false, l1: true, mpc: false, reshape: false };
    c.extensions.l1.gamma = gamma;
    c
}

/// One entry of the campaign.
#[derive(Debug, Clone)]
pub struct CampaignRun {
    pub id: String,
    pub group: String,
    pub config: RunConfig,
}

fn entry(id: impl Into<String>, group: &str, mut config: RunConfig, sweep: &[(&str, f64)]) -> CampaignRun {
    for (k, v) in sweep {
        config.sweep.insert((*k).to_string(), *v);
    }
    CampaignRun { id: id.into(), group: group.into(), config }
}

pub const MASS_SWEEP: [f64; 4] = [2.5, 3.0, 3.5, 3.9];
pub const CEILING_SWEEP: [f64; 5] = [60.0, 70.0, 80.0, 90.0, 100.0];
pub const DWELL_SWEEP: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0];
pub const GAMMA_SWEEP: [f64; 6] = [500.0, 2000.0, 10_000.0, 30_000.0, 50_000.0, 80_000.0];
pub const PERIOD_SWEEP: [f64; 3] = [8.0, 10.0, 12.0];

/// The full matrix, optionally restricted to some groups.
pub fn matrix(groups: Option<&[String]>) -> Result<Vec<CampaignRun>> {
    let want = |g: &str| groups.map_or(true, |gs| gs.iter().any(|x| x == g));
    let mut runs = Vec::new();
    if want("V") {
        for tag in ["V1", "V2", "V3", "V4", "V5", "V6"] {
            runs.push(entry(tag, "V", variant(tag)?, &[]));
        }
    }
    if want("P2-A") {
        for tag in ["V3", "V4", "V5"] {
            let mut c = variant(tag)?;
            c.modes.ff = false;
            runs.push(entry(format!("P2-A/{tag}-ff-off"), "P2-A", c, &[]));
        }
    }
    if want("P2-B") {
        for m in MASS_SWEEP {
            for (mode, ff, l1) in [("ff-on", true, false), ("ff-off", false, false), ("ff-off-l1", false, true)] {
                let mut c = rescue(m, 2000.0);
                c.tag = "P2-B".into();
                c.modes.ff = ff;
                c.modes.l1 = l1;
                runs.push(entry(format!("P2-B/m{m}-{mode}"), "P2-B", c, &[("m_payload", m), ("ff", f64::from(u8::from(ff))), ("l1", f64::from(u8::from(l1)))]));
            }
        }
    }
    if want("P2-C") {
        for tm in CEILING_SWEEP {
            let mut c = variant("V4")?;
            c.tag = "P2-C".into();
            c.modes.mpc = true;
            c.extensions.mpc.horizon = 10;
            c.extensions.mpc.t_max = tm;
            runs.push(entry(format!("P2-C/tmax{tm}"), "P2-C", c, &[("t_max", tm)]));
        }
    }
    if want("P2-D") {
        for period in PERIOD_SWEEP {
            for reshape in [false, true] {
                let mut c = variant("V4")?;
                c.tag = "P2-D".into();
                c.reference.period = period;
                c.modes.reshape = reshape;
                let name = if reshape { "reshape" } else { "baseline" };
                runs.push(entry(format!("P2-D/T{period}-{name}"), "P2-D", c, &[("t_ref", period), ("reshape", f64::from(u8::from(reshape)))]));
            }
        }
    }
    if want("probe") {
        for reshape in [false, true] {
            let mut c = variant("V4")?;
            c.tag = "probe".into();
            c.reference.period = 6.0;
            c.modes.reshape = reshape;
            let name = if reshape { "reshape" } else { "baseline" };
            runs.push(entry(format!("probe/T6-{name}"), "probe", c, &[("t_ref", 6.0), ("reshape", f64::from(u8::from(reshape)))]));
        }
    }
    if want("dwell") {
        for r in DWELL_SWEEP {
            let mut c = variant("V4")?;
            c.tag = "dwell".into();
            let tp = c.sim.tau_pend();
            c.faults = FaultSchedule { events: vec![ev(12.0, 0), ev(12.0 + r * tp, 2)], subthreshold: r < 1.0 };
            runs.push(entry(format!("dwell/r{r}"), "dwell", c, &[("dwell_ratio", r)]));
        }
    }
    if want("gamma") {
        for g in GAMMA_SWEEP {
            let mut c = rescue(3.9, g);
            c.tag = "gamma".into();
            runs.push(entry(format!("gamma/g{g}"), "gamma", c, &[("gamma", g)]));
        }
    }
    Ok(runs)
}

/// Consolidated campaign output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub schema_version: u32,
    pub runs: Vec<RunRecord>,
}

impl CampaignSummary {
    pub fn get(&self, id: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn metrics(&self, id: &str) -> Option<&RunMetrics> {
        self.get(id).and_then(|r| r.metrics.as_ref())
    }

    pub fn group(&self, group: &str) -> impl Iterator<Item = &RunRecord> {
        let g = group.to_string();
        self.runs.iter().filter(move |r| r.group == g)
    }

    pub fn any_failure(&self) -> bool {
        self.runs.iter().any(|r| !r.ok())
    }

    /// Human-readable tables.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let fmt_opt = |x: Option<f64>| x.map_or("—".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(s, "Performance (window [8, 30] s)");
        let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8} {:>8} {:>5}", "run", "rmse", "rmse_xy", "sag[mm]", "T_pk[N]", "H1a[ms]", "H1b[%]", "H3[%]", "pass");
        for r in &self.runs {
            match &r.metrics {
                Some(m) => {
                    let _ = writeln!(
                        s,
                        "{:<24} {:>8.3} {:>8.3} {:>9} {:>9.2} {:>8.1} {:>8.2} {:>8.3} {:>5}",
                        r.id,
                        m.rmse_3d,
                        m.rmse_xy,
                        m.peak_sag_mm.map_or("—".into(), |v| format!("{v:.1}")),
                        m.peak_tension,
                        m.gates.h1a_ms,
                        m.gates.h1b_pct,
                        m.gates.h3_pct,
                        if m.pass() { "yes" } else { "no" }
                    );
                }
                None => {
                    let _ = writeln!(s, "{:<24} failed: {}", r.id, r.failure.clone().unwrap_or_default());
                }
            }
        }
        let _ = writeln!(s, "\nRecovery");
        for r in &self.runs {
            if let Some(m) = &r.metrics {
                for f in &m.faults {
                    let _ = writeln!(
                        s,
                        "{:<24} t*={:>5.2} drone {} peak {:>6.1} mm  t_rec {}  IAE {:.3}  sag {:.1} mm",
                        r.id,
                        f.t_star,
                        f.drone,
                        f.peak_error_mm,
                        fmt_opt(f.t_rec),
                        f.iae,
                        f.sag_mm
                    );
                }
                for (a, b) in m.rho_peak.iter().zip(&m.rho_proxy) {
                    let _ = writeln!(s, "{:<24} rho_peak {}  rho_proxy {}", r.id, fmt_opt(*a), fmt_opt(*b));
                }
            }
        }
        let _ = writeln!(s, "\nFeed-forward ablation");
        for tag in ["V3", "V4", "V5"] {
            if let (Some(on), Some(off)) = (self.metrics(tag), self.metrics(&format!("P2-A/{tag}-ff-off"))) {
                let _ = writeln!(
                    s,
                    "{tag}: rmse {:.3} → {:.3} ({:+.1}%), sag {:.1} → {:.1} mm (×{:.2})",
                    on.rmse_3d,
                    off.rmse_3d,
                    100.0 * (off.rmse_3d / on.rmse_3d - 1.0),
                    on.peak_sag_mm.unwrap_or(0.0),
                    off.peak_sag_mm.unwrap_or(0.0),
                    off.peak_sag_mm.unwrap_or(0.0) / on.peak_sag_mm.unwrap_or(f64::NAN)
                );
            }
        }
        let _ = writeln!(s, "\nCeiling sweep");
        for r in self.group("P2-C") {
            if let Some(m) = &r.metrics {
                let _ = writeln!(
                    s,
                    "T_max {:>5.0}: peak {:.2} N, time over ceiling {:.4}, slack ticks {}, all solved {}",
                    r.sweep.get("t_max").copied().unwrap_or(f64::NAN),
                    m.peak_tension,
                    m.time_over_ceiling.unwrap_or(0.0),
                    r.mpc.slack_ticks,
                    r.mpc.all_solved()
                );
            }
        }
        s
    }
}

/// Runs `runs` in parallel.  When `out` is given every run is written to
/// `out/<id>/` and the summary to `out/summary.json`.
pub fn run_campaign(runs: &[CampaignRun], out: Option<&Path>, full_rate: bool) -> Result<CampaignSummary> {
    let records: Vec<RunRecord> = runs
        .par_iter()
        .map(|r| {
            let result = simulate(&r.config).and_then(|a| match out {
                Some(dir) => write_run(&run_dir(dir, &r.id), &r.id, &r.group, &a, full_rate),
                None => artifact_bytes(&a, full_rate).map(|(_, _, h)| RunRecord::from_artifacts(&r.id, &r.group, &a, h)),
            });
            result.unwrap_or_else(|e| RunRecord {
                id: r.id.clone(),
                group: r.group.clone(),
                tag: r.config.tag.clone(),
                sweep: r.config.sweep.clone(),
                metrics: None,
                mpc: MpcStats::default(),
                broadcast_bits: 0,
                l1_projection_hits: 0,
                failure: Some(e.to_string()),
                hash: String::new(),
            })
        })
        .collect();
    let summary = CampaignSummary { schema_version: crate::metrics::SCHEMA_VERSION, runs: records };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
        fs::write(dir.join("summary.txt"), summary.render())?;
    }
    Ok(summary)
}

fn run_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id.replace('/', "_"))
}
