//! Receding-horizon replacement for the single-step projection, with a
//! soft tension ceiling.
//!
//! Decision vector `[a_0 … a_{N−1}, s_0 … s_{N−1}]` (accelerations then
//! slacks).  Stage cost `w_t‖a_k − â_k‖² + w_e‖a_k‖²` plus `w_s Σ s_k`.
//! Targets `â_k` come from a ZOH roll-out of the slot error under the
//! nominal projected PD law.  Tension is predicted by chord linearisation:
//! the chord rate measured now (from the drone's own tension rate) is held
//! over the horizon, and deviations of the drone's vertical acceleration
//! from the nominal roll-out add to it.  Each row `T̂_{k+1} ≤ T_max + s_k`
//! is always satisfiable through its slack.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{accel_box, active_code, qp_project, ControllerParams};
use crate::math::Vec3;
use crate::qpsolver::{QpProblem, QpSettings, QpSolver, QpStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub t_max: f64,
    pub w_s: f64,
    /// Nominal effective rope stiffness (N/m).
    pub k_eff: f64,
    /// Multiplier on `k_eff` inside the prediction model (1 = no mismatch).
    pub model_scale: f64,
    /// Window of the tension-rate finite difference (s).
    pub rate_window: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { horizon: 5, dt: 0.01, t_max: 100.0, w_s: 1e4, k_eff: 2777.8, model_scale: 1.0, rate_window: 0.01 }
    }
}

/// Result of one MPC tick.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    pub a0: Vec3,
    pub code: u8,
    /// First-step slack `s_0` (N).
    pub slack: f64,
    pub slack_max: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Predicted tensions `T̂_1 … T̂_N` at the solution.
    pub t_hat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MpcController {
    cfg: MpcConfig,
    solver: Option<QpSolver>,
    history: VecDeque<(f64, f64)>,
    last_x: Option<DVector<f64>>,
    a_rows: DMatrix<f64>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig) -> Self {
        let np = cfg.horizon.max(1);
        let n = 4 * np;
        let km = cfg.k_eff * cfg.model_scale;
        let mut a = DMatrix::zeros(np, n);
        for k in 0..np {
            for j in 0..k {
                a[(k, 3 * j + 2)] = km * cfg.dt * cfg.dt * (k - j) as f64;
            }
            a[(k, 3 * np + k)] = -1.0;
        }
        Self { cfg, solver: None, history: VecDeque::new(), last_x: None, a_rows: a }
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    /// Own-tension rate from a finite difference over `rate_window`.
    fn tension_rate(&mut self, t: f64, tension: f64) -> f64 {
        self.history.push_back((t, tension));
        while self.history.len() > 2 && t - self.history[1].0 >= self.cfg.rate_window - 1e-12 {
            self.history.pop_front();
        }
        let (t0, v0) = self.history[0];
        if t - t0 > 1e-12 {
            (tension - v0) / (t - t0)
        } else {
            0.0
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        t: f64,
        tension: f64,
        e_p: &Vec3,
        e_v: &Vec3,
        a_target: &Vec3,
        a_ref: Vec3,
        t_ff: f64,
        c: &ControllerParams,
    ) -> MpcStep {
        let cfg = self.cfg.clone();
        let np = cfg.horizon.max(1);
        let n = 4 * np;
        let dt = cfg.dt;
        let km = cfg.k_eff * cfg.model_scale;
        let chord_rate = self.tension_rate(t, tension) / cfg.k_eff;

        let kp = Vec3::new(c.kp_xy, c.kp_xy, c.kp_z);
        let kd = Vec3::new(c.kd_xy, c.kd_xy, c.kd_z);
        let offset = a_target - (kp.component_mul(e_p) + kd.component_mul(e_v));
        let (lo, hi) = accel_box(t_ff, c);

        // Nominal roll-out.
        let mut targets = Vec::with_capacity(np);
        let mut nominal = Vec::with_capacity(np);
        let (mut e, mut ed) = (*e_p, *e_v);
        for k in 0..np {
            let at = if k == 0 { *a_target } else { kp.component_mul(&e) + kd.component_mul(&ed) + offset };
            let (an, _) = qp_project(&at, t_ff, c);
            targets.push(at);
            nominal.push(an);
            let rel = a_ref - an;
            e += dt * ed + 0.5 * dt * dt * rel;
            ed += dt * rel;
        }

        let mut q = DVector::zeros(n);
        let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(n, f64::INFINITY);
        for k in 0..np {
            for ax in 0..3 {
                q[3 * k + ax] = -2.0 * c.w_t * targets[k][ax];
                lower[3 * k + ax] = lo[ax];
                upper[3 * k + ax] = hi[ax];
            }
            q[3 * np + k] = cfg.w_s;
            lower[3 * np + k] = 0.0;
        }
        let mut b = DVector::zeros(np);
        for k in 0..np {
            let drift = tension + km * dt * (k + 1) as f64 * chord_rate;
            let nominal_term: f64 = (0..k).map(|j| self.a_rows[(k, 3 * j + 2)] * nominal[j].z).sum();
            b[k] = cfg.t_max - drift + nominal_term;
        }

        let solver = match self.solver.as_mut() {
            Some(s) => {
                s.update(&q, &b, &lower, &upper).expect("MPC dimensions are fixed");
                s
            }
            None => {
                let mut p = DMatrix::zeros(n, n);
                for i in 0..3 * np {
                    p[(i, i)] = c.w_t + c.w_e;
                }
                let prob = QpProblem { p, q, a: self.a_rows.clone(), b: b.clone(), lower, upper };
                self.solver.insert(QpSolver::new(&prob, QpSettings::default()).expect("MPC problem is well formed"))
            }
        };
        if let Some(x) = &self.last_x {
            // Shift the previous plan by one step.
            let mut w = x.clone();
            for k in 0..np - 1 {
                for ax in 0..3 {
                    w[3 * k + ax] = x[3 * (k + 1) + ax];
                }
            }
            solver.warm_start(&w);
        }
        let sol = solver.solve().expect("MPC solve");
        let x = sol.x.clone();
        let a0 = Vec3::new(x[0], x[1], x[2]).zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
        let slacks: Vec<f64> = (0..np).map(|k| x[3 * np + k].max(0.0)).collect();
        let t_hat = (0..np)
            .map(|k| {
                let lin: f64 = (0..k).map(|j| self.a_rows[(k, 3 * j + 2)] * (x[3 * j + 2] - nominal[j].z)).sum();
                (tension + km * dt * (k + 1) as f64 * chord_rate + lin).max(0.0)
            })
            .collect();
        self.last_x = Some(x);
        MpcStep {
            a0,
            code: active_code(&a0, &lo, &hi),
            slack: slacks[0],
            slack_max: slacks.iter().cloned().fold(0.0, f64::max),
            status: sol.status,
            iterations: sol.iterations,
            t_hat,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ControllerParams {
        ControllerParams::default()
    }

    fn steady(mpc: &mut MpcController, tension: f64, ticks: usize, target: Vec3) -> MpcStep {
        let c = params();
        let mut last = None;
        for k in 0..ticks {
            last = Some(mpc.step(k as f64 * 1e-3, tension, &Vec3::zeros(), &Vec3::zeros(), &target, Vec3::zeros(), tension, &c));
        }
        last.unwrap()
    }

    #[test]
    fn loose_ceiling_reduces_to_projection() {
        let c = params();
        let mut mpc = MpcController::new(MpcConfig::default());
        for target in [Vec3::new(1.0, -2.0, 3.0), Vec3::new(20.0, 0.5, -40.0), Vec3::zeros()] {
            let s = steady(&mut mpc, 19.62, 3, target);
            let (base, code) = qp_project(&target, 19.62, &c);
            assert!((s.a0 - base).norm() < 1e-6, "{:?} vs {:?}", s.a0, base);
            assert_eq!(s.code, code);
            assert_eq!(s.status, QpStatus::Solved);
            assert!(s.slack_max < 1e-6);
        }
    }

    #[test]
    fn ceiling_below_load_gives_deficit_slack() {
        let mut mpc = MpcController::new(MpcConfig { t_max: 15.0, ..MpcConfig::default() });
        let s = steady(&mut mpc, 19.62, 5, Vec3::zeros());
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.slack - 4.62).abs() < 1e-5, "{}", s.slack);
    }

    #[test]
    fn slack_linear_in_stiffness_mismatch() {
        // Constant tension ramp; the ceiling sits exactly at the nominal
        // one-step prediction, so s_0 = Ṫ·Δt·ε.
        let rate = 200.0;
        let t_now = 30.0;
        let slack_for = |eps: f64| {
            let cfg = MpcConfig { t_max: t_now + rate * 0.01, model_scale: 1.0 + eps, ..MpcConfig::default() };
            let mut mpc = MpcController::new(cfg);
            let c = params();
            let mut out = None;
            for k in 0..=10 {
                let t = k as f64 * 1e-3;
                let tension = t_now - rate * (0.01 - t);
                out = Some(mpc.step(t, tension, &Vec3::zeros(), &Vec3::zeros(), &Vec3::zeros(), Vec3::zeros(), 19.62, &c));
            }
            out.unwrap().slack
        };
        let s: Vec<f64> = [0.05, 0.1, 0.2, 0.4].iter().map(|&e| slack_for(e)).collect();
        for (e, v) in [0.05, 0.1, 0.2, 0.4].iter().zip(&s) {
            assert!((v - rate * 0.01 * e).abs() < 1e-4, "eps {e}: {v}");
        }
    }
}
