//! L1 adaptive augmentation of the altitude channel.
//!
//! Error state `x = (e_z, ė_z)` with reference model
//! `ẋ = A_m x − b(u_ad + σ)`, `A_m = [[0, 1], [−K_p, −K_d]]`, `b = (0, 1)`.
//!
//! The state predictor is re-initialised from each measurement and
//! propagated over one physics tick; the normalised one-step prediction
//! error `(x̂ − x)/Δt` then equals `b(σ − σ̂)` up to O(Δt), and the
//! projected gradient step on `σ̂` weighted by `P_v b` runs at `T_s` inside
//! the tick.  The adaptation is therefore a first-order loop with rate
//! `Γ·p22`: it covers the filter bandwidth when `Γ > ω_c/p22` and the
//! explicit update is stable when `Γ < 2/(T_s·p22)`.

use serde::{Deserialize, Serialize};

use crate::analysis::{gamma_window, lyap_solve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L1Config {
    pub gamma: f64,
    pub omega_c: f64,
    pub ts: f64,
    pub substeps: usize,
    /// Projection interval for `σ̂` (m/s²).
    pub bound: f64,
}

impl Default for L1Config {
    fn default() -> Self {
        Self { gamma: 2000.0, omega_c: 25.0, ts: 2e-4, substeps: 5, bound: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1State {
    cfg: L1Config,
    kp: f64,
    kd: f64,
    p12: f64,
    p22: f64,
    /// Predicted error state at the next measurement.
    x_hat: Option<[f64; 2]>,
    sigma_hat: f64,
    filtered: f64,
    projection_hits: u64,
}

impl L1State {
    /// Gains must be Hurwitz; non-Hurwitz gains fall back to `P = I`.
    pub fn new(cfg: L1Config, kp: f64, kd: f64) -> Self {
        let p = lyap_solve(kp, kd).unwrap_or([[1.0, 0.0], [0.0, 1.0]]);
        Self { cfg, kp, kd, p12: p[0][1], p22: p[1][1], x_hat: None, sigma_hat: 0.0, filtered: 0.0, projection_hits: 0 }
    }

    pub fn config(&self) -> &L1Config {
        &self.cfg
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }

    pub fn u_ad(&self) -> f64 {
        -self.filtered
    }

    pub fn projection_hits(&self) -> u64 {
        self.projection_hits
    }

    pub fn predicted(&self) -> Option<[f64; 2]> {
        self.x_hat
    }

    /// `(Γ_min, Γ*)` for this configuration.
    pub fn window(&self) -> (f64, f64) {
        gamma_window(self.cfg.ts, self.p22, self.cfg.omega_c)
    }

    pub fn in_window(&self) -> bool {
        let (lo, hi) = self.window();
        self.cfg.gamma > lo && self.cfg.gamma < hi
    }

    /// Seeds the estimate (tests and restarts).
    pub fn set_estimate(&mut self, sigma_hat: f64, filtered: f64) {
        self.sigma_hat = sigma_hat;
        self.filtered = filtered;
    }

    /// One physics tick: consumes the measured error state and returns the
    /// altitude correction `u_ad` to hold until the next tick.
    pub fn update(&mut self, x: [f64; 2]) -> f64 {
        let ts = self.cfg.ts;
        let dt = ts * self.cfg.substeps as f64;
        let (g, b) = (self.cfg.gamma, self.cfg.bound);
        if let Some(xh) = self.x_hat {
            // Input enters as −b(u + σ), so x̂ − x ≈ b(σ − σ̂)Δt.
            let e1 = (xh[0] - x[0]) / dt;
            let e2 = (xh[1] - x[1]) / dt;
            let s0 = self.sigma_hat;
            for _ in 0..self.cfg.substeps {
                // The prediction error seen by each substep is corrected for
                // the estimate change already made within this tick.
                let ds = self.sigma_hat - s0;
                let e1j = e1 - 0.5 * dt * ds;
                let e2j = e2 - ds;
                let raw = self.sigma_hat + ts * g * (self.p12 * e1j + self.p22 * e2j);
                if raw.abs() > b {
                    self.projection_hits += 1;
                    log::trace!("L1 projection active ({raw:.3})");
                }
                self.sigma_hat = raw.clamp(-b, b);
                self.filtered += ts * self.cfg.omega_c * (self.sigma_hat - self.filtered);
            }
        }
        let u_ad = -self.filtered;
        // Propagate the predictor from the measurement across the next tick.
        let mut xh = x;
        for _ in 0..self.cfg.substeps {
            let acc = -self.kp * xh[0] - self.kd * xh[1] - (u_ad + self.sigma_hat);
            xh = [xh[0] + ts * xh[1], xh[1] + ts * acc];
        }
        self.x_hat = Some(xh);
        u_ad
    }
}
