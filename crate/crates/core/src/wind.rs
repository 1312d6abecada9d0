//! Dryden low-altitude turbulence and clipped linear drag.
//!
//! The longitudinal component uses the first-order shaping filter
//! `σ·sqrt(2τ) / (1 + τs)`, the lateral and vertical components the
//! second-order filter `σ·sqrt(τ)·(1 + √3 τs) / (1 + τs)²` with `τ = L/V`.
//! Both are normalised so that unit-intensity white noise produces a
//! stationary standard deviation of exactly `σ`.  The filters are
//! discretized by exact zero-order hold, with the driving noise held
//! piecewise constant at variance `1/dt` over each tick.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrydenParams {
    pub enabled: bool,
    /// Mean wind (m/s).
    pub mean: [f64; 3],
    /// Turbulence intensities (m/s).
    pub sigma: [f64; 3],
    /// Scale lengths L_u, L_v, L_w (m).
    pub scale_lengths: [f64; 3],
    pub seed: u64,
    /// Linear drag coefficient per body (N·s/m).
    pub c_drag: f64,
    /// Disturbance force bound per body (N).
    pub w_max: f64,
}

impl Default for DrydenParams {
    fn default() -> Self {
        Self {
            enabled: true,
            mean: [4.0, 0.0, 0.0],
            sigma: [0.8, 0.8, 0.4],
            scale_lengths: [200.0, 200.0, 50.0],
            seed: 42,
            c_drag: 0.25,
            w_max: 1.0,
        }
    }
}

impl DrydenParams {
    pub fn calm() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    /// Advection speed used to turn scale lengths into time constants.
    fn speed(&self) -> f64 {
        Vec3::from(self.mean).norm().max(1e-3)
    }
}

/// Exact ZOH discretization of a (≤ 2)-state single-input filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFilter {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
    pub order: usize,
}

impl DiscreteFilter {
    /// `σ·sqrt(2τ)/(1 + τs)` as `ẋ = −x/τ + (k/τ)η`, `y = x`.
    pub fn first_order(sigma: f64, tau: f64, dt: f64) -> Self {
        let k = sigma * (2.0 * tau).sqrt();
        let a = (-dt / tau).exp();
        Self { a: [[a, 0.0], [0.0, 0.0]], b: [k * (1.0 - a), 0.0], c: [1.0, 0.0], order: 1 }
    }

    /// `σ·sqrt(τ)(1 + √3τs)/(1 + τs)²` in controllable form
    /// `ẋ₁ = x₂, ẋ₂ = −x₁/τ² − 2x₂/τ + η`, `y = k(x₁ + √3 τ x₂)/τ²`.
    ///
    /// The double pole gives `e^{At} = e^{−t/τ}(I + (A + I/τ)t)`.
    pub fn second_order(sigma: f64, tau: f64, dt: f64) -> Self {
        let k = sigma * tau.sqrt();
        let e = (-dt / tau).exp();
        let a = [[e * (1.0 + dt / tau), e * dt], [-e * dt / (tau * tau), e * (1.0 - dt / tau)]];
        // ∫₀^Δt s e^{−s/τ} ds = τ²(1 − e^{−x}(1 + x)); series for small x
        // avoids the cancellation.
        let x = dt / tau;
        let g = if x < 0.1 {
            let (mut term, mut sum) = (x * x / 2.0, 0.0);
            for n in 2..20 {
                sum += term * (n - 1) as f64;
                term *= -x / (n + 1) as f64;
            }
            sum
        } else {
            1.0 - e * (1.0 + x)
        };
        let b = [tau * tau * g, dt * e];
        let c = [k / (tau * tau), k * 3f64.sqrt() / tau];
        Self { a, b, c, order: 2 }
    }

    fn step(&self, x: &mut [f64; 2], u: f64) -> f64 {
        let nx = [
            self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.b[0] * u,
            self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.b[1] * u,
        ];
        *x = nx;
        self.output(x)
    }

    fn output(&self, x: &[f64; 2]) -> f64 {
        self.c[0] * x[0] + self.c[1] * x[1]
    }
}

/// One turbulence realization, advanced one physics tick at a time.
#[derive(Debug, Clone)]
pub struct DrydenGust {
    params: DrydenParams,
    dt: f64,
    filters: [DiscreteFilter; 3],
    states: [[f64; 2]; 3],
    rng: ChaCha8Rng,
    current: Vec3,
    ticks: u64,
}

impl DrydenGust {
    pub fn new(params: DrydenParams, dt: f64) -> Self {
        let v = params.speed();
        let tau = params.scale_lengths.map(|l| l / v);
        let filters = [
            DiscreteFilter::first_order(params.sigma[0], tau[0], dt),
            DiscreteFilter::second_order(params.sigma[1], tau[1], dt),
            DiscreteFilter::second_order(params.sigma[2], tau[2], dt),
        ];
        let rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut g = Self { current: Vec3::from(params.mean), params, dt, filters, states: [[0.0; 2]; 3], rng, ticks: 0 };
        g.start_stationary();
        g
    }

    /// Draws the initial filter states from the stationary distribution so
    /// the realization has no start-up transient.
    fn start_stationary(&mut self) {
        if !self.params.enabled {
            return;
        }
        for c in 0..3 {
            let f = self.filters[c];
            let cov = stationary_covariance(&f, self.dt);
            // Cholesky of the 2x2 (or 1x1) covariance.
            let l00 = cov[0][0].max(0.0).sqrt();
            let (l10, l11) = if f.order == 2 && l00 > 0.0 {
                let l10 = cov[1][0] / l00;
                (l10, (cov[1][1] - l10 * l10).max(0.0).sqrt())
            } else {
                (0.0, 0.0)
            };
            let z0: f64 = StandardNormal.sample(&mut self.rng);
            let z1: f64 = if f.order == 2 { StandardNormal.sample(&mut self.rng) } else { 0.0 };
            self.states[c] = [l00 * z0, l10 * z0 + l11 * z1];
        }
        self.current = self.compose();
    }

    fn compose(&self) -> Vec3 {
        let mut v = Vec3::from(self.params.mean);
        for c in 0..3 {
            v[c] += self.filters[c].output(&self.states[c]);
        }
        v
    }

    /// Gust velocity held over the current tick.
    pub fn velocity(&self) -> Vec3 {
        self.current
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Advances one tick and returns the new gust velocity.
    pub fn advance(&mut self) -> Vec3 {
        self.ticks += 1;
        if !self.params.enabled {
            self.current = Vec3::from(self.params.mean);
            return self.current;
        }
        let scale = 1.0 / self.dt.sqrt();
        for c in 0..3 {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            self.filters[c].step(&mut self.states[c], n * scale);
        }
        self.current = self.compose();
        self.current
    }

    /// Convenience: a full realization sampled every tick, starting at t = 0.
    pub fn realize(params: DrydenParams, dt: f64, samples: usize) -> Vec<Vec3> {
        let mut g = Self::new(params, dt);
        let mut out = Vec::with_capacity(samples);
        out.push(g.velocity());
        while out.len() < samples {
            out.push(g.advance());
        }
        out
    }

    pub fn params(&self) -> &DrydenParams {
        &self.params
    }
}

/// Stationary state covariance of the discretized filter driven by noise of
/// variance `1/dt`, by iterating the discrete Lyapunov recursion with
/// squaring (`P ← P + A P Aᵀ`, `A ← A²`).
pub fn stationary_covariance(f: &DiscreteFilter, dt: f64) -> [[f64; 2]; 2] {
    let q = 1.0 / dt;
    let mut p = [[f.b[0] * f.b[0] * q, f.b[0] * f.b[1] * q], [f.b[1] * f.b[0] * q, f.b[1] * f.b[1] * q]];
    let mut a = f.a;
    for _ in 0..64 {
        let apat = mul(&mul(&a, &p), &transpose(&a));
        for r in 0..2 {
            for c in 0..2 {
                p[r][c] += apat[r][c];
            }
        }
        a = mul(&a, &a);
    }
    p
}

fn mul(x: &[[f64; 2]; 2], y: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut o = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            o[r][c] = x[r][0] * y[0][c] + x[r][1] * y[1][c];
        }
    }
    o
}

fn transpose(x: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[x[0][0], x[1][0]], [x[0][1], x[1][1]]]
}

/// Linear drag on a body, clipped to `w_max`.  Returns the force and whether
/// the clip engaged.
pub fn body_force(gust: &Vec3, body_v: &Vec3, params: &DrydenParams) -> (Vec3, bool) {
    let f = params.c_drag * (gust - body_v);
    let n = f.norm();
    if n > params.w_max {
        (f * (params.w_max / n), true)
    } else {
        (f, false)
    }
}
