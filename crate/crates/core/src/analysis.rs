//! Closed-form stability-certificate quantities for the canonical cascade.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solution of `AᵀP + PA = −I` for `A = [[0, 1], [−kp, −kd]]`.
pub fn lyap_solve(kp: f64, kd: f64) -> Result<[[f64; 2]; 2]> {
    if !(kp > 0.0 && kd > 0.0) {
        return Err(Error::NotHurwitz { kp, kd });
    }
    let p11 = (kd * kd + kp + kp * kp) / (2.0 * kp * kd);
    let p12 = 1.0 / (2.0 * kp);
    let p22 = (1.0 + kp) / (2.0 * kp * kd);
    Ok([[p11, p12], [p12, p22]])
}

/// `‖AᵀP + PA + I‖_max` for a candidate `P`.
pub fn lyap_residual(kp: f64, kd: f64, p: &[[f64; 2]; 2]) -> f64 {
    let a = [[0.0, 1.0], [-kp, -kd]];
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for k in 0..2 {
                s += a[k][i] * p[k][j] + p[i][k] * a[k][j];
            }
            worst = worst.max(s.abs());
        }
    }
    worst
}

/// Decay rate `|Re s|` of the dominant root of `s² + kd s + kp`.
pub fn decay_rate(kp: f64, kd: f64) -> Result<f64> {
    if !(kp > 0.0 && kd > 0.0) {
        return Err(Error::NotHurwitz { kp, kd });
    }
    let disc = kd * kd - 4.0 * kp;
    Ok(if disc >= 0.0 { 0.5 * (kd - disc.sqrt()) } else { 0.5 * kd })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRates {
    pub alpha_z: f64,
    pub alpha_xy: f64,
    pub alpha_min: f64,
}

pub fn decay_rates(kp_xy: f64, kd_xy: f64, kp_z: f64, kd_z: f64) -> Result<DecayRates> {
    let alpha_z = decay_rate(kp_z, kd_z)?;
    let alpha_xy = decay_rate(kp_xy, kd_xy)?;
    Ok(DecayRates { alpha_z, alpha_xy, alpha_min: alpha_z.min(alpha_xy) })
}

/// `(τ_pend, ω_p)` of a simple pendulum of length `l`.
pub fn pendulum_constants(l: f64, g: f64) -> Result<(f64, f64)> {
    if !(l > 0.0) {
        return Err(Error::Precondition("pendulum length must be positive".into()));
    }
    Ok((std::f64::consts::TAU * (l / g).sqrt(), (g / l).sqrt()))
}

/// Per-fault-cycle contraction `ρ = exp(−α_min τ_pend)`.
pub fn contraction(alpha_min: f64, tau_pend: f64) -> f64 {
    (-alpha_min * tau_pend).exp()
}

/// Anti-swing damping `B = m_L g k_swing / L` and its ratio to critical.
pub fn antiswing_constants(m_l: f64, k_swing: f64, l: f64, g: f64) -> (f64, f64) {
    let b = m_l * g * k_swing / l;
    let omega_p = (g / l).sqrt();
    (b, b / (2.0 * m_l * omega_p))
}

/// Anti-swing damping aggregated over `n_s` survivors, each carrying
/// `m_L g / n_s`.
pub fn antiswing_damping_team(n_s: usize, m_l: f64, k_swing: f64, l: f64, g: f64) -> f64 {
    let share = m_l * g / n_s as f64;
    n_s as f64 * share * k_swing / l
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorEnvelope {
    pub faults: usize,
    /// Post-fault static load per survivor (N).
    pub load: f64,
    /// `κ_act · f_max` (N).
    pub bound: f64,
    /// `load / bound`.
    pub utilization: f64,
    pub pass: bool,
}

pub fn actuator_envelope(n: usize, m_l: f64, faults: usize, kappa_act: f64, f_max: f64, g: f64) -> Result<ActuatorEnvelope> {
    if n < faults + 2 {
        return Err(Error::Precondition(format!("N − F = {} < 2", n as i64 - faults as i64)));
    }
    let load = m_l * g / (n - faults) as f64;
    let bound = kappa_act * f_max;
    Ok(ActuatorEnvelope { faults, load, bound, utilization: load / bound, pass: load <= bound })
}

/// `(Γ_min, Γ*) = (ω_c / p22, 2 / (T_s p22))`.
pub fn gamma_window(ts: f64, p22: f64, omega_c: f64) -> (f64, f64) {
    (omega_c / p22, 2.0 / (ts * p22))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateBound {
    pub pendulum_term: f64,
    pub tracking_term: f64,
    pub total: f64,
}

pub fn steady_state_bound(a_max: f64, l: f64, zeta: f64, kappa_qp: f64, kp_xy: f64, g: f64) -> Result<SteadyStateBound> {
    if !(zeta > 0.0) {
        return Err(Error::Precondition("zeta must be positive".into()));
    }
    let pendulum_term = l * a_max / g * (1.0 - 1.0 / (2.0 * zeta * zeta));
    let tracking_term = a_max / (kappa_qp * kp_xy);
    Ok(SteadyStateBound { pendulum_term, tracking_term, total: pendulum_term + tracking_term })
}

/// Jump bound: general form `c̄ (Δ + Δ²)`.
pub fn chi_bound_general(delta: f64, c_bar: f64) -> f64 {
    c_bar * (delta + delta * delta)
}

/// Jump bound, symmetric-hover form `κ_V Δ² / (2 N_s)`.
pub fn chi_bound_symmetric(delta: f64, kappa_v: f64, n_s: usize) -> f64 {
    kappa_v * delta * delta / (2.0 * n_s as f64)
}

/// Inputs of the certificate; defaults are the canonical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateInputs {
    pub kp_xy: f64,
    pub kd_xy: f64,
    pub kp_z: f64,
    pub kd_z: f64,
    pub rope_length: f64,
    pub g: f64,
    pub m_payload: f64,
    pub n_drones: usize,
    pub k_swing: f64,
    pub kappa_act: f64,
    pub f_max: f64,
    pub w_t: f64,
    pub w_e: f64,
    pub a_xy_max: f64,
    pub l1_ts: f64,
    pub l1_omega_c: f64,
    pub l1_gamma: f64,
    pub kappa_v: f64,
    pub k_s: f64,
    pub n_beads: usize,
}

impl Default for CertificateInputs {
    fn default() -> Self {
        Self {
            kp_xy: 30.0,
            kd_xy: 15.0,
            kp_z: 100.0,
            kd_z: 24.0,
            rope_length: 1.25,
            g: 9.81,
            m_payload: 10.0,
            n_drones: 5,
            k_swing: 0.8,
            kappa_act: 0.82,
            f_max: 150.0,
            w_t: 1.0,
            w_e: 0.02,
            a_xy_max: 2.47,
            l1_ts: 2e-4,
            l1_omega_c: 25.0,
            l1_gamma: 2000.0,
            kappa_v: 1.0,
            k_s: 25_000.0,
            n_beads: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub p_v: [[f64; 2]; 2],
    pub p_xy: [[f64; 2]; 2],
    pub lyapunov_residual: f64,
    pub alpha_z: f64,
    pub alpha_xy: f64,
    pub alpha_min: f64,
    pub lambda: f64,
    pub tau_pend: f64,
    pub omega_p: f64,
    pub rho: f64,
    pub b_swing: f64,
    pub zeta_swing: f64,
    pub kappa_qp: f64,
    pub envelope: Vec<ActuatorEnvelope>,
    pub gamma_min: f64,
    pub gamma_star: f64,
    pub gamma: f64,
    pub gamma_inside_window: bool,
    pub steady_state: SteadyStateBound,
    pub k_eff: f64,
    pub kappa_v: f64,
}

pub fn certify(inp: &CertificateInputs) -> Result<Certificate> {
    let p_v = lyap_solve(inp.kp_z, inp.kd_z)?;
    let p_xy = lyap_solve(inp.kp_xy, inp.kd_xy)?;
    let rates = decay_rates(inp.kp_xy, inp.kd_xy, inp.kp_z, inp.kd_z)?;
    let (tau_pend, omega_p) = pendulum_constants(inp.rope_length, inp.g)?;
    let (b_swing, zeta_swing) = antiswing_constants(inp.m_payload, inp.k_swing, inp.rope_length, inp.g);
    let kappa_qp = inp.w_t / (inp.w_t + inp.w_e);
    let envelope = (0..=inp.n_drones.saturating_sub(2))
        .map(|f| actuator_envelope(inp.n_drones, inp.m_payload, f, inp.kappa_act, inp.f_max, inp.g))
        .collect::<Result<Vec<_>>>()?;
    let (gamma_min, gamma_star) = gamma_window(inp.l1_ts, p_v[1][1], inp.l1_omega_c);
    Ok(Certificate {
        lyapunov_residual: lyap_residual(inp.kp_z, inp.kd_z, &p_v).max(lyap_residual(inp.kp_xy, inp.kd_xy, &p_xy)),
        p_v,
        p_xy,
        alpha_z: rates.alpha_z,
        alpha_xy: rates.alpha_xy,
        alpha_min: rates.alpha_min,
        lambda: rates.alpha_min / 2.0,
        tau_pend,
        omega_p,
        rho: contraction(rates.alpha_min, tau_pend),
        b_swing,
        zeta_swing,
        kappa_qp,
        envelope,
        gamma_min,
        gamma_star,
        gamma: inp.l1_gamma,
        gamma_inside_window: inp.l1_gamma > gamma_min && inp.l1_gamma < gamma_star,
        steady_state: steady_state_bound(inp.a_xy_max, inp.rope_length, zeta_swing, kappa_qp, inp.kp_xy, inp.g)?,
        k_eff: inp.k_s / (inp.n_beads + 1) as f64,
        kappa_v: inp.kappa_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn canonical_lyapunov_matrices() {
        let pv = lyap_solve(100.0, 24.0).unwrap();
        assert_relative_eq!(pv[0][0], 2.224, epsilon = 5e-4);
        assert_relative_eq!(pv[0][1], 0.005, epsilon = 5e-4);
        assert_relative_eq!(pv[1][1], 0.021, epsilon = 5e-4);
        let pxy = lyap_solve(30.0, 15.0).unwrap();
        assert_relative_eq!(pxy[0][0], 1.283, epsilon = 5e-4);
        assert_relative_eq!(pxy[0][1], 0.017, epsilon = 5e-4);
        assert_relative_eq!(pxy[1][1], 0.034, epsilon = 5e-4);
        assert!(lyap_residual(100.0, 24.0, &pv) < 1e-10);
    }

    #[test]
    fn non_hurwitz_rejected() {
        assert!(lyap_solve(-1.0, 2.0).is_err());
        assert!(lyap_solve(1.0, 0.0).is_err());
        assert!(certify(&CertificateInputs { kd_z: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn envelope_examples() {
        let e = actuator_envelope(5, 10.0, 2, 0.82, 150.0, 9.81).unwrap();
        assert_relative_eq!(e.load, 32.7, epsilon = 1e-9);
        assert_relative_eq!(e.bound, 123.0, epsilon = 1e-9);
        assert!(e.pass);
        assert_relative_eq!(actuator_envelope(5, 10.0, 0, 0.82, 150.0, 9.81).unwrap().load, 19.62, epsilon = 1e-9);
        let e3 = actuator_envelope(5, 10.0, 3, 0.82, 150.0, 9.81).unwrap();
        assert_relative_eq!(e3.load, 49.05, epsilon = 1e-9);
        assert!(e3.pass);
        assert!(actuator_envelope(5, 10.0, 4, 0.82, 150.0, 9.81).is_err());
    }

    #[test]
    fn steady_state_components() {
        let (_, zeta) = antiswing_constants(10.0, 0.8, 1.25, 9.81);
        let b = steady_state_bound(2.47, 1.25, zeta, 1.0 / 1.02, 30.0, 9.81).unwrap();
        assert_relative_eq!(b.pendulum_term, 0.189, epsilon = 5e-4);
        assert_relative_eq!(b.tracking_term, 0.084, epsilon = 5e-4);
        assert_eq!(steady_state_bound(0.0, 1.25, zeta, 0.98, 30.0, 9.81).unwrap().total, 0.0);
    }

    #[test]
    fn chi_forms() {
        assert_eq!(chi_bound_symmetric(0.0, 1.0, 4), 0.0);
        assert_relative_eq!(chi_bound_symmetric(2.0, 1.0, 2), 2.0 * chi_bound_symmetric(2.0, 1.0, 4));
        assert_eq!(chi_bound_general(0.0, 3.0), 0.0);
    }

    #[test]
    fn antiswing_mass_scaling() {
        let (b1, z1) = antiswing_constants(10.0, 0.8, 1.25, 9.81);
        let (b2, z2) = antiswing_constants(20.0, 0.8, 1.25, 9.81);
        assert_relative_eq!(b2, 2.0 * b1, epsilon = 1e-12);
        assert_relative_eq!(z1, z2, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn lyapunov_residual_small(kp in 0.1..500.0f64, kd in 0.1..100.0f64) {
            let p = lyap_solve(kp, kd).unwrap();
            let scale = p[0][0].abs().max(p[1][1].abs()).max(1.0);
            prop_assert!(lyap_residual(kp, kd, &p) < 1e-10 * scale * (1.0 + kp + kd));
            // Positive definite.
            prop_assert!(p[0][0] > 0.0 && p[0][0] * p[1][1] - p[0][1] * p[0][1] > 0.0);
        }

        #[test]
        fn contraction_in_unit_interval(kp in 0.1..500.0f64, kd in 0.1..100.0f64, l in 0.05..10.0f64) {
            let a = decay_rate(kp, kd).unwrap();
            let (tau, _) = pendulum_constants(l, 9.81).unwrap();
            let rho = contraction(a, tau);
            prop_assert!(rho > 0.0 && rho < 1.0);
        }
    }
}
