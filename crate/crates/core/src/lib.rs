//! Simulation and decentralized control of a cable-suspended payload carried
//! by a team of quadrotors, with abrupt cable severance.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`] — rigid-body drones, point-mass payload, fault events and
//!   the fixed-step RK3 integrator.
//! * [`cables`] — Kelvin–Voigt bead-chain ropes, the lumped quasi-static
//!   tension model and slack bookkeeping.
//! * [`wind`] — seeded Dryden turbulence and clipped per-body drag.
//! * [`controller`] — the per-drone baseline cascade, restricted to the local
//!   information set.
//! * [`qpsolver`] — a small dense ADMM QP solver.
//! * [`extensions`] — L1 altitude augmentation, tension-ceiling MPC and the
//!   formation-reshape supervisor.
//! * [`analysis`] — closed-form stability certificate quantities.
//! * [`metrics`] — post-run evaluation and admissibility gates.
//! * [`campaign`] — run configuration, orchestration and artifact I/O.

pub mod analysis;
pub mod cables;
pub mod campaign;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod extensions;
pub mod math;
pub mod metrics;
pub mod qpsolver;
pub mod wind;

pub use error::{Error, Result};
pub use math::{Mat3, Vec3};
