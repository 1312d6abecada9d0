//! Optional layers on top of the baseline cascade.
//!
//! Each one enters the loop through its own channel: [`l1`] adds to the
//! altitude component of the target acceleration, [`mpc`] replaces the
//! single-step projection, and [`reshape`] moves the formation slots.

pub mod l1;
pub mod mpc;
pub mod reshape;
