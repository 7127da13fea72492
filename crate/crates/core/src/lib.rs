//! Optimal single-qubit X-rotation pulses and fixed-point neural surrogates.
//!
//! [`pulse`] simulates a spline-shaped drive and differentiates gate fidelity
//! with respect to its coefficients; [`optimizer`] and [`dataset`] turn that
//! into a table of optimal pulses over rotation angles. [`mlp`] learns the
//! angle-to-pulse map, [`fixed`] runs it in integer arithmetic with a
//! multiplier estimate, and [`eval`] scores everything against the ideal gate.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fixed;
pub mod mlp;
pub mod optimizer;
pub mod pulse;
pub mod quantum;
