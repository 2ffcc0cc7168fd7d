//! Capacity analysis of four-legged intersections.

pub mod capacity;
pub mod config;
pub mod dynamics;
pub mod geometry;
pub mod ocp;
pub mod scenario;
pub mod signalized;
pub mod solver;
pub mod sweep;

/// Scalar types usable in model evaluation: `f64` and its dual numbers.
pub trait Scalar: num_dual::DualNum<Primitive = f64> {}
impl<T: num_dual::DualNum<Primitive = f64>> Scalar for T {}
