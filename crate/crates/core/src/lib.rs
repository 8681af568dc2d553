//! Distributed consensus-plus-innovations estimation over randomly switching,
//! delayed networks, with numerical checks of its convergence conditions.

pub mod auxiliary;
pub mod conditions;
pub mod estimator;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod processes;
