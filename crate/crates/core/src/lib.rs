//! Core library for multiscale stochastic reaction networks: exact CTMC
//! simulation, PDMP model reduction, and parameter-sensitivity estimation
//! that splits the continuous and discrete contributions of the hybrid
//! dynamics.

pub mod expr;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scaling;
pub mod sensitivity;
pub mod simulate;
pub mod stats;
