//! Minimum-time attitude and trajectory reorientation of a launcher by
//! indirect shooting and a four-parameter homotopy.

pub mod cli;
pub mod continuation;
pub mod frames;
pub mod integrator;
pub mod model;
pub mod nlsolve;
pub mod ocp0;
pub mod shooting;
