//! Time-reversal regularized graph ODEs for multi-agent dynamics.

pub mod diffcore;
pub mod physics;
pub mod seed;
pub mod dataio;
pub mod model;
pub mod training;
pub mod analysis;
