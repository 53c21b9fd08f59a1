//! Lane-free trajectory planning for connected automated vehicles on a ring road.

pub mod bounds;
pub mod clock;
pub mod dynamics;
pub mod error;
pub mod mpc;
pub mod objective;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result};
