//! Multiscale diffusions in stationary random media: simulation, quenched
//! homogenization, large-deviations action and importance sampling of rare
//! events for the slow component.

pub mod action;
pub mod cli;
pub mod config;
pub mod corrector;
pub mod diagnostics;
pub mod dynamics;
pub mod effective;
pub mod error;
pub mod io;
pub mod medium;
pub mod presets;
pub mod rareevent;
pub mod rng;

pub use error::{Error, Result};
