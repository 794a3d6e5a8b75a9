//! Synthesis, certification and simulation of Kazantzis–Kravaris/Luenberger
//! observers `ż = Az + B(y)`, `x̂ = T*(z)` for nonlinear plants.

pub mod acceptance;
pub mod cli;
pub mod design;
pub mod error;
pub mod highgain;
pub mod injectivity;
pub mod inversion;
pub mod model;
pub mod numerics;
pub mod runtime;
pub mod transform;

pub use design::{Injection, ObserverDesign};
pub use error::{Error, Result};
