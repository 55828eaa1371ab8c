//! Radial power networks: models built from learnable radial powers
//! `|x - c|^mu`, with closed-form spatial derivatives, hand-assembled
//! parameter gradients, a small Adam trainer, samplers for punctured
//! domains, and a 3D Poisson point-charge experiment.

pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod models;
pub mod optim;
pub mod param_grad;
pub mod pinn;
pub mod radial;
pub mod sampling;
pub mod targets;

pub use error::{Result, RmnError};
