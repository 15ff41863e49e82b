//! Planar quadcopter whose cascaded proportional gains are scheduled online by
//! a PPO-trained policy, with the simulator, trainer, and ISE/ITSE evaluation
//! harness needed to compare it against a static-gain baseline.

pub mod controller;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};
