pub mod agent;
pub mod bellmin;
pub mod buffer;
pub mod cli;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod generate;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod properties;
pub mod sac;
pub mod stochastic;

pub use error::{Error, Result};
