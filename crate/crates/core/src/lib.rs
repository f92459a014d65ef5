//! Actor-critic training on spacecraft-attitude and cart-pole dynamics, with
//! frozen-target critic match loss landscapes and their geometric indices.

pub mod adhdp;
pub mod config;
mod codec;
pub mod env;
pub mod error;
pub mod landscape;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod replay;
pub mod rollout;
pub mod sac;
pub mod snapshot;

pub use error::{Error, Result};
