pub mod backbone;
pub mod benchalign;
pub mod cli;
pub mod conditioning;
pub mod degrade;
pub mod distill;
pub mod error;
pub mod imagecore;
pub mod kv;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
