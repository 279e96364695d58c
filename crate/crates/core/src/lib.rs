pub mod code;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod harness;
pub mod jvm;
pub mod metrics;
pub mod mutate;
pub mod par;
pub mod remote;
pub mod rng;
pub mod sandbox;
pub mod scorer;
pub mod sketch;
pub mod synth;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
