//! Library surface of the experiment runner; the `noiselab` binary is a
//! thin argument-parsing wrapper over [`experiments::run`].

pub mod config;
pub mod experiments;
pub mod plot;
