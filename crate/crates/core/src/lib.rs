//! Distributed source coding for correlated Gaussian sensor data: Lloyd-Max
//! quantizers, index reuse, source-optimized clustering and
//! factor-graph decoding.

pub mod artifact;
pub mod cluster;
pub mod config;
pub mod decode;
pub mod error;
pub mod factorize;
pub mod gauss_model;
pub mod index_assign;
pub mod normal;
pub mod pmf;
pub mod quantizer;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};
