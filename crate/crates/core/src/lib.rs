//! Stochastic hyperdimensional encryption on a simulated memristor crossbar.
//!
//! A plaintext symbol is mapped to a short secret vector, expanded to a
//! binary hypervector by a noisy analog crossbar read followed by a
//! threshold, and recovered by a trained linear decoder. Because read noise
//! is fresh on every pass, the same plaintext never produces the same
//! ciphertext twice, while the hypervector's redundancy keeps it decodable.
//!
//! Modules, bottom-up:
//!
//! - [`xbar`]: crossbar simulator with conductance variability and stuck cells
//! - [`hv`]: bit-packed binary hypervectors and their wire format
//! - [`encoder`]: projection + threshold encoders (crossbar and idealized)
//! - [`decoder`]: linear regression / softmax decoder, SGD, gradient checks
//! - [`text`]: per-character text encryption and evaluation
//! - [`image`]: image encryption, the unexpanded benchmark, pixel statistics
//! - [`experiment`]: declarative sweeps, reference configurations, reports
//! - [`commands`]: the operations behind the `hyperlock` binary

pub mod commands;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod hv;
pub mod image;
pub mod seed;
pub mod text;
pub mod xbar;

pub use decoder::{Head, LinearDecoder, ModelFile, TrainConfig, TrainReport};
pub use encoder::{HyperEncoder, IdealEncoder};
pub use error::{Error, Result};
pub use hv::BinaryHypervector;
pub use xbar::{Crossbar, CrossbarConfig};
