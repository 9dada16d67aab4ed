//! Private heavy-hitter discovery over federated data with a prefix tree.
//!
//! Devices hold multisets of words. Each word is encoded as a fixed-length
//! bitstring; the server grows a tree of popular prefixes a segment at a time,
//! and in every round each device privately reports one extension of a live
//! prefix through a local randomizer. Aggregated reports are debiased,
//! thresholded, and the survivors form the next round's prefix list.

pub mod accountant;
pub mod baselines;
pub mod data;
pub mod bits;
pub mod device;
pub mod engine;
pub mod encoding;
pub mod error;
pub mod freq_oracle;
pub mod metrics;
pub mod rng;
pub mod server;

pub use bits::BitString;
pub use error::{Error, Result};
