//! Pairwise face-feature classification toolkit.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithm: a small
//! tensor engine with forward/backward passes for the layer kinds the
//! classifiers use, the pairing and split protocol, the three classifier
//! architectures with their training loop, post-hoc analyses and the
//! human-vs-model statistics. File formats, IO and the command line live in
//! the `entpair` crate.
#![no_std]

extern crate alloc;

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pairing;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Prng;
pub use tensor::{Real, Tensor};
