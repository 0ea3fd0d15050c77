//! Feature-space few-shot video classification.
//!
//! The crate works entirely on precomputed clip features. It provides:
//!
//! * [`numkernel`] - a small dense f64 kernel: MLP forward/backward with an
//!   analytic double-backward for gradient penalties, SGD/Adam, and a
//!   hand-rolled deterministic RNG with derivable streams.
//! * [`datastore`] - TSV/JSON dataset formats, validation, min-max scaling.
//! * [`classifier`] - linear softmax heads: base/novel training, trusted and
//!   pseudo-labeled batch mixing, clip-averaged video prediction, head
//!   concatenation for generalized evaluation.
//! * [`retrieval`] - tag-embedding video retrieval and prototype-based best
//!   clip selection that assembles pseudo-labeled training sets.
//! * [`vfgan`] - a conditional WGAN-GP over clip features that generates
//!   class-conditioned features from semantic class embeddings.
//! * [`evaluator`] - episodic few-shot and generalized few-shot protocols
//!   with deterministic per-episode RNG streams.
//! * [`synthbench`] - a synthetic dataset generator with known class
//!   geometry and a nearest-true-mean accuracy ceiling.
//!
//! Determinism is a design rule: every random decision flows from
//! `(master_seed, stream_id)` through [`numkernel::derive_rng`], outputs are
//! written with round-trip exact float formatting, and reruns with the same
//! config and seed produce byte-identical artifacts.

pub mod classifier;
pub mod datastore;
mod error;
pub mod evaluator;
pub mod numkernel;
pub mod retrieval;
pub mod synthbench;
pub mod vfgan;

pub use error::{Error, Result};

/// Registry of RNG stream ids. Episode streams use the raw episode index, so
/// every other consumer sets bit 62 to stay out of that id space.
pub mod streams {
    const DOMAIN: u64 = 1 << 62;

    /// Base-head training inside an eval run.
    pub const BASE_HEAD: u64 = DOMAIN | 1;
    /// GAN training loop (init, shuffles, noise, interpolation).
    pub const GAN_TRAIN: u64 = DOMAIN | 2;
    /// Run-level few-shot draw of novel videos; feeds retrieval prototypes
    /// and the generator's novel training features.
    pub const NOVEL_SHOTS: u64 = DOMAIN | 3;
    /// Run-level pseudo-set assembly over all novel classes.
    pub const RETRIEVE: u64 = DOMAIN | 4;
    /// Synthetic bundle generation.
    pub const SYNTH: u64 = DOMAIN | 5;
}
