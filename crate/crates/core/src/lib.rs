//! Fused-classification differential face morphing detection.
//!
//! Two independent networks look at a pair of face images: the *first* network
//! sees the suspect (document) image, the *second* sees a trusted live capture.
//! Both are trained on identity classification with different label assignments
//! for morphs, plus a binary loss on the dot product of their features that
//! decides whether the pair is a morph attack.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense layers, softmax/sigmoid primitives, SGD with momentum and
//!   a finite-difference gradient checker.
//! - [`loss`]: the fused objective (two identity losses and the cross-label
//!   binary loss) and label allocation for the V1/V2 variants.
//! - [`image`], [`synth`]: grayscale images, PGM I/O and a procedural
//!   identity-conditioned face generator.
//! - [`morph`]: Delaunay triangulation, piecewise-affine warping, landmark
//!   and latent morphs, selfmorphs.
//! - [`manifest`], [`datamine`]: dataset records, identity splits, morph
//!   pairing, balancing and pair sampling.
//! - [`trainer`], [`checkpoint`]: dual-network training and persistence.
//! - [`evalbench`]: differential protocols, APCER/BPCER, DET curves, score
//!   fusion and method comparison.
//! - [`desk`]: end-to-end in-memory experiment pipeline used by the CLI and
//!   the acceptance suite.

pub mod checkpoint;
pub mod datamine;
pub mod desk;
pub mod error;
pub mod evalbench;
pub mod image;
pub mod loss;
pub mod manifest;
pub mod morph;
pub mod nn;
pub mod seed;
pub mod selftest;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
