//! Core library for parallel-canvas control of a miniature joint
//! audio-visual diffusion transformer.
//!
//! Everything in this crate is pure computation over heap-allocated
//! buffers: a small f32 tensor type with a reverse-mode gradient tape,
//! an AdamW optimizer, the transformer backbone with per-token timestep
//! conditioning and strength-modulated reference attention, LoRA
//! adapters, canvas layout construction, rectified-flow noising and
//! sampling, the procedural scene generator, and the fidelity metrics.
//!
//! File formats, the CLI, and the training harness live in the
//! companion `avcanvas-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod canvas;
pub mod codec;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod lora;
mod mathf;
pub mod media;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod rope;
pub mod sequence;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
