//! Multi-view transformer for 3D visual grounding.
//!
//! Everything here is pure computation over `alloc` collections: a small
//! reverse-mode autodiff engine, z-axis view geometry, a synthetic
//! referring-expression scene generator, and the grounding model itself.
//! File formats, training orchestration, and the CLI live in the `mvt` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod geometry;
pub mod language;
pub mod model;
pub mod nn;
pub mod object_encoder;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{concat, stack, Gradients, Graph, Var};
pub use tensor::Tensor;
