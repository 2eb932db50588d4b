//! Wigner-function image corpus synthesis for coherent and cat states, plus
//! from-scratch LeNet/ResNet classifiers trained on it.
//!
//! - [`qstate`]: states and their Wigner functions
//! - [`render`]: colormap, PNG corpus, manifest, preprocessing and batching
//! - [`nn`]: tensors, layers, loss, Adam, checkpoints
//! - [`models`]: the two architectures and their parameter audit
//! - [`trainpipe`]: training, evaluation and result export

pub mod models;
pub mod nn;
pub mod qstate;
pub mod render;
pub mod rng;
pub mod trainpipe;

pub use qstate::ClassId;
