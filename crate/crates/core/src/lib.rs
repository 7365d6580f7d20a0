//! Attention-augmented encoder-decoder segmentation for single-channel
//! images, implemented from scratch on a small reverse-mode autodiff
//! substrate.
//!
//! The stack, bottom up: dense tensors over f32/f64 (`tensor`, `scalar`),
//! forward kernels and their hand-derived adjoints (`ops`), a Wengert-tape
//! autodiff engine (`tape`), squeeze-excitation and convolutional
//! channel+spatial attention blocks (`attention`), the encoder-decoder
//! network in three variants (`segnet`), dataset and augmentation plumbing
//! (`datapipe`), training with the combined cross-entropy/Dice objective
//! plus metrics and checkpoints (`trainer`), finite-difference gradient
//! verification (`gradcheck`), and latency/memory benchmarking (`bench`).
//! Everything is deterministic given seeds, and single-threaded.

pub mod attention;
pub mod bench;
pub mod datapipe;
pub mod error;
pub mod gradcheck;
pub mod memtrack;
pub mod ops;
pub mod scalar;
pub mod segnet;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use segnet::{NetConfig, SegNet, SkipMode, Variant};
pub use tensor::{Parameter, Tensor};
