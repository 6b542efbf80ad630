//! Trackerless freehand ultrasound reconstruction toolkit.
//!
//! The pipeline turns a sequence of 2D ultrasound frames into the 3D rigid
//! transforms that relate them, without an external tracker:
//!
//! * [`geometry`] — SE(3) algebra and the ground-truth relative-transform
//!   construction shared by every other module.
//! * [`dataio`] — on-disk scan container, loader/validator and train/val/test
//!   split bookkeeping.
//! * [`sampling`] — fixed-length sub-sequence sampling and transformation-task
//!   selection, with the sequence length `M` and main-task indices `(i*, j*)`
//!   exposed as first-class hyperparameters.
//! * [`objective`] — the multi-transformation point loss and its gradient.
//! * [`nn`] — small dense/convolutional/recurrent building blocks with manual
//!   backprop, used by the prediction backends.
//! * [`backends`] — interchangeable prediction backends (feed-forward,
//!   recurrent, adjacent-frame baseline) behind one trait, a named registry,
//!   checkpointing, and the training loop.
//! * [`reconstruct`] — whole-scan trajectory chaining and the four evaluation
//!   metrics.
//! * [`synthdata`] — procedural tracked-scan generator with exact ground truth.
//! * [`harness`] — hyperparameter sweeps, variance-reduction ablations, and
//!   report/plot emission.

pub mod backends;
pub mod dataio;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod objective;
pub mod plot;
pub mod reconstruct;
pub mod sampling;
pub mod synthdata;
