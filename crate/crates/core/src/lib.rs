//! Event-camera representation math, structure-generation losses and
//! RGB-event fusion kernels for traffic object detection, together with the
//! dataset and mAP tooling around them.
//!
//! Modules:
//!
//! - [`event`]: event model, `EVT1`/CSV codecs, slicing, frame-pair simulation
//! - [`represent`]: timestamp frame, polarity volume, PNG rendering
//! - [`structure`]: edge supervision, local correlation and TV losses, SIF fitting
//! - [`fusion`]: convolution/pooling primitives, ERM, LDAM, AFCM
//! - [`dataset`]: annotations, homographies, box filtering, splits
//! - [`eval`]: IoU, matching, AP, mAP
//! - [`synthetic`]: moving-bar test scene
//! - [`tensor`]: dense `f32` tensors and the `TNSR` container

pub mod dataset;
pub mod eval;
pub mod event;
pub mod fusion;
pub mod represent;
pub mod structure;
pub mod synthetic;
pub mod tensor;

pub use tensor::Tensor;
