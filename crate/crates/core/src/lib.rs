//! Core algorithms for location-aware chest X-ray classification.
//!
//! * [`report`]: dictionary- and rule-based extraction of findings with
//!   context, laterality and anatomical location from report text.
//! * [`atlas`]: the 17 location labels, their canonical boxes, masks and IOU.
//! * [`synth`]: procedural phantom images with matching reports.
//! * [`text2box`]: image + location-phrase box regressor (conv encoder fused
//!   with a Bi-LSTM).
//! * [`gain`]: Grad-CAM, soft masking and the attention-guided composite loss.
//! * [`metrics`]: AUROC, precision/recall curves and attention-in-box.
//! * [`nn`]: the reverse-mode tape these networks run on.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, images on disk
//! and the command line live in the `cxr` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod atlas;
pub mod error;
pub mod gain;
pub mod image;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod synth;
pub mod text2box;

pub use error::{Error, Result};
