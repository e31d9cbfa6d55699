//! Cross-view person re-identification toolkit.
//!
//! The pipeline matches person images across two camera views:
//!
//! 1. [`descriptor`] turns each image into 20 channel descriptors
//!    (HS / RGB / Lab / HOG / LBP histograms over the full image and
//!    three horizontal body regions).
//! 2. [`kernels`] computes Gram matrices per channel under four kernels
//!    (linear, RBF, chi-squared, exponential chi-squared).
//! 3. [`kcca`] learns a regularized canonical correlation projection per
//!    (channel, kernel) pair so that views of the same person correlate,
//!    and scores gallery/probe pairs by cosine distance in the projected
//!    space.
//! 4. [`fusion`] stacks the 80 per-pair distances into a profile and
//!    learns fusion weights by L2-regularized logistic regression,
//!    iteratively dropping kernel-channels whose weight comes out
//!    positive (an unreliable sign for a distance).
//! 5. [`eval`] provides the split protocols, CMC curves, trial averaging
//!    and the filtering-frequency report.
//!
//! [`pipeline`] orchestrates extract / train / eval / synth end to end;
//! the `reidkit` binary in the sibling CLI crate is a thin wrapper over
//! it. [`synth`] renders a deterministic two-camera toy dataset so the
//! whole pipeline can be exercised without any real dataset.

pub mod config;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod kcca;
pub mod kernels;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
