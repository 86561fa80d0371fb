//! Monte-Carlo dropout uncertainty measures and patient-level aggregation.
//!
//! The crate takes per-image predictive sample matrices (T stochastic forward
//! passes of a binary stroke / no-stroke classifier), summarizes each image by
//! its mean probability and a set of uncertainty measures, and combines the
//! images of a patient into a single diagnosis with one of several
//! aggregation models: the Maximum rule, fully connected networks over the
//! five most suspicious images, and 1D convolutional networks over the whole
//! slice sequence. Evaluation covers accuracy with Wilson intervals,
//! calibration (Sanders' score), ROC/AUC of uncertainty-based error detection
//! and uncertainty-informed removal curves, under stratified five-fold
//! cross-validation.
//!
//! | module | purpose |
//! |--------|---------|
//! | [`predstore`] | cohort data model and the long-format samples CSV |
//! | [`measures`] | per-image mean probability and uncertainty summary |
//! | [`nnkernel`] | tiny 64-bit network engine: layers, backprop, Adam |
//! | [`aggregate`] | features, aggregation models, training, patient MC dropout |
//! | [`evalmetrics`] | Wilson intervals, calibration, ROC/AUC, removal curves |
//! | [`synthcohort`] | seeded synthetic cohorts |
//! | [`pipeline`] | fold plans and the cross-validation runner |
//! | [`report`] | CSV / JSON writers for measures, predictions and plot data |
//! | [`cli`] | the `mcdagg` command line |

pub mod aggregate;
pub mod cli;
pub mod error;
pub mod evalmetrics;
pub mod fsutil;
pub mod measures;
pub mod nnkernel;
pub mod pipeline;
pub mod predstore;
pub mod report;
pub mod seeds;
pub mod synthcohort;

pub use error::{Error, Result};
