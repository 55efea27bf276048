//! Predicting the highest-priority functional group of an organic molecule
//! from its FTIR spectrum.
//!
//! The pipeline runs raster plot → [`digitizer`] → [`preprocess`] (404-point
//! normalized vector) → a classifier ([`neuralnet`] CNN or the linear SVM in
//! [`baselines`]) → the cross-validation protocol in [`evaluation`].
//! [`synthgen`] produces labelled synthetic spectra for desk-scale runs.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod digitizer;
mod error;
pub mod evaluation;
pub mod modelio;
pub mod neuralnet;
pub mod preprocess;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    class_counts, priority_of, CsvMeta, Dataset, FunctionalGroup, LabeledSpectrum, RngSeed,
    Spectrum, INPUT_LENGTH, N_CLASSES,
};
