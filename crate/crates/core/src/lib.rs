//! Benchmark score prediction in the data kernel perspective space (DKPS).
//!
//! A target model's full-benchmark score is predicted from its responses to a
//! small query subset. The target and a pool of previously evaluated reference
//! models are embedded into a low-dimensional Euclidean space by classical
//! multidimensional scaling of the pairwise Frobenius distances between their
//! mean embedded responses; cached reference scores are then regressed onto
//! those coordinates.
//!
//! Module map:
//!
//! - [`cache`]: dataset model, on-disk layout, validation and views.
//! - [`geometry`]: mean embeddings, distance matrices, classical MDS.
//! - [`predictors`]: population mean, sample score, OLS / k-NN regression,
//!   ensembles and the IRT-augmented variants.
//! - [`irt`]: Rasch (1PL) item bank fitting and ability estimation.
//! - [`selection`]: offline query-set selection by reference goodness-of-fit.
//! - [`harness`]: leave-one-family-out evaluation, sweeps and reports.
//! - [`synth`]: synthetic model populations and theory experiments.
//! - [`config`]: TOML run configurations read by the `dkps` binary.

pub mod cache;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod irt;
mod pool;
pub mod predictors;
pub mod selection;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
