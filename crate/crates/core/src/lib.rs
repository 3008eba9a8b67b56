//! Diffusion-based target sampling for unsupervised domain adaptation.
//!
//! A classifier is first adapted from a labeled source to an unlabeled
//! target domain. Its pseudo-labels train a class-conditional denoising
//! diffusion model, whose class-balanced samples are added to the source
//! before the classifier is trained again.

pub mod cdpm;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod format;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod schedule;
pub mod solver;
pub mod uda;

pub use dataset::{Domain, DomainPair, LabeledDataset, TargetView};
pub use error::{Error, Result};
