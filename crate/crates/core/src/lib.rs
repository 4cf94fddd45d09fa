//! Supervised proxy latent space.
//!
//! A stack of affine coupling layers maps entangled latent codes into a
//! space where frozen linear attribute classifiers separate well, with large
//! margins, and where single-attribute edits leave other attributes alone.
//! The crate covers the autodiff engine, the flow, classifier and SVM
//! training, the loss terms and Adam loop, hyperplane editing, separability
//! /DCI/flip metrics, a synthetic entangled world and the file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod classifiers;
pub mod dataset;
pub mod editor;
pub mod error;
pub mod flow;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod persist;
pub mod space;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use classifiers::{ClassifierBank, LinearAttributeClassifier, SvmHyperplane};
pub use dataset::{LabeledLatentDataset, Provenance};
pub use error::{Error, Result};
pub use flow::FlowModel;
pub use par::Execution;
pub use space::{LatentSpace, Space};
pub use tensor::Tensor2;
pub use trainer::{TrainConfig, TrainedProxy};
