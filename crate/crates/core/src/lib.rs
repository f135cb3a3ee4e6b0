//! Hierarchical sub-action tree for continuous sign language recognition:
//! description clustering, per-frame path search, logit refinement, CTC,
//! layer-wise contrastive alignment and a small trainable model.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod contrastive;
pub mod ctc;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kmeans;
pub mod model;
pub mod refine;
pub mod scalar;
pub mod search;
pub mod synth;
pub mod tree;

pub use error::{HstError, Result};
pub use scalar::Scalar;

pub type Hst = tree::Hst<f64>;
pub type HstNode = tree::HstNode<f64>;
pub type DescriptionCorpus = data::DescriptionCorpus<f64>;
pub type VisualSequence = data::VisualSequence<f64>;
pub type LogitMatrix = data::LogitMatrix<f64>;
pub type PathSelection = search::PathSelection<f64>;
pub type LinearModel = model::LinearModel<f64>;
pub type SynthData = synth::SynthData<f64>;

pub type HstF32 = tree::Hst<f32>;
pub type DescriptionCorpusF32 = data::DescriptionCorpus<f32>;
pub type VisualSequenceF32 = data::VisualSequence<f32>;
pub type LogitMatrixF32 = data::LogitMatrix<f32>;
pub type LinearModelF32 = model::LinearModel<f32>;
