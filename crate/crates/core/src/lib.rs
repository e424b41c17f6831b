//! Bi-level modality weighting for a small multimodal mixture-of-experts
//! model.
//!
//! Per instance, each modality is weighted by the KL divergence between its
//! unimodal prediction and the multimodal one ([`weights::instance_kl_weights`]).
//! Per modality, the mutual information between those prediction series
//! scales the row ([`weights::modality_mi`]). Weights are smoothed across
//! epochs with an adaptive factor and multiply the modality embeddings of a
//! [`tinymoe`] model. [`trainloop::run_experiment`] ties it together on
//! [`synthdata`] datasets.
//!
//! The guide in `book/` walks through each piece with runnable listings.

pub mod distkl;
pub mod error;
pub mod metrics;
pub mod miest;
pub mod predictions;
pub mod seed;
pub mod synthdata;
pub mod tensor;
pub mod tinymoe;
pub mod trainloop;
pub mod weights;

pub use error::{Error, Result};
