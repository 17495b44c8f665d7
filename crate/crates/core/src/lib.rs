//! Text-to-pose generation toolkit.
//!
//! A self-contained stack for generating 2D human pose sequences from
//! text: a pose VAE, a latent diffusion transformer with local feature
//! aggregation and a central global-attention block, contrastive
//! text–pose pre-training (CLoP) with a latent semantic alignment loss,
//! dataset curation filters over clip manifests, and the standard
//! generative-evaluation metrics (FID, R-precision, Diversity,
//! MultiModality, MM Dist).
//!
//! See the `book/` guide for concept chapters; its code snippets run as
//! doc-tests of this crate.

pub mod cli;
pub mod clop;
pub mod config;
pub mod curation;
pub mod data;
pub mod diffusion;
pub mod dit;
pub mod error;
pub mod checkpoint;
pub mod metrics;
pub mod nn;
pub mod pose;
pub mod tensor;
pub mod util;
pub mod vae;

pub use error::{Error, Result};
