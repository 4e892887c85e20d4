//! Dialogue-act tagging with a dual-attention hierarchical recurrent network
//! and linear-chain CRFs, plus the LDA pipeline that mints the auxiliary
//! topic labels.

pub mod ablation;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod lda;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tagger;
pub mod train;
mod util;

pub use error::{Error, Result};
pub use util::derive_seed;
