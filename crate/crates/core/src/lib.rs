//! Dual-view contrastive pretraining for legal judgment prediction.
//!
//! A text encoder is pretrained with two InfoNCE views: case clustering
//! pulls a fact toward a same-label case and away from confusable
//! different-label ones, and decision matching pulls a fact toward the
//! verbalized article/charge decision it belongs to. Classifier heads for
//! articles, charges and term of penalty are then fine-tuned on top.
//!
//! ```
//! use duet::corpus::{generate, SynthConfig};
//!
//! let corpus = generate(&SynthConfig { cases_per_cluster: 4, ..Default::default() });
//! assert_eq!(corpus.cases.len(), 24);
//! ```

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod miner;
pub mod objective;
pub mod trainer;
pub mod verbalizer;

mod fsio;
mod rng;

pub use error::{Error, Result};
