//! Guide snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}
#[doc = include_str!("../../../book/src/concepts/corpus.md")]
pub mod corpus {}
#[doc = include_str!("../../../book/src/concepts/encoder.md")]
pub mod encoder {}
#[doc = include_str!("../../../book/src/concepts/objective.md")]
pub mod objective {}
#[doc = include_str!("../../../book/src/concepts/mining.md")]
pub mod mining {}
#[doc = include_str!("../../../book/src/concepts/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/concepts/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/reference/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/reference/formats.md")]
pub mod formats {}
#[doc = include_str!("../../../book/src/reference/config.md")]
pub mod config {}
