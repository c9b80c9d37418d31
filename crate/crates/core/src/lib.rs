//! Frame-semantic parsing toolkit.
//!
//! Two text encodings of frame parses (a single generative `span = Role`
//! format and a two-task indexed format), a small multi-task
//! encoder-decoder trained from scratch, EMA loss balancing over
//! single-task batches, two-stage inference, and Exact/Soft/Global Match
//! scoring.

pub mod cli;
pub mod codec;
pub mod corpus;
pub mod fsutil;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod training;
