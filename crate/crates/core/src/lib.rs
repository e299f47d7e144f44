//! Gendered pronoun resolution toolkit: GAP corpus handling, name
//! anonymization with offset remapping, mention-embedding storage, two small
//! classifier heads, and ensembling/evaluation utilities.

pub mod anonymizer;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod pipeline;

pub use error::{Error, Result};
