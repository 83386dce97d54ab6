//! Materials-text pipeline: corpora, marker codec, embedding classification,
//! example retrieval, prompt assembly, a completion/embedding gateway and
//! evaluation.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod marker;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod shuffle;
pub mod text;

pub use error::{Error, Result};
