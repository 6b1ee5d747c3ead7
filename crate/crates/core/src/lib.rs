//! Retrieval-augmented question answering over archives of dated personal
//! texts: hybrid lexical and semantic search, guarded text-to-SQL filters,
//! and answers whose citation markers link back to the sources.
//!
//! The guide in `book/` walks through each stage; its examples run as doctests.

pub mod assistant;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod kb;
pub mod lexical;
pub mod llm;
pub mod sql;
pub mod vector;

pub use error::{Error, GatewayErrorKind, Result};
pub use kb::{KnowledgeBase, SchemaDescription};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/sql.md")]
    mod sql {}
    #[doc = include_str!("../../../book/src/conversation.md")]
    mod conversation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
