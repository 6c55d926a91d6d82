//! Knowledge-graph driven auditing of DeFi smart contracts.
//!
//! [`graph`] holds the typed graph. [`builder`] fills it from past projects
//! and their audit reports. [`orchestrator`] uses it to map a new project
//! onto known semantic and vulnerability pairs, then specifies, fuzzes and
//! judges each pair in turn. All model traffic goes through [`llm`].
//!
//! The book under `book/` walks through each piece with runnable examples.

pub mod builder;
pub mod fixture;
pub mod fuzz;
pub mod graph;
pub mod harness;
pub mod ingest;
pub mod llm;
pub mod orchestrator;
pub mod specification;
pub mod taxonomy;

// The book's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/building.md")]
    mod building {}
    #[doc = include_str!("../../../book/src/gateway.md")]
    mod gateway {}
    #[doc = include_str!("../../../book/src/audit.md")]
    mod audit {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
