//! Std companion to `rag3d-core`: everything that touches files, the
//! network or child processes.
//!
//! The request path mirrors the interactive tool: a query is embedded
//! ([`embedder`]), matched against the exemplar index ([`store`],
//! [`retrieval`]), injected into a prompt, sent to a chat model
//! ([`gateway`]), and the returned script is executed and rendered in a
//! headless modeling host ([`executor`]). [`session`] strings those steps
//! together with refinement history, [`evaluation`] measures them, and
//! [`service`] and [`cli`] expose them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod executor;
pub mod gateway;
pub mod retrieval;
pub mod service;
pub mod session;
pub mod store;
mod sync;

pub use rag3d_core as core;
pub use rag3d_core::Mode;
