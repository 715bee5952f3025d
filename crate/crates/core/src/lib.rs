//! Plan language, household simulator, tool sandbox and agent loops for
//! codified LLM planning.
//!
//! The crate is `no_std` with `alloc`; IO, HTTP and the CLI live in the
//! `codeagents` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod executor;
pub mod gateway;
pub mod metrics;
pub mod orchestrator;
pub mod plan;
pub mod replan;
pub mod tools;
pub mod world;

#[cfg(any(test, feature = "strategies"))]
pub mod strategies;

pub use plan::PlanAst;
