//! Std side of the codified-agent toolkit: file formats, the transcript
//! store, model backends and the suite runner behind the `codeagents` CLI.

pub mod backend;
pub mod config;
pub mod formats;
pub mod harness;
pub mod store;

pub use codeagents_core as core;
