//! Sequential evidence routing for missing-modality candidate reranking.
//!
//! A reranking episode hands a policy a fixed candidate pool and a hidden
//! modality mask. The policy probes text, image and behavior tools, treats
//! `Null` returns as evidence about which modalities survive, and finally
//! emits a score map that is fused with the first-stage retrieval scores.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the bridge
//! server and the command line live in the `modalroute` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod environment;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod math;
pub mod policies;
pub mod retrieval;
pub mod training;

pub use error::{Error, Result};
