//! Pure algorithmic core of the rag3d pipeline.
//!
//! Everything here is `no_std` with `alloc`: hashing embeddings, exact top-k
//! cosine search, the index snapshot codec, corpus schema checks and code
//! length statistics, prompt assembly under a token budget, fenced-code
//! extraction, standardized camera framing, and the compilation / alignment
//! metrics. Filesystem, network and process handling live in the `rag3d`
//! crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod camera;
pub mod corpus;
pub mod embedding;
pub mod index;
pub mod metrics;
pub mod prompt;
pub mod snapshot;

use serde::{Deserialize, Serialize};

/// Whether generation is conditioned on retrieved exemplars.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Base,
    Rag,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Base => "base",
            Mode::Rag => "rag",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Mode::Base),
            "rag" => Ok(Mode::Rag),
            other => Err(alloc::format!(
                "unknown mode `{other}` (expected base or rag)"
            )),
        }
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}
