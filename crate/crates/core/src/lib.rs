//! Speaker verification and diarization: shard IO, a training feature
//! pipeline, a TDNN embedder, margin-softmax heads, PLDA and score
//! normalisation, and clustering-based diarization.
//!
//! The guide in `book/` walks through each part with runnable examples.

pub mod backend;
pub mod config;
pub mod diarize;
pub mod embedder;
pub mod error;
pub mod featpipe;
pub mod losses;
pub mod session;
pub mod tensor;
pub mod uio;

pub use error::{Error, Result};

/// The guide's chapters, compiled so their listings run as doctests.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub struct $name;
        };
    }

    chapter!(Introduction, "introduction.md");
    chapter!(Data, "data.md");
    chapter!(Features, "features.md");
    chapter!(Embedder, "embedder.md");
    chapter!(Training, "training.md");
    chapter!(Scoring, "scoring.md");
    chapter!(Diarization, "diarization.md");
    chapter!(Cli, "cli.md");
}
