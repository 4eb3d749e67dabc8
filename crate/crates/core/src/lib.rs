//! Verifiable text-to-image retrieval.
//!
//! A query is parsed into subject-predicate-object triplets, each triplet is
//! compiled into a small register program, and the programs run against
//! perception backends to produce per-image verdicts. Verdicts become exact
//! truth scores that rank, or rerank, a candidate list.

pub mod backend;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod model;
pub mod parser;
pub mod pipeline;
pub mod ranking;
pub mod routine;
pub mod synth;
pub mod vm;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/queries.md")]
    mod queries {}
    #[doc = include_str!("../../../book/src/routines.md")]
    mod routines {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/detector-protocol.md")]
    mod detector_protocol {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
