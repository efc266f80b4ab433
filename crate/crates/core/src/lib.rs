//! Unified semantic graphs for graph-augmented abstractive summarization.
//!
//! The crate covers the whole path from linguistic annotations to decoded
//! summaries:
//!
//! * [`annotation`] ingests tokens, dependency trees and coreference chains.
//! * [`build`] merges tokens into phrases and co-referent phrases into typed
//!   graph nodes.
//! * [`augment`] adds reverse edges, self-loops, shortcut edges and a
//!   supernode, and produces the degree-normalised adjacency `Â = A D⁻¹`.
//! * [`model`] is a desk-scale encoder-decoder whose decoder uses
//!   graph-propagate attention; [`tape`] provides its gradients.
//! * [`harness`] trains it on a synthetic task and decodes with beam search
//!   and trigram blocking.

pub mod annotation;
pub mod augment;
pub mod build;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod metapath;
pub mod model;
pub mod selfcheck;
pub mod stats;
pub mod tape;

mod error;

pub use error::{Error, Result};

/// The guide's chapters, compiled so their examples stay current.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/annotations.md")]
    mod annotations {}
    #[doc = include_str!("../../../book/src/construction.md")]
    mod construction {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
}
