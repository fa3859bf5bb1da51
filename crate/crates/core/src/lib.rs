//! Analytics toolkit for scene-graph corpora.
//!
//! The crate covers the non-neural side of scene-graph parsing work:
//! bounding-box geometry, corpus ingestion, structural-regularity
//! statistics, PMI-based motif mining, the frequency relation
//! predictors, and recall@K evaluation across the standard task modes.

pub mod baseline;
pub mod eval;
pub mod geom;
pub mod graph;
pub mod ingest;
pub mod motifs;
pub mod stats;

pub use geom::BBox;
pub use graph::{Relation, SceneGraph, ScoredTriplet, Vocab, BG_INDEX};
