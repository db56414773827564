//! Multispectral novelty triage: an RX (Reed–Xiaoli) background fitted over an
//! archive of six-band image sequences scores every pixel by Mahalanobis
//! distance. Scores are rendered as heat maps and aggregated per sequence to
//! rank what an analyst should look at first.
//!
//! Modules:
//! - [`spectral`]: domain types, background fitting, pixelwise scoring
//! - [`ingest`]: manifests, product decoding, cube assembly, training stream
//! - [`render`]: normalization, colormaps, PNG encoding
//! - [`triage`]: aggregation, ranking, Spearman correlation, score store
//! - [`maps`]: raw score-map file format
//! - [`synthetic`]: reproducible synthetic archives for tests and benchmarks

#![allow(clippy::needless_range_loop)] // index loops read closer to the matrix algebra

pub mod ingest;
mod io_util;
pub mod maps;
pub mod pipeline;
pub mod render;
pub mod spectral;
pub mod stats;
pub mod synthetic;
pub mod triage;

pub use io_util::write_atomic;
pub use spectral::{
    fit_background, fit_local, rx_score, score_cube, BackgroundModel, NoveltyMap, PixelCube, PixelMatrix, PixelSource,
    ScorePercentiles, SpectralError,
};
pub use triage::{aggregate, rank, spearman, RankKey, SequenceScore, SortOrder};
