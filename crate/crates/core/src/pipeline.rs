//! Per-sequence glue shared by the command line and the HTTP service.

use thiserror::Error;

use crate::ingest::{self, ArchiveManifest, IngestError, SequenceRecord};
use crate::render::{self, ColorMap, NormalizationMode, RenderError};
use crate::spectral::{self, BackgroundModel, NoveltyMap, SpectralError};
use crate::triage::{self, SequenceScore, TriageError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Triage(#[from] TriageError),
}

/// Fit a model over every sequence of an (already filtered) manifest.
pub fn fit_archive(
    manifest: &ArchiveManifest,
    brightness_correct: bool,
    ridge_lambda: f64,
) -> Result<BackgroundModel, PipelineError> {
    let source = ingest::training_pixel_stream(manifest, brightness_correct);
    spectral::fit_background(&source, ridge_lambda).map_err(|e| match e {
        SpectralError::Source(inner) => match inner.downcast::<IngestError>() {
            Ok(ingest) => PipelineError::Ingest(*ingest),
            Err(other) => PipelineError::Spectral(SpectralError::Source(other)),
        },
        other => PipelineError::Spectral(other),
    })
}

/// Load one sequence in the model's correction mode and score every pixel.
pub fn score_sequence(
    record: &SequenceRecord,
    model: &BackgroundModel,
    fingerprint: &str,
) -> Result<NoveltyMap, PipelineError> {
    let cube = ingest::load_cube(record, model.brightness_corrected())?;
    Ok(spectral::score_cube_with_fingerprint(
        &cube,
        model,
        record.sequence_id.clone(),
        fingerprint.to_string(),
    )?)
}

pub fn score_and_aggregate(
    record: &SequenceRecord,
    model: &BackgroundModel,
    fingerprint: &str,
) -> Result<(NoveltyMap, SequenceScore), PipelineError> {
    let map = score_sequence(record, model, fingerprint)?;
    let score = triage::aggregate(&map)?;
    Ok((map, score))
}

/// Score and render one sequence's heat map as PNG bytes.
pub fn render_sequence(
    record: &SequenceRecord,
    model: &BackgroundModel,
    fingerprint: &str,
    mode: NormalizationMode,
    colormap: &ColorMap,
) -> Result<Vec<u8>, PipelineError> {
    let map = score_sequence(record, model, fingerprint)?;
    Ok(render::render_png(
        &map,
        mode,
        Some(model.score_percentiles()),
        colormap,
    )?)
}
