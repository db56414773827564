//! Domain types and the RX detector: background fitting, covariance
//! regularization and inversion, and pixelwise Mahalanobis scoring.

mod fit;
pub mod linalg;
mod model_file;
mod score;

pub use fit::{fit_background, fit_local, DEFAULT_RIDGE_LAMBDA};
pub use model_file::{ModelFile, ModelFileError, MODEL_FORMAT_VERSION};
pub use score::{rx_score, score_cube, score_cube_with_fingerprint};

use thiserror::Error;

/// Errors raised by fitting and scoring.
#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("too few training pixels: {count} pixels for {n_bands} bands (need more pixels than bands)")]
    TooFewPixels { count: u64, n_bands: usize },
    #[error(
        "regularized covariance is not invertible with ridge_lambda = {ridge_lambda:e}; \
         raise ridge_lambda (e.g. --lambda 1e-6) or check for constant or duplicated bands"
    )]
    SingularCovariance { ridge_lambda: f64 },
    #[error("non-finite value in pixel {pixel} band {band}")]
    NonFiniteInput { pixel: u64, band: usize },
    #[error("dimension mismatch: expected {expected} bands, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cube brightness_corrected = {cube} but model brightness_corrected = {model}")]
    CorrectionModeMismatch { cube: bool, model: bool },
    #[error("ridge_lambda must be finite and non-negative, got {0}")]
    InvalidRidge(f64),
    #[error("pixel source failed: {0}")]
    Source(#[source] Box<dyn std::error::Error + Send + Sync>),
}

/// One narrow-band product scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandImage {
    pub filter_id: String,
    pub wavelength_nm: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` values.
    pub values: Vec<f64>,
}

/// An `H × W × n` stack of band values, stored pixel-interleaved in row-major
/// order so each pixel's spectrum is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelCube {
    width: usize,
    height: usize,
    band_wavelengths: Vec<f64>,
    data: Vec<f64>,
    brightness_corrected: bool,
}

impl PixelCube {
    /// Build a cube from interleaved data. Panics if the data length does not
    /// match `width * height * band_wavelengths.len()`.
    pub fn new(
        width: usize,
        height: usize,
        band_wavelengths: Vec<f64>,
        data: Vec<f64>,
        brightness_corrected: bool,
    ) -> Self {
        assert!(!band_wavelengths.is_empty(), "cube needs at least one band");
        assert_eq!(
            data.len(),
            width * height * band_wavelengths.len(),
            "cube data length must equal width × height × bands"
        );
        Self {
            width,
            height,
            band_wavelengths,
            data,
            brightness_corrected,
        }
    }

    /// Stack equally-sized band planes (each row-major) into a cube.
    pub fn from_planes(
        width: usize,
        height: usize,
        band_wavelengths: Vec<f64>,
        planes: &[Vec<f64>],
        brightness_corrected: bool,
    ) -> Self {
        let n = planes.len();
        assert_eq!(n, band_wavelengths.len());
        let pixels = width * height;
        let mut data = Vec::with_capacity(pixels * n);
        for p in 0..pixels {
            for plane in planes {
                data.push(plane[p]);
            }
        }
        Self::new(width, height, band_wavelengths, data, brightness_corrected)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_bands(&self) -> usize {
        self.band_wavelengths.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn band_wavelengths(&self) -> &[f64] {
        &self.band_wavelengths
    }

    pub fn brightness_corrected(&self) -> bool {
        self.brightness_corrected
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let n = self.n_bands();
        let start = (row * self.width + col) * n;
        &self.data[start..start + n]
    }

    /// Pixel spectra in row-major order.
    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.n_bands())
    }
}

/// Nearest-rank percentiles of RX scores over a model's training pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScorePercentiles {
    pub p01: f64,
    pub p50: f64,
    pub p99: f64,
    pub p999: f64,
    pub max: f64,
}

impl ScorePercentiles {
    /// Compute from an unsorted slice of scores; the slice is sorted in place.
    pub fn from_scores(scores: &mut [f64]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        scores.sort_unstable_by(f64::total_cmp);
        Some(Self {
            p01: crate::stats::nearest_rank_sorted(scores, 10),
            p50: crate::stats::nearest_rank_sorted(scores, 500),
            p99: crate::stats::nearest_rank_sorted(scores, 990),
            p999: crate::stats::nearest_rank_sorted(scores, 999),
            max: scores[scores.len() - 1],
        })
    }

    pub fn is_monotone(&self) -> bool {
        self.p01 <= self.p50 && self.p50 <= self.p99 && self.p99 <= self.p999 && self.p999 <= self.max
    }
}

/// Fitted RX background: mean spectrum, population covariance and the inverse
/// of the ridge-regularized covariance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    pub(crate) n_bands: usize,
    pub(crate) band_wavelengths: Vec<f64>,
    pub(crate) mu: Vec<f64>,
    pub(crate) sigma: Vec<f64>,
    pub(crate) sigma_inv: Vec<f64>,
    pub(crate) ridge_lambda: f64,
    pub(crate) brightness_corrected: bool,
    pub(crate) training_pixel_count: u64,
    pub(crate) score_percentiles: ScorePercentiles,
}

impl BackgroundModel {
    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    /// Filter wavelengths in band order; empty when the source carried none.
    pub fn band_wavelengths(&self) -> &[f64] {
        &self.band_wavelengths
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Population covariance, row-major `n × n`.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Inverse of the regularized covariance, row-major `n × n`.
    pub fn sigma_inv(&self) -> &[f64] {
        &self.sigma_inv
    }

    pub fn ridge_lambda(&self) -> f64 {
        self.ridge_lambda
    }

    /// Absolute ridge added to the covariance diagonal before inversion.
    pub fn ridge(&self) -> f64 {
        let n = self.n_bands;
        let mean_diag = (0..n).map(|i| self.sigma[i * n + i]).sum::<f64>() / n as f64;
        self.ridge_lambda * mean_diag
    }

    pub fn brightness_corrected(&self) -> bool {
        self.brightness_corrected
    }

    pub fn training_pixel_count(&self) -> u64 {
        self.training_pixel_count
    }

    pub fn score_percentiles(&self) -> &ScorePercentiles {
        &self.score_percentiles
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile::from_model(self)
    }

    /// Lowercase hex SHA-256 of the canonical model serialization.
    pub fn fingerprint(&self) -> String {
        self.to_file().fingerprint()
    }
}

/// Per-pixel RX scores for one sequence under one model.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyMap {
    pub sequence_id: String,
    pub model_fingerprint: String,
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` non-negative scores.
    pub scores: Vec<f64>,
}

impl NoveltyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }
}

/// A source of training spectra that can be traversed more than once, always
/// in the same order. Fitting makes three passes.
pub trait PixelSource {
    fn n_bands(&self) -> usize;

    /// Wavelengths recorded in the fitted model; may be empty.
    fn band_wavelengths(&self) -> Vec<f64> {
        Vec::new()
    }

    fn brightness_corrected(&self) -> bool {
        false
    }

    /// Visit every pixel spectrum in a fixed order. Stops at the first error
    /// from either the source or the visitor.
    fn for_each_pixel(&self, visit: &mut dyn FnMut(&[f64]) -> Result<(), SpectralError>) -> Result<(), SpectralError>;
}

impl PixelSource for PixelCube {
    fn n_bands(&self) -> usize {
        PixelCube::n_bands(self)
    }

    fn band_wavelengths(&self) -> Vec<f64> {
        self.band_wavelengths.clone()
    }

    fn brightness_corrected(&self) -> bool {
        self.brightness_corrected
    }

    fn for_each_pixel(&self, visit: &mut dyn FnMut(&[f64]) -> Result<(), SpectralError>) -> Result<(), SpectralError> {
        self.pixels().try_for_each(visit)
    }
}

/// In-memory training matrix: `rows × n_bands` values, one spectrum per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatrix {
    n_bands: usize,
    data: Vec<f64>,
}

impl PixelMatrix {
    pub fn new(n_bands: usize, data: Vec<f64>) -> Self {
        assert!(n_bands > 0);
        assert_eq!(data.len() % n_bands, 0, "data length must be a multiple of n_bands");
        Self { n_bands, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            assert_eq!(r.as_ref().len(), n, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(n, data)
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.n_bands)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_bands
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl PixelSource for PixelMatrix {
    fn n_bands(&self) -> usize {
        self.n_bands
    }

    fn for_each_pixel(&self, visit: &mut dyn FnMut(&[f64]) -> Result<(), SpectralError>) -> Result<(), SpectralError> {
        self.rows().try_for_each(visit)
    }
}
