//! Versioned JSON model document and its content fingerprint.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::linalg::Cholesky;
use super::{BackgroundModel, ScorePercentiles};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot read or write model file: {0}")]
    Io(#[from] io::Error),
    #[error("malformed model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format_version {0} (expected {MODEL_FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// On-disk model schema. Matrices are nested row arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub n_bands: usize,
    pub band_wavelengths: Vec<f64>,
    pub brightness_corrected: bool,
    pub ridge_lambda: f64,
    pub training_pixel_count: u64,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub sigma_inv: Vec<Vec<f64>>,
    pub score_percentiles: ScorePercentiles,
}

fn to_rows(flat: &[f64], n: usize) -> Vec<Vec<f64>> {
    flat.chunks_exact(n).map(<[f64]>::to_vec).collect()
}

impl ModelFile {
    pub fn from_model(model: &BackgroundModel) -> Self {
        let n = model.n_bands;
        Self {
            format_version: MODEL_FORMAT_VERSION,
            n_bands: n,
            band_wavelengths: model.band_wavelengths.clone(),
            brightness_corrected: model.brightness_corrected,
            ridge_lambda: model.ridge_lambda,
            training_pixel_count: model.training_pixel_count,
            mu: model.mu.clone(),
            sigma: to_rows(&model.sigma, n),
            sigma_inv: to_rows(&model.sigma_inv, n),
            score_percentiles: model.score_percentiles,
        }
    }

    /// Sorted-key, whitespace-free JSON used for fingerprinting.
    pub fn canonical_json(&self) -> String {
        // serde_json::Value objects are BTreeMap-backed, so keys come out sorted.
        let value = serde_json::to_value(self).expect("model serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Validate structure and invariants, then build the in-memory model.
    pub fn into_model(self) -> Result<BackgroundModel, ModelFileError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelFileError::Version(self.format_version));
        }
        let n = self.n_bands;
        let invalid = |msg: String| Err(ModelFileError::Invalid(msg));
        if n == 0 {
            return invalid("n_bands must be positive".into());
        }
        if !self.band_wavelengths.is_empty() && self.band_wavelengths.len() != n {
            return invalid(format!(
                "band_wavelengths has {} entries for {n} bands",
                self.band_wavelengths.len()
            ));
        }
        if self.mu.len() != n {
            return invalid(format!("mu has {} entries for {n} bands", self.mu.len()));
        }
        for (name, m) in [("sigma", &self.sigma), ("sigma_inv", &self.sigma_inv)] {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return invalid(format!("{name} must be {n}×{n}"));
            }
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return invalid("ridge_lambda must be finite and non-negative".into());
        }
        if self.training_pixel_count <= n as u64 {
            return invalid("training_pixel_count must exceed n_bands".into());
        }
        let p = &self.score_percentiles;
        let all_finite = self
            .mu
            .iter()
            .chain(self.sigma.iter().flatten())
            .chain(self.sigma_inv.iter().flatten())
            .chain(self.band_wavelengths.iter())
            .chain([p.p01, p.p50, p.p99, p.p999, p.max].iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return invalid("non-finite number in model".into());
        }
        if !p.is_monotone() {
            return invalid("score_percentiles must be non-decreasing".into());
        }
        let sigma: Vec<f64> = self.sigma.concat();
        let sigma_inv: Vec<f64> = self.sigma_inv.concat();
        for i in 0..n {
            for j in 0..n {
                if (sigma[i * n + j] - sigma[j * n + i]).abs() > 1e-9
                    || (sigma_inv[i * n + j] - sigma_inv[j * n + i]).abs() > 1e-9
                {
                    return invalid("sigma and sigma_inv must be symmetric".into());
                }
            }
        }
        if Cholesky::factor(&sigma_inv, n).is_none() {
            return invalid("sigma_inv is not positive definite".into());
        }
        Ok(BackgroundModel {
            n_bands: n,
            band_wavelengths: self.band_wavelengths,
            mu: self.mu,
            sigma,
            sigma_inv,
            ridge_lambda: self.ridge_lambda,
            brightness_corrected: self.brightness_corrected,
            training_pixel_count: self.training_pixel_count,
            score_percentiles: self.score_percentiles,
        })
    }
}

impl BackgroundModel {
    /// Pretty-printed model JSON with a trailing newline.
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        serde_json::from_str::<ModelFile>(text)?.into_model()
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Write atomically (temp file in the target directory, then rename).
    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        crate::io_util::write_atomic(path, self.to_json_pretty().as_bytes())?;
        Ok(())
    }
}
