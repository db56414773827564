use rayon::prelude::*;

use super::{BackgroundModel, NoveltyMap, PixelCube, SpectralError};

/// RX score `(x − μ)ᵀ Σ⁻¹ (x − μ)` under the model's regularized inverse.
///
/// The quadratic form of a positive-definite matrix is non-negative; rounding
/// residue below zero is clamped.
pub fn rx_score(pixel: &[f64], model: &BackgroundModel) -> Result<f64, SpectralError> {
    let n = model.n_bands;
    if pixel.len() != n {
        return Err(SpectralError::DimensionMismatch {
            expected: n,
            found: pixel.len(),
        });
    }
    Ok(quadratic_form(pixel, &model.mu, &model.sigma_inv, n))
}

#[inline]
fn quadratic_form(x: &[f64], mu: &[f64], inv: &[f64], n: usize) -> f64 {
    // n is at most a handful of bands; a stack buffer avoids allocation per pixel.
    let mut buf = [0.0_f64; 16];
    let mut heap;
    let d: &mut [f64] = if n <= buf.len() {
        &mut buf[..n]
    } else {
        heap = vec![0.0; n];
        &mut heap
    };
    for i in 0..n {
        d[i] = x[i] - mu[i];
    }
    let mut s = 0.0;
    for i in 0..n {
        let row = &inv[i * n..(i + 1) * n];
        let mut t = 0.0;
        for j in 0..n {
            t += row[j] * d[j];
        }
        s += d[i] * t;
    }
    s.max(0.0)
}

/// Score every pixel of a cube. The output has the cube's exact dimensions.
pub fn score_cube(cube: &PixelCube, model: &BackgroundModel) -> Result<NoveltyMap, SpectralError> {
    score_cube_with_fingerprint(cube, model, String::new(), model.fingerprint())
}

/// Like [`score_cube`] but with caller-supplied identifiers, so a fingerprint
/// computed once can be reused across many sequences.
pub fn score_cube_with_fingerprint(
    cube: &PixelCube,
    model: &BackgroundModel,
    sequence_id: String,
    model_fingerprint: String,
) -> Result<NoveltyMap, SpectralError> {
    let n = model.n_bands;
    if cube.n_bands() != n {
        return Err(SpectralError::DimensionMismatch {
            expected: n,
            found: cube.n_bands(),
        });
    }
    if cube.brightness_corrected() != model.brightness_corrected {
        return Err(SpectralError::CorrectionModeMismatch {
            cube: cube.brightness_corrected(),
            model: model.brightness_corrected,
        });
    }
    let scores: Vec<f64> = cube
        .data()
        .par_chunks_exact(n)
        .map(|x| quadratic_form(x, &model.mu, &model.sigma_inv, n))
        .collect();
    Ok(NoveltyMap {
        sequence_id,
        model_fingerprint,
        width: cube.width(),
        height: cube.height(),
        scores,
    })
}
