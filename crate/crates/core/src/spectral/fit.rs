use super::linalg::Cholesky;
use super::{rx_score, BackgroundModel, PixelCube, PixelSource, ScorePercentiles, SpectralError};

/// Relative ridge applied when the caller does not choose one.
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-6;

/// Fit an RX background over every spectrum the source yields.
///
/// Three passes: mean, population covariance (1/N), then scoring every
/// training pixel to record score percentiles. The inverse is taken of
/// `Σ + ridge_lambda · mean(diag Σ) · I`.
pub fn fit_background<S: PixelSource + ?Sized>(
    source: &S,
    ridge_lambda: f64,
) -> Result<BackgroundModel, SpectralError> {
    if !ridge_lambda.is_finite() || ridge_lambda < 0.0 {
        return Err(SpectralError::InvalidRidge(ridge_lambda));
    }
    let n = source.n_bands();

    let mut count: u64 = 0;
    let mut sum = vec![0.0_f64; n];
    source.for_each_pixel(&mut |x| {
        if x.len() != n {
            return Err(SpectralError::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        for (band, (&v, s)) in x.iter().zip(sum.iter_mut()).enumerate() {
            if !v.is_finite() {
                return Err(SpectralError::NonFiniteInput { pixel: count, band });
            }
            *s += v;
        }
        count += 1;
        Ok(())
    })?;

    if count <= n as u64 {
        return Err(SpectralError::TooFewPixels { count, n_bands: n });
    }
    let inv_n = 1.0 / count as f64;
    let mu: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();

    // Upper triangle of the centered co-moment matrix.
    let mut comoment = vec![0.0_f64; n * n];
    let mut d = vec![0.0_f64; n];
    let mut seen: u64 = 0;
    source.for_each_pixel(&mut |x| {
        if x.len() != n {
            return Err(SpectralError::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        for i in 0..n {
            d[i] = x[i] - mu[i];
        }
        for i in 0..n {
            for j in i..n {
                comoment[i * n + j] += d[i] * d[j];
            }
        }
        seen += 1;
        Ok(())
    })?;
    if seen != count {
        return Err(SpectralError::Source(
            format!("pixel source is not re-iterable: first pass saw {count} pixels, second {seen}").into(),
        ));
    }

    let mut sigma = vec![0.0_f64; n * n];
    for i in 0..n {
        for j in i..n {
            let c = comoment[i * n + j] * inv_n;
            sigma[i * n + j] = c;
            sigma[j * n + i] = c;
        }
    }

    let mean_diag = (0..n).map(|i| sigma[i * n + i]).sum::<f64>() / n as f64;
    let ridge = ridge_lambda * mean_diag;
    let mut regularized = sigma.clone();
    for i in 0..n {
        regularized[i * n + i] += ridge;
    }
    let sigma_inv = Cholesky::factor(&regularized, n)
        .ok_or(SpectralError::SingularCovariance { ridge_lambda })?
        .inverse();

    let mut model = BackgroundModel {
        n_bands: n,
        band_wavelengths: source.band_wavelengths(),
        mu,
        sigma,
        sigma_inv,
        ridge_lambda,
        brightness_corrected: source.brightness_corrected(),
        training_pixel_count: count,
        score_percentiles: ScorePercentiles {
            p01: 0.0,
            p50: 0.0,
            p99: 0.0,
            p999: 0.0,
            max: 0.0,
        },
    };

    let mut scores = Vec::with_capacity(usize::try_from(count).unwrap_or(0));
    source.for_each_pixel(&mut |x| {
        scores.push(rx_score(x, &model)?);
        Ok(())
    })?;
    model.score_percentiles = ScorePercentiles::from_scores(&mut scores).expect("count > n_bands ≥ 1 scores");
    Ok(model)
}

/// Fit a background to a single cube's own pixels.
pub fn fit_local(cube: &PixelCube, ridge_lambda: f64) -> Result<BackgroundModel, SpectralError> {
    fit_background(cube, ridge_lambda)
}
