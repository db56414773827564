//! Reproducible synthetic sequence archives.
//!
//! Each pixel spectrum is `b · s + δ + e`: a reference spectrum `s` scaled by
//! a brightness factor `b` (sequence illumination times per-pixel texture), a
//! per-sequence terrain offset `δ`, and band noise `e` whose correlation decays
//! with band distance. Brightness variation makes all bands strongly correlated,
//! as in real multispectral scenes. The RGB reference product tracks `b`.
//!
//! An optional implanted anomaly displaces a square patch by a multiple of the
//! sequence's per-band standard deviation in chosen bands.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ingest::{Eye, ManifestBand, ManifestLine};

/// Left-eye narrow-band filter centers (nm).
pub const LEFT_EYE_WAVELENGTHS: [f64; 6] = [445.0, 527.0, 676.0, 751.0, 867.0, 1012.0];

/// Reference reflectance-like spectrum in `[0, 1]`.
pub const BASE_SPECTRUM: [f64; 6] = [0.22, 0.30, 0.42, 0.46, 0.50, 0.52];

const RGB_TINT: [f64; 3] = [0.62, 0.50, 0.38];

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySpec {
    pub sequence_index: usize,
    pub row: usize,
    pub col: usize,
    pub size: usize,
    /// Zero-based band indices to displace.
    pub bands: Vec<usize>,
    /// Displacement in units of the sequence's per-band standard deviation.
    pub sigmas: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveSpec {
    pub n_sequences: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Per-pixel brightness texture (relative standard deviation).
    pub texture_sd: f64,
    /// Band noise standard deviation.
    pub noise_sd: f64,
    /// Correlation of band noise between adjacent filters.
    pub noise_adjacent_corr: f64,
    /// Sequence illumination is drawn uniformly from this range.
    pub illumination: (f64, f64),
    /// Standard deviation of each sequence's terrain offset, per band.
    pub terrain_sd: f64,
    /// Sequences whose whole scene is spectrally unusual: (index, offset per band).
    pub unusual_terrain: Vec<(usize, [f64; 6])>,
    pub anomaly: Option<AnomalySpec>,
    /// Sequences marked as imaging the calibration target.
    pub cal_target: Vec<usize>,
    pub first_sol: u32,
}

impl Default for ArchiveSpec {
    fn default() -> Self {
        Self {
            n_sequences: 50,
            width: 140,
            height: 100,
            seed: 0x5EED_2021,
            texture_sd: 0.08,
            noise_sd: 0.01,
            noise_adjacent_corr: 0.6,
            illumination: (0.8, 1.2),
            terrain_sd: 0.004,
            unusual_terrain: Vec::new(),
            anomaly: None,
            cal_target: Vec::new(),
            first_sol: 100,
        }
    }
}

impl ArchiveSpec {
    /// The triage scenario: 50 sequences of 140×100, one carrying a 5×5 patch
    /// displaced 6σ in two bands, and a few scenes of uniformly unusual terrain.
    pub fn triage_scenario() -> Self {
        Self {
            unusual_terrain: vec![
                (7, [0.0, 0.0, -0.012, 0.0, 0.012, 0.0]),
                (19, [0.010, 0.0, 0.0, -0.010, 0.0, 0.010]),
                (33, [0.0, 0.012, 0.0, 0.0, -0.012, 0.0]),
            ],
            anomaly: Some(AnomalySpec {
                sequence_index: 24,
                row: 61,
                col: 88,
                size: 5,
                bands: vec![2, 4],
                sigmas: 6.0,
            }),
            ..Self::default()
        }
    }

    pub fn sequence_id(&self, index: usize) -> String {
        format!("mcam{:05}", 10_000 + index)
    }
}

/// One generated sequence before 8-bit quantization.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub sequence_id: String,
    pub width: usize,
    pub height: usize,
    /// Six row-major band planes.
    pub bands: Vec<Vec<f64>>,
    /// Row-major RGB reference, one triple per pixel.
    pub rgb: Vec<[f64; 3]>,
    /// Row-major indices of implanted anomaly pixels.
    pub anomaly_pixels: Vec<usize>,
    /// Per-band within-sequence standard deviation of the background.
    pub band_sd: [f64; 6],
}

fn noise_cholesky(sd: f64, rho: f64) -> [[f64; 6]; 6] {
    let mut c = [0.0; 36];
    for i in 0..6 {
        for j in 0..6 {
            c[i * 6 + j] = sd * sd * rho.powi((i as i32 - j as i32).abs());
        }
    }
    // AR(1) covariance is SPD for |rho| < 1.
    let mut l = [[0.0; 6]; 6];
    for j in 0..6 {
        let mut d = c[j * 6 + j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        l[j][j] = d.sqrt();
        for i in (j + 1)..6 {
            let mut s = c[i * 6 + j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / l[j][j];
        }
    }
    l
}

pub fn generate_sequence(spec: &ArchiveSpec, index: usize) -> SyntheticSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (w, h) = (spec.width, spec.height);
    let pixels = w * h;
    let l = noise_cholesky(spec.noise_sd, spec.noise_adjacent_corr);

    let illum = rng.random_range(spec.illumination.0..=spec.illumination.1);
    let mut offset = [0.0; 6];
    for o in &mut offset {
        let z: f64 = StandardNormal.sample(&mut rng);
        *o = spec.terrain_sd * z;
    }
    if let Some((_, extra)) = spec.unusual_terrain.iter().find(|(i, _)| *i == index) {
        for k in 0..6 {
            offset[k] += extra[k];
        }
    }

    let mut band_sd = [0.0; 6];
    for k in 0..6 {
        let t = illum * spec.texture_sd * BASE_SPECTRUM[k];
        band_sd[k] = (t * t + spec.noise_sd * spec.noise_sd).sqrt();
    }

    let anomaly_pixels: Vec<usize> = match &spec.anomaly {
        Some(a) if a.sequence_index == index => (a.row..a.row + a.size)
            .flat_map(|r| (a.col..a.col + a.size).map(move |c| r * w + c))
            .filter(|&p| p < pixels)
            .collect(),
        _ => Vec::new(),
    };

    let mut bands = vec![vec![0.0; pixels]; 6];
    let mut rgb = Vec::with_capacity(pixels);
    for p in 0..pixels {
        let t: f64 = StandardNormal.sample(&mut rng);
        let b = illum * (1.0 + spec.texture_sd * t);
        let mut z = [0.0; 6];
        for v in &mut z {
            *v = StandardNormal.sample(&mut rng);
        }
        for k in 0..6 {
            let mut e = 0.0;
            for m in 0..=k {
                e += l[k][m] * z[m];
            }
            bands[k][p] = (b * BASE_SPECTRUM[k] + offset[k] + e).clamp(0.0, 1.0);
        }
        let mut px = [0.0; 3];
        for c in 0..3 {
            let n: f64 = StandardNormal.sample(&mut rng);
            px[c] = (b * RGB_TINT[c] + 0.004 * n).clamp(0.0, 1.0);
        }
        rgb.push(px);
    }

    if let Some(a) = spec.anomaly.as_ref().filter(|a| a.sequence_index == index) {
        for &p in &anomaly_pixels {
            for &k in &a.bands {
                bands[k][p] = (bands[k][p] + a.sigmas * band_sd[k]).clamp(0.0, 1.0);
            }
        }
    }

    SyntheticSequence {
        sequence_id: spec.sequence_id(index),
        width: w,
        height: h,
        bands,
        rgb,
        anomaly_pixels,
        band_sd,
    }
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

impl SyntheticSequence {
    /// Write `rgb.png` and `L1.png`..`L6.png` into `dir`.
    pub fn write_products(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let to_io = |e: image::ImageError| io::Error::other(e.to_string());
        let (w, h) = (self.width as u32, self.height as u32);
        let rgb: Vec<u8> = self.rgb.iter().flat_map(|px| px.map(quantize)).collect();
        RgbImage::from_raw(w, h, rgb)
            .expect("sized")
            .save(dir.join("rgb.png"))
            .map_err(to_io)?;
        for (k, plane) in self.bands.iter().enumerate() {
            let bytes: Vec<u8> = plane.iter().map(|&v| quantize(v)).collect();
            GrayImage::from_raw(w, h, bytes)
                .expect("sized")
                .save(dir.join(format!("L{}.png", k + 1)))
                .map_err(to_io)?;
        }
        Ok(())
    }

    pub fn manifest_line(&self, sol: u32, cal_target: bool) -> ManifestLine {
        let base = self.sequence_id.clone();
        ManifestLine {
            sequence_id: self.sequence_id.clone(),
            eye: Eye::Left,
            sol,
            rgb: format!("{base}/rgb.png"),
            bands: LEFT_EYE_WAVELENGTHS
                .iter()
                .enumerate()
                .map(|(k, &wl)| ManifestBand {
                    filter: format!("L{}", k + 1),
                    wavelength_nm: wl,
                    path: format!("{base}/L{}.png", k + 1),
                })
                .collect(),
            cal_target,
        }
    }
}

/// Generate the archive under `dir` and return the manifest path.
pub fn write_archive(spec: &ArchiveSpec, dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for i in 0..spec.n_sequences {
        let seq = generate_sequence(spec, i);
        seq.write_products(&dir.join(&seq.sequence_id))?;
        let line = seq.manifest_line(spec.first_sol + i as u32, spec.cal_target.contains(&i));
        manifest.push_str(&serde_json::to_string(&line).map_err(io::Error::other)?);
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest)?;
    Ok(path)
}
