//! Sequence archives: JSON-lines manifests, product decoding, raw and
//! brightness-corrected cube assembly, and the training pixel stream.
//!
//! A sequence is one RGB reference product plus six narrow-band products of
//! the same scene. Band products are 8-bit grayscale PNGs, the reference is an
//! 8-bit RGB PNG; all seven must share one size.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{PixelCube, PixelSource, SpectralError};

/// Narrow-band products per sequence.
pub const NARROW_BANDS: usize = 6;

/// Divisor floor for brightness correction: one 8-bit level.
pub const GRAY_FLOOR: f64 = 1.0 / 255.0;

const NARROW_BAND_RANGE_NM: (f64, f64) = (400.0, 1100.0);

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing file: {}", path.display())]
    MissingFile { path: PathBuf },
    #[error("cannot decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("{sequence_id}: product {} is {found_w}×{found_h}, expected {expected_w}×{expected_h}", path.display())]
    DimensionMismatch {
        sequence_id: String,
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },
    #[error("{sequence_id}: band wavelengths {found:?} differ from the archive's {expected:?}; fit one model per filter set")]
    MixedFilterSets {
        sequence_id: String,
        expected: Vec<f64>,
        found: Vec<f64>,
    },
    #[error("cannot read manifest {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sequence {sequence_id}: {source}")]
    Sequence {
        sequence_id: String,
        #[source]
        source: Box<IngestError>,
    },
}

impl IngestError {
    /// The sequence this error is attributed to, if any.
    pub fn sequence_id(&self) -> Option<&str> {
        match self {
            IngestError::Sequence { sequence_id, .. }
            | IngestError::DimensionMismatch { sequence_id, .. }
            | IngestError::MixedFilterSets { sequence_id, .. } => Some(sequence_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Eye::Left => "left",
            Eye::Right => "right",
        })
    }
}

/// One narrow-band product reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BandProduct {
    pub filter_id: String,
    pub wavelength_nm: f64,
    pub path: PathBuf,
}

/// One sequence with all product paths resolved against the manifest root.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub eye: Eye,
    pub sol: u32,
    pub rgb_path: PathBuf,
    pub bands: Vec<BandProduct>,
    pub has_cal_target: bool,
    pub width: u32,
    pub height: u32,
}

impl SequenceRecord {
    pub fn band_wavelengths(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.wavelength_nm).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArchiveManifest {
    pub root: PathBuf,
    pub entries: Vec<SequenceRecord>,
}

impl ArchiveManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sequence_id: &str) -> Option<&SequenceRecord> {
        self.entries.iter().find(|e| e.sequence_id == sequence_id)
    }
}

/// One manifest line as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub sequence_id: String,
    pub eye: Eye,
    pub sol: u32,
    pub rgb: String,
    pub bands: Vec<ManifestBand>,
    pub cal_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestBand {
    pub filter: String,
    pub wavelength_nm: f64,
    pub path: String,
}

fn filter_index(filter: &str) -> Option<u32> {
    let digits: String = filter.chars().rev().take_while(char::is_ascii_digit).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

fn validate_line(line: &ManifestLine) -> Result<(), String> {
    if line.sequence_id.trim().is_empty() {
        return Err("sequence_id must be non-empty".into());
    }
    if line.bands.len() != NARROW_BANDS {
        return Err(format!(
            "expected {NARROW_BANDS} narrow-band products, found {}",
            line.bands.len()
        ));
    }
    let mut prev: Option<u32> = None;
    for band in &line.bands {
        let idx = filter_index(&band.filter)
            .ok_or_else(|| format!("filter id {:?} has no numeric filter index", band.filter))?;
        if prev.is_some_and(|p| idx <= p) {
            return Err(format!(
                "bands must be ordered by ascending filter index; {:?} is out of order",
                band.filter
            ));
        }
        prev = Some(idx);
        let (lo, hi) = NARROW_BAND_RANGE_NM;
        if !(band.wavelength_nm >= lo && band.wavelength_nm <= hi) {
            return Err(format!(
                "filter {} wavelength {} nm outside [{lo}, {hi}]",
                band.filter, band.wavelength_nm
            ));
        }
    }
    Ok(())
}

fn resolve_existing(root: &Path, rel: &str) -> Result<PathBuf, IngestError> {
    let path = root.join(rel);
    if path.is_file() {
        Ok(path)
    } else {
        Err(IngestError::MissingFile { path })
    }
}

/// Parse a JSON-lines manifest. Relative product paths resolve against the
/// manifest's directory, and every product must exist.
pub fn load_manifest(path: &Path) -> Result<ArchiveManifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &root)
}

/// Parse manifest text against an explicit root directory.
pub fn parse_manifest(text: &str, root: &Path) -> Result<ArchiveManifest, IngestError> {
    let mut entries = Vec::new();
    let mut seen: HashSet<(Eye, String)> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| IngestError::Parse { line: line_no, message };
        let line: ManifestLine = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        validate_line(&line).map_err(parse_err)?;
        if !seen.insert((line.eye, line.sequence_id.clone())) {
            return Err(parse_err(format!(
                "duplicate sequence_id {} for the {} eye",
                line.sequence_id, line.eye
            )));
        }

        let rgb_path = resolve_existing(root, &line.rgb)?;
        let bands = line
            .bands
            .iter()
            .map(|b| {
                Ok(BandProduct {
                    filter_id: b.filter.clone(),
                    wavelength_nm: b.wavelength_nm,
                    path: resolve_existing(root, &b.path)?,
                })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        let (width, height) = image::image_dimensions(&rgb_path).map_err(|e| IngestError::Decode {
            path: rgb_path.clone(),
            message: e.to_string(),
        })?;

        entries.push(SequenceRecord {
            sequence_id: line.sequence_id,
            eye: line.eye,
            sol: line.sol,
            rgb_path,
            bands,
            has_cal_target: line.cal_target,
            width,
            height,
        });
    }
    Ok(ArchiveManifest {
        root: root.to_path_buf(),
        entries,
    })
}

/// Drop calibration-target sequences, keeping order.
pub fn filter_archive(manifest: &ArchiveManifest) -> ArchiveManifest {
    ArchiveManifest {
        root: manifest.root.clone(),
        entries: manifest.entries.iter().filter(|e| !e.has_cal_target).cloned().collect(),
    }
}

fn decode(path: &Path) -> Result<DynamicImage, IngestError> {
    let err = |message: String| IngestError::Decode {
        path: path.to_path_buf(),
        message,
    };
    ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| err(e.to_string()))?
        .decode()
        .map_err(|e| err(e.to_string()))
}

/// Decode an 8-bit grayscale band product into `[0, 1]` values.
pub fn load_band(product: &BandProduct) -> Result<crate::spectral::BandImage, IngestError> {
    let img = decode(&product.path)?;
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(IngestError::Decode {
            path: product.path.clone(),
            message: format!("expected 8-bit grayscale, found {:?}", img.color()),
        });
    };
    Ok(crate::spectral::BandImage {
        filter_id: product.filter_id.clone(),
        wavelength_nm: product.wavelength_nm,
        width: gray.width() as usize,
        height: gray.height() as usize,
        values: gray.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect(),
    })
}

/// Decode the RGB reference product into a grayscale plane `(R+G+B)/(3·255)`.
pub fn load_gray_reference(path: &Path) -> Result<(u32, u32, Vec<f64>), IngestError> {
    let img = decode(path)?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(IngestError::Decode {
                path: path.to_path_buf(),
                message: format!("expected 8-bit RGB, found {:?}", other.color()),
            })
        }
    };
    let gray = rgb
        .pixels()
        .map(|p| (f64::from(p[0]) + f64::from(p[1]) + f64::from(p[2])) / (3.0 * 255.0))
        .collect();
    Ok((rgb.width(), rgb.height(), gray))
}

/// Divide each band value by the pixel's grayscale level, floored at
/// [`GRAY_FLOOR`].
pub fn correct_brightness(planes: &mut [Vec<f64>], gray: &[f64]) {
    for plane in planes {
        assert_eq!(plane.len(), gray.len(), "plane and grayscale sizes differ");
        for (v, &g) in plane.iter_mut().zip(gray) {
            *v /= g.max(GRAY_FLOOR);
        }
    }
}

/// Assemble a sequence's pixel cube, raw (`[0,1]`) or brightness-corrected.
pub fn load_cube(record: &SequenceRecord, brightness_correct: bool) -> Result<PixelCube, IngestError> {
    load_cube_inner(record, brightness_correct).map_err(|e| match e {
        e @ IngestError::DimensionMismatch { .. } => e,
        other => IngestError::Sequence {
            sequence_id: record.sequence_id.clone(),
            source: Box::new(other),
        },
    })
}

fn load_cube_inner(record: &SequenceRecord, brightness_correct: bool) -> Result<PixelCube, IngestError> {
    let (w, h, gray) = load_gray_reference(&record.rgb_path)?;
    let mismatch = |path: &Path, fw: u32, fh: u32| IngestError::DimensionMismatch {
        sequence_id: record.sequence_id.clone(),
        path: path.to_path_buf(),
        expected_w: w,
        expected_h: h,
        found_w: fw,
        found_h: fh,
    };
    let mut planes = Vec::with_capacity(record.bands.len());
    for product in &record.bands {
        let band = load_band(product)?;
        if band.width != w as usize || band.height != h as usize {
            return Err(mismatch(&product.path, band.width as u32, band.height as u32));
        }
        planes.push(band.values);
    }
    if brightness_correct {
        correct_brightness(&mut planes, &gray);
    }
    Ok(PixelCube::from_planes(
        w as usize,
        h as usize,
        record.band_wavelengths(),
        &planes,
        brightness_correct,
    ))
}

/// Every pixel of every sequence, in manifest order then row-major order.
/// Each traversal re-decodes the products, so repeated passes see identical
/// values.
#[derive(Debug, Clone)]
pub struct TrainingPixels<'a> {
    manifest: &'a ArchiveManifest,
    brightness_correct: bool,
}

pub fn training_pixel_stream(manifest: &ArchiveManifest, brightness_correct: bool) -> TrainingPixels<'_> {
    TrainingPixels {
        manifest,
        brightness_correct,
    }
}

impl TrainingPixels<'_> {
    /// Visit each sequence's cube in order.
    pub fn for_each_cube<E: From<IngestError>>(
        &self,
        mut visit: impl FnMut(&SequenceRecord, &PixelCube) -> Result<(), E>,
    ) -> Result<(), E> {
        let expected = PixelSource::band_wavelengths(self);
        for record in &self.manifest.entries {
            let found = record.band_wavelengths();
            if found != expected {
                return Err(IngestError::MixedFilterSets {
                    sequence_id: record.sequence_id.clone(),
                    expected,
                    found,
                }
                .into());
            }
            let cube = load_cube(record, self.brightness_correct)?;
            visit(record, &cube)?;
        }
        Ok(())
    }

    /// Materialize every vector (small archives and tests).
    pub fn collect_vectors(&self) -> Result<Vec<Vec<f64>>, IngestError> {
        let mut out = Vec::new();
        self.for_each_cube(|_, cube| {
            out.extend(cube.pixels().map(<[f64]>::to_vec));
            Ok::<_, IngestError>(())
        })?;
        Ok(out)
    }
}

impl From<IngestError> for SpectralError {
    fn from(e: IngestError) -> Self {
        SpectralError::Source(Box::new(e))
    }
}

impl PixelSource for TrainingPixels<'_> {
    fn n_bands(&self) -> usize {
        NARROW_BANDS
    }

    fn band_wavelengths(&self) -> Vec<f64> {
        self.manifest
            .entries
            .first()
            .map(SequenceRecord::band_wavelengths)
            .unwrap_or_default()
    }

    fn brightness_corrected(&self) -> bool {
        self.brightness_correct
    }

    fn for_each_pixel(&self, visit: &mut dyn FnMut(&[f64]) -> Result<(), SpectralError>) -> Result<(), SpectralError> {
        self.for_each_cube(|_, cube| cube.pixels().try_for_each(&mut *visit))
    }
}
