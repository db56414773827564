//! Heat-map rendering: score normalization, colormap interpolation and
//! deterministic PNG encoding.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{NoveltyMap, ScorePercentiles};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("global normalization needs a model with score percentiles")]
    MissingPercentiles,
    #[error("invalid colormap: {0}")]
    InvalidColorMap(String),
    #[error("PNG encoding failed: {0}")]
    Encode(String),
    #[error("cannot read colormap file: {0}")]
    Io(#[from] io::Error),
}

/// How scores are stretched into `[0, 1]` before coloring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Min-max over the map's own scores.
    #[default]
    Local,
    /// Archive-wide: training p01..p999 of the model, clamped.
    Global,
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizationMode::Local => "local",
            NormalizationMode::Global => "global",
        })
    }
}

impl FromStr for NormalizationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(NormalizationMode::Local),
            "global" => Ok(NormalizationMode::Global),
            other => Err(format!("unknown normalization {other:?} (expected local or global)")),
        }
    }
}

/// Map scores to `[0, 1]`. Monotone in the score for both modes.
pub fn normalize(
    map: &NoveltyMap,
    mode: NormalizationMode,
    percentiles: Option<&ScorePercentiles>,
) -> Result<Vec<f64>, RenderError> {
    match mode {
        NormalizationMode::Local => {
            let (lo, hi) = map
                .scores
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                    (lo.min(s), hi.max(s))
                });
            if map.scores.is_empty() || hi <= lo {
                return Ok(vec![0.0; map.scores.len()]);
            }
            let span = hi - lo;
            Ok(map.scores.iter().map(|&s| ((s - lo) / span).clamp(0.0, 1.0)).collect())
        }
        NormalizationMode::Global => {
            let p = percentiles.ok_or(RenderError::MissingPercentiles)?;
            let (lo, hi) = (p.p01, p.p999);
            Ok(map
                .scores
                .iter()
                .map(|&s| {
                    if hi > lo {
                        ((s - lo) / (hi - lo)).clamp(0.0, 1.0)
                    } else if s > lo {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect())
        }
    }
}

/// A color stop: position in `[0, 1]` and an RGB triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStop {
    pub position: f64,
    pub color: [u8; 3],
}

/// Piecewise-linear colormap over strictly increasing stops from 0 to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ColorMapFile", into = "ColorMapFile")]
pub struct ColorMap {
    stops: Vec<ColorStop>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColorMapFile {
    stops: Vec<ColorStop>,
}

impl TryFrom<ColorMapFile> for ColorMap {
    type Error = RenderError;

    fn try_from(f: ColorMapFile) -> Result<Self, Self::Error> {
        ColorMap::new(f.stops)
    }
}

impl From<ColorMap> for ColorMapFile {
    fn from(c: ColorMap) -> Self {
        ColorMapFile { stops: c.stops }
    }
}

impl ColorMap {
    pub fn new(stops: Vec<ColorStop>) -> Result<Self, RenderError> {
        let bad = |m: &str| Err(RenderError::InvalidColorMap(m.to_string()));
        if stops.len() < 2 {
            return bad("need at least two stops");
        }
        if stops[0].position != 0.0 || stops[stops.len() - 1].position != 1.0 {
            return bad("first stop must be at 0.0 and last at 1.0");
        }
        if stops
            .windows(2)
            .any(|w| w[0].position.partial_cmp(&w[1].position) != Some(std::cmp::Ordering::Less))
        {
            return bad("stop positions must be strictly increasing");
        }
        Ok(Self { stops })
    }

    /// Dark-to-bright perceptual ramp.
    pub fn default_ramp() -> Self {
        let stop = |position, color| ColorStop { position, color };
        Self {
            stops: vec![
                stop(0.0, [0, 0, 4]),
                stop(0.25, [87, 16, 110]),
                stop(0.5, [188, 55, 84]),
                stop(0.75, [249, 142, 9]),
                stop(1.0, [252, 255, 164]),
            ],
        }
    }

    /// Load a colormap from a JSON file `{"stops":[{"position":..,"color":[r,g,b]},..]}`.
    pub fn from_file(path: &Path) -> Result<Self, RenderError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| RenderError::InvalidColorMap(e.to_string()))
    }

    pub fn stops(&self) -> &[ColorStop] {
        &self.stops
    }

    /// Color for a value in `[0, 1]`; out-of-range values clamp, NaN maps to 0.
    pub fn color_at(&self, value: f64) -> [u8; 3] {
        let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
        // Number of stops at or below v; at least one because the first is 0.0.
        let idx = self.stops.partition_point(|s| s.position <= v);
        if idx >= self.stops.len() {
            return self.stops[self.stops.len() - 1].color;
        }
        let (lo, hi) = (self.stops[idx - 1], self.stops[idx]);
        if v == lo.position {
            return lo.color;
        }
        let t = (v - lo.position) / (hi.position - lo.position);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let a = f64::from(lo.color[c]);
            let b = f64::from(hi.color[c]);
            out[c] = (a + (b - a) * t + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

impl Default for ColorMap {
    fn default() -> Self {
        Self::default_ramp()
    }
}

/// Colorize a normalized row-major plane.
pub fn colorize(normalized: &[f64], width: u32, height: u32, colormap: &ColorMap) -> RgbImage {
    assert_eq!(normalized.len(), width as usize * height as usize);
    let mut buf = Vec::with_capacity(normalized.len() * 3);
    for &v in normalized {
        buf.extend_from_slice(&colormap.color_at(v));
    }
    RgbImage::from_raw(width, height, buf).expect("buffer sized to image")
}

/// Encode with fixed compression and filter settings and no ancillary chunks,
/// so identical images give identical bytes.
pub fn encode_heatmap(img: &RgbImage) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| RenderError::Encode(e.to_string()))?;
    Ok(out)
}

/// Normalize, colorize and encode a novelty map in one step.
pub fn render_png(
    map: &NoveltyMap,
    mode: NormalizationMode,
    percentiles: Option<&ScorePercentiles>,
    colormap: &ColorMap,
) -> Result<Vec<u8>, RenderError> {
    let normalized = normalize(map, mode, percentiles)?;
    let img = colorize(&normalized, map.width as u32, map.height as u32, colormap);
    encode_heatmap(&img)
}
