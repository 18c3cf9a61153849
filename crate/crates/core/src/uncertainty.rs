//! Predictive entropy, its normalization to `[0, 1]`, the certain/uncertain
//! threshold and per-tile uncertainty aggregation.

use crate::error::{Error, Result};
use crate::grid::Tile;
use crate::pmap::ProbabilityMap;

/// Entropy of a probability vector in nats, with `0 ln 0 = 0`.
pub fn entropy<I>(pmf: I) -> f64
where
    I: IntoIterator,
    I::Item: Into<f64>,
{
    let h: f64 = pmf
        .into_iter()
        .map(Into::into)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Largest possible entropy over `classes` outcomes.
pub fn max_entropy(classes: usize) -> f64 {
    (classes as f64).ln()
}

/// Raw per-pixel predictive entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub values: Vec<f64>,
}

pub fn entropy_map(pmap: &ProbabilityMap) -> EntropyMap {
    EntropyMap {
        width: pmap.width(),
        height: pmap.height(),
        classes: pmap.classes(),
        values: pmap
            .pixels()
            .map(|px| entropy(px.iter().map(|&p| f64::from(p))))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    /// `H / ln C`.
    #[default]
    Analytic,
    /// `(H - min) / (max - min)` over the map itself; constant maps become zero.
    Empirical,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(NormMode::Analytic),
            "empirical" => Ok(NormMode::Empirical),
            other => Err(Error::Config(format!("unknown normalization mode {other:?}"))),
        }
    }
}

/// Normalized entropy per pixel, each value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl UncertaintyMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height || values.is_empty() {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} uncertainty map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("uncertainty value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len() as f64
    }

    /// 8-bit visualization: high uncertainty is bright.
    pub fn to_u8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

pub fn normalize(raw: &EntropyMap, mode: NormMode) -> UncertaintyMap {
    let values = match mode {
        NormMode::Analytic => {
            let hmax = max_entropy(raw.classes);
            raw.values
                .iter()
                .map(|&h| if hmax > 0.0 { (h / hmax).clamp(0.0, 1.0) as f32 } else { 0.0 })
                .collect()
        }
        NormMode::Empirical => {
            let lo = raw.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            raw.values
                .iter()
                .map(|&h| if span > 0.0 { ((h - lo) / span).clamp(0.0, 1.0) as f32 } else { 0.0 })
                .collect()
        }
    };
    UncertaintyMap {
        width: raw.width,
        height: raw.height,
        values,
    }
}

/// Entropy followed by normalization.
pub fn uncertainty_map(pmap: &ProbabilityMap, mode: NormMode) -> UncertaintyMap {
    normalize(&entropy_map(pmap), mode)
}

/// Thresholded uncertainty map. `true` marks a certain pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertaintyMask {
    width: usize,
    height: usize,
    certain: Vec<bool>,
}

impl CertaintyMask {
    pub fn new(width: usize, height: usize, certain: Vec<bool>) -> Result<Self> {
        if certain.len() != width * height {
            return Err(Error::Shape("mask length mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            certain,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn certain(&self) -> &[bool] {
        &self.certain
    }

    pub fn count_certain(&self) -> usize {
        self.certain.iter().filter(|&&c| c).count()
    }

    /// PGM encoding: 255 certain, 0 uncertain.
    pub fn to_u8(&self) -> Vec<u8> {
        self.certain.iter().map(|&c| if c { 255 } else { 0 }).collect()
    }

    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        let certain = data
            .iter()
            .map(|&v| match v {
                255 => Ok(true),
                0 => Ok(false),
                other => Err(Error::Shape(format!("mask value {other} is neither 0 nor 255"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, certain)
    }
}

/// A pixel is certain iff its normalized entropy is `<= threshold`.
pub fn threshold(umap: &UncertaintyMap, threshold: f64) -> Result<CertaintyMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(CertaintyMask {
        width: umap.width,
        height: umap.height,
        certain: umap
            .values
            .iter()
            .map(|&v| f64::from(v) <= threshold)
            .collect(),
    })
}

/// Mean normalized uncertainty inside `tile`.
pub fn tile_uncertainty(umap: &UncertaintyMap, tile: Tile) -> Result<f64> {
    tile.check(umap.width, umap.height)?;
    let mut sum = 0.0f64;
    for y in tile.y0..tile.y0 + tile.d {
        let row = &umap.values[y * umap.width + tile.x0..y * umap.width + tile.x0 + tile.d];
        sum += row.iter().map(|&v| f64::from(v)).sum::<f64>();
    }
    Ok((sum / (tile.d * tile.d) as f64).clamp(0.0, 1.0))
}
