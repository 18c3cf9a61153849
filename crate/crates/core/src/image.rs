//! Grayscale images and per-pixel class label maps.

use crate::error::{Error, Result};

/// Default class names, in class-index order.
pub const DEFAULT_CLASS_NAMES: [&str; 3] = ["Good", "Bad", "BGD"];

/// Single-channel image with intensities normalized to `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl LargeImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from 8-bit samples, mapping 0..=255 onto [0, 1].
    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            data.iter().map(|&v| f32::from(v) / 255.0).collect(),
        )
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
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

    pub fn channels(&self) -> usize {
        1
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// Per-pixel class indices in `0..num_classes`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, class_names: Vec<String>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty label map {width}x{height}")));
        }
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        if class_names.is_empty() || class_names.len() > 256 {
            return Err(Error::Shape(format!("{} classes", class_names.len())));
        }
        let c = class_names.len();
        if let Some(bad) = labels.iter().find(|&&l| usize::from(l) >= c) {
            return Err(Error::Shape(format!("label {bad} with only {c} classes")));
        }
        Ok(Self {
            width,
            height,
            labels,
            class_names,
        })
    }

    /// Label map using the default three class names.
    pub fn with_default_classes(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        Self::new(width, height, labels, default_class_names())
    }

    /// Label map with `num_classes` generic names (`class0`, `class1`, ...),
    /// or the default names when `num_classes` is 3.
    pub fn with_classes(width: usize, height: usize, labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        let names = if num_classes == DEFAULT_CLASS_NAMES.len() {
            default_class_names()
        } else {
            (0..num_classes).map(|c| format!("class{c}")).collect()
        };
        Self::new(width, height, labels, names)
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

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }
}

pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}
