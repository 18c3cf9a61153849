//! Sliding-window tiling of a large image into `d x d` sub-images.

use crate::error::{Error, Result};
use crate::image::{LabelMap, LargeImage};

/// A `d x d` window with top-left corner `(x0, y0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tile {
    pub x0: usize,
    pub y0: usize,
    pub d: usize,
}

impl Tile {
    pub fn new(x0: usize, y0: usize, d: usize) -> Self {
        Self { x0, y0, d }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.d > 0 && self.x0 + self.d <= width && self.y0 + self.d <= height
    }

    pub fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(Error::TileOutOfBounds {
                x0: self.x0,
                y0: self.y0,
                d: self.d,
                width,
                height,
            })
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.d && y >= self.y0 && y < self.y0 + self.d
    }
}

/// Row-major list of tiles covering an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub tiles: Vec<Tile>,
    pub stride: usize,
    pub source_shape: (usize, usize),
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

/// Window origins along one axis: `0, s, 2s, ...` plus a final origin flush
/// with the far edge when `dim - d` is not a multiple of `s`.
pub fn axis_origins(dim: usize, d: usize, s: usize) -> Vec<usize> {
    let last = dim - d;
    let mut out: Vec<usize> = (0..=last).step_by(s).collect();
    if *out.last().expect("origin 0 always present") != last {
        out.push(last);
    }
    out
}

pub fn build_grid(shape: (usize, usize), d: usize, s: usize) -> Result<TileGrid> {
    let (width, height) = shape;
    if d == 0 {
        return Err(Error::Geometry("tile size must be positive".into()));
    }
    if s == 0 {
        return Err(Error::Geometry("stride must be at least 1".into()));
    }
    if s > d {
        return Err(Error::Geometry(format!("stride {s} exceeds tile size {d}; the grid would leave gaps")));
    }
    if d > width || d > height {
        return Err(Error::Geometry(format!(
            "tile size {d} exceeds image {width}x{height}"
        )));
    }
    let xs = axis_origins(width, d, s);
    let ys = axis_origins(height, d, s);
    let tiles = ys
        .iter()
        .flat_map(|&y0| xs.iter().map(move |&x0| Tile::new(x0, y0, d)))
        .collect();
    Ok(TileGrid {
        tiles,
        stride: s,
        source_shape: shape,
    })
}

/// Copies the `d x d` region of a row-major buffer under `tile`.
pub fn crop<T: Copy>(data: &[T], width: usize, tile: Tile) -> Vec<T> {
    let mut out = Vec::with_capacity(tile.d * tile.d);
    for y in tile.y0..tile.y0 + tile.d {
        let row = y * width;
        out.extend_from_slice(&data[row + tile.x0..row + tile.x0 + tile.d]);
    }
    out
}

/// Extracts the sub-image under `tile` as a row-major `d x d` buffer.
pub fn extract(image: &LargeImage, tile: Tile) -> Result<Vec<f32>> {
    tile.check(image.width(), image.height())?;
    Ok(crop(image.pixels(), image.width(), tile))
}

pub fn extract_labels(labels: &LabelMap, tile: Tile) -> Result<Vec<u8>> {
    tile.check(labels.width(), labels.height())?;
    Ok(crop(labels.labels(), labels.width(), tile))
}
