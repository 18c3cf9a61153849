//! Stitched per-pixel class probabilities and the overlap-averaging stitcher.

use crate::error::{Error, Result};
use crate::grid::Tile;
use crate::image::LabelMap;

/// Tolerance on the per-pixel sum of a probability vector.
pub const PMF_TOLERANCE: f64 = 1e-6;

/// Per-pixel class probability vectors, row-major and class-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    classes: usize,
    probs: Vec<f32>,
    coverage: Vec<u32>,
}

impl ProbabilityMap {
    /// Wraps finalized probabilities. `coverage` defaults to one per pixel.
    pub fn new(
        width: usize,
        height: usize,
        classes: usize,
        probs: Vec<f32>,
        coverage: Option<Vec<u32>>,
    ) -> Result<Self> {
        if classes == 0 || width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "empty probability map {width}x{height}x{classes}"
            )));
        }
        if probs.len() != width * height * classes {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height}x{classes} map",
                probs.len()
            )));
        }
        let coverage = coverage.unwrap_or_else(|| vec![1; width * height]);
        if coverage.len() != width * height {
            return Err(Error::Shape("coverage length mismatch".into()));
        }
        for (i, px) in probs.chunks_exact(classes).enumerate() {
            check_pmf(px.iter().map(|&p| f64::from(p)))
                .map_err(|e| Error::InvalidPmf(format!("pixel {i}: {e}")))?;
        }
        Ok(Self {
            width,
            height,
            classes,
            probs,
            coverage,
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

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.classes;
        &self.probs[i..i + self.classes]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.probs.chunks_exact(self.classes)
    }
}

fn check_pmf(values: impl Iterator<Item = f64>) -> std::result::Result<(), String> {
    let mut sum = 0.0;
    for p in values {
        if !p.is_finite() || p < 0.0 {
            return Err(format!("entry {p}"));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PMF_TOLERANCE {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Accumulates per-tile probability arrays and averages overlapping pixels.
///
/// Accumulation is sequential in call order, in `f64`.
#[derive(Debug, Clone)]
pub struct Stitcher {
    width: usize,
    height: usize,
    classes: usize,
    sums: Vec<f64>,
    coverage: Vec<u32>,
}

impl Stitcher {
    pub fn new(shape: (usize, usize), classes: usize) -> Self {
        let (width, height) = shape;
        Self {
            width,
            height,
            classes,
            sums: vec![0.0; width * height * classes],
            coverage: vec![0; width * height],
        }
    }

    /// Adds a `d x d x C` (row-major, class-fastest) array at `tile`.
    pub fn add(&mut self, tile: Tile, probs: &[f64]) -> Result<()> {
        tile.check(self.width, self.height)?;
        let c = self.classes;
        if probs.len() != tile.d * tile.d * c {
            return Err(Error::Shape(format!(
                "tile array has {} values, expected {}",
                probs.len(),
                tile.d * tile.d * c
            )));
        }
        for (i, px) in probs.chunks_exact(c).enumerate() {
            check_pmf(px.iter().copied())
                .map_err(|e| Error::InvalidPmf(format!("tile pixel {i}: {e}")))?;
        }
        for ty in 0..tile.d {
            let y = tile.y0 + ty;
            for tx in 0..tile.d {
                let x = tile.x0 + tx;
                let dst = (y * self.width + x) * c;
                let src = (ty * tile.d + tx) * c;
                for k in 0..c {
                    self.sums[dst + k] += probs[src + k];
                }
                self.coverage[y * self.width + x] += 1;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<ProbabilityMap> {
        let c = self.classes;
        let mut probs = Vec::with_capacity(self.sums.len());
        for (i, px) in self.sums.chunks_exact(c).enumerate() {
            let n = self.coverage[i];
            if n == 0 {
                return Err(Error::Uncovered {
                    x: i % self.width,
                    y: i / self.width,
                });
            }
            let n = f64::from(n);
            probs.extend(px.iter().map(|&s| (s / n) as f32));
        }
        Ok(ProbabilityMap {
            width: self.width,
            height: self.height,
            classes: c,
            probs,
            coverage: self.coverage,
        })
    }
}

/// Averages overlapping tile predictions into a full-size map.
pub fn stitch<'a, I>(per_tile: I, shape: (usize, usize), classes: usize) -> Result<ProbabilityMap>
where
    I: IntoIterator<Item = (Tile, &'a [f64])>,
{
    let mut st = Stitcher::new(shape, classes);
    for (tile, probs) in per_tile {
        st.add(tile, probs)?;
    }
    st.finish()
}

/// Index of the maximal probability; ties go to the lowest class index.
pub fn argmax<T: PartialOrd + Copy>(px: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in px.iter().enumerate().skip(1) {
        if v > px[best] {
            best = k;
        }
    }
    best
}

pub fn argmax_labels(pmap: &ProbabilityMap) -> Result<LabelMap> {
    let labels = pmap.pixels().map(|px| argmax(px) as u8).collect();
    LabelMap::with_classes(pmap.width, pmap.height, labels, pmap.classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, crop};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(rng: &mut impl Rng, c: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn single_tile_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tile_probs: Vec<f64> = (0..16).flat_map(|_| random_pmf(&mut rng, 3)).collect();
        let pm = stitch([(Tile::new(0, 0, 4), tile_probs.as_slice())], (4, 4), 3).unwrap();
        let expect: Vec<f32> = tile_probs.iter().map(|&v| v as f32).collect();
        assert_eq!(pm.probs(), expect.as_slice());
        assert!(pm.coverage().iter().all(|&c| c == 1));
    }

    #[test]
    fn two_overlapping_tiles_average() {
        let a: Vec<f64> = (0..4).flat_map(|_| [1.0, 0.0, 0.0]).collect();
        let b: Vec<f64> = (0..4).flat_map(|_| [0.0, 1.0, 0.0]).collect();
        let t = Tile::new(0, 0, 2);
        let pm = stitch([(t, a.as_slice()), (t, b.as_slice())], (2, 2), 3).unwrap();
        for px in pm.pixels() {
            assert_eq!(px, &[0.5, 0.5, 0.0]);
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h, c) = (9, 7, 3);
        let tiles = [
            Tile::new(0, 0, 5),
            Tile::new(4, 0, 5),
            Tile::new(3, 1, 5),
            Tile::new(0, 2, 5),
            Tile::new(4, 2, 5),
        ];
        let arrays: Vec<Vec<f64>> = tiles
            .iter()
            .map(|t| (0..t.d * t.d).flat_map(|_| random_pmf(&mut rng, c)).collect())
            .collect();
        let all: Vec<(Tile, &[f64])> = tiles
            .iter()
            .copied()
            .zip(arrays.iter().map(|v| v.as_slice()))
            .collect();
        let pm = stitch(all.clone(), (w, h), c).unwrap();

        for y in 0..h {
            for x in 0..w {
                let mut acc = vec![0.0f64; c];
                let mut n = 0u32;
                for (t, p) in &all {
                    if t.contains(x, y) {
                        let i = ((y - t.y0) * t.d + (x - t.x0)) * c;
                        for k in 0..c {
                            acc[k] += p[i + k];
                        }
                        n += 1;
                    }
                }
                assert!(n > 0, "pixel ({x},{y}) uncovered");
                let expect: Vec<f32> = acc.iter().map(|&s| (s / f64::from(n)) as f32).collect();
                assert_eq!(pm.pixel(x, y), expect.as_slice());
                assert_eq!(pm.coverage()[y * w + x], n);
            }
        }
    }

    #[test]
    fn uncovered_pixel_is_an_error() {
        let p: Vec<f64> = (0..4).flat_map(|_| [1.0, 0.0]).collect();
        let err = stitch([(Tile::new(0, 0, 2), p.as_slice())], (3, 2), 2).unwrap_err();
        assert!(matches!(err, Error::Uncovered { x: 2, y: 0 }));
    }

    #[test]
    fn rejects_invalid_tile_pmf() {
        let p = vec![0.7, 0.7, 0.0, 1.0];
        let mut st = Stitcher::new((2, 1), 2);
        assert!(matches!(st.add(Tile::new(0, 0, 1), &p[..2]), Err(Error::InvalidPmf(_))));
    }

    #[test]
    fn constant_field_survives_stitching_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = random_pmf(&mut rng, 3);
        let field32: Vec<f32> = field.iter().map(|&v| v as f32).collect();
        let grid = build_grid((23, 17), 8, 3).unwrap();
        let per_px: Vec<f64> = field32.iter().map(|&v| f64::from(v)).collect();
        let full: Vec<f64> = (0..23 * 17).flat_map(|_| per_px.iter().copied()).collect();
        let mut st = Stitcher::new((23, 17), 3);
        for t in &grid.tiles {
            // crop on pixel indices, then expand to class-fastest layout
            let idx: Vec<usize> = crop(&(0..23 * 17).collect::<Vec<_>>(), 23, *t);
            let arr: Vec<f64> = idx.iter().flat_map(|&i| full[i * 3..i * 3 + 3].to_vec()).collect();
            st.add(*t, &arr).unwrap();
        }
        let pm = st.finish().unwrap();
        for px in pm.pixels() {
            assert_eq!(px, field32.as_slice());
        }
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn argmax_labels_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs: Vec<f32> = (0..6 * 5)
            .flat_map(|_| random_pmf(&mut rng, 3))
            .map(|v| v as f32)
            .collect();
        let pm = ProbabilityMap::new(6, 5, 3, probs.clone(), None).unwrap();
        let labels = argmax_labels(&pm).unwrap();
        for (i, px) in probs.chunks(3).enumerate() {
            let mut best = 0usize;
            let mut best_v = f32::NEG_INFINITY;
            for (k, &v) in px.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            assert_eq!(usize::from(labels.labels()[i]), best);
        }
    }
}
