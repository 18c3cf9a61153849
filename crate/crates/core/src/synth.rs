//! Deterministic synthetic three-class textured images with exact labels.
//!
//! Every image is a background texture with 2-6 smooth blobs painted on top,
//! each filled with the Good or Bad texture. Textures are sums of a few
//! oriented sinusoids around a class-specific frequency plus white noise, so
//! small patches are class-discriminative. Intensities are quantized to
//! 8 bits so images survive a PGM round trip unchanged.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::{LabelMap, LargeImage};
use crate::io;
use crate::rng;

pub const GOOD: u8 = 0;
pub const BAD: u8 = 1;
pub const BGD: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureParams {
    /// Mean intensity.
    pub mean: f64,
    /// Dominant spatial frequency in cycles per pixel.
    pub frequency: f64,
    /// Amplitude of the oriented sinusoid sum.
    pub amplitude: f64,
    /// Standard deviation of the white noise.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub n_images: usize,
    pub seed: u64,
    /// Indexed by class: Good, Bad, background.
    pub textures: [TextureParams; 3],
    pub blob_count: (usize, usize),
    /// Blob mean radius range in pixels.
    pub blob_radius: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 384,
            n_images: 12,
            seed: 0,
            textures: [
                TextureParams {
                    mean: 0.55,
                    frequency: 0.25,
                    amplitude: 0.18,
                    noise: 0.05,
                },
                TextureParams {
                    mean: 0.6,
                    frequency: 0.07,
                    amplitude: 0.22,
                    noise: 0.05,
                },
                TextureParams {
                    mean: 0.3,
                    frequency: 0.02,
                    amplitude: 0.08,
                    noise: 0.04,
                },
            ],
            blob_count: (2, 6),
            blob_radius: (40.0, 90.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.n_images == 0 {
            return Err(Error::Config("n_images must be >= 1".into()));
        }
        let (lo, hi) = self.blob_count;
        if lo < 2 || hi < lo {
            return Err(Error::Config(format!("blob count range {lo}..={hi} must start at >= 2")));
        }
        let (rmin, rmax) = self.blob_radius;
        let limit = self.width.min(self.height) as f64 / 2.0;
        if !(rmin >= 2.0) || !(rmax >= rmin) || rmax > limit {
            return Err(Error::Config(format!(
                "blob radius range {rmin}..{rmax} must satisfy 2 <= min <= max <= {limit}"
            )));
        }
        for (c, t) in self.textures.iter().enumerate() {
            if !(t.frequency > 0.0 && t.frequency <= 0.5) || t.amplitude < 0.0 || t.noise < 0.0 {
                return Err(Error::Config(format!("texture {c}: frequency must be in (0, 0.5], amplitudes >= 0")));
            }
        }
        for a in 0..3 {
            for b in a + 1..3 {
                let (fa, fb) = (self.textures[a].frequency, self.textures[b].frequency);
                if (fa / fb).max(fb / fa) < 1.5 {
                    return Err(Error::Config(format!(
                        "textures {a} and {b} need dominant frequencies at least 1.5x apart"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Seed of image `index`.
    pub fn image_seed(&self, index: usize) -> u64 {
        rng::derive(self.seed, index as u64)
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
}

/// A texture field: oriented sinusoids around the dominant frequency.
struct Texture {
    params: TextureParams,
    waves: Vec<Wave>,
}

impl Texture {
    fn new(params: TextureParams, r: &mut ChaCha8Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                let f = params.frequency * r.gen_range(0.85..1.15);
                let theta = r.gen_range(0.0..std::f64::consts::PI);
                Wave {
                    kx: TAU * f * theta.cos(),
                    ky: TAU * f * theta.sin(),
                    phase: r.gen_range(0.0..TAU),
                }
            })
            .collect();
        Self { params, waves }
    }

    fn at(&self, x: usize, y: usize, noise: f64) -> f64 {
        let (x, y) = (x as f64, y as f64);
        let s: f64 = self.waves.iter().map(|w| (w.kx * x + w.ky * y + w.phase).sin()).sum();
        self.params.mean + self.params.amplitude * s / 2.0 + self.params.noise * noise
    }
}

fn quantize(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    harmonics: [(f64, f64); 2],
    class: u8,
}

impl Blob {
    fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        let theta = dy.atan2(dx);
        let [(a1, p1), (a2, p2)] = self.harmonics;
        let r = self.radius * (1.0 + a1 * (theta + p1).cos() + a2 * (2.0 * theta + p2).cos());
        dx * dx + dy * dy <= r * r
    }
}

fn blobs(cfg: &SynthConfig, r: &mut ChaCha8Rng) -> Vec<Blob> {
    let n = r.gen_range(cfg.blob_count.0..=cfg.blob_count.1);
    (0..n)
        .map(|i| {
            let radius = r.gen_range(cfg.blob_radius.0..=cfg.blob_radius.1);
            Blob {
                cx: r.gen_range(0.0..cfg.width as f64),
                cy: r.gen_range(0.0..cfg.height as f64),
                radius,
                harmonics: [
                    (r.gen_range(0.0..0.2), r.gen_range(0.0..TAU)),
                    (r.gen_range(0.0..0.12), r.gen_range(0.0..TAU)),
                ],
                class: match i {
                    0 => GOOD,
                    1 => BAD,
                    _ => {
                        if r.gen_bool(0.5) {
                            GOOD
                        } else {
                            BAD
                        }
                    }
                },
            }
        })
        .collect()
}

/// Generates image `index` of the dataset described by `cfg`.
pub fn generate_one(cfg: &SynthConfig, index: usize) -> Result<(LargeImage, LabelMap)> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let seed = cfg.image_seed(index);
    // Redraw the layout until both colony classes are visible.
    for attempt in 0..64u64 {
        let mut r = rng::stream(seed, attempt);
        let layout = blobs(cfg, &mut r);
        let mut labels = vec![BGD; w * h];
        for b in &layout {
            for y in 0..h {
                for x in 0..w {
                    if b.contains(x, y) {
                        labels[y * w + x] = b.class;
                    }
                }
            }
        }
        let min_px = (w * h / 100).max(1);
        if [GOOD, BAD].iter().any(|&c| labels.iter().filter(|&&l| l == c).count() < min_px) {
            continue;
        }
        let textures: Vec<Texture> = cfg.textures.iter().map(|&p| Texture::new(p, &mut r)).collect();
        let pixels = (0..w * h)
            .map(|i| {
                let noise: f64 = r.sample(StandardNormal);
                quantize(textures[usize::from(labels[i])].at(i % w, i / w, noise))
            })
            .collect();
        return Ok((LargeImage::new(w, h, pixels)?, LabelMap::with_default_classes(w, h, labels)?));
    }
    Err(Error::Config(format!(
        "could not place visible Good and Bad blobs in a {w}x{h} image; increase the blob radius"
    )))
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<(LargeImage, LabelMap)>> {
    (0..cfg.n_images).map(|i| generate_one(cfg, i)).collect()
}

/// Replaces the inside of `region` by `(1 - a) * image + a * blend`, where
/// `blend` is an even mixture of the Good and Bad textures plus noise.
/// Pixels outside the region are untouched; labels are not affected.
pub fn corrupt_region(
    image: &LargeImage,
    region: Region,
    amplitude: f64,
    textures: &[TextureParams; 3],
    seed: u64,
) -> Result<LargeImage> {
    let (w, h) = image.shape();
    if region.width == 0 || region.height == 0 || region.x0 + region.width > w || region.y0 + region.height > h {
        return Err(Error::Geometry(format!(
            "region {}x{} at ({}, {}) lies outside a {w}x{h} image",
            region.width, region.height, region.x0, region.y0
        )));
    }
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(Error::Config(format!("corruption amplitude {amplitude} must lie in [0, 1]")));
    }
    if amplitude == 0.0 {
        return Ok(image.clone());
    }
    let mut r = rng::stream(seed, 0xC0);
    let good = Texture::new(textures[usize::from(GOOD)], &mut r);
    let bad = Texture::new(textures[usize::from(BAD)], &mut r);
    let mut pixels = image.pixels().to_vec();
    for y in region.y0..region.y0 + region.height {
        for x in region.x0..region.x0 + region.width {
            let n1: f64 = r.sample(StandardNormal);
            let n2: f64 = r.sample(StandardNormal);
            let blend = 0.5 * (good.at(x, y, n1) + bad.at(x, y, n2));
            let i = y * w + x;
            pixels[i] = quantize((1.0 - amplitude) * f64::from(pixels[i]) + amplitude * blend);
        }
    }
    LargeImage::new(w, h, pixels)
}

/// One image/label pair listed in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub seed: u64,
}

pub fn manifest_text(entries: &[ManifestEntry]) -> String {
    let mut out = format!("MANIFEST1 images={}\n", entries.len());
    for e in entries {
        out.push_str(&format!("{} {} {}\n", e.image.display(), e.labels.display(), e.seed));
    }
    out
}

/// Parses a manifest; relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.split_whitespace().next() != Some("MANIFEST1") {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "MANIFEST1",
        });
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [img, lab, seed] = f[..] else {
            return Err(Error::corrupt(path, format!("line {}: expected `image labels seed`", n + 2)));
        };
        let seed = seed
            .parse()
            .map_err(|_| Error::corrupt(path, format!("line {}: bad seed {seed:?}", n + 2)))?;
        out.push(ManifestEntry {
            image: base.join(img),
            labels: base.join(lab),
            seed,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = io::read_text(path, "MANIFEST1")?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")), path)
}

/// Writes `image_NNN.pgm` / `labels_NNN.pgm` pairs and `manifest.txt` into `dir`.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, data: &[(LargeImage, LabelMap)]) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(data.len());
    for (i, (img, lab)) in data.iter().enumerate() {
        let image = PathBuf::from(format!("image_{i:03}.pgm"));
        let labels = PathBuf::from(format!("labels_{i:03}.pgm"));
        io::write_image(&dir.join(&image), img)?;
        io::write_labels(&dir.join(&labels), lab)?;
        entries.push(ManifestEntry {
            image,
            labels,
            seed: cfg.image_seed(i),
        });
    }
    let path = dir.join("manifest.txt");
    io::write_atomic(&path, manifest_text(&entries).as_bytes())?;
    Ok(path)
}

/// Loads every pair listed in a manifest.
pub fn read_dataset(manifest: &Path, num_classes: usize) -> Result<Vec<(LargeImage, LabelMap)>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let img = io::read_image(&e.image)?;
            let lab = io::read_labels(&e.labels, num_classes)?;
            if img.shape() != lab.shape() {
                return Err(Error::Shape(format!(
                    "{} and {} differ in size",
                    e.image.display(),
                    e.labels.display()
                )));
            }
            Ok((img, lab))
        })
        .collect()
}
