//! Whole-image prediction, evaluation and training-sample extraction.

use rayon::prelude::*;

use crate::curriculum::CurriculumPlan;
use crate::error::{Error, Result};
use crate::grid::{self, build_grid, Tile};
use crate::image::{LabelMap, LargeImage};
use crate::metrics::{self, IouCounts, ReliabilityCounts, ReliabilityReport};
use crate::net::{mc_predict, ModelState, TrainSample, UncertaintySource};
use crate::pmap::{argmax_labels, ProbabilityMap, Stitcher};
use crate::uncertainty::{threshold, uncertainty_map, CertaintyMask, NormMode, UncertaintyMap};

/// Tiles predicted concurrently before being folded into the stitcher.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub d: usize,
    pub stride: usize,
    pub mc_samples: usize,
    pub threshold: f64,
    pub norm: NormMode,
    /// Base seed; tile `i` uses `seed ^ i`.
    pub seed: u64,
    /// Worker threads for tile prediction. Results do not depend on it.
    pub jobs: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            d: 160,
            stride: 10,
            mc_samples: 10,
            threshold: 0.5,
            norm: NormMode::Analytic,
            seed: 0,
            jobs: 1,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.stride == 0 || self.stride > self.d {
            return Err(Error::Config(format!(
                "need 1 <= stride <= tile size, got stride {} and tile size {}",
                self.stride, self.d
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("MC sample count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} must lie in [0, 1]", self.threshold)));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pmap: ProbabilityMap,
    pub labels: LabelMap,
    pub umap: UncertaintyMap,
    pub mask: CertaintyMask,
}

fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if jobs <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Stitched MC-dropout predictive mean over a sliding-window grid.
pub fn predict_pmap(model: &ModelState, image: &LargeImage, cfg: &PredictConfig) -> Result<ProbabilityMap> {
    cfg.validate()?;
    let net_cfg = model.config();
    if net_cfg.d != cfg.d {
        return Err(Error::Config(format!(
            "model expects {0}x{0} inputs but tile size is {1}",
            net_cfg.d, cfg.d
        )));
    }
    let grid = build_grid(image.shape(), cfg.d, cfg.stride)?;
    let mut st = Stitcher::new(image.shape(), net_cfg.classes);
    let predict = |(i, &tile): (usize, &Tile)| -> Result<Vec<f64>> {
        let sub = grid::extract(image, tile)?;
        mc_predict(&model.net, &sub, cfg.mc_samples, cfg.seed ^ i as u64)
    };
    for (c, chunk) in grid.tiles.chunks(CHUNK).enumerate() {
        let base = c * CHUNK;
        let outs: Vec<Result<Vec<f64>>> = if cfg.jobs > 1 {
            with_pool(cfg.jobs, || {
                chunk
                    .par_iter()
                    .enumerate()
                    .map(|(j, t)| predict((base + j, t)))
                    .collect()
            })?
        } else {
            chunk.iter().enumerate().map(|(j, t)| predict((base + j, t))).collect()
        };
        for (tile, out) in chunk.iter().zip(outs) {
            st.add(*tile, &out?)?;
        }
    }
    st.finish()
}

pub fn predict_image(model: &ModelState, image: &LargeImage, cfg: &PredictConfig) -> Result<Prediction> {
    let pmap = predict_pmap(model, image, cfg)?;
    let labels = argmax_labels(&pmap)?;
    let umap = uncertainty_map(&pmap, cfg.norm);
    let mask = threshold(&umap, cfg.threshold)?;
    Ok(Prediction {
        pmap,
        labels,
        umap,
        mask,
    })
}

/// Reliability and IoU counts of one prediction against ground truth.
pub fn score(pred: &Prediction, truth: &LabelMap) -> Result<(ReliabilityCounts, IouCounts)> {
    let counts = metrics::confusion(&pred.labels, truth, &pred.mask)?;
    let iou = metrics::iou_counts(&pred.labels, truth, truth.num_classes())?;
    Ok((counts, iou))
}

/// Counts pooled over all images.
pub fn evaluate_images(model: &ModelState, data: &[(LargeImage, LabelMap)], cfg: &PredictConfig) -> Result<ReliabilityReport> {
    if data.is_empty() {
        return Err(Error::Data("no images to evaluate".into()));
    }
    let mut counts = ReliabilityCounts::default();
    let mut iou = IouCounts::zeros(model.config().classes);
    for (img, truth) in data {
        let p = predict_image(model, img, cfg)?;
        let (c, i) = score(&p, truth)?;
        counts += c;
        iou.merge(&i);
    }
    Ok(ReliabilityReport::from_counts(counts, iou))
}

fn sample(image: &LargeImage, labels: &LabelMap, index: usize, tile: Tile) -> Result<TrainSample> {
    Ok(TrainSample {
        image: grid::extract(image, tile)?,
        labels: grid::extract_labels(labels, tile)?,
        umap: None,
        origin: Some((index, tile)),
    })
}

/// Sub-images on a regular grid over every image.
pub fn grid_samples(data: &[(LargeImage, LabelMap)], d: usize, stride: usize) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for (i, (img, lab)) in data.iter().enumerate() {
        if img.shape() != lab.shape() {
            return Err(Error::Shape(format!("image {i}: image and labels differ in size")));
        }
        for &t in &build_grid(img.shape(), d, stride)?.tiles {
            out.push(sample(img, lab, i, t)?);
        }
    }
    Ok(out)
}

/// Sub-images listed by per-image plans (`plans[i]` belongs to `data[i]`).
pub fn plan_samples(data: &[(LargeImage, LabelMap)], plans: &[CurriculumPlan]) -> Result<Vec<TrainSample>> {
    if plans.len() != data.len() {
        return Err(Error::Shape(format!("{} plans for {} images", plans.len(), data.len())));
    }
    let mut out = Vec::new();
    for (i, ((img, lab), plan)) in data.iter().zip(plans).enumerate() {
        for &t in &plan.tiles {
            out.push(sample(img, lab, i, t)?);
        }
    }
    Ok(out)
}

fn attach(samples: &mut [TrainSample], maps: &[UncertaintyMap]) -> Result<()> {
    for s in samples {
        let (i, tile) = s
            .origin
            .ok_or_else(|| Error::Data("sample has no source image".into()))?;
        let m = maps
            .get(i)
            .ok_or_else(|| Error::Data(format!("sample refers to missing image {i}")))?;
        tile.check(m.width(), m.height())?;
        s.umap = Some(grid::crop(m.values(), m.width(), tile));
    }
    Ok(())
}

/// Uncertainty maps of the current model over the source images, cut
/// into the samples' windows.
pub struct ImageUncertainty<'a> {
    pub train: &'a [(LargeImage, LabelMap)],
    pub val: &'a [(LargeImage, LabelMap)],
    pub predict: PredictConfig,
    pub calls: usize,
}

impl<'a> ImageUncertainty<'a> {
    pub fn new(train: &'a [(LargeImage, LabelMap)], val: &'a [(LargeImage, LabelMap)], predict: PredictConfig) -> Self {
        Self {
            train,
            val,
            predict,
            calls: 0,
        }
    }
}

impl UncertaintySource for ImageUncertainty<'_> {
    fn refresh(&mut self, model: &ModelState, train: &mut [TrainSample], val: &mut [TrainSample]) -> Result<()> {
        self.calls += 1;
        let maps = |data: &[(LargeImage, LabelMap)]| -> Result<Vec<UncertaintyMap>> {
            data.iter()
                .map(|(img, _)| Ok(predict_image(model, img, &self.predict)?.umap))
                .collect()
        };
        attach(train, &maps(self.train)?)?;
        attach(val, &maps(self.val)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn model() -> ModelState {
        ModelState::init(
            NetConfig {
                depth: 1,
                base_channels: 2,
                dropout_rate: 0.5,
                classes: 3,
                d: 8,
            },
            4,
        )
        .unwrap()
    }

    fn data(n: usize) -> Vec<(LargeImage, LabelMap)> {
        (0..n)
            .map(|k| {
                let (w, h) = (13, 11);
                let px = (0..w * h).map(|i| ((i * 7 + k) % 23) as f32 / 23.0).collect();
                let lab = (0..w * h).map(|i| ((i / 5 + k) % 3) as u8).collect();
                (LargeImage::new(w, h, px).unwrap(), LabelMap::with_default_classes(w, h, lab).unwrap())
            })
            .collect()
    }

    fn cfg() -> PredictConfig {
        PredictConfig {
            d: 8,
            stride: 3,
            mc_samples: 3,
            seed: 17,
            ..PredictConfig::default()
        }
    }

    #[test]
    fn prediction_matches_manual_stitch() {
        let m = model();
        let (img, _) = &data(1)[0];
        let got = predict_pmap(&m, img, &cfg()).unwrap();
        let grid = build_grid(img.shape(), 8, 3).unwrap();
        let outs: Vec<Vec<f64>> = grid
            .tiles
            .iter()
            .enumerate()
            .map(|(i, &t)| mc_predict(&m.net, &grid::extract(img, t).unwrap(), 3, 17 ^ i as u64).unwrap())
            .collect();
        let want = crate::pmap::stitch(grid.tiles.iter().copied().zip(outs.iter().map(|v| v.as_slice())), img.shape(), 3).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn jobs_do_not_change_results() {
        let m = model();
        let (img, _) = &data(1)[0];
        let a = predict_image(&m, img, &cfg()).unwrap();
        let b = predict_image(&m, img, &PredictConfig { jobs: 3, ..cfg() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn outputs_are_consistent() {
        let m = model();
        let (img, _) = &data(1)[0];
        let p = predict_image(&m, img, &cfg()).unwrap();
        assert_eq!(p.labels, argmax_labels(&p.pmap).unwrap());
        assert_eq!(p.mask, threshold(&p.umap, 0.5).unwrap());
        assert!(p.pmap.coverage().iter().all(|&c| c >= 1));
    }

    #[test]
    fn pooled_counts_add_up() {
        let m = model();
        let d = data(2);
        let r = evaluate_images(&m, &d, &cfg()).unwrap();
        assert_eq!(r.counts.total(), 2 * 13 * 11);
        let mut sum = ReliabilityCounts::default();
        for (img, lab) in &d {
            sum += score(&predict_image(&m, img, &cfg()).unwrap(), lab).unwrap().0;
        }
        assert_eq!(sum, r.counts);
    }

    #[test]
    fn rejects_mismatched_tile_size() {
        let (img, _) = &data(1)[0];
        assert!(matches!(
            predict_image(&model(), img, &PredictConfig { d: 10, stride: 5, ..cfg() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn samples_carry_windows_and_maps() {
        let d = data(2);
        let mut s = grid_samples(&d, 8, 5).unwrap();
        assert_eq!(s.len(), 2 * 4);
        let (i, t) = s[5].origin.unwrap();
        assert_eq!(s[5].image, grid::extract(&d[i].0, t).unwrap());
        let mut src = ImageUncertainty::new(&d, &d[..1], cfg());
        let mut v = grid_samples(&d[..1], 8, 5).unwrap();
        src.refresh(&model(), &mut s, &mut v).unwrap();
        assert_eq!(src.calls, 1);
        let u = predict_image(&model(), &d[i].0, &cfg()).unwrap().umap;
        assert_eq!(s[5].umap.as_deref().unwrap(), grid::crop(u.values(), u.width(), t).as_slice());
    }
}
