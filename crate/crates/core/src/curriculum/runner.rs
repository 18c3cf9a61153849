//! Multi-stage retraining on uncertainty-resampled tiles.

use super::plan::{build_plan, CurriculumConfig, CurriculumPlan};
use crate::error::{Error, Result};
use crate::image::{LabelMap, LargeImage};
use crate::metrics::ReliabilityReport;
use crate::net::{train_stage, EpochRecord, ModelState, Phase, TrainConfig};
use crate::pipeline::{self, PredictConfig};

#[derive(Debug, Clone)]
pub struct StageRecord {
    /// 1 for the incoming model, 2.. for curriculum stages.
    pub stage: usize,
    /// Training tiles drawn from the plans (0 for stage 1).
    pub tiles: usize,
    pub plans: Vec<CurriculumPlan>,
    pub val: ReliabilityReport,
    pub epochs: Vec<EpochRecord>,
    pub model: ModelState,
}

#[derive(Debug, Clone)]
pub struct CurriculumOutcome {
    /// Stage with the highest validation UA (earliest on ties).
    pub best_stage: usize,
    pub history: Vec<StageRecord>,
}

impl CurriculumOutcome {
    pub fn best(&self) -> &ModelState {
        &self.history[self.best_stage - 1].model
    }

    /// Stage summary, one line per stage.
    pub fn history_text(&self) -> String {
        let mut out = format!("HISTORY1 stages={} best={}\n", self.history.len(), self.best_stage);
        for s in &self.history {
            let last = s.epochs.last().map_or(f64::NAN, |e| e.val_loss);
            out.push_str(&format!(
                "stage={} tiles={} npv={} tpr={} ua={} iou={} val_loss={} tp={} fp={} tn={} fn={}\n",
                s.stage,
                s.tiles,
                s.val.npv,
                s.val.tpr,
                s.val.ua,
                s.val.mean_iou,
                last,
                s.val.counts.tp,
                s.val.counts.fp,
                s.val.counts.tn,
                s.val.counts.fn_,
            ));
        }
        out
    }
}

/// Per-image plans from the current model's uncertainty over `train`.
pub fn plans_for(
    model: &ModelState,
    train: &[(LargeImage, LabelMap)],
    cfg: &CurriculumConfig,
    predict: &PredictConfig,
    stage: usize,
) -> Result<Vec<CurriculumPlan>> {
    train
        .iter()
        .enumerate()
        .map(|(i, (img, _))| {
            let umap = pipeline::predict_image(model, img, predict)?.umap;
            build_plan(&umap, cfg, &format!("train{i:03}"), stage)
        })
        .collect()
}

fn ua_or_floor(r: &ReliabilityReport) -> f64 {
    if r.ua.is_nan() {
        f64::NEG_INFINITY
    } else {
        r.ua
    }
}

/// Starting from a trained stage-1 model, repeats: predict on the training
/// images, plan, retrain on the planned tiles at the curriculum learning
/// rate, and score on validation images. Stops when validation UA improves
/// by less than `stop_epsilon` or after `max_stages` stages in total.
pub fn run_curriculum(
    stage1: &ModelState,
    train: &[(LargeImage, LabelMap)],
    val: &[(LargeImage, LabelMap)],
    cfg: &CurriculumConfig,
    train_cfg: &TrainConfig,
    predict: &PredictConfig,
    val_stride: usize,
) -> Result<CurriculumOutcome> {
    cfg.validate()?;
    predict.validate()?;
    train_cfg.validate()?;
    if cfg.d != predict.d {
        return Err(Error::Config(format!(
            "curriculum tile size {} differs from prediction tile size {}",
            cfg.d, predict.d
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("curriculum needs training and validation images".into()));
    }
    let val_samples = pipeline::grid_samples(val, cfg.d, val_stride)?;
    let mut history = vec![StageRecord {
        stage: 1,
        tiles: 0,
        plans: Vec::new(),
        val: pipeline::evaluate_images(stage1, val, predict)?,
        epochs: Vec::new(),
        model: stage1.clone(),
    }];
    let mut best_stage = 1;
    let mut model = stage1.clone();
    for stage in 2..=cfg.max_stages {
        let plans = plans_for(&model, train, cfg, predict, stage)?;
        let samples = pipeline::plan_samples(train, &plans)?;
        let out = train_stage(&model, &samples, &val_samples, train_cfg, Phase::Curriculum, stage as u64)?;
        model = out.best;
        let report = pipeline::evaluate_images(&model, val, predict)?;
        let prev = ua_or_floor(&history[history.len() - 1].val);
        let gain = ua_or_floor(&report) - prev;
        log::info!("curriculum stage {stage}: {} tiles, val UA {:.4} (gain {gain:.4})", samples.len(), report.ua);
        if ua_or_floor(&report) > ua_or_floor(&history[best_stage - 1].val) {
            best_stage = stage;
        }
        history.push(StageRecord {
            stage,
            tiles: samples.len(),
            plans,
            val: report,
            epochs: out.history,
            model: model.clone(),
        });
        if !(gain >= cfg.stop_epsilon) {
            break;
        }
    }
    Ok(CurriculumOutcome { best_stage, history })
}
