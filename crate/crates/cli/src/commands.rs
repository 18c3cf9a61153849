use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use segmap::curriculum::{build_plan, run_curriculum};
use segmap::harness::{self, kfold_split, split_seed, subset, FoldSeeds, FoldSplit};
use segmap::image::{LabelMap, LargeImage};
use segmap::net::{train_method2, train_stage, EpochRecord, LossKind, ModelState, Phase, TrainConfig};
use segmap::pipeline::{self, ImageUncertainty, PredictConfig};
use segmap::uncertainty::{threshold, uncertainty_map};
use segmap::{io, synth, Error, Result};

use crate::config::RunConfig;

type Dataset = Vec<(LargeImage, LabelMap)>;

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned())
}

fn load_data(cfg: &RunConfig, manifest: &Path) -> Result<Dataset> {
    synth::read_dataset(manifest, cfg.net.classes)
}

fn fold_split(cfg: &RunConfig, n: usize, fold: usize) -> Result<FoldSplit> {
    let folds = kfold_split(&(0..n).collect::<Vec<_>>(), cfg.experiment.folds, split_seed(cfg.seed))?;
    folds
        .into_iter()
        .nth(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} out of range (folds = {})", cfg.experiment.folds)))
}

/// Prediction settings for a loaded model: the tile size follows the model.
fn predict_for(cfg: &RunConfig, model: &ModelState) -> Result<PredictConfig> {
    let mut c = cfg.clone();
    c.net.tile_size = model.config().d;
    c.predict()
}

fn history_text(records: &[EpochRecord]) -> String {
    let mut s = format!("TRAIN1 epochs={}\n", records.len());
    for r in records {
        let _ = writeln!(s, "epoch={} loss={} train_loss={} val_loss={}", r.epoch, r.loss_kind, r.train_loss, r.val_loss);
    }
    s
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = cfg.synth()?;
    let data = synth::generate(&sc)?;
    let manifest = synth::write_dataset(out, &sc, &data)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, data_path: &Path, fold: usize, out: &Path) -> Result<()> {
    let net = cfg.net()?;
    let data = load_data(cfg, data_path)?;
    let split = fold_split(cfg, data.len(), fold)?;
    split.assert_no_leakage();
    let seeds = FoldSeeds::new(cfg.seed, fold);
    let tc = TrainConfig {
        seed: seeds.train,
        ..cfg.train()?
    };
    let pc = PredictConfig {
        seed: seeds.predict,
        ..cfg.predict()?
    };
    let (train, val) = (subset(&data, &split.train_ids), subset(&data, &split.val_ids));
    let ts = pipeline::grid_samples(&train, net.d, cfg.train_stride())?;
    let vs = pipeline::grid_samples(&val, net.d, cfg.train_stride())?;
    let init = ModelState::init(net, seeds.init)?;
    let outcome = if tc.loss_kind == LossKind::Uncertainty {
        let mut src = ImageUncertainty::new(&train, &val, pc);
        train_method2(&init, &ts, &vs, &tc, &mut src)?
    } else {
        train_stage(&init, &ts, &vs, &tc, Phase::Initial, 1)?
    };
    outcome.best.save(&out.join("model.bnet"))?;
    io::write_atomic(&out.join("train_history.txt"), history_text(&outcome.history).as_bytes())?;
    println!("model {} (best validation loss {})", out.join("model.bnet").display(), outcome.best.val_loss_best);
    Ok(())
}

pub fn predict(cfg: &RunConfig, model_path: &Path, image_path: &Path, out: &Path) -> Result<()> {
    let model = ModelState::load(model_path)?;
    let pc = predict_for(cfg, &model)?;
    let image = io::read_image(image_path)?;
    let p = pipeline::predict_image(&model, &image, &pc)?;
    let s = stem(image_path);
    io::write_pmap(&out.join(format!("{s}.pmap")), &p.pmap)?;
    io::write_labels(&out.join(format!("{s}_labels.pgm")), &p.labels)?;
    io::write_umap(&out.join(format!("{s}.umap")), &p.umap)?;
    io::write_mask(&out.join(format!("{s}_mask.pgm")), &p.mask)?;
    println!(
        "{s}: mean uncertainty {:.4}, {} of {} pixels certain",
        p.umap.mean(),
        p.mask.count_certain(),
        p.umap.values().len()
    );
    Ok(())
}

pub fn uncertainty(cfg: &RunConfig, pmap_path: &Path, out: &Path) -> Result<()> {
    let pc = cfg.predict()?;
    let pm = io::read_pmap(pmap_path)?;
    let umap = uncertainty_map(&pm, pc.norm);
    let mask = threshold(&umap, pc.threshold)?;
    let s = stem(pmap_path);
    io::write_umap(&out.join(format!("{s}.umap")), &umap)?;
    io::write_mask(&out.join(format!("{s}_mask.pgm")), &mask)?;
    println!("{s}: mean uncertainty {:.4}", umap.mean());
    Ok(())
}

pub fn plan(cfg: &RunConfig, umap_path: &Path, image_id: Option<&str>, stage: usize, out: &Path) -> Result<()> {
    let cc = cfg.curriculum()?;
    let umap = io::read_umap(umap_path)?;
    let s = stem(umap_path);
    let plan = build_plan(&umap, &cc, image_id.unwrap_or(&s), stage)?;
    io::write_atomic(&out.join(format!("{s}.plan")), plan.to_text().as_bytes())?;
    println!("{s}: {} tiles", plan.tiles.len());
    Ok(())
}

pub fn curriculum(cfg: &RunConfig, model_path: &Path, data_path: &Path, fold: usize, out: &Path) -> Result<()> {
    let model = ModelState::load(model_path)?;
    let mut cfg = cfg.clone();
    cfg.net.tile_size = model.config().d;
    let cc = cfg.curriculum()?;
    let data = load_data(&cfg, data_path)?;
    let split = fold_split(&cfg, data.len(), fold)?;
    split.assert_no_leakage();
    let seeds = FoldSeeds::new(cfg.seed, fold);
    let tc = TrainConfig {
        seed: seeds.train,
        ..cfg.train()?
    };
    if tc.loss_kind == LossKind::Uncertainty {
        return Err(Error::Config("curriculum stages train with ce, dice, ss or ce+dice".into()));
    }
    let pc = PredictConfig {
        seed: seeds.predict,
        ..cfg.predict()?
    };
    let (train, val) = (subset(&data, &split.train_ids), subset(&data, &split.val_ids));
    let result = run_curriculum(&model, &train, &val, &cc, &tc, &pc, cfg.train_stride())?;
    for rec in &result.history {
        io::write_atomic(&out.join(format!("stage{}.val.report", rec.stage)), rec.val.to_text().as_bytes())?;
        for p in &rec.plans {
            let path = out.join("plans").join(format!("stage{}_{}.plan", rec.stage, p.source_image_id));
            io::write_atomic(&path, p.to_text().as_bytes())?;
        }
    }
    io::write_atomic(&out.join("history.txt"), result.history_text().as_bytes())?;
    result.best().save(&out.join("model_best.bnet"))?;
    print!("{}", result.history_text());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

pub fn evaluate(cfg: &RunConfig, model_path: &Path, data_path: &Path, fold: usize, which: Split, out: &Path) -> Result<()> {
    let model = ModelState::load(model_path)?;
    let mut pc = predict_for(cfg, &model)?;
    let data = load_data(cfg, data_path)?;
    let ids: Vec<usize> = match which {
        Split::All => (0..data.len()).collect(),
        _ => {
            let s = fold_split(cfg, data.len(), fold)?;
            pc.seed = FoldSeeds::new(cfg.seed, fold).predict;
            match which {
                Split::Train => s.train_ids,
                Split::Val => s.val_ids,
                _ => s.test_ids,
            }
        }
    };
    let report = pipeline::evaluate_images(&model, &subset(&data, &ids), &pc)?;
    io::write_atomic(&out.join("report.txt"), report.to_text().as_bytes())?;
    println!(
        "NPV {:.4}  TPR {:.4}  UA {:.4}  IoU {:.4}  ({} images)",
        report.npv,
        report.tpr,
        report.ua,
        report.mean_iou,
        ids.len()
    );
    Ok(())
}

pub fn table(runs: &[PathBuf]) -> Result<()> {
    for run in runs {
        if runs.len() > 1 {
            println!("# {}", run.display());
        }
        print!("{}", harness::table_from_dir(run)?);
    }
    Ok(())
}

pub fn experiment(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<()> {
    let spec = cfg.experiment()?;
    let data = load_data(cfg, data_path)?;
    let result = harness::run_experiment(&spec, &data, Some(out))?;
    println!("{}", out.join(spec.run_dir_name()).display());
    print!("{}", result.table());
    Ok(())
}
