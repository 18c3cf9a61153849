//! Cross-validation splits, the per-fold experiment pipeline and result
//! aggregation into table rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::curriculum::{run_curriculum, CurriculumConfig};
use crate::error::{Error, Result};
use crate::image::{LabelMap, LargeImage};
use crate::io;
use crate::metrics::{mean_std, ReliabilityReport};
use crate::net::{train_method2, train_stage, LossKind, ModelState, NetConfig, Phase, TrainConfig};
use crate::pipeline::{self, ImageUncertainty, PredictConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl FoldSplit {
    /// Panics if a test id leaks into training or validation.
    pub fn assert_no_leakage(&self) {
        for t in &self.test_ids {
            assert!(
                !self.train_ids.contains(t) && !self.val_ids.contains(t),
                "fold {}: test image {t} also used for training or validation",
                self.fold_index
            );
        }
        for v in &self.val_ids {
            assert!(!self.train_ids.contains(v), "fold {}: image {v} in train and val", self.fold_index);
        }
    }
}

/// Per-fold sizes `(train, val, test)` for `n` images: test and validation
/// are `n/7` and `3n/7` rounded half-up, the remainder goes to training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = ((n + 3) / 7).max(1);
    let val = (6 * n + 7) / 14;
    (n.saturating_sub(test + val), val, test)
}

/// Seeded k-fold split over `ids`. All ids are shuffled once; fold `f`
/// takes the `f`-th block of test ids (test sets are pairwise disjoint), and
/// the rest is reshuffled per fold into validation and training.
pub fn kfold_split(ids: &[usize], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let n = ids.len();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let (train, val, test) = split_sizes(n);
    if n < k || k * test > n || train == 0 || val == 0 {
        return Err(Error::Data(format!(
            "{n} images cannot form {k} folds with disjoint non-empty test sets and non-empty train/val sets"
        )));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut rng::stream(seed, 0));
    Ok((0..k)
        .map(|f| {
            let test_ids = order[f * test..(f + 1) * test].to_vec();
            let mut rest: Vec<usize> = order[..f * test].iter().chain(&order[(f + 1) * test..]).copied().collect();
            rest.shuffle(&mut rng::stream(seed, 1 + f as u64));
            let val_ids = rest[..val].to_vec();
            let train_ids = rest[val..].to_vec();
            FoldSplit {
                fold_index: f,
                train_ids,
                val_ids,
                test_ids,
            }
        })
        .collect())
}

/// Seed of the fold split of an experiment with base seed `seed`.
pub fn split_seed(seed: u64) -> u64 {
    rng::derive(seed, 1)
}

/// Independent seeds of one fold: weight init, training, prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldSeeds {
    pub init: u64,
    pub train: u64,
    pub predict: u64,
}

impl FoldSeeds {
    pub fn new(seed: u64, fold: usize) -> Self {
        let f = fold as u64;
        Self {
            init: rng::derive(seed, 100 + f),
            train: rng::derive(seed, 200 + f),
            predict: rng::derive(seed, 300 + f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baseline,
    Curriculum,
    Method2,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Curriculum => "curriculum",
            Method::Method2 => "method2",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "curriculum" => Ok(Method::Curriculum),
            "method2" | "uncertainty-loss" => Ok(Method::Method2),
            _ => Err(Error::Config(format!("unknown method {s:?} (baseline, curriculum, method2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub method: Method,
    pub net: NetConfig,
    /// `train.seed` is replaced per fold by a seed derived from `seed`.
    pub train: TrainConfig,
    /// `predict.seed` is replaced per fold by a seed derived from `seed`.
    pub predict: PredictConfig,
    /// `max_stages` is the stage count of the curriculum method.
    pub curriculum: CurriculumConfig,
    /// Stride of the regular grid of training and validation tiles.
    pub train_stride: usize,
    pub folds: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.predict.validate()?;
        self.curriculum.validate()?;
        if self.net.d != self.predict.d || self.net.d != self.curriculum.d {
            return Err(Error::Config(format!(
                "tile sizes disagree: network {}, prediction {}, curriculum {}",
                self.net.d, self.predict.d, self.curriculum.d
            )));
        }
        if self.train_stride == 0 || self.train_stride > self.net.d {
            return Err(Error::Config("training stride must lie in 1..=tile size".into()));
        }
        match self.method {
            Method::Curriculum if self.curriculum.max_stages < 2 => {
                Err(Error::Config("the curriculum method needs stages >= 2".into()))
            }
            Method::Method2 if self.train.loss_kind != LossKind::Uncertainty => {
                Err(Error::Config("method2 requires loss = uncertainty".into()))
            }
            Method::Baseline | Method::Curriculum if self.train.loss_kind == LossKind::Uncertainty => Err(
                Error::Config("the uncertainty loss needs a frozen map; use method = method2".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Canonical text form; its hash names the run directory.
    pub fn to_text(&self) -> String {
        let (n, t, p, c) = (&self.net, &self.train, &self.predict, &self.curriculum);
        let mut s = String::from("EXPERIMENT1\n");
        let _ = writeln!(s, "method={}\nseed={}\nfolds={}\ntrain_stride={}", self.method, self.seed, self.folds, self.train_stride);
        let _ = writeln!(
            s,
            "net.depth={}\nnet.base_channels={}\nnet.dropout_rate={}\nnet.classes={}\nnet.d={}",
            n.depth, n.base_channels, n.dropout_rate, n.classes, n.d
        );
        let _ = writeln!(
            s,
            "train.lr_stage1={}\ntrain.lr_curriculum={}\ntrain.beta1={}\ntrain.beta2={}\ntrain.batch_size={}\ntrain.epochs={}\ntrain.loss={}\ntrain.ss_weight={}\ntrain.lambda={}",
            t.lr_stage1, t.lr_curriculum, t.beta1, t.beta2, t.batch_size, t.epochs_per_stage, t.loss_kind, t.loss.ss_weight, t.loss.lambda
        );
        let _ = writeln!(
            s,
            "predict.stride={}\npredict.mc_samples={}\npredict.threshold={}\npredict.norm={:?}",
            p.stride, p.mc_samples, p.threshold, p.norm
        );
        let _ = writeln!(
            s,
            "curriculum.sigma={}\ncurriculum.stages={}\ncurriculum.min_step={}\ncurriculum.stop_epsilon={}",
            c.sigma, c.max_stages, c.min_step, c.stop_epsilon
        );
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir_name(&self) -> String {
        format!("{}-{}-seed{}", self.method, self.hash(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub stage: usize,
    pub val: ReliabilityReport,
    pub test: ReliabilityReport,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub split: FoldSplit,
    /// One entry per trained stage; a single entry except for the curriculum.
    pub stages: Vec<StageResult>,
    /// Stage picked by validation UA.
    pub selected: usize,
    pub model: ModelState,
    pub history_text: Option<String>,
}

impl FoldResult {
    /// Result at `stage`, carrying the last stage forward for folds that
    /// stopped early.
    pub fn at_stage(&self, stage: usize) -> &StageResult {
        self.stages
            .iter()
            .rev()
            .find(|s| s.stage <= stage)
            .unwrap_or(&self.stages[0])
    }

    pub fn selected_result(&self) -> &StageResult {
        self.at_stage(self.selected)
    }
}

/// Mean and sample standard deviation of each metric across folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub npv: (f64, f64),
    pub tpr: (f64, f64),
    pub ua: (f64, f64),
    pub iou: (f64, f64),
}

impl Aggregate {
    pub fn of(reports: &[&ReliabilityReport]) -> Self {
        let col = |f: fn(&ReliabilityReport) -> f64| mean_std(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            npv: col(|r| r.npv),
            tpr: col(|r| r.tpr),
            ua: col(|r| r.ua),
            iou: col(|r| r.mean_iou),
        }
    }
}

pub const TABLE_HEADER: &str = "Stage  Loss              NPV              TPR              UA               IoU";

fn cell((m, s): (f64, f64)) -> String {
    format!("{m:.3} ± {s:.3}")
}

pub fn table_row(stage: &str, loss: &str, a: &Aggregate) -> String {
    format!(
        "{stage:<6} {loss:<17} {:<16} {:<16} {:<16} {}",
        cell(a.npv),
        cell(a.tpr),
        cell(a.ua),
        cell(a.iou)
    )
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub folds: Vec<FoldResult>,
}

impl ExperimentResult {
    pub fn max_stage(&self) -> usize {
        self.folds
            .iter()
            .flat_map(|f| f.stages.iter().map(|s| s.stage))
            .max()
            .unwrap_or(1)
    }

    /// Test-set aggregate at `stage` (carried forward per fold).
    pub fn test_at(&self, stage: usize) -> Aggregate {
        Aggregate::of(&self.folds.iter().map(|f| &f.at_stage(stage).test).collect::<Vec<_>>())
    }

    pub fn val_at(&self, stage: usize) -> Aggregate {
        Aggregate::of(&self.folds.iter().map(|f| &f.at_stage(stage).val).collect::<Vec<_>>())
    }

    /// Test-set aggregate of the validation-selected stage of each fold.
    pub fn test_selected(&self) -> Aggregate {
        Aggregate::of(&self.folds.iter().map(|f| &f.selected_result().test).collect::<Vec<_>>())
    }

    pub fn table(&self) -> String {
        table_text(
            self.spec.method,
            self.spec.train.loss_kind,
            &self.folds.iter().map(|f| (f.stages.clone(), f.selected)).collect::<Vec<_>>(),
        )
    }
}

fn table_text(method: Method, loss: LossKind, folds: &[(Vec<StageResult>, usize)]) -> String {
    let at = |stages: &[StageResult], s: usize| -> usize {
        stages.iter().rposition(|r| r.stage <= s).unwrap_or(0)
    };
    let max_stage = folds.iter().flat_map(|(s, _)| s.iter().map(|r| r.stage)).max().unwrap_or(1);
    let label = match method {
        Method::Method2 => LossKind::Uncertainty.label(),
        _ => loss.label(),
    };
    let mut out = format!("{TABLE_HEADER}\n");
    for stage in 1..=max_stage {
        let reports: Vec<&ReliabilityReport> = folds.iter().map(|(s, _)| &s[at(s, stage)].test).collect();
        out.push_str(&table_row(&stage.to_string(), label, &Aggregate::of(&reports)));
        out.push('\n');
    }
    if method == Method::Curriculum {
        let reports: Vec<&ReliabilityReport> = folds.iter().map(|(s, sel)| &s[at(s, *sel)].test).collect();
        out.push_str(&table_row("best", label, &Aggregate::of(&reports)));
        out.push('\n');
    }
    out
}

pub fn subset(data: &[(LargeImage, LabelMap)], ids: &[usize]) -> Vec<(LargeImage, LabelMap)> {
    ids.iter().map(|&i| data[i].clone()).collect()
}

fn run_fold(spec: &ExperimentSpec, data: &[(LargeImage, LabelMap)], split: FoldSplit) -> Result<FoldResult> {
    split.assert_no_leakage();
    let f = split.fold_index;
    let seeds = FoldSeeds::new(spec.seed, f);
    let train_cfg = TrainConfig {
        seed: seeds.train,
        ..spec.train.clone()
    };
    let predict = PredictConfig {
        seed: seeds.predict,
        ..spec.predict.clone()
    };
    let (train, val, test) = (
        subset(data, &split.train_ids),
        subset(data, &split.val_ids),
        subset(data, &split.test_ids),
    );
    let d = spec.net.d;
    let train_samples = pipeline::grid_samples(&train, d, spec.train_stride)?;
    let val_samples = pipeline::grid_samples(&val, d, spec.train_stride)?;
    let init = ModelState::init(spec.net.clone(), seeds.init)?;
    let score = |m: &ModelState, stage: usize| -> Result<StageResult> {
        Ok(StageResult {
            stage,
            val: pipeline::evaluate_images(m, &val, &predict)?,
            test: pipeline::evaluate_images(m, &test, &predict)?,
        })
    };
    log::info!("fold {f}: {} train / {} val / {} test images", train.len(), val.len(), test.len());
    match spec.method {
        Method::Baseline => {
            let m = train_stage(&init, &train_samples, &val_samples, &train_cfg, Phase::Initial, 1)?.best;
            Ok(FoldResult {
                stages: vec![score(&m, 1)?],
                split,
                selected: 1,
                model: m,
                history_text: None,
            })
        }
        Method::Method2 => {
            let mut src = ImageUncertainty::new(&train, &val, predict.clone());
            let m = train_method2(&init, &train_samples, &val_samples, &train_cfg, &mut src)?.best;
            Ok(FoldResult {
                stages: vec![score(&m, 1)?],
                split,
                selected: 1,
                model: m,
                history_text: None,
            })
        }
        Method::Curriculum => {
            let m1 = train_stage(&init, &train_samples, &val_samples, &train_cfg, Phase::Initial, 1)?.best;
            let out = run_curriculum(&m1, &train, &val, &spec.curriculum, &train_cfg, &predict, spec.train_stride)?;
            let mut stages = Vec::with_capacity(out.history.len());
            for rec in &out.history {
                stages.push(StageResult {
                    stage: rec.stage,
                    val: rec.val.clone(),
                    test: pipeline::evaluate_images(&rec.model, &test, &predict)?,
                });
            }
            Ok(FoldResult {
                stages,
                split,
                selected: out.best_stage,
                model: out.best().clone(),
                history_text: Some(out.history_text()),
            })
        }
    }
}

/// Runs every fold and, when `out` is given, persists the spec, split
/// manifest, per-fold reports and models, and the table under
/// `out/<method>-<spec hash>-seed<seed>/`.
pub fn run_experiment(spec: &ExperimentSpec, data: &[(LargeImage, LabelMap)], out: Option<&Path>) -> Result<ExperimentResult> {
    spec.validate()?;
    let ids: Vec<usize> = (0..data.len()).collect();
    let splits = kfold_split(&ids, spec.folds, split_seed(spec.seed))?;
    let mut folds = Vec::with_capacity(splits.len());
    for split in splits {
        folds.push(run_fold(spec, data, split)?);
    }
    let result = ExperimentResult {
        spec: spec.clone(),
        folds,
    };
    if let Some(out) = out {
        persist(&result, &out.join(spec.run_dir_name()))?;
    }
    Ok(result)
}

fn ids_text(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn persist(r: &ExperimentResult, dir: &Path) -> Result<()> {
    io::write_atomic(&dir.join("spec.txt"), r.spec.to_text().as_bytes())?;
    let mut manifest = format!("RUN1 method={} folds={} hash={}\n", r.spec.method, r.folds.len(), r.spec.hash());
    for f in &r.folds {
        let s = &f.split;
        let _ = writeln!(
            manifest,
            "fold={} train={} val={} test={} stages={} selected={} train_ids={} val_ids={} test_ids={}",
            s.fold_index,
            s.train_ids.len(),
            s.val_ids.len(),
            s.test_ids.len(),
            f.stages.len(),
            f.selected,
            ids_text(&s.train_ids),
            ids_text(&s.val_ids),
            ids_text(&s.test_ids)
        );
        let fd = fold_dir(dir, s.fold_index);
        for st in &f.stages {
            io::write_atomic(&fd.join(format!("stage{}.val.report", st.stage)), st.val.to_text().as_bytes())?;
            io::write_atomic(&fd.join(format!("stage{}.test.report", st.stage)), st.test.to_text().as_bytes())?;
        }
        if let Some(h) = &f.history_text {
            io::write_atomic(&fd.join("history.txt"), h.as_bytes())?;
        }
        f.model.save(&fd.join("model.bnet"))?;
    }
    io::write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())?;
    io::write_atomic(&dir.join("table.txt"), r.table().as_bytes())?;
    Ok(())
}

fn fold_dir(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold{fold}"))
}

/// Rebuilds the table of a persisted run from its per-fold reports alone.
pub fn table_from_dir(dir: &Path) -> Result<String> {
    let spec_text = io::read_text(&dir.join("spec.txt"), "EXPERIMENT1")?;
    let field = |k: &str| -> Result<&str> {
        spec_text
            .lines()
            .find_map(|l| l.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::corrupt(&dir.join("spec.txt"), format!("missing {k}")))
    };
    let method: Method = field("method")?.parse()?;
    let loss: LossKind = field("train.loss")?.parse()?;
    let manifest_path = dir.join("manifest.txt");
    let manifest = io::read_text(&manifest_path, "RUN1")?;
    let mut folds = Vec::new();
    for line in manifest.lines().skip(1) {
        let kv = |k: &str| -> Result<usize> {
            line.split_whitespace()
                .find_map(|t| t.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::corrupt(&manifest_path, format!("bad {k} in {line:?}")))
        };
        let (fold, selected) = (kv("fold")?, kv("selected")?);
        let fd = fold_dir(dir, fold);
        let mut stages = Vec::new();
        for stage in 1.. {
            let tp = fd.join(format!("stage{stage}.test.report"));
            if !tp.exists() {
                break;
            }
            let read = |p: &Path| -> Result<ReliabilityReport> {
                ReliabilityReport::from_text(&io::read_text(p, "REPORT1")?).map_err(|e| Error::corrupt(p, e))
            };
            stages.push(StageResult {
                stage,
                val: read(&fd.join(format!("stage{stage}.val.report")))?,
                test: read(&tp)?,
            });
        }
        if stages.is_empty() {
            return Err(Error::corrupt(&fd, "no stage reports"));
        }
        folds.push((stages, selected));
    }
    Ok(table_text(method, loss, &folds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn split_sizes_follow_three_three_one() {
        assert_eq!(split_sizes(35), (15, 15, 5));
        assert_eq!(split_sizes(7), (3, 3, 1));
        assert_eq!(split_sizes(59), (26, 25, 8));
        assert_eq!(split_sizes(12), (5, 5, 2));
    }

    #[test]
    fn thirty_five_ids() {
        let ids: Vec<usize> = (0..35).collect();
        let folds = kfold_split(&ids, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut tested: Vec<usize> = Vec::new();
        for f in &folds {
            assert_eq!((f.train_ids.len(), f.val_ids.len(), f.test_ids.len()), (15, 15, 5));
            f.assert_no_leakage();
            tested.extend(&f.test_ids);
        }
        tested.sort_unstable();
        tested.dedup();
        assert_eq!(tested.len(), 25);
        assert_eq!(folds, kfold_split(&ids, 5, 3).unwrap());
        assert_ne!(folds, kfold_split(&ids, 5, 4).unwrap());
    }

    #[test]
    fn too_few_ids_rejected() {
        let ids: Vec<usize> = (0..4).collect();
        assert!(matches!(kfold_split(&ids, 5, 0), Err(Error::Data(_))));
        assert!(kfold_split(&(0..2).collect::<Vec<_>>(), 2, 0).is_err());
        assert!(kfold_split(&(0..7).collect::<Vec<_>>(), 5, 0).is_ok());
        assert!(kfold_split(&(0..10).collect::<Vec<_>>(), 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn splits_partition_ids(n in 7usize..60, k in 2usize..6, seed in any::<u64>()) {
            let ids: Vec<usize> = (0..n).collect();
            if let Ok(folds) = kfold_split(&ids, k, seed) {
                let mut seen_test = std::collections::HashSet::new();
                for f in &folds {
                    f.assert_no_leakage();
                    let mut all: Vec<usize> = f.train_ids.iter().chain(&f.val_ids).chain(&f.test_ids).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(&all, &ids);
                    for t in &f.test_ids {
                        prop_assert!(seen_test.insert(*t));
                    }
                }
            } else {
                prop_assert!(k * split_sizes(n).2 > n || n < k);
            }
        }
    }

    #[test]
    #[should_panic(expected = "also used")]
    fn leakage_is_detected() {
        FoldSplit {
            fold_index: 0,
            train_ids: vec![0, 1],
            val_ids: vec![2],
            test_ids: vec![1],
        }
        .assert_no_leakage();
    }

    fn tiny_spec(method: Method, epochs: usize) -> ExperimentSpec {
        let d = 8;
        ExperimentSpec {
            method,
            net: NetConfig {
                depth: 1,
                base_channels: 2,
                dropout_rate: 0.5,
                classes: 3,
                d,
            },
            train: TrainConfig {
                lr_stage1: 1e-2,
                lr_curriculum: 1e-3,
                epochs_per_stage: epochs,
                batch_size: 8,
                loss_kind: if method == Method::Method2 { LossKind::Uncertainty } else { LossKind::Ce },
                ..TrainConfig::default()
            },
            predict: PredictConfig {
                d,
                stride: 4,
                mc_samples: 2,
                ..PredictConfig::default()
            },
            curriculum: CurriculumConfig {
                d,
                max_stages: 2,
                stop_epsilon: -1.0,
                ..CurriculumConfig::default()
            },
            train_stride: 8,
            folds: 2,
            seed: 7,
        }
    }

    fn tiny_data() -> Vec<(LargeImage, LabelMap)> {
        generate(&SynthConfig {
            width: 24,
            height: 16,
            n_images: 7,
            seed: 1,
            blob_radius: (4.0, 7.0),
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(tiny_spec(Method::Baseline, 1).validate().is_ok());
        let mut s = tiny_spec(Method::Curriculum, 1);
        s.curriculum.max_stages = 1;
        assert!(s.validate().is_err());
        let mut s = tiny_spec(Method::Method2, 1);
        s.train.loss_kind = LossKind::Ce;
        assert!(s.validate().is_err());
        let mut s = tiny_spec(Method::Baseline, 1);
        s.predict.d = 16;
        assert!(s.validate().is_err());
        assert_ne!(tiny_spec(Method::Baseline, 1).hash(), tiny_spec(Method::Baseline, 2).hash());
    }

    #[test]
    fn zero_epochs_scores_the_initial_model() {
        let data = tiny_data();
        let spec = tiny_spec(Method::Baseline, 0);
        let r = run_experiment(&spec, &data, None).unwrap();
        for f in &r.folds {
            let init = ModelState::init(spec.net.clone(), rng::derive(spec.seed, 100 + f.split.fold_index as u64)).unwrap();
            assert_eq!(f.model.net, init.net);
            let predict = PredictConfig {
                seed: rng::derive(spec.seed, 300 + f.split.fold_index as u64),
                ..spec.predict.clone()
            };
            let test = subset(&data, &f.split.test_ids);
            let want = pipeline::evaluate_images(&init, &test, &predict).unwrap();
            assert_eq!(f.stages[0].test.counts, want.counts);
        }
    }

    #[test]
    fn persisted_reports_reproduce_the_table() {
        let data = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        for method in [Method::Baseline, Method::Curriculum, Method::Method2] {
            let spec = tiny_spec(method, 1);
            let r = run_experiment(&spec, &data, Some(dir.path())).unwrap();
            let run = dir.path().join(spec.run_dir_name());
            let table = r.table();
            assert_eq!(std::fs::read_to_string(run.join("table.txt")).unwrap(), table);
            assert_eq!(table_from_dir(&run).unwrap(), table);
            let ua: Vec<f64> = r.folds.iter().map(|f| f.at_stage(1).test.ua).collect();
            assert_eq!(r.test_at(1).ua, mean_std(&ua));
            assert!(table.starts_with("Stage  Loss"));
            if method == Method::Curriculum {
                assert!(table.contains("\n2 ") && table.contains("\nbest "));
            }
        }
    }
}
