//! Minibatch Adam training with best-validation checkpointing, and the
//! two-phase uncertainty-loss schedule.

use rand::seq::SliceRandom;

use super::adam::Adam;
use super::losses::{self, LossKind, LossParams};
use super::state::ModelState;
use super::unet::{Dropout, UNet};
use crate::error::{Error, Result};
use crate::grid::Tile;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_stage1: f64,
    pub lr_curriculum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs_per_stage: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub loss: LossParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_stage1: 1e-4,
            lr_curriculum: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 12,
            epochs_per_stage: 10,
            seed: 0,
            loss_kind: LossKind::Ce,
            loss: LossParams::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rates may be zero (a frozen run); epochs may be zero (no-op).
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr_stage1", self.lr_stage1), ("lr_curriculum", self.lr_curriculum)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.loss.ss_weight) {
            return Err(Error::Config("SS weight must lie in [0, 1]".into()));
        }
        if !(self.loss.lambda >= 0.0) {
            return Err(Error::Config("uncertainty weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Which learning rate a stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Initial,
    Curriculum,
}

/// One training example: a sub-image, its labels and (for the uncertainty
/// loss) the frozen normalized uncertainty under it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
    pub umap: Option<Vec<f32>>,
    /// Source image index and window, when cut from a large image.
    pub origin: Option<(usize, Tile)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_kind: LossKind,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss.
    pub best: ModelState,
    /// Weights after the final epoch.
    pub last: ModelState,
    pub history: Vec<EpochRecord>,
}

/// Recomputes frozen uncertainty tiles for the uncertainty loss.
pub trait UncertaintySource {
    fn refresh(&mut self, model: &ModelState, train: &mut [TrainSample], val: &mut [TrainSample]) -> Result<()>;
}

struct Trainer<'a> {
    net: UNet<f32>,
    seed: u64,
    opt: Adam<f32>,
    cfg: &'a TrainConfig,
    /// Distinguishes the random streams of successive stages.
    stream: u64,
}

impl<'a> Trainer<'a> {
    fn new(model: &ModelState, cfg: &'a TrainConfig, lr: f64, stream: u64) -> Self {
        Self {
            opt: Adam::new(model.net.num_params(), lr, cfg.beta1, cfg.beta2),
            net: model.net.clone(),
            seed: model.seed,
            cfg,
            stream,
        }
    }

    fn state(&self, val_loss: f64) -> ModelState {
        ModelState {
            net: self.net.clone(),
            seed: self.seed,
            val_loss_best: val_loss,
        }
    }

    fn run_epoch(&mut self, epoch: usize, kind: LossKind, data: &[TrainSample]) -> Result<f64> {
        let epoch_seed = rng::derive(rng::derive(self.cfg.seed, self.stream), epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(epoch_seed, 0));
        let classes = self.net.config().classes;
        let mut grads = vec![0f32; self.net.num_params()];
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0f64;
            for (j, &i) in batch.iter().enumerate() {
                let s = &data[i];
                let mask_seed = rng::derive(epoch_seed, (b * self.cfg.batch_size + j + 1) as u64);
                let tape = self.net.forward(&s.image, Dropout::Sample(mask_seed))?;
                let mut dprobs = vec![0f32; tape.probs().len()];
                let l = losses::evaluate(
                    kind,
                    &self.cfg.loss,
                    tape.probs(),
                    &s.labels,
                    classes,
                    s.umap.as_deref(),
                    Some(&mut dprobs),
                )?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b,
                        value: f64::from(l),
                    });
                }
                batch_loss += f64::from(l);
                dprobs.iter_mut().for_each(|g| *g *= scale);
                self.net.backward(&tape, &dprobs, &mut grads)?;
            }
            if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: f64::from(*bad),
                });
            }
            self.opt.step(self.net.params_mut(), &grads);
            total += batch_loss;
        }
        Ok(total / data.len() as f64)
    }
}

/// Mean loss over `data` with dropout disabled.
pub fn validation_loss(net: &UNet<f32>, data: &[TrainSample], kind: LossKind, params: &LossParams) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let classes = net.config().classes;
    let mut total = 0.0;
    for s in data {
        let probs = net.forward(&s.image, Dropout::Off)?.into_probs();
        let l = losses::evaluate(kind, params, &probs, &s.labels, classes, s.umap.as_deref(), None)?;
        total += f64::from(l);
    }
    let mean = total / data.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            value: mean,
        });
    }
    Ok(mean)
}

fn check_data(train: &[TrainSample], val: &[TrainSample]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    Ok(())
}

/// Runs `epochs` epochs of one loss, tracking the best validation checkpoint.
fn run_phase(
    trainer: &mut Trainer<'_>,
    epochs: std::ops::Range<usize>,
    kind: LossKind,
    train: &[TrainSample],
    val: &[TrainSample],
    history: &mut Vec<EpochRecord>,
) -> Result<Option<ModelState>> {
    let mut best: Option<ModelState> = None;
    for epoch in epochs {
        let train_loss = trainer.run_epoch(epoch, kind, train)?;
        let val_loss = validation_loss(&trainer.net, val, kind, &trainer.cfg.loss)?;
        log::debug!("epoch {epoch} {kind}: train {train_loss:.5} val {val_loss:.5}");
        history.push(EpochRecord {
            epoch,
            loss_kind: kind,
            train_loss,
            val_loss,
        });
        if best.as_ref().map_or(true, |b| val_loss < b.val_loss_best) {
            best = Some(trainer.state(val_loss));
        }
    }
    Ok(best)
}

/// Trains for `cfg.epochs_per_stage` epochs with `cfg.loss_kind` and
/// returns the checkpoint with the lowest validation loss. `stage` selects
/// an independent random stream for shuffling and dropout.
pub fn train_stage(
    model: &ModelState,
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
    phase: Phase,
    stage: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(train, val)?;
    let lr = match phase {
        Phase::Initial => cfg.lr_stage1,
        Phase::Curriculum => cfg.lr_curriculum,
    };
    let mut trainer = Trainer::new(model, cfg, lr, stage);
    let mut history = Vec::new();
    let best = run_phase(&mut trainer, 0..cfg.epochs_per_stage, cfg.loss_kind, train, val, &mut history)?;
    let last = trainer.state(history.last().map_or(model.val_loss_best, |h| h.val_loss));
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| model.clone()),
        last,
        history,
    })
}

/// Uncertainty-loss training: `epochs_per_stage / 2` epochs of
/// cross-entropy, then one refresh of the frozen uncertainty tiles from the
/// current weights, then the remaining epochs with the uncertainty loss.
/// Optimizer state and random streams continue across the two phases. The
/// returned checkpoint is the best of the second phase.
pub fn train_method2(
    model: &ModelState,
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
    source: &mut dyn UncertaintySource,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(train, val)?;
    if cfg.loss_kind != LossKind::Uncertainty {
        return Err(Error::Config(format!(
            "uncertainty-loss training requires loss_kind = uncertainty, got {}",
            cfg.loss_kind
        )));
    }
    let total = cfg.epochs_per_stage;
    let warmup = total / 2;
    let mut trainer = Trainer::new(model, cfg, cfg.lr_stage1, 0);
    let mut history = Vec::new();
    let best_a = run_phase(&mut trainer, 0..warmup, LossKind::Ce, train, val, &mut history)?;

    let mut train_u = train.to_vec();
    let mut val_u = val.to_vec();
    let current = trainer.state(f64::INFINITY);
    source.refresh(&current, &mut train_u, &mut val_u)?;
    if train_u.iter().chain(&val_u).any(|s| s.umap.is_none()) {
        return Err(Error::Data("uncertainty source left samples without a map".into()));
    }
    let best_b = run_phase(&mut trainer, warmup..total, LossKind::Uncertainty, &train_u, &val_u, &mut history)?;
    let last = trainer.state(history.last().map_or(model.val_loss_best, |h| h.val_loss));
    Ok(TrainOutcome {
        best: best_b.or(best_a).unwrap_or_else(|| model.clone()),
        last,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::unet::NetConfig;

    fn net_cfg() -> NetConfig {
        NetConfig {
            depth: 1,
            base_channels: 4,
            dropout_rate: 0.5,
            classes: 2,
            d: 8,
        }
    }

    /// Left half dark and smooth (class 0), right half bright stripes (class 1);
    /// the boundary shifts per sample.
    fn toy_data(n: usize, offset: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|k| {
                let cut = 2 + (k + offset) % 5;
                let mut image = vec![0f32; 64];
                let mut labels = vec![0u8; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        if x >= cut {
                            image[y * 8 + x] = if (x + y) % 2 == 0 { 0.9 } else { 0.6 };
                            labels[y * 8 + x] = 1;
                        } else {
                            image[y * 8 + x] = 0.1;
                        }
                    }
                }
                TrainSample {
                    image,
                    labels,
                    umap: None,
                    origin: None,
                }
            })
            .collect()
    }

    fn cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            lr_stage1: lr,
            batch_size: 4,
            epochs_per_stage: epochs,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_reduces_validation_loss() {
        let model = ModelState::init(net_cfg(), 3).unwrap();
        let (train, val) = (toy_data(16, 0), toy_data(6, 1));
        let before = validation_loss(&model.net, &val, LossKind::Ce, &LossParams::default()).unwrap();
        let out = train_stage(&model, &train, &val, &cfg(8, 1e-2), Phase::Initial, 1).unwrap();
        assert!(out.best.val_loss_best < before, "{} !< {before}", out.best.val_loss_best);
        assert_eq!(out.history.len(), 8);
        let min = out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.val_loss_best, min);
    }

    #[test]
    fn same_seed_same_result() {
        let model = ModelState::init(net_cfg(), 3).unwrap();
        let (train, val) = (toy_data(10, 0), toy_data(4, 1));
        let a = train_stage(&model, &train, &val, &cfg(3, 1e-3), Phase::Initial, 1).unwrap();
        let b = train_stage(&model, &train, &val, &cfg(3, 1e-3), Phase::Initial, 1).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let model = ModelState::init(net_cfg(), 3).unwrap();
        let (train, val) = (toy_data(10, 0), toy_data(4, 1));
        let out = train_stage(&model, &train, &val, &cfg(2, 0.0), Phase::Initial, 1).unwrap();
        assert_eq!(out.last.net.params(), model.net.params());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let model = ModelState::init(net_cfg(), 3).unwrap();
        let out = train_stage(&model, &toy_data(4, 0), &toy_data(2, 0), &cfg(0, 1e-3), Phase::Initial, 1).unwrap();
        assert_eq!(out.best, model);
        assert!(out.history.is_empty());
    }

    #[test]
    fn empty_data_rejected() {
        let model = ModelState::init(net_cfg(), 3).unwrap();
        assert!(matches!(
            train_stage(&model, &[], &toy_data(2, 0), &cfg(1, 1e-3), Phase::Initial, 1),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            train_stage(&model, &toy_data(2, 0), &[], &cfg(1, 1e-3), Phase::Initial, 1),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn non_finite_weights_abort_training() {
        let mut model = ModelState::init(net_cfg(), 3).unwrap();
        let n = model.net.num_params();
        model.net.params_mut()[n - 1] = f32::NAN;
        let r = train_stage(&model, &toy_data(4, 0), &toy_data(2, 0), &cfg(1, 1e-3), Phase::Initial, 1);
        assert!(matches!(r, Err(Error::NonFiniteLoss { epoch: 0, batch: 0, .. })), "{r:?}");
    }

    struct Constant {
        calls: usize,
        value: f32,
    }

    impl UncertaintySource for Constant {
        fn refresh(&mut self, _m: &ModelState, train: &mut [TrainSample], val: &mut [TrainSample]) -> Result<()> {
            self.calls += 1;
            for s in train.iter_mut().chain(val.iter_mut()) {
                s.umap = Some(vec![self.value; s.labels.len()]);
            }
            Ok(())
        }
    }

    #[test]
    fn method2_refreshes_map_once() {
        let model = ModelState::init(net_cfg(), 3).unwrap();
        let (train, val) = (toy_data(8, 0), toy_data(4, 1));
        let mut src = Constant { calls: 0, value: 0.5 };
        let c = TrainConfig {
            loss_kind: LossKind::Uncertainty,
            ..cfg(4, 1e-3)
        };
        let out = train_method2(&model, &train, &val, &c, &mut src).unwrap();
        assert_eq!(src.calls, 1);
        let kinds: Vec<LossKind> = out.history.iter().map(|h| h.loss_kind).collect();
        assert_eq!(kinds, vec![LossKind::Ce, LossKind::Ce, LossKind::Uncertainty, LossKind::Uncertainty]);
    }

    #[test]
    fn method2_with_zero_lambda_matches_plain_ce() {
        let model = ModelState::init(net_cfg(), 3).unwrap();
        let (train, val) = (toy_data(8, 0), toy_data(4, 1));
        let mut src = Constant { calls: 0, value: 0.7 };
        let m2 = TrainConfig {
            loss_kind: LossKind::Uncertainty,
            loss: LossParams {
                lambda: 0.0,
                ..LossParams::default()
            },
            ..cfg(4, 1e-3)
        };
        let a = train_method2(&model, &train, &val, &m2, &mut src).unwrap();
        let b = train_stage(&model, &train, &val, &cfg(4, 1e-3), Phase::Initial, 0).unwrap();
        let va: Vec<f64> = a.history.iter().map(|h| h.val_loss).collect();
        let vb: Vec<f64> = b.history.iter().map(|h| h.val_loss).collect();
        assert_eq!(va, vb);
        assert_eq!(a.last.net, b.last.net);
    }

    #[test]
    fn method2_requires_uncertainty_kind() {
        let model = ModelState::init(net_cfg(), 3).unwrap();
        let mut src = Constant { calls: 0, value: 0.5 };
        assert!(train_method2(&model, &toy_data(4, 0), &toy_data(2, 0), &cfg(2, 1e-3), &mut src).is_err());
        assert_eq!(src.calls, 0);
    }
}
