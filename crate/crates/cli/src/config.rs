//! TOML run configuration with command-line overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use segmap::curriculum::CurriculumConfig;
use segmap::harness::{ExperimentSpec, Method};
use segmap::net::{LossKind, LossParams, NetConfig, TrainConfig};
use segmap::pipeline::PredictConfig;
use segmap::synth::SynthConfig;
use segmap::uncertainty::NormMode;
use segmap::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub width: usize,
    pub height: usize,
    pub n_images: usize,
    pub blob_count_min: usize,
    pub blob_count_max: usize,
    pub blob_radius_min: f64,
    pub blob_radius_max: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            width: s.width,
            height: s.height,
            n_images: s.n_images,
            blob_count_min: s.blob_count.0,
            blob_count_max: s.blob_count.1,
            blob_radius_min: s.blob_radius.0,
            blob_radius_max: s.blob_radius.1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub classes: usize,
    pub tile_size: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let n = NetConfig::default();
        Self {
            depth: n.depth,
            base_channels: n.base_channels,
            dropout_rate: n.dropout_rate,
            classes: n.classes,
            tile_size: n.d,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr_stage1: f64,
    pub lr_curriculum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: String,
    pub ss_weight: f64,
    pub lambda: f64,
    /// Stride of the regular grid of training and validation tiles.
    pub stride: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr_stage1: t.lr_stage1,
            lr_curriculum: t.lr_curriculum,
            beta1: t.beta1,
            beta2: t.beta2,
            batch_size: t.batch_size,
            epochs: t.epochs_per_stage,
            loss: t.loss_kind.name().into(),
            ss_weight: t.loss.ss_weight,
            lambda: t.loss.lambda,
            stride: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub stride: usize,
    pub mc_samples: usize,
    pub threshold: f64,
    pub norm: String,
}

impl Default for PredictSection {
    fn default() -> Self {
        let p = PredictConfig::default();
        Self {
            stride: p.stride,
            mc_samples: p.mc_samples,
            threshold: p.threshold,
            norm: "analytic".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub sigma: f64,
    pub stages: usize,
    pub min_step: usize,
    pub stop_epsilon: f64,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        let c = CurriculumConfig::default();
        Self {
            sigma: c.sigma,
            stages: c.max_stages,
            min_step: c.min_step,
            stop_epsilon: c.stop_epsilon,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub folds: usize,
    pub method: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            folds: 5,
            method: "baseline".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub synth: SynthSection,
    pub net: NetSection,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub curriculum: CurriculumSection,
    pub experiment: ExperimentSection,
}

/// Values given on the command line; each replaces the config file entry.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tile_size: Option<usize>,
    pub stride: Option<usize>,
    pub mc_samples: Option<usize>,
    pub threshold: Option<f64>,
    pub sigma: Option<f64>,
    pub stages: Option<usize>,
    pub loss: Option<String>,
    pub folds: Option<usize>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = segmap::io::read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.tile_size {
            self.net.tile_size = v;
        }
        if let Some(v) = o.stride {
            self.predict.stride = v;
        }
        if let Some(v) = o.mc_samples {
            self.predict.mc_samples = v;
        }
        if let Some(v) = o.threshold {
            self.predict.threshold = v;
        }
        if let Some(v) = o.sigma {
            self.curriculum.sigma = v;
        }
        if let Some(v) = o.stages {
            self.curriculum.stages = v;
        }
        if let Some(v) = &o.loss {
            self.train.loss = v.clone();
        }
        if let Some(v) = o.folds {
            self.experiment.folds = v;
        }
        if let Some(v) = o.jobs {
            self.jobs = Some(v);
        }
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let s = &self.synth;
        let cfg = SynthConfig {
            width: s.width,
            height: s.height,
            n_images: s.n_images,
            seed: self.seed,
            blob_count: (s.blob_count_min, s.blob_count_max),
            blob_radius: (s.blob_radius_min, s.blob_radius_max),
            ..SynthConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn net(&self) -> Result<NetConfig> {
        let n = &self.net;
        let cfg = NetConfig {
            depth: n.depth,
            base_channels: n.base_channels,
            dropout_rate: n.dropout_rate,
            classes: n.classes,
            d: n.tile_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        self.train.loss.parse()
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            lr_stage1: t.lr_stage1,
            lr_curriculum: t.lr_curriculum,
            beta1: t.beta1,
            beta2: t.beta2,
            batch_size: t.batch_size,
            epochs_per_stage: t.epochs,
            seed: self.seed,
            loss_kind: self.loss_kind()?,
            loss: LossParams {
                ss_weight: t.ss_weight,
                lambda: t.lambda,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_stride(&self) -> usize {
        self.train.stride.unwrap_or(self.net.tile_size / 2).max(1)
    }

    pub fn predict(&self) -> Result<PredictConfig> {
        let p = &self.predict;
        let cfg = PredictConfig {
            d: self.net.tile_size,
            stride: p.stride,
            mc_samples: p.mc_samples,
            threshold: p.threshold,
            norm: p.norm.parse::<NormMode>()?,
            seed: self.seed,
            jobs: self.jobs.unwrap_or(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn curriculum(&self) -> Result<CurriculumConfig> {
        let c = &self.curriculum;
        let cfg = CurriculumConfig {
            d: self.net.tile_size,
            sigma: c.sigma,
            max_stages: c.stages,
            min_step: c.min_step,
            stop_epsilon: c.stop_epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let spec = ExperimentSpec {
            method: self.experiment.method.parse::<Method>()?,
            net: self.net()?,
            train: self.train()?,
            predict: self.predict()?,
            curriculum: self.curriculum()?,
            train_stride: self.train_stride(),
            folds: self.experiment.folds,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every section so bad values fail before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.net()?;
        self.train()?;
        self.predict()?;
        self.curriculum()?;
        if self.experiment.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        self.experiment.method.parse::<Method>()?;
        Ok(())
    }
}

pub fn out_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.predict().unwrap().stride, 10);
        assert_eq!(c.predict().unwrap().mc_samples, 10);
        assert_eq!(c.net().unwrap().d, 160);
        assert_eq!(c.experiment.folds, 5);
    }

    #[test]
    fn file_values_and_overrides() {
        let mut c: RunConfig = toml::from_str(
            "seed = 4\n[net]\ntile_size = 32\ndepth = 2\n[predict]\nstride = 8\n[train]\nloss = \"dice\"\n",
        )
        .unwrap();
        assert_eq!(c.net().unwrap().d, 32);
        assert_eq!(c.loss_kind().unwrap(), LossKind::Dice);
        c.apply(&Overrides {
            stride: Some(16),
            loss: Some("ce+dice".into()),
            ..Overrides::default()
        });
        assert_eq!(c.predict().unwrap().stride, 16);
        assert_eq!(c.train().unwrap().loss_kind, LossKind::CeDice);
        assert_eq!(c.train().unwrap().seed, 4);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(toml::from_str::<RunConfig>("[net]\nwidth = 3\n").is_err());
        let c: RunConfig = toml::from_str("[predict]\nthreshold = 1.5\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c: RunConfig = toml::from_str("[net]\ntile_size = 100\n").unwrap();
        assert!(c.validate().is_err());
    }
}
