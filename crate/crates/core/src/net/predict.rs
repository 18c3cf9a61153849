use super::real::Real;
use super::unet::{Dropout, UNet};
use crate::error::{Error, Result};
use crate::rng;

/// Seed of the dropout masks used for MC sample `t` under base `seed`.
pub fn sample_seed(seed: u64, t: usize) -> u64 {
    rng::derive(seed, t as u64)
}

/// Monte Carlo predictive mean: the average of `samples` softmax outputs,
/// each with independent dropout masks. Returns a `d x d x C` array
/// (row-major, class-fastest).
pub fn mc_predict<T: Real>(net: &UNet<T>, sub_image: &[f32], samples: usize, seed: u64) -> Result<Vec<f64>> {
    mc_predict_with(net, sub_image, samples, seed, true)
}

/// As [`mc_predict`]; with `dropout = false` every sample is the
/// deterministic forward pass.
pub fn mc_predict_with<T: Real>(
    net: &UNet<T>,
    sub_image: &[f32],
    samples: usize,
    seed: u64,
    dropout: bool,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::Config("MC sample count must be >= 1".into()));
    }
    let input: Vec<T> = sub_image.iter().map(|&v| T::from_f64(f64::from(v))).collect();
    let mut acc: Option<Vec<f64>> = None;
    for t in 0..samples {
        let mode = if dropout {
            Dropout::Sample(sample_seed(seed, t))
        } else {
            Dropout::Off
        };
        let probs = net.forward(&input, mode)?.into_probs();
        match acc.as_mut() {
            None => acc = Some(probs.iter().map(|p| p.as_f64()).collect()),
            Some(a) => a.iter_mut().zip(&probs).for_each(|(s, p)| *s += p.as_f64()),
        }
    }
    let mut mean = acc.expect("at least one sample");
    if samples > 1 {
        let n = samples as f64;
        mean.iter_mut().for_each(|v| *v /= n);
    }
    Ok(mean)
}
