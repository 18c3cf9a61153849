#![allow(dead_code)]

use rand::Rng;
use segmap::net::losses::{self, LossKind, LossParams};
use segmap::net::{Dropout, NetConfig, UNet};
use segmap::rng;

pub struct GradCheck {
    pub kind: LossKind,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Sampled parameters whose numeric gradient is not negligible.
    pub nonzero: usize,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares backprop gradients of `kind` on a small f64 network with
/// central differences at randomly sampled parameters, until `n_params`
/// of them have a non-negligible gradient. Parameters behind inactive
/// units or dropped activations are compared too but not counted.
pub fn grad_check(kind: LossKind, n_params: usize, seed: u64) -> GradCheck {
    let cfg = NetConfig {
        depth: 2,
        base_channels: 3,
        dropout_rate: 0.5,
        classes: 3,
        d: 8,
    };
    let mut net: UNet<f64> = UNet::new(cfg, seed).unwrap();
    let mut r = rng::stream(seed, 99);
    let input: Vec<f64> = (0..64).map(|_| r.gen::<f64>()).collect();
    let truth: Vec<u8> = (0..64).map(|_| r.gen_range(0..3u8)).collect();
    let umap: Vec<f32> = (0..64).map(|_| r.gen::<f32>()).collect();
    let params = LossParams::default();
    let dropout = Dropout::Sample(seed ^ 0x5eed);

    let loss_at = |net: &UNet<f64>| -> f64 {
        let probs = net.forward(&input, dropout).unwrap().into_probs();
        losses::evaluate(kind, &params, &probs, &truth, 3, Some(&umap), None).unwrap()
    };

    let tape = net.forward(&input, dropout).unwrap();
    let mut dprobs = vec![0.0; tape.probs().len()];
    losses::evaluate(kind, &params, tape.probs(), &truth, 3, Some(&umap), Some(&mut dprobs)).unwrap();
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&tape, &dprobs, &mut grads).unwrap();

    let h = 1e-6;
    let mut max_rel_err: f64 = 0.0;
    let mut nonzero = 0;
    let mut checked = 0;
    while nonzero < n_params && checked < 40 * n_params {
        checked += 1;
        let i = r.gen_range(0..net.num_params());
        let orig = net.params()[i];
        net.params_mut()[i] = orig + h;
        let up = loss_at(&net);
        net.params_mut()[i] = orig - h;
        let down = loss_at(&net);
        net.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        if numeric.abs() > 1e-9 {
            nonzero += 1;
        }
        max_rel_err = max_rel_err.max(rel_err(grads[i], numeric));
    }
    GradCheck {
        kind,
        checked,
        max_rel_err,
        nonzero,
    }
}
