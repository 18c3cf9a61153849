//! Encoder-decoder segmentation network with skip connections and dropout
//! after every convolution block.
//!
//! Layout for `depth = D` and `base_channels = b` (channel width at level
//! `l` is `b * 2^l`):
//!
//! ```text
//! enc[l]     conv3x3 -> relu -> conv3x3 -> relu -> dropout   (l = 0..D)
//!            maxpool 2x2 between levels
//! bottleneck conv3x3 -> relu -> conv3x3 -> relu -> dropout   (width b * 2^D)
//! dec[l]     upsample 2x (nearest) -> concat skip enc[l] -> block -> dropout
//! head       conv1x1 -> softmax over classes
//! ```
//!
//! Parameters live in one flat vector. Convolutions are stored in the order
//! enc[0..D], bottleneck, dec[D-1..=0], head; each as weights
//! `[out][in][ky][kx]` followed by `out` biases.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::real::Real;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub classes: usize,
    /// Input side length.
    pub d: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            dropout_rate: 0.5,
            classes: 3,
            d: 160,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::Config(format!(
                "dropout rate must lie in (0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.base_channels < 1 || self.classes < 2 {
            return Err(Error::Config("need >= 1 base channel and >= 2 classes".into()));
        }
        let div = 1usize << self.depth;
        if self.d == 0 || self.d % div != 0 {
            return Err(Error::Config(format!(
                "tile size {} not divisible by 2^depth = {div}",
                self.d
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    k: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvSpec {
    fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn n_weights(&self) -> usize {
        self.cout * self.fan_in()
    }
}

/// Dropout behavior of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dropout {
    Off,
    /// Fresh Bernoulli masks drawn from a stream seeded with this value.
    Sample(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    cfg: NetConfig,
    convs: Vec<ConvSpec>,
    params: Vec<T>,
}

struct ConvCache<T> {
    cols: Vec<T>,
    out: Vec<T>,
}

struct BlockCache<T> {
    a: ConvCache<T>,
    b: ConvCache<T>,
    /// Scaled keep-mask (`0` or `1 / (1 - p)`), absent when dropout is off.
    mask: Option<Vec<T>>,
    side: usize,
}

/// Intermediate values of one forward pass, consumed by [`UNet::backward`].
pub struct Tape<T> {
    blocks: Vec<BlockCache<T>>,
    pools: Vec<Vec<usize>>,
    head_cols: Vec<T>,
    probs: Vec<T>,
}

impl<T> Tape<T> {
    /// Per-pixel class probabilities, row-major and class-fastest.
    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<T> {
        self.probs
    }
}

impl<T: Real> UNet<T> {
    /// He-normal weights, zero biases.
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let convs = layout(&cfg);
        let total = convs.last().map_or(0, |c| c.b_off + c.cout);
        let mut params = vec![T::zero(); total];
        let mut r = rng::stream(seed, 0x1417);
        for c in &convs {
            let std = (2.0 / c.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut params[c.w_off..c.w_off + c.n_weights()] {
                *w = T::from_f64(normal.sample(&mut r));
            }
        }
        Ok(Self { cfg, convs, params })
    }

    pub fn from_params(cfg: NetConfig, params: Vec<T>) -> Result<Self> {
        cfg.validate()?;
        let convs = layout(&cfg);
        let total = convs.last().map_or(0, |c| c.b_off + c.cout);
        if params.len() != total {
            return Err(Error::Shape(format!(
                "{} parameters supplied, architecture needs {total}",
                params.len()
            )));
        }
        Ok(Self { cfg, convs, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Converts parameters to another element type.
    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            cfg: self.cfg.clone(),
            convs: self.convs.clone(),
            params: self.params.iter().map(|&p| U::from_f64(p.as_f64())).collect(),
        }
    }

    /// Runs the network on a row-major `d x d` input.
    pub fn forward(&self, input: &[T], dropout: Dropout) -> Result<Tape<T>> {
        let d = self.cfg.d;
        if input.len() != d * d {
            return Err(Error::Shape(format!(
                "input has {} values, network expects {d}x{d}",
                input.len()
            )));
        }
        let depth = self.cfg.depth;
        let mut blocks = Vec::with_capacity(2 * depth + 1);
        let mut pools = Vec::with_capacity(depth);
        let mut mask_rng = match dropout {
            Dropout::Off => None,
            Dropout::Sample(seed) => Some(rng::stream(seed, 0xD409)),
        };
        let keep = 1.0 - self.cfg.dropout_rate;
        let scale = T::from_f64(1.0 / keep);

        let mut x = input.to_vec();
        let mut side = d;
        let mut skips: Vec<usize> = Vec::with_capacity(depth);
        for level in 0..depth {
            let bc = self.block_forward(level, &x, side, mask_rng.as_mut(), keep, scale);
            skips.push(blocks.len());
            let (pooled, idx) = maxpool(block_output(&bc), self.cfg.width(level), side);
            blocks.push(bc);
            pools.push(idx);
            x = pooled;
            side /= 2;
        }
        let bc = self.block_forward(depth, &x, side, mask_rng.as_mut(), keep, scale);
        x = block_output(&bc).to_vec();
        blocks.push(bc);
        for level in (0..depth).rev() {
            let up = upsample(&x, self.cfg.width(level + 1), side);
            side *= 2;
            let skip = block_output(&blocks[skips[level]]);
            let mut cat = up;
            cat.extend_from_slice(skip);
            let b = 2 * depth - level;
            let bc = self.block_forward(b, &cat, side, mask_rng.as_mut(), keep, scale);
            x = block_output(&bc).to_vec();
            blocks.push(bc);
        }
        let head = self.convs[self.convs.len() - 1];
        let logits = conv_forward(&head, &self.params, side, &x);
        let probs = softmax_pixel_major(&logits, self.cfg.classes, side * side);
        Ok(Tape {
            blocks,
            pools,
            head_cols: x,
            probs,
        })
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d probs`
    /// (row-major, class-fastest, same layout as [`Tape::probs`]).
    pub fn backward(&self, tape: &Tape<T>, dprobs: &[T], grads: &mut [T]) -> Result<()> {
        let d = self.cfg.d;
        let c = self.cfg.classes;
        let hw = d * d;
        if dprobs.len() != hw * c || grads.len() != self.params.len() {
            return Err(Error::Shape("backward: gradient buffer size mismatch".into()));
        }
        let depth = self.cfg.depth;
        // softmax backward, into channel-major logits gradient
        let mut dlogits = vec![T::zero(); c * hw];
        for p in 0..hw {
            let pr = &tape.probs[p * c..(p + 1) * c];
            let g = &dprobs[p * c..(p + 1) * c];
            let dot: T = pr.iter().zip(g).map(|(&a, &b)| a * b).sum();
            for k in 0..c {
                dlogits[k * hw + p] = pr[k] * (g[k] - dot);
            }
        }
        let head = self.convs[self.convs.len() - 1];
        let mut dx = conv_backward(&head, &self.params, grads, &tape.head_cols, &dlogits, d);

        let mut side = d;
        // skip-connection gradients, filled while walking back through the decoder
        let mut dskips: Vec<Vec<T>> = vec![Vec::new(); depth];
        for level in 0..depth {
            let b = 2 * depth - level;
            let dcat = self.block_backward(b, &tape.blocks[b], dx, grads);
            let up_ch = self.cfg.width(level + 1);
            let (dup, dskip) = dcat.split_at(up_ch * side * side);
            dskips[level] = dskip.to_vec();
            dx = upsample_backward(dup, up_ch, side / 2);
            side /= 2;
        }
        dx = self.block_backward(depth, &tape.blocks[depth], dx, grads);
        for level in (0..depth).rev() {
            let mut dout = maxpool_backward(&dx, &tape.pools[level], self.cfg.width(level), side * 2);
            side *= 2;
            for (a, b) in dout.iter_mut().zip(&dskips[level]) {
                *a += *b;
            }
            dx = self.block_backward(level, &tape.blocks[level], dout, grads);
        }
        Ok(())
    }

    fn block_forward(
        &self,
        b: usize,
        input: &[T],
        side: usize,
        mask_rng: Option<&mut rand_chacha::ChaCha8Rng>,
        keep: f64,
        scale: T,
    ) -> BlockCache<T> {
        let ca = self.convs[2 * b];
        let cb = self.convs[2 * b + 1];
        let a = conv_relu_forward(&ca, &self.params, input, side);
        let mut bo = conv_relu_forward(&cb, &self.params, &a.out, side);
        let mask = mask_rng.map(|r| {
            let m: Vec<T> = (0..bo.out.len())
                .map(|_| if r.gen::<f64>() < keep { scale } else { T::zero() })
                .collect();
            bo.out.iter_mut().zip(&m).for_each(|(v, &k)| *v *= k);
            m
        });
        BlockCache { a, b: bo, mask, side }
    }

    fn block_backward(&self, b: usize, cache: &BlockCache<T>, mut dout: Vec<T>, grads: &mut [T]) -> Vec<T> {
        let ca = self.convs[2 * b];
        let cb = self.convs[2 * b + 1];
        if let Some(m) = &cache.mask {
            dout.iter_mut().zip(m).for_each(|(g, &k)| *g *= k);
        }
        // the stored output is post-dropout; dropped units already carry a
        // zero gradient and kept units keep the sign of the activation
        relu_backward(&mut dout, &cache.b.out);
        let mut da = conv_backward(&cb, &self.params, grads, &cache.b.cols, &dout, cache.side);
        relu_backward(&mut da, &cache.a.out);
        conv_backward(&ca, &self.params, grads, &cache.a.cols, &da, cache.side)
    }
}

fn layout(cfg: &NetConfig) -> Vec<ConvSpec> {
    let mut shapes: Vec<(usize, usize, usize)> = Vec::new();
    let depth = cfg.depth;
    let mut cin = 1;
    for level in 0..=depth {
        let w = cfg.width(level);
        shapes.push((cin, w, 3));
        shapes.push((w, w, 3));
        cin = w;
    }
    for level in (0..depth).rev() {
        let w = cfg.width(level);
        shapes.push((cfg.width(level + 1) + w, w, 3));
        shapes.push((w, w, 3));
    }
    shapes.push((cfg.base_channels, cfg.classes, 1));
    let mut off = 0;
    shapes
        .into_iter()
        .map(|(cin, cout, k)| {
            let w_off = off;
            let b_off = w_off + cout * cin * k * k;
            off = b_off + cout;
            ConvSpec {
                cin,
                cout,
                k,
                w_off,
                b_off,
            }
        })
        .collect()
}

fn block_output<T>(b: &BlockCache<T>) -> &[T] {
    &b.b.out
}

fn im2col<T: Real>(input: &[T], cin: usize, side: usize) -> Vec<T> {
    let hw = side * side;
    let mut cols = vec![T::zero(); cin * 9 * hw];
    for ci in 0..cin {
        let src = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..side {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x_lo, x_hi) = (usize::from(kx == 0), (side + 1 - kx).min(side));
                    for x in x_lo..x_hi {
                        row[y * side + x] = src[sy * side + x + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(dcols: &[T], cin: usize, side: usize) -> Vec<T> {
    let hw = side * side;
    let mut out = vec![T::zero(); cin * hw];
    for ci in 0..cin {
        let dst = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcols[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..side {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x_lo, x_hi) = (usize::from(kx == 0), (side + 1 - kx).min(side));
                    for x in x_lo..x_hi {
                        dst[sy * side + x + kx - 1] += row[y * side + x];
                    }
                }
            }
        }
    }
    out
}

/// Convolution with zero "same" padding. `cols` must be the im2col matrix of
/// the input (the input itself for 1x1 kernels).
fn conv_forward<T: Real>(spec: &ConvSpec, params: &[T], side: usize, cols: &[T]) -> Vec<T> {
    let hw = side * side;
    let mut out = vec![T::zero(); spec.cout * hw];
    for co in 0..spec.cout {
        let b = params[spec.b_off + co];
        out[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = b);
    }
    let kk = spec.fan_in();
    T::gemm(
        spec.cout,
        kk,
        hw,
        &params[spec.w_off..spec.w_off + spec.n_weights()],
        kk as isize,
        1,
        cols,
        hw as isize,
        1,
        T::one(),
        &mut out,
    );
    out
}

fn conv_relu_forward<T: Real>(spec: &ConvSpec, params: &[T], input: &[T], side: usize) -> ConvCache<T> {
    let cols = if spec.k == 3 {
        im2col(input, spec.cin, side)
    } else {
        input.to_vec()
    };
    let mut out = conv_forward(spec, params, side, &cols);
    out.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
    ConvCache { cols, out }
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn conv_backward<T: Real>(spec: &ConvSpec, params: &[T], grads: &mut [T], cols: &[T], dout: &[T], side: usize) -> Vec<T> {
    let hw = side * side;
    let kk = spec.fan_in();
    T::gemm(
        spec.cout,
        hw,
        kk,
        dout,
        hw as isize,
        1,
        cols,
        1,
        hw as isize,
        T::one(),
        &mut grads[spec.w_off..spec.w_off + spec.n_weights()],
    );
    for co in 0..spec.cout {
        grads[spec.b_off + co] += dout[co * hw..(co + 1) * hw].iter().copied().sum();
    }
    let mut dcols = vec![T::zero(); kk * hw];
    T::gemm(
        kk,
        spec.cout,
        hw,
        &params[spec.w_off..spec.w_off + spec.n_weights()],
        1,
        kk as isize,
        dout,
        hw as isize,
        1,
        T::zero(),
        &mut dcols,
    );
    if spec.k == 3 {
        col2im(&dcols, spec.cin, side)
    } else {
        dcols
    }
}

fn relu_backward<T: Real>(dout: &mut [T], out: &[T]) {
    for (g, &o) in dout.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

fn maxpool<T: Real>(input: &[T], ch: usize, side: usize) -> (Vec<T>, Vec<usize>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(ch * half * half);
    let mut idx = Vec::with_capacity(ch * half * half);
    for c in 0..ch {
        let base = c * side * side;
        for y in 0..half {
            for x in 0..half {
                let cands = [
                    base + 2 * y * side + 2 * x,
                    base + 2 * y * side + 2 * x + 1,
                    base + (2 * y + 1) * side + 2 * x,
                    base + (2 * y + 1) * side + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

fn maxpool_backward<T: Real>(dout: &[T], idx: &[usize], ch: usize, side: usize) -> Vec<T> {
    let mut din = vec![T::zero(); ch * side * side];
    for (&g, &i) in dout.iter().zip(idx) {
        din[i] += g;
    }
    din
}

fn upsample<T: Real>(input: &[T], ch: usize, side: usize) -> Vec<T> {
    let big = side * 2;
    let mut out = vec![T::zero(); ch * big * big];
    for c in 0..ch {
        for y in 0..big {
            for x in 0..big {
                out[c * big * big + y * big + x] = input[c * side * side + (y / 2) * side + x / 2];
            }
        }
    }
    out
}

fn upsample_backward<T: Real>(dout: &[T], ch: usize, side: usize) -> Vec<T> {
    let big = side * 2;
    let mut din = vec![T::zero(); ch * side * side];
    for c in 0..ch {
        for y in 0..big {
            for x in 0..big {
                din[c * side * side + (y / 2) * side + x / 2] += dout[c * big * big + y * big + x];
            }
        }
    }
    din
}

/// Softmax over channels of channel-major logits, emitted class-fastest.
fn softmax_pixel_major<T: Real>(logits: &[T], classes: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); classes * hw];
    for p in 0..hw {
        let mut m = T::neg_infinity();
        for k in 0..classes {
            m = m.max(logits[k * hw + p]);
        }
        let mut sum = T::zero();
        for k in 0..classes {
            let e = (logits[k * hw + p] - m).exp();
            out[p * classes + k] = e;
            sum += e;
        }
        for k in 0..classes {
            out[p * classes + k] = out[p * classes + k] / sum;
        }
    }
    out
}
