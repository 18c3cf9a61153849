//! Trained model plus the seed of its dropout stream.
//!
//! File format: one ASCII header line
//!
//! ```text
//! BNET1 depth=<D> base_channels=<b> dropout_rate=<p> classes=<C> d=<d> seed=<s> val_loss_best=<v> params=<N>
//! ```
//!
//! followed by `N` IEEE-754 f32 little-endian parameters in the order
//! documented in [`super::unet`].

use std::collections::HashMap;
use std::path::Path;

use super::real::Real;
use super::unet::{NetConfig, UNet};
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T = f32> {
    pub net: UNet<T>,
    /// Base seed of the dropout mask stream.
    pub seed: u64,
    /// Best validation loss seen while training; `inf` when untrained.
    pub val_loss_best: f64,
}

impl<T: Real> ModelState<T> {
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            net: UNet::new(cfg, seed)?,
            seed,
            val_loss_best: f64::INFINITY,
        })
    }

    pub fn config(&self) -> &NetConfig {
        self.net.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.net.config();
        let mut out = format!(
            "BNET1 depth={} base_channels={} dropout_rate={} classes={} d={} seed={} val_loss_best={} params={}\n",
            c.depth,
            c.base_channels,
            c.dropout_rate,
            c.classes,
            c.d,
            self.seed,
            self.val_loss_best,
            self.net.num_params()
        )
        .into_bytes();
        for &p in self.net.params() {
            out.extend((p.as_f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if !bytes.starts_with(b"BNET1 ") {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "BNET1",
            });
        }
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::corrupt(path, "missing header newline"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::corrupt(path, "non-ASCII header"))?;
        let fields: HashMap<&str, &str> = header.split_whitespace().skip(1).filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::corrupt(path, format!("header lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::corrupt(path, format!("bad {k}"))) };
        let cfg = NetConfig {
            depth: num("depth")?,
            base_channels: num("base_channels")?,
            dropout_rate: get("dropout_rate")?
                .parse()
                .map_err(|_| Error::corrupt(path, "bad dropout_rate"))?,
            classes: num("classes")?,
            d: num("d")?,
        };
        let seed: u64 = get("seed")?.parse().map_err(|_| Error::corrupt(path, "bad seed"))?;
        let val_loss_best: f64 = get("val_loss_best")?
            .parse()
            .map_err(|_| Error::corrupt(path, "bad val_loss_best"))?;
        let n = num("params")?;
        let body = &bytes[nl + 1..];
        if body.len() != n * 4 {
            return Err(Error::corrupt(path, format!("expected {n} parameters, found {} bytes", body.len())));
        }
        let params: Vec<T> = body
            .chunks_exact(4)
            .map(|c| T::from_f64(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        let net = UNet::from_params(cfg, params).map_err(|e| Error::corrupt(path, e.to_string()))?;
        Ok(Self {
            net,
            seed,
            val_loss_best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_bytes(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::unet::Dropout;

    fn cfg() -> NetConfig {
        NetConfig {
            depth: 2,
            base_channels: 3,
            dropout_rate: 0.5,
            classes: 3,
            d: 8,
        }
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let mut m = ModelState::<f32>::init(cfg(), 42).unwrap();
        m.val_loss_best = 0.123;
        let bytes = m.to_bytes();
        let back = ModelState::<f32>::from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, m);
        let x: Vec<f32> = (0..64).map(|i| (i % 7) as f32 / 7.0).collect();
        let a = m.net.forward(&x, Dropout::Sample(5)).unwrap().into_probs();
        let b = back.net.forward(&x, Dropout::Sample(5)).unwrap().into_probs();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_state_round_trips_infinity() {
        let m = ModelState::<f32>::init(cfg(), 1).unwrap();
        let back = ModelState::<f32>::from_bytes(&m.to_bytes(), Path::new("m")).unwrap();
        assert!(back.val_loss_best.is_infinite());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = ModelState::<f32>::init(cfg(), 1).unwrap();
        let mut bytes = m.to_bytes();
        assert!(matches!(
            ModelState::<f32>::from_bytes(&bytes[1..], Path::new("m")),
            Err(Error::BadMagic { .. })
        ));
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            ModelState::<f32>::from_bytes(&bytes, Path::new("m")),
            Err(Error::Corrupt { .. })
        ));
    }
}
