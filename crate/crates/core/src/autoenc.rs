//! Observation autoencoder used to compress broadcast messages.
//!
//! Encoder `147 -> 96 -> 32`, decoder `32 -> 96 -> 147`, trained on
//! observations gathered by random-policy pursuit rollouts.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::envs::{MessageCodec, MultiAgentEnv, PursuitConfig, PursuitEnv, PURSUIT_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{chain, Activation, AdamState, Gradients, Mlp};
use crate::parallel;
use crate::rng::{self, Stream};

pub const HIDDEN: usize = 96;
pub const CODE: usize = 32;

/// Minibatches are split into this many chunks whose gradients are computed
/// independently and summed in order.
const CHUNKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: Mlp,
    decoder: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 1e-3,
            batch_size: 64,
        }
    }
}

impl Autoencoder {
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        Self::with_sizes(input_dim, HIDDEN, CODE, seed)
    }

    pub fn with_sizes(input_dim: usize, hidden: usize, code: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            encoder: Mlp::new(
                &chain(&[input_dim, hidden, code], Activation::Relu, Activation::Linear),
                rng::derive_seed(seed, 1),
            )?,
            decoder: Mlp::new(
                &chain(&[code, hidden, input_dim], Activation::Relu, Activation::Linear),
                rng::derive_seed(seed, 2),
            )?,
        })
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() || encoder.input_dim() != decoder.output_dim() {
            return Err(Error::Shape("decoder does not invert the encoder".into()));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub(crate) fn parts_mut(&mut self) -> Vec<&mut Mlp> {
        vec![&mut self.encoder, &mut self.decoder]
    }

    pub fn codec(&self) -> MessageCodec {
        MessageCodec::Encoder(self.encoder.clone())
    }

    pub fn encode(&self, o: &[f64]) -> Result<Vec<f64>> {
        self.encoder.predict(o)
    }

    pub fn reconstruct(&self, o: &[f64]) -> Result<Vec<f64>> {
        self.decoder.predict(&self.encoder.predict(o)?)
    }

    /// Mean over samples of the per-element squared reconstruction error.
    pub fn mse<S: AsRef<[f64]> + Sync>(&self, samples: &[S]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Insufficient { have: 0, need: 1 });
        }
        let per = parallel::map(samples, |s| -> Result<f64> {
            let x = s.as_ref();
            let y = self.reconstruct(x)?;
            Ok(y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
        });
        let mut total = 0.0;
        for v in per {
            total += v?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Loss and summed gradients over `batch`, scaled by `1 / scale` samples.
    fn batch_gradients(&self, batch: &[&[f64]], scale: f64) -> Result<(f64, Gradients, Gradients)> {
        let mut ge = self.encoder.zero_gradients();
        let mut gd = self.decoder.zero_gradients();
        let mut loss = 0.0;
        for x in batch {
            let (z, ce) = self.encoder.forward(x)?;
            let (y, cd) = self.decoder.forward(&z)?;
            let n = x.len() as f64;
            let dy: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| 2.0 * (a - b) / (n * scale)).collect();
            loss += y.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
            let dz = self.decoder.backward_into(&cd, &dy, &mut gd, true)?.expect("input gradient");
            self.encoder.backward_into(&ce, &dz, &mut ge, false)?;
        }
        Ok((loss, ge, gd))
    }

    /// Mean loss and gradient of one minibatch, chunked across threads and
    /// reduced in chunk order.
    pub fn minibatch_gradients(&self, batch: &[&[f64]]) -> Result<(f64, Gradients, Gradients)> {
        let b = batch.len() as f64;
        let size = batch.len().div_ceil(CHUNKS).max(1);
        let chunks: Vec<&[&[f64]]> = batch.chunks(size).collect();
        let parts = parallel::map(&chunks, |c| self.batch_gradients(c, b));
        let mut loss = 0.0;
        let mut ge = self.encoder.zero_gradients();
        let mut gd = self.decoder.zero_gradients();
        for part in parts {
            let (l, e, d) = part?;
            loss += l;
            ge.add_assign(&e)?;
            gd.add_assign(&d)?;
        }
        Ok((loss / b, ge, gd))
    }
}

/// Adam on the mean squared reconstruction error. Returns the trained model
/// and the mean training loss of every epoch.
pub fn pretrain<S: AsRef<[f64]>>(mut ae: Autoencoder, samples: &[S], cfg: PretrainConfig, seed: u64) -> Result<(Autoencoder, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Insufficient { have: 0, need: 1 });
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let dim = ae.encoder.input_dim();
    if let Some(bad) = samples.iter().find(|s| s.as_ref().len() != dim) {
        return Err(Error::Shape(format!("sample of length {}, encoder expects {dim}", bad.as_ref().len())));
    }
    let mut rng = rng::stream(seed, Stream::Minibatch);
    let mut adam_e = AdamState::new(&ae.encoder);
    let mut adam_d = AdamState::new(&ae.decoder);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = idx.iter().map(|&k| samples[k].as_ref()).collect();
            let (loss, ge, gd) = ae.minibatch_gradients(&batch)?;
            adam_e.step(&mut ae.encoder, &ge, cfg.lr)?;
            adam_d.step(&mut ae.decoder, &gd, cfg.lr)?;
            total += loss * batch.len() as f64;
        }
        history.push(total / samples.len() as f64);
    }
    Ok((ae, history))
}

/// `count` observations from uniformly random pursuit rollouts, every agent
/// every step, resetting whenever an episode ends.
pub fn collect_observations(cfg: &PursuitConfig, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut env = PursuitEnv::new(cfg.clone(), rng::derive_seed(seed, Stream::Env as u64))?;
    let mut policy = rng::stream(seed, Stream::Data);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        for o in env.observations() {
            if out.len() < count {
                out.push(o);
            }
        }
        let actions: Vec<usize> = (0..env.n_agents()).map(|_| policy.random_range(0..PURSUIT_ACTIONS)).collect();
        if env.step(&actions)?.terminal {
            env.reset();
        }
    }
    Ok(out)
}

impl Autoencoder {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.encoder.save(dir.join("encoder.dnmd"))?;
        self.decoder.save(dir.join("decoder.dnmd"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_parts(Mlp::load(dir.join("encoder.dnmd"))?, Mlp::load(dir.join("decoder.dnmd"))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        let ae = Autoencoder::new(147, 0).unwrap();
        let dims = |m: &Mlp| m.layers().iter().map(|l| (l.input_dim(), l.output_dim())).collect::<Vec<_>>();
        assert_eq!(dims(ae.encoder()), vec![(147, 96), (96, 32)]);
        assert_eq!(dims(ae.decoder()), vec![(32, 96), (96, 147)]);
        let o = vec![1.0; 147];
        assert_eq!(ae.encode(&o).unwrap().len(), 32);
        assert_eq!(ae.encode(&o).unwrap(), ae.encode(&o).unwrap());
        assert_eq!(ae.codec().message_dim(147), 32);
    }

    #[test]
    fn constant_data_is_learned() {
        let data = vec![vec![0.5, -1.0, 0.25, 1.0]; 64];
        let ae = Autoencoder::with_sizes(4, 8, 2, 3).unwrap();
        let cfg = PretrainConfig { epochs: 300, lr: 1e-2, batch_size: 16 };
        let (ae, hist) = pretrain(ae, &data, cfg, 1).unwrap();
        assert!(*hist.last().unwrap() < 1e-6, "{:?}", hist.last());
        assert!(ae.mse(&data).unwrap() < 1e-6);
    }

    #[test]
    fn chunked_gradient_matches_single_pass() {
        let ae = Autoencoder::with_sizes(6, 5, 3, 2).unwrap();
        let mut r = rng::seeded(0);
        let data: Vec<Vec<f64>> = (0..10).map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let (l1, e1, d1) = ae.minibatch_gradients(&refs).unwrap();
        let (l2, e2, d2) = ae.batch_gradients(&refs, 10.0).unwrap();
        assert!((l1 - l2 / 10.0).abs() < 1e-12);
        for (a, b) in e1.values().zip(e2.values()).chain(d1.values().zip(d2.values())) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pursuit_observations_compress() {
        let cfg = PursuitConfig::small();
        let train = collect_observations(&cfg, 4000, 1).unwrap();
        let held = collect_observations(&cfg, 1000, 2).unwrap();
        assert!(train.iter().all(|o| o.len() == 147));
        let ae = Autoencoder::new(147, 5).unwrap();
        let before = ae.mse(&held).unwrap();
        let pc = PretrainConfig { epochs: 4, ..PretrainConfig::default() };
        let (ae, hist) = pretrain(ae, &train, pc, 3).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] <= w[0], "{hist:?}");
        }
        let after = ae.mse(&held).unwrap();
        assert!(after * 2.0 < before, "{before} -> {after}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ae = Autoencoder::new(10, 1).unwrap();
        ae.save(dir.path()).unwrap();
        assert_eq!(Autoencoder::load(dir.path()).unwrap(), ae);
    }
}
