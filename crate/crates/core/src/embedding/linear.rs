//! Single linear layer followed by L2 normalisation, trained with the
//! semi-hard triplet loss and Adam.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::triplet::{triplet_loss, triplet_loss_grad, TripletStats};
use crate::error::{Error, Result};
use crate::model::EMBEDDING_DIM;
use crate::splits::round_half_up;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEmbedder {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub out_dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout_in: f64,
    pub dropout_out: f64,
    pub batch_ids: usize,
    pub images_per_id: usize,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            out_dim: EMBEDDING_DIM,
            margin: 0.2,
            learning_rate: 1e-3,
            max_epochs: 1000,
            patience: 100,
            dropout_in: 0.5,
            dropout_out: 0.2,
            batch_ids: 8,
            images_per_id: 4,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.out_dim == 0 {
            return bad("train.out_dim must be positive");
        }
        if !(self.margin > 0.0) {
            return bad("train.margin must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("train.learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_in) || !(0.0..1.0).contains(&self.dropout_out) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.batch_ids < 2 || self.images_per_id < 2 {
            return bad("batches need at least 2 ids and 2 images per id");
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return bad("train.val_frac must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub monitor_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
    pub validation_tracks: usize,
}

/// Per-sample dropout masks, already scaled by `1 / (1 - p)`.
pub struct Masks {
    pub input: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
}

fn normalize(z: &mut [f64]) -> f64 {
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    z.iter_mut().for_each(|v| *v /= n);
    n
}

impl LinearEmbedder {
    /// Glorot-normal weights, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (2.0 / (in_dim + out_dim) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| normal.sample(&mut rng)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    fn linear(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Inference: unit-norm output, no dropout.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Dimension { expected: self.in_dim, got: x.len() });
        }
        let mut z = self.linear(x);
        normalize(&mut z);
        Ok(z)
    }

    pub fn batch_loss<L: PartialEq>(&self, xs: &[&[f64]], labels: &[L], margin: f64) -> Result<TripletStats> {
        let emb = xs.iter().map(|x| self.forward(x)).collect::<Result<Vec<_>>>()?;
        triplet_loss(&emb, labels, margin)
    }

    /// Batch loss with gradients `(dW, db)`.
    pub fn loss_and_grad<L: PartialEq>(
        &self,
        xs: &[&[f64]],
        labels: &[L],
        margin: f64,
        masks: Option<&Masks>,
    ) -> Result<(TripletStats, Vec<f64>, Vec<f64>)> {
        let mut inputs = Vec::with_capacity(xs.len());
        let mut norms = Vec::with_capacity(xs.len());
        let mut emb = Vec::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            if x.len() != self.in_dim {
                return Err(Error::Dimension { expected: self.in_dim, got: x.len() });
            }
            let xi: Vec<f64> = match masks {
                Some(m) => x.iter().zip(&m.input[i]).map(|(a, b)| a * b).collect(),
                None => x.to_vec(),
            };
            let mut z = self.linear(&xi);
            if let Some(m) = masks {
                z.iter_mut().zip(&m.output[i]).for_each(|(a, b)| *a *= b);
            }
            norms.push(normalize(&mut z));
            inputs.push(xi);
            emb.push(z);
        }
        let (stats, ge) = triplet_loss_grad(&emb, labels, margin)?;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.out_dim];
        for i in 0..xs.len() {
            let e = &emb[i];
            let g = &ge[i];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let eg: f64 = e.iter().zip(g).map(|(a, b)| a * b).sum();
            for o in 0..self.out_dim {
                let mut gz = (g[o] - e[o] * eg) / norms[i];
                if let Some(m) = masks {
                    gz *= m.output[i][o];
                }
                if gz == 0.0 {
                    continue;
                }
                gb[o] += gz;
                let row = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                for (w, v) in row.iter_mut().zip(&inputs[i]) {
                    *w += gz * v;
                }
            }
        }
        Ok((stats, gw, gb))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, gi) in p.iter_mut().zip(g.iter()) {
                self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * gi;
                self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * gi * gi;
                *w -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

/// One training example: feature vector, identity label and source track.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub feature: Vec<f64>,
    pub label: String,
    pub track: u64,
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

/// Holds out whole tracks per identity for early stopping.
fn hold_out(samples: &[TrainSample], frac: f64, rng: &mut ChaCha8Rng) -> BTreeSet<(String, u64)> {
    let mut tracks: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for s in samples {
        tracks.entry(&s.label).or_default().insert(s.track);
    }
    let mut held = BTreeSet::new();
    for (label, ts) in tracks {
        let mut ts: Vec<u64> = ts.into_iter().collect();
        let n = round_half_up(frac * ts.len() as f64).min(ts.len().saturating_sub(1));
        ts.shuffle(rng);
        for t in ts.into_iter().take(n) {
            held.insert((label.to_string(), t));
        }
    }
    held
}

pub fn train_embedder(samples: &[TrainSample], cfg: &TrainConfig) -> Result<(LinearEmbedder, TrainLog)> {
    cfg.validate()?;
    let in_dim = samples.first().map(|s| s.feature.len()).ok_or_else(|| Error::invalid("no training samples"))?;
    if let Some(bad) = samples.iter().find(|s| s.feature.len() != in_dim) {
        return Err(Error::Dimension { expected: in_dim, got: bad.feature.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let held = hold_out(samples, cfg.val_frac, &mut rng);
    let (mut train_idx, mut val_idx) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if held.contains(&(s.label.clone(), s.track)) {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &train_idx {
        by_label.entry(&samples[i].label).or_default().push(i);
    }
    let mut ids: Vec<&str> = by_label.iter().filter(|(_, v)| v.len() >= 2).map(|(k, _)| *k).collect();
    if ids.len() < 2 {
        return Err(Error::invalid("training needs at least 2 identities with 2 or more images"));
    }
    let val_counts = val_idx.iter().fold(BTreeMap::<&str, usize>::new(), |mut m, &i| {
        *m.entry(&samples[i].label).or_default() += 1;
        m
    });
    let usable_val = val_counts.values().filter(|&&c| c >= 2).count() >= 2;
    if !usable_val {
        log::warn!("validation split too small; monitoring training loss");
    }

    let p = cfg.batch_ids.min(ids.len());
    let k = cfg.images_per_id;
    let rounds = ((train_idx.len() as f64 / (ids.len() * k) as f64).round() as usize).max(1);

    let mut model = LinearEmbedder::new(in_dim, cfg.out_dim, rng.random());
    let mut adam = Adam::new(model.weights.len() + model.bias.len(), cfg.learning_rate);
    let mut best = model.clone();
    let mut log = TrainLog { best_loss: f64::INFINITY, validation_tracks: held.len(), ..Default::default() };
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for _ in 0..rounds {
            ids.shuffle(&mut rng);
            let mut start = 0;
            while start < ids.len() {
                let mut chunk: Vec<&str> = ids[start..(start + p).min(ids.len())].to_vec();
                start += p;
                for extra in ids.iter() {
                    if chunk.len() >= p {
                        break;
                    }
                    if !chunk.contains(extra) {
                        chunk.push(extra);
                    }
                }
                let mut batch: Vec<usize> = Vec::new();
                let mut labels: Vec<&str> = Vec::new();
                for id in chunk {
                    let pool = &by_label[id];
                    for &i in rand::seq::index::sample(&mut rng, pool.len(), k.min(pool.len())).iter().map(|j| &pool[j]) {
                        batch.push(i);
                        labels.push(id);
                    }
                }
                let masks = Masks {
                    input: batch.iter().map(|_| dropout_mask(&mut rng, in_dim, cfg.dropout_in)).collect(),
                    output: batch.iter().map(|_| dropout_mask(&mut rng, cfg.out_dim, cfg.dropout_out)).collect(),
                };
                let xs: Vec<&[f64]> = batch.iter().map(|&i| samples[i].feature.as_slice()).collect();
                let (stats, gw, gb) = model.loss_and_grad(&xs, &labels, cfg.margin, Some(&masks))?;
                if !stats.loss.is_finite() || gw.iter().chain(&gb).any(|g| !g.is_finite()) {
                    return Err(Error::Training { epoch, message: "non-finite loss or gradient".into() });
                }
                adam.step(&mut [&mut model.weights, &mut model.bias], &[&gw, &gb]);
                epoch_loss += stats.loss;
                n_batches += 1;
            }
        }
        let train_loss = epoch_loss / n_batches.max(1) as f64;
        let monitor = if usable_val {
            let xs: Vec<&[f64]> = val_idx.iter().map(|&i| samples[i].feature.as_slice()).collect();
            let labels: Vec<&str> = val_idx.iter().map(|&i| samples[i].label.as_str()).collect();
            model.batch_loss(&xs, &labels, cfg.margin)?.loss
        } else {
            train_loss
        };
        if !monitor.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Training { epoch, message: "non-finite weights".into() });
        }
        log.epochs.push(EpochLog { epoch, train_loss, monitor_loss: monitor });
        log::debug!("epoch {epoch}: train {train_loss:.5} monitor {monitor:.5}");
        if monitor < log.best_loss {
            log.best_loss = monitor;
            log.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, log))
}
