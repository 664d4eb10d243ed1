//! ℓ1 training with Adam and a step-halving learning rate.

use std::io::Write;

use rand::Rng;

use crate::degrade::{degrade, DegradationSpec};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::Model;
use crate::param::ParamStore;
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Mean absolute error; the subgradient at exact ties is zero.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.input(pred.clone());
    let l = g.l1_loss(p, target)?;
    Ok(g.value(l).data()[0])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    /// Stored for config compatibility; must stay zero.
    pub perc: f64,
    /// Stored for config compatibility; must stay zero.
    pub adv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub halve_every: usize,
    pub iters: usize,
    pub batch: usize,
    /// HR patch side.
    pub patch: usize,
    pub checkpoint_every: usize,
    pub loss_weights: LossWeights,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            halve_every: 500,
            iters: 2000,
            batch: 8,
            patch: 32,
            checkpoint_every: 500,
            loss_weights: LossWeights {
                l1: 1.0,
                perc: 0.0,
                adv: 0.0,
            },
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.iters == 0 || self.batch == 0 || self.halve_every == 0 {
            return Err(Error::Config("iters, batch and halve_every must be positive".into()));
        }
        let w = self.loss_weights;
        if w.perc != 0.0 || w.adv != 0.0 {
            return Err(Error::Config(
                "perceptual and adversarial losses are out of scope; set loss.perc and loss.adv to 0".into(),
            ));
        }
        if !(w.l1 > 0.0) {
            return Err(Error::Config("loss.l1 must be positive".into()));
        }
        Ok(())
    }

    /// `lr · 2^(-⌊t / halve_every⌋)` for 1-based step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        self.lr * 0.5f64.powi((t / self.halve_every) as i32)
    }
}

/// First and second moment estimates, one slot per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update at 1-based step `t` using the gradients
/// currently accumulated in `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &TrainConfig, t: usize) {
    let lr = cfg.lr_at(t);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    if state.m.len() != store.len() {
        state.m = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        state.v = state.m.clone();
    }
    for (i, p) in store.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let grad = p.grad.data().to_vec();
        for (j, (w, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterLog {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Random HR crop of side `patch`, aligned to the scale.
fn crop_patch<R: Rng + ?Sized>(img: &Tensor, patch: usize, rng: &mut R) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if h < patch || w < patch {
        return Err(Error::Size(format!("image {h}x{w} is smaller than the {patch} patch")));
    }
    if h == patch && w == patch {
        return Ok(img.clone());
    }
    let y0 = rng.random_range(0..=h - patch);
    let x0 = rng.random_range(0..=w - patch);
    Ok(Tensor::from_fn(&[c, patch, patch], |i| {
        let (ch, r) = (i / (patch * patch), i % (patch * patch));
        img.data()[(ch * h + y0 + r / patch) * w + x0 + r % patch]
    }))
}

/// Trains `model` in place on LR/HR pairs synthesised from `data` with
/// `spec`. `hook` runs after every update. Fully determined by `cfg.seed`.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    data: &[Tensor],
    spec: &DegradationSpec,
    cfg: &TrainConfig,
    mut hook: impl FnMut(&IterLog, &ParamStore) -> Result<()>,
) -> Result<Vec<IterLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if cfg.patch % spec.scale != 0 {
        return Err(Error::Config(format!("patch {} is not divisible by scale {}", cfg.patch, spec.scale)));
    }
    let mut rng = seeded(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = AdamState::default();
    let mut log = Vec::with_capacity(cfg.iters);
    for t in 1..=cfg.iters {
        store.zero_grads();
        let mut total = 0.0;
        for _ in 0..cfg.batch {
            let hr = crop_patch(&data[rng.random_range(0..data.len())], cfg.patch, &mut rng)?;
            let lr_img = degrade(&hr, spec, &mut rng)?;
            let mut g = Graph::new();
            let y = model.forward(&mut g, store, &lr_img)?;
            let l = g.l1_loss(y, &hr)?;
            let l = g.scale(l, cfg.loss_weights.l1 / cfg.batch as f64);
            total += g.value(l).data()[0];
            g.backward(l)?.accumulate_into(store)?;
        }
        let entry = IterLog {
            iter: t,
            loss: total,
            lr: cfg.lr_at(t),
        };
        if !total.is_finite() {
            return Err(Error::Diverged {
                iter: t,
                lr: entry.lr,
                loss: total,
            });
        }
        adam_step(store, &mut adam, cfg, t);
        hook(&entry, store)?;
        log.push(entry);
    }
    Ok(log)
}

/// `iter,loss,lr` CSV.
pub fn write_loss_csv<W: Write>(mut w: W, log: &[IterLog]) -> Result<()> {
    writeln!(w, "iter,loss,lr")?;
    for e in log {
        writeln!(w, "{},{:.9e},{:e}", e.iter, e.loss, e.lr)?;
    }
    Ok(())
}

/// Mean of a window of losses starting at index `start`.
pub fn smoothed_loss(log: &[IterLog], start: usize, window: usize) -> f64 {
    let s = &log[start.min(log.len())..(start + window).min(log.len())];
    s.iter().map(|e| e.loss).sum::<f64>() / s.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_at_boundary() {
        let cfg = TrainConfig {
            lr: 1.0,
            halve_every: 10,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(9), 1.0);
        assert_eq!(cfg.lr_at(10), 0.5);
        assert_eq!(cfg.lr_at(25), 0.25);
    }

    #[test]
    fn perceptual_loss_is_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.loss_weights.perc = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
