//! Full-batch or minibatch training with Adam and global-norm clipping.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::task::Prepared;
use crate::model::{Fwd, Model};
use crate::{Error, Result};

/// Per-parameter gradients, `None` where a parameter was unused.
type ParamGrads = Vec<Option<Array2<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Examples per step; 0 means the whole set.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.998,
            adam_eps: 1e-9,
            batch_size: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,loss,grad_norm,clipped_norm")?;
        for s in &self.steps {
            writeln!(
                f,
                "{},{},{},{}",
                s.step, s.loss, s.grad_norm, s.clipped_norm
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Mean loss over `batch` and the matching parameter gradients.
pub fn batch_gradients(
    model: &Model,
    batch: &[&Prepared],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let per_example: Vec<Result<(f64, ParamGrads)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut f = match dropout_seed {
                Some(seed) => Fwd::with_dropout(
                    &model.params,
                    model.config.dropout_rate,
                    seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ),
                None => Fwd::new(&model.params),
            };
            let loss = model.loss(&mut f, &ex.input, &ex.graph, &ex.target)?;
            let value = f.tape.value(loss)[[0, 0]];
            let grads = f.tape.backward(loss);
            let mut g = vec![None; model.params.len()];
            for (id, v) in f.bound() {
                g[id.0] = grads.get(v).cloned();
            }
            Ok((value, g))
        })
        .collect();
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    let mut sum: Vec<Array2<f64>> = model
        .params
        .ids()
        .map(|id| Array2::zeros(model.params.get(id).dim()))
        .collect();
    for r in per_example {
        let (loss, grads) = r?;
        total += loss;
        for (acc, g) in sum.iter_mut().zip(grads) {
            if let Some(g) = g {
                acc.scaled_add(scale, &g);
            }
        }
    }
    Ok((total * scale, sum))
}

pub fn global_norm(grads: &[Array2<f64>]) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * k);
        }
    }
    norm
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &Model) -> Self {
        let zeros: Vec<Array2<f64>> = model
            .params
            .ids()
            .map(|id| Array2::zeros(model.params.get(id).dim()))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &[Array2<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let ids: Vec<_> = model.params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = &grads[k];
            self.m[k].zip_mut_with(g, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            self.v[k].zip_mut_with(g, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            let p = model.params.get_mut(id);
            ndarray::Zip::from(p)
                .and(&self.m[k])
                .and(&self.v[k])
                .for_each(|p, &m, &v| {
                    *p -= cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.adam_eps);
                });
        }
    }
}

/// Trains in place. Dropout follows the model config. Stops with an error
/// on the first non-finite loss or gradient.
pub fn train(model: &mut Model, data: &[Prepared], cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    for step in 0..cfg.steps {
        let batch: Vec<&Prepared> = if cfg.batch_size == 0 || cfg.batch_size >= data.len() {
            data.iter().collect()
        } else {
            let mut b = Vec::with_capacity(cfg.batch_size);
            while b.len() < cfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                b.push(&data[order[cursor]]);
                cursor += 1;
            }
            b
        };
        let dropout = (model.config.dropout_rate > 0.0).then_some(cfg.seed ^ step as u64);
        let (loss, mut grads) = batch_gradients(model, &batch, dropout)?;
        if !loss.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|ex| ex.id.as_str()).collect();
            return Err(Error::Training(format!(
                "non-finite loss {loss} at step {step}; batch: {ids:?}; first non-finite parameter: {:?}",
                model.params.first_non_finite()
            )));
        }
        let norm = clip_global_norm(&mut grads, model.config.max_grad_norm);
        if !norm.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient norm at step {step}"
            )));
        }
        let clipped = global_norm(&grads);
        adam.step(model, &grads, cfg);
        log::debug!("step {step} loss {loss:.6} grad norm {norm:.4}");
        report.steps.push(StepRecord {
            step,
            loss,
            grad_norm: norm,
            clipped_norm: clipped,
        });
    }
    Ok(report)
}

/// Mean loss over `data` without dropout.
pub fn evaluate_loss(model: &Model, data: &[Prepared]) -> Result<f64> {
    let losses: Result<Vec<f64>> = data
        .par_iter()
        .map(|ex| {
            let mut f = Fwd::new(&model.params);
            let loss = model.loss(&mut f, &ex.input, &ex.graph, &ex.target)?;
            Ok(f.tape.value(loss)[[0, 0]])
        })
        .collect();
    Ok(losses?.iter().sum::<f64>() / data.len().max(1) as f64)
}
