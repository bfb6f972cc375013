//! Adam training loop with per-epoch decay, gradient clipping, and early
//! stopping on validation MSE.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{DatasetSplit, MetricAccumulator, Metrics, WindowSampler};
use crate::error::{Error, Result};
use crate::model::{forward, forward_tape, loss_mse_tape, Dtype, ModelConfig, ModelParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    /// Worker threads for per-sample gradients. Results do not depend on it.
    pub threads: usize,
    /// Window stride over the training split.
    pub stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay: 0.9,
            batch_size: 16,
            max_epochs: 10,
            patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            threads: 1,
            stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("invalid training setting: {what}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(self.lr_decay > 0.0) {
            return bad("lr_decay must be positive");
        }
        if self.batch_size == 0 || self.threads == 0 || self.stride == 0 {
            return bad("batch_size, threads and stride must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0 && self.clip_norm > 0.0) {
            return bad("adam_eps and clip_norm must be positive");
        }
        Ok(())
    }
}

/// Adam moments for a flat list of parameter tensors.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl OptimState {
    pub fn new(params: &[Tensor], config: &TrainConfig) -> Self {
        OptimState {
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
            step: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            clip_norm: config.clip_norm,
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales `grads` so their global norm does not exceed `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.scale(c);
        }
    }
    norm
}

/// One bias-corrected Adam update after global-norm clipping.
/// Returns the pre-clip gradient norm.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut OptimState,
    lr: f64,
) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step got {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params[i].shape() {
            return Err(Error::dim("adam_step", params[i].shape(), g.shape()));
        }
        if !g.is_finite() {
            let name = names.get(i).map_or("<unnamed>", String::as_str);
            return Err(Error::Numeric(format!("non-finite gradient in parameter {name}")));
        }
    }
    let mut grads = grads.to_vec();
    let norm = clip_global_norm(&mut grads, state.clip_norm);

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].zip_map(g, "adam", |m, g| b1 * m + (1.0 - b1) * g)?;
        let v = state.v[i].zip_map(g, "adam", |v, g| b2 * v + (1.0 - b2) * g * g)?;
        let update = m.zip_map(&v, "adam", |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps))?;
        params[i] = params[i].sub(&update)?;
        state.m[i] = m;
        state.v[i] = v;
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the restored parameters.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub best_val_mae: f64,
    pub stopped_early: bool,
    /// Set when training hit a non-finite loss or gradient.
    pub diverged: Option<String>,
    pub wall_seconds: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TrainReport {
    /// The report with every timing field zeroed.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }
}

pub struct FitOutcome {
    pub params: ModelParams<Tensor>,
    pub report: TrainReport,
}

fn pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}

/// Maps `f` over `items` in order, on the pool when there is one.
fn ordered_map<T, U, F>(pool: Option<&rayon::ThreadPool>, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match pool {
        Some(p) => p.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

/// Loss and per-tensor gradients for one window.
pub fn sample_gradients(params: &ModelParams<Tensor>, x: &Tensor, y: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let out = forward_tape(tape.constant(x.clone()), &bound)?;
    let loss = loss_mse_tape(out.forecast, y)?;
    let value = loss.value().item()?;
    let grads = tape.backward(loss)?;
    let mut flat = Vec::new();
    bound.map_named("", &mut |_, v| {
        flat.push(grads.get(*v));
        Ok(())
    })?;
    Ok((value, flat))
}

fn evaluate_with(
    pool: Option<&rayon::ThreadPool>,
    params: &ModelParams<Tensor>,
    sampler: &WindowSampler,
) -> Result<Metrics> {
    let preds = ordered_map(pool, sampler.starts(), |&s| -> Result<(Tensor, Tensor)> {
        let (x, y) = sampler.window(s)?;
        Ok((forward(&x, params)?, y))
    });
    let mut acc = MetricAccumulator::default();
    for p in preds {
        let (pred, y) = p?;
        acc.add(&pred, &y)?;
    }
    acc.finish()
}

/// MSE and MAE over every stride-1 window of a normalized split.
pub fn evaluate(params: &ModelParams<Tensor>, config: &ModelConfig, split: &Tensor, threads: usize) -> Result<Metrics> {
    let sampler = WindowSampler::new(split, config.seq_len, config.pred_len, 1)?;
    if sampler.is_empty() {
        return Err(Error::Data(format!(
            "split of {} rows holds no window of {} + {}",
            split.shape()[0],
            config.seq_len,
            config.pred_len
        )));
    }
    let pool = pool(threads)?;
    evaluate_with(pool.as_ref(), params, &sampler)
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
}

pub fn fit(model: &ModelConfig, config: &TrainConfig, split: &DatasetSplit) -> Result<FitOutcome> {
    fit_with(model, config, split, None, &mut |_| {})
}

/// Trains from `init` (or a fresh seeded initialization), calling
/// `on_epoch` after each epoch.
pub fn fit_with(
    model: &ModelConfig,
    config: &TrainConfig,
    split: &DatasetSplit,
    init: Option<ModelParams<Tensor>>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    model.validate()?;
    config.validate()?;
    let started = Instant::now();
    let n_vars = split.train.shape()[1];
    if n_vars != model.n_vars {
        return Err(Error::Config(format!(
            "data has {n_vars} channels but the model expects {}",
            model.n_vars
        )));
    }
    let train = WindowSampler::new(&split.train, model.seq_len, model.pred_len, config.stride)?;
    let val = WindowSampler::new(&split.val, model.seq_len, model.pred_len, 1)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "train split has {} windows and val split {}; both need at least one",
            train.len(),
            val.len()
        )));
    }
    let pool = pool(config.threads)?;
    let pool = pool.as_ref();

    let mut params = match init {
        Some(p) => p,
        None => ModelParams::init(model)?,
    };
    let names: Vec<String> = params.to_named().into_iter().map(|(n, _)| n).collect();
    let mut flat: Vec<Tensor> = params.to_named().into_iter().map(|(_, t)| t).collect();
    let mut state = OptimState::new(&flat, config);

    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, Metrics, ModelParams<Tensor>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut diverged = None;

    'epochs: for epoch in 0..config.max_epochs {
        let epoch_start = Instant::now();
        let lr = config.lr * config.lr_decay.powi(epoch as i32);
        let order = train.shuffled_starts(shuffle_seed(model.seed, epoch));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = ordered_map(pool, batch, |&s| {
                let (x, y) = train.window(s)?;
                sample_gradients(&params, &x, &y)
            });
            let mut grads: Vec<Tensor> = flat.iter().map(Tensor::zeros_like).collect();
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    *acc = acc.add(gi)?;
                }
            }
            if !batch_loss.is_finite() {
                diverged = Some(format!("non-finite training loss in epoch {epoch}"));
                break 'epochs;
            }
            loss_sum += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g = g.scale(inv));
            if let Err(e) = adam_step(&mut flat, &grads, &names, &mut state, lr) {
                diverged = Some(format!("epoch {epoch}: {e}"));
                break 'epochs;
            }
            if model.dtype == Dtype::F32 {
                flat.iter_mut().for_each(|t| *t = t.map(|v| v as f32 as f64));
            }
            params = params.with_values(&flat)?;
        }
        let val_metrics = evaluate_with(pool, &params, &val)?;
        if !val_metrics.mse.is_finite() {
            diverged = Some(format!("non-finite validation loss in epoch {epoch}"));
            break;
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / order.len() as f64,
            val_mse: val_metrics.mse,
            val_mae: val_metrics.mae,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);
        let improved = best.as_ref().is_none_or(|(_, m, _)| val_metrics.mse < m.mse);
        if improved {
            best = Some((epoch, val_metrics, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_metrics, best_params) = match best {
        Some(b) => b,
        None => {
            return Err(Error::Numeric(
                diverged.unwrap_or_else(|| "no epoch completed".into()),
            ))
        }
    };
    Ok(FitOutcome {
        params: best_params,
        report: TrainReport {
            epochs,
            best_epoch,
            best_val_mse: best_metrics.mse,
            best_val_mae: best_metrics.mae,
            stopped_early,
            diverged,
            wall_seconds: started.elapsed().as_secs_f64(),
            seed: model.seed,
            model: model.clone(),
            train: config.clone(),
        },
    })
}
