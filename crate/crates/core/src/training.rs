//! Loss, Adam, and the training loop with validation-based model selection.
//!
//! Losses and reported MSE are on the standardized scale; [`evaluate_raw`]
//! maps predictions back through the preprocessing statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{PreprocessStats, Split, Window, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{NftModel, Prefix};
use crate::tensor::{Differentiable, Parameter, Tensor};

/// Mean of squared differences over all entries.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("mse_loss", pred.shape(), target.shape()));
    }
    Ok(squared_error(pred.data(), target.data()) / pred.len().max(1) as f64)
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, t)| (p - t) * (p - t)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            patience: 20,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients. Parameters must be
    /// passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Parameter { value, grad, .. } = &mut **p;
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch (0-based) with the lowest validation loss; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_loss[e])
    }

    /// `epoch,train_mse,val_mse`, one row per epoch, shortest round-trip float text.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for (e, (tr, va)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            writeln!(out, "{e},{tr},{va}").expect("write to String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Squared error summed over the windows, with gradients accumulated for
/// `scale · Σ (pred − y)²`.
fn accumulate_batch(model: &mut NftModel, windows: &[(&Tensor, &Tensor)], scale: f64) -> f64 {
    let mut total = 0.0;
    for (x, y) in windows {
        let fwd = model.forward_sample(x.data());
        total += squared_error(&fwd.total, y.data());
        let d: Vec<f64> = fwd.total.iter().zip(y.data()).map(|(p, t)| 2.0 * scale * (p - t)).collect();
        model.backward_sample(&fwd, &d);
    }
    total
}

fn batch_loss_and_grad(model: &mut NftModel, windows: &[(&Tensor, &Tensor)]) -> f64 {
    let entries: usize = windows.iter().map(|(_, y)| y.len()).sum();
    let scale = 1.0 / entries.max(1) as f64;
    model.zero_grads();
    accumulate_batch(model, windows, scale) * scale
}

/// Mean squared error of a fixed batch as a function of the model's parameters.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub model: NftModel,
    windows: Vec<(Tensor, Tensor)>,
    /// Per-window block prefixes from the last `loss_and_grad`.
    prefixes: Vec<Vec<Prefix>>,
}

impl BatchObjective {
    pub fn new(model: NftModel, windows: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let (m, t, h) = (model.variables(), model.lookback(), model.horizon());
        for (x, y) in &windows {
            if x.shape() != [m, t] || y.shape() != [m, h] {
                return Err(Error::dim("BatchObjective", x.shape(), y.shape()));
            }
        }
        Ok(Self {
            model,
            windows,
            prefixes: Vec::new(),
        })
    }

    /// Loss after one Adam step of size `learning_rate` from fresh optimizer state.
    pub fn loss_after_step(&mut self, learning_rate: f64) -> Result<f64> {
        self.loss_and_grad()?;
        Adam::new(learning_rate).step(&mut self.model.params_mut());
        self.loss()
    }
}

impl Differentiable for BatchObjective {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.model.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        let mut sq = 0.0;
        let mut n = 0;
        for (x, y) in &self.windows {
            sq += squared_error(&self.model.forward_sample(x.data()).total, y.data());
            n += y.len();
        }
        Ok(sq / n.max(1) as f64)
    }

    fn loss_after_change(&mut self, changed: usize) -> Result<f64> {
        if self.prefixes.len() != self.windows.len() {
            return self.loss();
        }
        let (block, stage) = self
            .model
            .resume_point(changed)
            .ok_or_else(|| Error::Domain(format!("no parameter {changed}")))?;
        let mut sq = 0.0;
        let mut n = 0;
        for ((_, y), prefixes) in self.windows.iter().zip(&self.prefixes) {
            sq += squared_error(&self.model.total_from(&prefixes[block], block, stage), y.data());
            n += y.len();
        }
        Ok(sq / n.max(1) as f64)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let pairs: Vec<(&Tensor, &Tensor)> = self.windows.iter().map(|(x, y)| (x, y)).collect();
        let loss = batch_loss_and_grad(&mut self.model, &pairs);
        self.prefixes = self.windows.iter().map(|(x, _)| self.model.prefixes(x.data())).collect();
        Ok(loss)
    }
}

/// Per-window and aggregate MSE over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_window: Vec<f64>,
    /// Mean of `per_window`.
    pub aggregate: f64,
    /// MSE at each forecast step, averaged over windows and variables.
    pub per_horizon: Vec<f64>,
}

fn evaluate_with(
    model: &NftModel,
    data: &WindowedDataset,
    split: Split,
    map: impl Fn(usize, f64) -> f64,
) -> Result<Evaluation> {
    check_compatible(model, data)?;
    let (m, h) = (model.variables(), model.horizon());
    let mut per_window = Vec::new();
    let mut per_horizon = vec![0.0; h];
    for w in data.split(split) {
        let pred = model.forward_sample(w.x.data()).total;
        let mut sq = 0.0;
        for (k, (p, t)) in pred.iter().zip(w.y.data()).enumerate() {
            let var = k / h;
            let e = map(var, *p) - map(var, *t);
            sq += e * e;
            per_horizon[k % h] += e * e;
        }
        per_window.push(sq / (m * h) as f64);
    }
    if per_window.is_empty() {
        return Err(Error::Config(format!("the {split} split has no windows")));
    }
    let n = per_window.len() as f64;
    for v in &mut per_horizon {
        *v /= n * m as f64;
    }
    Ok(Evaluation {
        aggregate: per_window.iter().sum::<f64>() / n,
        per_window,
        per_horizon,
    })
}

/// MSE on the standardized scale.
pub fn evaluate(model: &NftModel, data: &WindowedDataset, split: Split) -> Result<Evaluation> {
    evaluate_with(model, data, split, |_, v| v)
}

/// MSE after mapping predictions and targets back to the raw variable scale.
pub fn evaluate_raw(
    model: &NftModel,
    data: &WindowedDataset,
    split: Split,
    stats: &PreprocessStats,
) -> Result<Evaluation> {
    if stats.variables() != model.variables() {
        return Err(Error::dim("evaluate_raw", &[stats.variables()], &[model.variables()]));
    }
    evaluate_with(model, data, split, |var, v| stats.destandardize(var, v))
}

/// Fails unless the data's `(M, t, H)` matches the model.
pub fn check_compatible(model: &NftModel, data: &WindowedDataset) -> Result<()> {
    let got = [data.variables, data.lookback, data.horizon];
    let want = [model.variables(), model.lookback(), model.horizon()];
    if got != want {
        return Err(Error::Compatibility(format!(
            "model expects (M, t, H) = {want:?}, data has {got:?}"
        )));
    }
    Ok(())
}

/// Trains a copy of `model` with Adam and returns the parameters from the epoch
/// with the lowest validation MSE.
pub fn train(model: &NftModel, data: &WindowedDataset, config: &TrainingConfig) -> Result<(NftModel, TrainingHistory)> {
    config.validate()?;
    check_compatible(model, data)?;
    let train_set: Vec<&Window> = data.split(Split::Train).collect();
    for split in [Split::Train, Split::Val] {
        if data.count(split) == 0 {
            return Err(Error::Config(format!("the {split} split has no windows")));
        }
    }
    let mut history = TrainingHistory::default();
    if config.epochs == 0 {
        return Ok((model.clone(), history));
    }

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sq_sum = 0.0;
        let mut entries = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Tensor, &Tensor)> = chunk.iter().map(|&i| (&train_set[i].x, &train_set[i].y)).collect();
            let n: usize = batch.iter().map(|(_, y)| y.len()).sum();
            let loss = batch_loss_and_grad(&mut current, &batch);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam.step(&mut current.params_mut());
            sq_sum += loss * n as f64;
            entries += n;
        }
        let train_loss = sq_sum / entries as f64;
        let val_loss = evaluate(&current, data, Split::Val)?.aggregate;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            history.best_epoch = Some(epoch);
            best.copy_params_from(&current)?;
        } else if epoch - history.best_epoch.unwrap_or(0) >= config.patience {
            break;
        }
    }
    best.zero_grads();
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, split_protocol1, RawSeries};
    use crate::model::ModelConfig;
    use crate::tensor::grad_check;
    use rand::Rng;

    fn tiny_model(m: usize, t: usize, h: usize, seed: u64) -> NftModel {
        let mut c = ModelConfig::new(m, t, h);
        c.tcn_hidden = 4;
        c.tcn_dilations = vec![1, 2];
        c.blocks_per_stack = 1;
        c.seed = seed;
        NftModel::new(c).unwrap()
    }

    fn dataset(len: usize, f: impl Fn(usize, usize) -> f64) -> WindowedDataset {
        let s = RawSeries::from_values("s", Tensor::from_fn([2, len], |i| f(i / len, i % len))).unwrap();
        split_protocol1(&make_windows(&[s], 8, 3, 1).unwrap(), [0.7, 0.1, 0.2]).unwrap()
    }

    fn wave(len: usize) -> WindowedDataset {
        dataset(len, |v, s| (0.3 * s as f64 + v as f64).sin())
    }

    #[test]
    fn mse_examples() {
        let t = |v: &[f64]| Tensor::new([v.len()], v.to_vec()).unwrap();
        assert_eq!(mse_loss(&t(&[1.0, 2.0]), &t(&[1.0, 4.0])).unwrap(), 2.0);
        assert_eq!(mse_loss(&t(&[1.0, 2.0]), &t(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse_loss(&t(&[0.0; 3]), &t(&[1.0; 3])).unwrap(), 1.0);
        assert!(matches!(mse_loss(&t(&[0.0]), &t(&[0.0; 2])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_epochs_returns_the_input() {
        let model = tiny_model(2, 8, 3, 1);
        let cfg = TrainingConfig {
            epochs: 0,
            ..TrainingConfig::default()
        };
        let (out, hist) = train(&model, &wave(200), &cfg).unwrap();
        assert_eq!(out, model);
        assert!(hist.train_loss.is_empty() && hist.best_epoch.is_none());
    }

    #[test]
    fn zero_targets_with_zero_heads_stay_at_zero_loss() {
        let mut model = tiny_model(2, 8, 3, 2);
        model.zero_heads();
        let cfg = TrainingConfig {
            epochs: 3,
            ..TrainingConfig::default()
        };
        let (_, hist) = train(&model, &dataset(200, |_, _| 0.0), &cfg).unwrap();
        assert_eq!(hist.train_loss, vec![0.0; 3]);
        assert_eq!(hist.val_loss, vec![0.0; 3]);
    }

    #[test]
    fn training_is_deterministic_and_selects_the_best_epoch() {
        let data = wave(200);
        let model = tiny_model(2, 8, 3, 3);
        let cfg = TrainingConfig {
            epochs: 6,
            batch_size: 8,
            learning_rate: 3e-3,
            seed: 9,
            ..TrainingConfig::default()
        };
        let (a, ha) = train(&model, &data, &cfg).unwrap();
        let (b, hb) = train(&model, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.to_csv(), hb.to_csv());
        let best = ha.best_epoch.unwrap();
        let min = ha.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(ha.val_loss[best], min);
        assert_eq!(evaluate(&a, &data, Split::Val).unwrap().aggregate, min);
        assert!(ha.train_loss.last() < ha.train_loss.first());
    }

    #[test]
    fn early_stopping_respects_patience() {
        let data = wave(200);
        let cfg = TrainingConfig {
            epochs: 50,
            patience: 0,
            learning_rate: 0.5,
            ..TrainingConfig::default()
        };
        let (_, hist) = train(&tiny_model(2, 8, 3, 4), &data, &cfg).unwrap();
        let best = hist.best_epoch.unwrap();
        assert!(hist.val_loss.len() < 50);
        assert_eq!(hist.val_loss.len(), best + 2);
    }

    #[test]
    fn empty_validation_split_is_a_config_error() {
        let mut data = wave(200);
        data.windows.retain(|w| w.split != Some(Split::Val));
        let err = train(&tiny_model(2, 8, 3, 0), &data, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(matches!(evaluate(&tiny_model(2, 8, 3, 0), &data, Split::Val), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let data = dataset(200, |v, s| 1e200 * (s + v + 1) as f64);
        let err = train(&tiny_model(2, 8, 3, 0), &data, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0 }));
    }

    #[test]
    fn evaluation_aggregates() {
        let data = wave(200);
        let model = tiny_model(2, 8, 3, 5);
        let ev = evaluate(&model, &data, Split::Test).unwrap();
        let direct = ev.per_window.iter().sum::<f64>() / ev.per_window.len() as f64;
        assert!((ev.aggregate - direct).abs() < 1e-12);
        let per_h = ev.per_horizon.iter().sum::<f64>() / ev.per_horizon.len() as f64;
        assert!((ev.aggregate - per_h).abs() < 1e-12);
        let first = data.split(Split::Test).next().unwrap();
        let x = Tensor::stack(std::slice::from_ref(&first.x)).unwrap();
        let pred = model.forward(&x).unwrap().total.reshape(first.y.shape().to_vec()).unwrap();
        assert_eq!(ev.per_window[0], mse_loss(&pred, &first.y).unwrap());
    }

    #[test]
    fn exact_predictions_score_zero() {
        let mut data = wave(200);
        let mut model = tiny_model(2, 8, 3, 6);
        model.zero_heads();
        for w in &mut data.windows {
            w.y = Tensor::zeros(w.y.shape().to_vec());
        }
        assert_eq!(evaluate(&model, &data, Split::Test).unwrap().aggregate, 0.0);
    }

    #[test]
    fn batch_objective_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let windows = (0..2)
            .map(|_| {
                (
                    Tensor::from_fn([2, 8], |_| rng.random_range(-1.0..1.0)),
                    Tensor::from_fn([2, 3], |_| rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        let mut obj = BatchObjective::new(tiny_model(2, 8, 3, 7), windows).unwrap();
        let report = grad_check(&mut obj, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn small_steps_descend() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let windows = (0..4)
                .map(|_| {
                    (
                        Tensor::from_fn([2, 8], |_| rng.random_range(-1.0..1.0)),
                        Tensor::from_fn([2, 3], |_| rng.random_range(-1.0..1.0)),
                    )
                })
                .collect();
            let mut obj = BatchObjective::new(tiny_model(2, 8, 3, seed), windows).unwrap();
            let before = obj.loss().unwrap();
            let after = obj.loss_after_step(1e-5).unwrap();
            assert!(after <= before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn adam_matches_a_hand_computed_first_step() {
        let mut p = Parameter::new("w", Tensor::new([2], vec![1.0, -1.0]).unwrap());
        p.grad = Tensor::new([2], vec![0.5, -2.0]).unwrap();
        Adam::new(0.1).step(&mut [&mut p]);
        // The first bias-corrected step is lr·g/(|g| + ε).
        assert!((p.value.data()[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p.value.data()[1] - (-1.0 + 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainingHistory {
            train_loss: vec![0.5, 0.25],
            val_loss: vec![0.75, 0.125],
            best_epoch: Some(1),
        };
        assert_eq!(h.to_csv(), "epoch,train_mse,val_mse\n0,0.5,0.75\n1,0.25,0.125\n");
    }
}
