//! The downstream model: a small GELU feed-forward network exposing both its
//! penultimate features and its logits, with SGD training and the
//! retrain-from-scratch oracle.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset, TaskKind, UnlearningRequest};
use crate::error::{Error, Result};
use crate::nn::{self, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden layer widths; the last one is the feature dimension.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub task_kind: TaskKind,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, num_classes: usize, task_kind: TaskKind) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!("invalid architecture {input_dim} -> {hidden:?} -> {num_classes}")));
        }
        Ok(Self { input_dim, hidden, num_classes, task_kind })
    }

    /// `(fan_in, fan_out)` of every linear layer, output layer last.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("at least one hidden layer")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub seed: u64,
    pub epochs_trained: usize,
}

impl ClassifierState {
    /// Uniform(±1/√fan_in) initialization for weights and biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for (fan_in, fan_out) in arch.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Self { arch, params, seed, epochs_trained: 0 }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        Self { arch, params: vec![0.0; n], seed: 0, epochs_trained: 0 }
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.arch.param_count() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { params, ..self.clone() })
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols != self.arch.input_dim {
            return Err(Error::Dimension(format!(
                "batch has {} features, classifier expects {}",
                inputs.cols, self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass: `(features, logits)`.
    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_inputs(inputs)?;
        let t = trace(&self.arch, &self.params, inputs);
        let n = inputs.rows;
        Ok((
            Matrix::from_vec(n, self.arch.feature_dim(), t.features().to_vec()),
            Matrix::from_vec(n, self.arch.num_classes, t.logits),
        ))
    }

    pub fn logits(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward(inputs)?.1)
    }

    /// Task loss on a batch and its gradient with respect to the parameters.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(&batch.inputs)?;
        let t = trace(&self.arch, &self.params, &batch.inputs);
        let logits = Matrix::from_vec(batch.len(), self.arch.num_classes, t.logits.clone());
        let (loss, dlogits) = task_loss_and_grad(&logits, &batch.targets, self.arch.task_kind)?;
        let grad = backward(&self.arch, &self.params, &t, None, &dlogits.data);
        Ok((loss, grad))
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let logits = self.logits(&batch.inputs)?;
        task_loss(&logits, &batch.targets, self.arch.task_kind)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::persist::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let state: ClassifierState = crate::persist::read_json(path)?;
        if state.params.len() != state.arch.param_count() {
            return Err(Error::Dimension(format!(
                "checkpoint {} holds {} parameters, architecture needs {}",
                path.display(),
                state.params.len(),
                state.arch.param_count()
            )));
        }
        Ok(state)
    }
}

/// Activations saved by a forward pass.
pub(crate) struct Trace<S> {
    /// Input to each linear layer, `n × fan_in`, flattened.
    layer_inputs: Vec<Vec<S>>,
    /// Hidden pre-activations, `n × fan_out`, flattened.
    pre: Vec<Vec<S>>,
    pub logits: Vec<S>,
}

impl<S: Scalar> Trace<S> {
    pub fn features(&self) -> &[S] {
        self.layer_inputs.last().expect("output layer input")
    }
}

/// Offsets of `(weights, bias)` per layer in the flat parameter vector.
fn offsets(arch: &Architecture) -> Vec<(usize, usize, usize, usize)> {
    let mut at = 0;
    arch.layers()
        .into_iter()
        .map(|(i, o)| {
            let w = at;
            at += i * o;
            let b = at;
            at += o;
            (w, b, i, o)
        })
        .collect()
}

pub(crate) fn trace<S: Scalar, P: Copy + Into<S>>(arch: &Architecture, params: &[P], inputs: &Matrix) -> Trace<S> {
    let params: Vec<S> = params.iter().map(|&p| p.into()).collect();
    trace_with(arch, &params, inputs)
}

pub(crate) fn trace_with<S: Scalar>(arch: &Architecture, params: &[S], inputs: &Matrix) -> Trace<S> {
    let n = inputs.rows;
    let layers = offsets(arch);
    let mut layer_inputs: Vec<Vec<S>> = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let mut current: Vec<S> = inputs.data.iter().map(|&v| S::from_f64(v)).collect();
    let mut logits = Vec::new();
    for (li, &(w, b, fan_in, fan_out)) in layers.iter().enumerate() {
        let weights = &params[w..w + fan_in * fan_out];
        let bias = &params[b..b + fan_out];
        let mut out = vec![S::zero(); n * fan_out];
        for r in 0..n {
            nn::linear(weights, bias, &current[r * fan_in..(r + 1) * fan_in], &mut out[r * fan_out..(r + 1) * fan_out]);
        }
        layer_inputs.push(current);
        if li + 1 == layers.len() {
            logits = out;
            break;
        }
        current = out.iter().map(|&z| z.gelu()).collect();
        pre.push(out);
    }
    Trace { layer_inputs, pre, logits }
}

/// Backpropagates upstream gradients on the logits (and optionally on the
/// penultimate features) to a flat parameter gradient.
pub(crate) fn backward<S: Scalar>(
    arch: &Architecture,
    params: &[S],
    t: &Trace<S>,
    d_features: Option<&[S]>,
    d_logits: &[S],
) -> Vec<S> {
    let layers = offsets(arch);
    let n = t.layer_inputs[0].len() / arch.input_dim;
    let mut grad = vec![S::zero(); params.len()];
    let mut upstream: Vec<S> = d_logits.to_vec();
    for li in (0..layers.len()).rev() {
        let (w, _, fan_in, fan_out) = layers[li];
        let weights = &params[w..w + fan_in * fan_out];
        let x = &t.layer_inputs[li];
        let (gw, rest) = grad[w..].split_at_mut(fan_in * fan_out);
        let gb = &mut rest[..fan_out];
        let need_dx = li > 0;
        let mut dx_all = if need_dx { vec![S::zero(); n * fan_in] } else { Vec::new() };
        for r in 0..n {
            let dy = &upstream[r * fan_out..(r + 1) * fan_out];
            let xr = &x[r * fan_in..(r + 1) * fan_in];
            if need_dx {
                nn::linear_backward(weights, xr, dy, gw, gb, Some(&mut dx_all[r * fan_in..(r + 1) * fan_in]));
            } else {
                nn::linear_backward(weights, xr, dy, gw, gb, None);
            }
        }
        if !need_dx {
            break;
        }
        if li + 1 == layers.len() {
            if let Some(df) = d_features {
                for (d, f) in dx_all.iter_mut().zip(df) {
                    *d += *f;
                }
            }
        }
        let pre = &t.pre[li - 1];
        upstream = dx_all.iter().zip(pre).map(|(&d, &z)| d * z.gelu_grad()).collect();
    }
    grad
}

fn check_shapes(logits: &Matrix, targets: &Matrix) -> Result<()> {
    if logits.rows != targets.rows || logits.cols != targets.cols {
        return Err(Error::Dimension(format!(
            "logits {}x{} vs targets {}x{}",
            logits.rows, logits.cols, targets.rows, targets.cols
        )));
    }
    if logits.rows == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    if logits.data.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN logits".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy (multi-label) or mean cross-entropy (multi-class).
pub fn task_loss(logits: &Matrix, targets: &Matrix, kind: TaskKind) -> Result<f64> {
    Ok(task_loss_and_grad(logits, targets, kind)?.0)
}

pub fn task_loss_and_grad(logits: &Matrix, targets: &Matrix, kind: TaskKind) -> Result<(f64, Matrix)> {
    check_shapes(logits, targets)?;
    let (n, c) = (logits.rows, logits.cols);
    let mut grad = Matrix::zeros(n, c);
    let mut total = 0.0;
    match kind {
        TaskKind::MultiLabel => {
            let scale = 1.0 / (n * c) as f64;
            for ((z, y), g) in logits.data.iter().zip(&targets.data).zip(grad.data.iter_mut()) {
                total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                *g = (z.sigmoid() - y) * scale;
            }
            total *= scale;
        }
        TaskKind::MultiClass => {
            let scale = 1.0 / n as f64;
            for r in 0..n {
                let z = logits.row(r);
                let y = targets.row(r);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                for k in 0..c {
                    total += y[k] * (lse - z[k]);
                    grad.data[r * c + k] = ((z[k] - lse).exp() - y[k]) * scale;
                }
            }
            total *= scale;
        }
    }
    Ok((total, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub warmup_epochs: usize,
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.2,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
            seed: 0,
            warmup_epochs: 2,
            cosine: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive and finite".into()));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative and finite".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` of `total`, with linear warmup
    /// over `warmup` steps followed by optional cosine decay to zero.
    pub fn lr_at(&self, step: usize, warmup: usize, total: usize) -> f64 {
        if step < warmup {
            return self.learning_rate * (step + 1) as f64 / warmup as f64;
        }
        if !self.cosine || total <= warmup {
            return self.learning_rate;
        }
        let progress = (step - warmup) as f64 / (total - warmup) as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ClassifierState,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// SGD with momentum and weight decay on the task loss.
pub fn train(init: &ClassifierState, data: &Dataset, cfg: &TrainConfig) -> Result<ClassifierState> {
    Ok(train_with_history(init, data, cfg)?.state)
}

pub fn train_with_history(init: &ClassifierState, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let batch = data.to_batch();
    let mut state = init.clone();
    state.check_inputs(&batch.inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = batch.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let warmup = steps_per_epoch * cfg.warmup_epochs.min(cfg.epochs);
    let mut velocity = vec![0.0; state.params.len()];
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mb = batch.select(chunk);
            let (loss, grad) = match state.loss_and_grad(&mb) {
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, step, loss: f64::NAN }),
                other => other?,
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, step, loss });
            }
            sum += loss;
            let lr = cfg.lr_at(step, warmup, total);
            for ((p, v), g) in state.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                let g = g + cfg.weight_decay * *p;
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
            step += 1;
        }
        epoch_losses.push(sum / steps_per_epoch as f64);
        state.epochs_trained += 1;
    }
    state.seed = cfg.seed;
    Ok(TrainOutcome { state, epoch_losses })
}

/// Gold-standard unlearning: a fresh model trained on the retain set only.
pub fn retrain_oracle(arch: &Architecture, request: &UnlearningRequest, cfg: &TrainConfig) -> Result<ClassifierState> {
    let retain = request.retain_set();
    if retain.is_empty() {
        return Err(Error::Request("retain set is empty; nothing to retrain on".into()));
    }
    let init = ClassifierState::init(arch.clone(), cfg.seed);
    train(&init, retain, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DataSchema, Sample, Target};

    fn arch(kind: TaskKind, c: usize) -> Architecture {
        Architecture::new(3, vec![5, 4], c, kind).unwrap()
    }

    #[test]
    fn param_count_matches_layers() {
        let a = arch(TaskKind::MultiLabel, 2);
        assert_eq!(a.param_count(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(ClassifierState::init(a.clone(), 1).params.len(), a.param_count());
        assert_eq!(a.feature_dim(), 4);
    }

    #[test]
    fn zero_network_gives_zero_logits_and_shapes() {
        let s = ClassifierState::zeros(arch(TaskKind::MultiLabel, 2));
        let x = Matrix::from_vec(4, 3, (0..12).map(|v| v as f64).collect());
        let (f, l) = s.forward(&x).unwrap();
        assert_eq!((f.rows, f.cols, l.rows, l.cols), (4, 4, 4, 2));
        assert!(l.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_pure_and_checks_dims() {
        let s = ClassifierState::init(arch(TaskKind::MultiLabel, 2), 7);
        let x = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.0, 2.0]);
        assert_eq!(s.forward(&x).unwrap(), s.forward(&x).unwrap());
        assert!(s.forward(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn task_loss_reference_values() {
        let ln2 = std::f64::consts::LN_2;
        let z = Matrix::zeros(3, 4);
        let y = Matrix::from_vec(3, 4, vec![1., 0., 1., 0., 0., 0., 1., 1., 1., 1., 1., 0.]);
        assert!((task_loss(&z, &y, TaskKind::MultiLabel).unwrap() - ln2).abs() < 1e-15);

        let z2 = Matrix::zeros(1, 2);
        let y2 = Matrix::from_vec(1, 2, vec![0.0, 1.0]);
        assert!((task_loss(&z2, &y2, TaskKind::MultiClass).unwrap() - ln2).abs() < 1e-15);

        let big: Vec<f64> = y.data.iter().map(|&t| if t > 0.5 { 800.0 } else { -800.0 }).collect();
        let zb = Matrix::from_vec(3, 4, big);
        assert!(task_loss(&zb, &y, TaskKind::MultiLabel).unwrap() < 1e-300);

        let nan = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]);
        assert!(task_loss(&nan, &y2, TaskKind::MultiClass).is_err());
        assert!(task_loss(&z2, &y, TaskKind::MultiLabel).is_err());
    }

    fn gradient_check(kind: TaskKind, c: usize) {
        let s = ClassifierState::init(arch(kind, c), 3);
        let inputs = Matrix::from_vec(3, 3, vec![0.5, -0.4, 1.2, -0.3, 0.8, 0.1, 1.5, 0.2, -0.9]);
        let targets = match kind {
            TaskKind::MultiLabel => Matrix::from_vec(3, c, vec![1., 0., 0., 1., 1., 1.]),
            TaskKind::MultiClass => Matrix::from_vec(3, c, vec![1., 0., 0., 0., 0., 1., 0., 1., 0.]),
        };
        let batch = Batch { task_kind: kind, inputs, targets, identities: vec![0, 1, 2] };
        let (_, grad) = s.loss_and_grad(&batch).unwrap();
        let h = 1e-6;
        for i in 0..s.params.len() {
            let mut p = s.params.clone();
            p[i] += h;
            let lp = s.with_params(p.clone()).unwrap().loss(&batch).unwrap();
            p[i] -= 2.0 * h;
            let lm = s.with_params(p).unwrap().loss(&batch).unwrap();
            let num = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-8);
            assert!(rel < 1e-4 || (grad[i] - num).abs() < 1e-10, "param {i}: {} vs {num}", grad[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        gradient_check(TaskKind::MultiLabel, 2);
        gradient_check(TaskKind::MultiClass, 3);
    }

    fn two_blob_dataset() -> Dataset {
        let schema = DataSchema { feature_dim: 3, num_classes: 2, task_kind: TaskKind::MultiClass };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = Vec::new();
        for i in 0..40u64 {
            let identity = (i % 2) as u32;
            let sign = if identity == 0 { 1.0 } else { -1.0 };
            let features = (0..3).map(|_| sign * 2.0 + rng.random_range(-0.3..0.3)).collect();
            samples.push(Sample { sample_id: i, identity, features, labels: Target::Class(identity as usize) });
        }
        Dataset::new(schema, samples).unwrap()
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let data = two_blob_dataset();
        let a = arch(TaskKind::MultiClass, 2);
        let cfg = TrainConfig { epochs: 40, learning_rate: 0.05, batch_size: 8, ..Default::default() };
        let s = train(&ClassifierState::init(a, 0), &data, &cfg).unwrap();
        let batch = data.to_batch();
        let logits = s.logits(&batch.inputs).unwrap();
        let correct = (0..batch.len())
            .filter(|&r| crate::data::argmax(logits.row(r)) == crate::data::argmax(batch.targets.row(r)))
            .count();
        assert_eq!(correct, batch.len());
    }

    #[test]
    fn zero_epochs_is_identity_and_training_is_deterministic() {
        let data = two_blob_dataset();
        let init = ClassifierState::init(arch(TaskKind::MultiClass, 2), 11);
        let cfg0 = TrainConfig { epochs: 0, ..Default::default() };
        assert_eq!(train(&init, &data, &cfg0).unwrap().params, init.params);
        let cfg = TrainConfig { epochs: 3, seed: 4, ..Default::default() };
        let a = train(&init, &data, &cfg).unwrap();
        let b = train(&init, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, init.params);
    }

    #[test]
    fn divergence_is_reported() {
        let data = two_blob_dataset();
        let init = ClassifierState::init(arch(TaskKind::MultiClass, 2), 1);
        let cfg =
            TrainConfig { epochs: 5, learning_rate: 1e200, warmup_epochs: 0, momentum: 0.0, ..Default::default() };
        assert!(matches!(train(&init, &data, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn default_recipe_lowers_training_loss() {
        let data = crate::data::generate_dataset(&crate::data::GeneratorConfig::default(), 0).unwrap();
        let arch = Architecture::new(16, vec![64, 32], 8, TaskKind::MultiLabel).unwrap();
        for seed in 0..3 {
            let cfg = TrainConfig { epochs: 5, seed, ..Default::default() };
            let out = train_with_history(&ClassifierState::init(arch.clone(), seed), &data, &cfg).unwrap();
            assert!(out.epoch_losses[4] < out.epoch_losses[0], "seed {seed}: {:?}", out.epoch_losses);
        }
    }

    #[test]
    fn lr_schedule_shape() {
        let cfg = TrainConfig { learning_rate: 1.0, ..Default::default() };
        assert!((cfg.lr_at(0, 4, 20) - 0.25).abs() < 1e-15);
        assert!((cfg.lr_at(3, 4, 20) - 1.0).abs() < 1e-15);
        assert!((cfg.lr_at(4, 4, 20) - 1.0).abs() < 1e-15);
        assert!(cfg.lr_at(19, 4, 20) < 0.02);
        let flat = TrainConfig { cosine: false, ..cfg };
        assert_eq!(flat.lr_at(19, 4, 20), 1.0);
    }
}
