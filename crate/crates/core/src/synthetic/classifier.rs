//! Small rectifier MLP trained with plain minibatch gradient descent.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datastore::LabelSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// out x in
    weights: Matrix,
    bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, input: &Matrix) -> Matrix {
        let out = self.weights.rows();
        let mut z = Matrix::zeros(input.rows(), out);
        for i in 0..input.rows() {
            let x = input.row(i);
            let zi = z.row_mut(i);
            for (o, zo) in zi.iter_mut().enumerate() {
                *zo = self.bias[o] + crate::matrix::dot(self.weights.row(o), x);
            }
        }
        z
    }
}

/// Activations of one forward pass. `outputs[k]` is the representation after
/// layer `k + 1` (rectified for hidden layers, raw logits for the last).
#[derive(Debug, Clone)]
pub struct Forward {
    pub pre_activations: Vec<Matrix>,
    pub outputs: Vec<Matrix>,
}

impl Forward {
    pub fn logits(&self) -> &Matrix {
        self.outputs.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyClassifier {
    layers: Vec<Dense>,
    steps: usize,
}

/// Gradient with the same layout as the classifier's parameters.
#[derive(Debug, Clone)]
pub struct Gradient {
    layers: Vec<Dense>,
}

impl Gradient {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).copied())
            .collect()
    }
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, computed with log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

impl TinyClassifier {
    /// He-normal weights, zero biases; `sizes = [d, h1, ..., classes]`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let mut rng = stream(seed, Purpose::Init, 0);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); std * z })
                    .collect();
                Dense {
                    weights: Matrix::from_vec(fan_out, fan_in, data).unwrap(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layers, steps: 0 })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weights: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { layers, steps: 0 })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() < 2 {
            return Err(Error::InvalidArgument("need at least two output classes".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.cols()];
        sizes.extend(self.layers.iter().map(|l| l.weights.rows()));
        sizes
    }

    /// Number of weight layers; representations are indexed `1..=K`.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        Gradient {
            layers: self.layers.clone(),
        }
        .flat()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let w = l.weights.as_slice().len();
            if index < w {
                return &mut l.weights.as_mut_slice()[index];
            }
            index -= w;
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Layer (0-based) that owns flat parameter `index`.
    fn param_layer(&self, mut index: usize) -> usize {
        for (k, l) in self.layers.iter().enumerate() {
            let size = l.weights.as_slice().len() + l.bias.len();
            if index < size {
                return k;
            }
            index -= size;
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &Matrix) -> Forward {
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(outputs.last().unwrap_or(input));
            let a = if k < last {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                a
            } else {
                z.clone()
            };
            pre_activations.push(z);
            outputs.push(a);
        }
        Forward {
            pre_activations,
            outputs,
        }
    }

    pub fn logits(&self, input: &Matrix) -> Matrix {
        let mut f = self.forward(input);
        f.outputs.pop().unwrap()
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, input: &Matrix, labels: &[u32]) -> f64 {
        let logits = self.logits(input);
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| cross_entropy(logits.row(i), y as usize))
            .sum::<f64>()
            / labels.len() as f64
    }

    /// Mean cross-entropy and its gradient by backpropagation. The rectifier
    /// derivative at exactly 0 is taken as 0.
    pub fn loss_and_gradient(&self, input: &Matrix, labels: &[u32]) -> (f64, Gradient) {
        let fwd = self.forward(input);
        let batch = input.rows() as f64;
        let logits = fwd.logits();
        let mut loss = 0.0;
        let mut delta = Matrix::zeros(logits.rows(), logits.cols());
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            loss += cross_entropy(row, y as usize);
            let p = softmax_row(row);
            let d = delta.row_mut(i);
            for (c, (dc, pc)) in d.iter_mut().zip(p).enumerate() {
                *dc = (pc - if c == y as usize { 1.0 } else { 0.0 }) / batch;
            }
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input_k = if k == 0 { input } else { &fwd.outputs[k - 1] };
            let mut gw = Matrix::zeros(layer.weights.rows(), layer.weights.cols());
            let mut gb = vec![0.0; layer.bias.len()];
            for i in 0..delta.rows() {
                let di = delta.row(i);
                let xi = input_k.row(i);
                for (o, &d) in di.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &x) in gw.row_mut(o).iter_mut().zip(xi) {
                        *g += d * x;
                    }
                }
            }
            if k > 0 {
                let pre = &fwd.pre_activations[k - 1];
                let mut next = Matrix::zeros(delta.rows(), layer.weights.cols());
                for i in 0..delta.rows() {
                    let di = delta.row(i);
                    let ni = next.row_mut(i);
                    for (o, &d) in di.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        for (n, &w) in ni.iter_mut().zip(layer.weights.row(o)) {
                            *n += d * w;
                        }
                    }
                    for (n, &z) in ni.iter_mut().zip(pre.row(i)) {
                        if z <= 0.0 {
                            *n = 0.0;
                        }
                    }
                }
                delta = next;
            }
            grads.push(Dense { weights: gw, bias: gb });
        }
        grads.reverse();
        (loss / batch, Gradient { layers: grads })
    }

    pub fn sgd_step(&mut self, gradient: &Gradient, learning_rate: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&gradient.layers) {
            for (w, gw) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                *w -= learning_rate * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * gb;
            }
        }
        self.steps += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation crossed a rectifier kink.
    pub skipped: usize,
}

/// Central-difference step on float64 parameters.
pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Compares backpropagation with central finite differences on up to
/// `max_params` parameters (all of them when the network is smaller).
/// Parameters whose perturbation flips any rectifier unit are excluded.
pub fn gradient_check(
    model: &TinyClassifier,
    input: &Matrix,
    labels: &[u32],
    max_params: usize,
    seed: u64,
) -> Result<GradientCheck> {
    if input.rows() == 0 || input.rows() != labels.len() {
        return Err(Error::InvalidArgument("gradient check needs a non-empty aligned batch".into()));
    }
    let (_, grad) = model.loss_and_gradient(input, labels);
    let analytic = grad.flat();
    let total = model.param_count();
    let mut indices: Vec<usize> = (0..total).collect();
    if total > max_params {
        let mut rng = stream(seed, Purpose::Init, 1);
        indices.shuffle(&mut rng);
        indices.truncate(max_params);
        indices.sort_unstable();
    }
    let base_masks = relu_masks(&model.forward(input));
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for idx in indices {
        let original = *probe.param_mut(idx);
        *probe.param_mut(idx) = original + FD_STEP;
        let plus_fwd = probe.forward(input);
        let plus = probe.loss(input, labels);
        *probe.param_mut(idx) = original - FD_STEP;
        let minus_fwd = probe.forward(input);
        let minus = probe.loss(input, labels);
        *probe.param_mut(idx) = original;
        // Only layers after the perturbed one can change their masks.
        let layer = model.param_layer(idx);
        let crosses_kink = relu_masks(&plus_fwd)[layer..] != base_masks[layer..]
            || relu_masks(&minus_fwd)[layer..] != base_masks[layer..];
        if crosses_kink {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        checked,
        skipped,
    })
}

fn relu_masks(fwd: &Forward) -> Vec<Vec<bool>> {
    let hidden = fwd.pre_activations.len() - 1;
    fwd.pre_activations[..hidden]
        .iter()
        .map(|z| z.as_slice().iter().map(|&v| v > 0.0).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub checkpoint_stride: f64,
    pub seed: u64,
    /// Keep per-layer representations of the full universe at every checkpoint.
    pub record_representations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            checkpoint_stride: 0.2,
            seed: 0,
            record_representations: false,
        }
    }
}

impl TrainConfig {
    pub fn checkpoint_count(&self) -> Result<usize> {
        if !(self.checkpoint_stride > 0.0) {
            return Err(Error::InvalidArgument("checkpoint stride must be positive".into()));
        }
        let ratio = self.epochs as f64 / self.checkpoint_stride;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "checkpoint stride {} does not divide {} epochs",
                self.checkpoint_stride, self.epochs
            )));
        }
        Ok(ratio.round() as usize + 1)
    }

    pub fn checkpoint_epochs(&self) -> Result<Vec<f64>> {
        let count = self.checkpoint_count()?;
        Ok((0..count).map(|k| checkpoint_epoch(k, self.checkpoint_stride)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.checkpoint_count()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument("learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Epoch of checkpoint `k`, rounded to suppress `k * 0.2` float noise.
pub fn checkpoint_epoch(k: usize, stride: f64) -> f64 {
    ((k as f64 * stride) * 1e9).round() / 1e9
}

pub fn checkpoint_tag(epoch: f64) -> String {
    format!("epoch{epoch:.1}")
}

/// Artifacts recorded at one checkpoint.
#[derive(Debug, Clone)]
pub struct CheckpointRecord {
    pub index: usize,
    pub epoch: f64,
    pub step: usize,
    /// Per-sample loss of each training member, aligned with `TrainRun::members`.
    pub train_losses: Vec<f64>,
    /// Logits over the whole sample universe.
    pub logits: Matrix,
    /// Representations after layers `1..=K` over the whole universe.
    pub representations: Option<Vec<Matrix>>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub layer_sizes: Vec<usize>,
    pub members: Vec<usize>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub model: TinyClassifier,
}

impl TrainRun {
    pub fn membership_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.members {
            mask[i] = true;
        }
        mask
    }
}

fn record(
    model: &TinyClassifier,
    data: &Matrix,
    labels: &[u32],
    members: &[usize],
    index: usize,
    epoch: f64,
    keep_reps: bool,
) -> CheckpointRecord {
    let mut fwd = model.forward(data);
    let logits = fwd.outputs.last().unwrap().clone();
    let train_losses = members
        .iter()
        .map(|&i| cross_entropy(logits.row(i), labels[i] as usize))
        .collect();
    CheckpointRecord {
        index,
        epoch,
        step: model.steps(),
        train_losses,
        logits,
        representations: keep_reps.then(|| std::mem::take(&mut fwd.outputs)),
    }
}

/// Trains on the `members` rows of `data` and records artifacts every
/// `checkpoint_stride` epochs, from epoch 0 (before any update) to the end.
pub fn train_classifier(
    data: &Matrix,
    labels: &LabelSet,
    members: &[usize],
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    if members.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if data.rows() != labels.len() {
        return Err(Error::CountMismatch {
            left: data.rows(),
            right: labels.len(),
        });
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= data.rows()) {
        return Err(Error::InvalidArgument(format!("member index {bad} out of range")));
    }
    let mut sizes = vec![data.cols()];
    sizes.extend(&config.hidden);
    sizes.push(labels.class_count().max(2));
    let mut model = TinyClassifier::new(&sizes, config.seed)?;
    let y = labels.labels();

    let steps_per_epoch = members.len().div_ceil(config.batch_size);
    let count = config.checkpoint_count()?;
    let schedule: Vec<usize> = (0..count)
        .map(|k| (k as f64 * config.checkpoint_stride * steps_per_epoch as f64).round() as usize)
        .collect();
    let mut checkpoints = Vec::with_capacity(count);
    let mut next = 0;
    let record_due = |model: &TinyClassifier, next: &mut usize, checkpoints: &mut Vec<CheckpointRecord>| {
        while *next < count && schedule[*next] <= model.steps() {
            checkpoints.push(record(
                model,
                data,
                y,
                members,
                *next,
                checkpoint_epoch(*next, config.checkpoint_stride),
                config.record_representations,
            ));
            *next += 1;
        }
    };
    record_due(&model, &mut next, &mut checkpoints);

    let mut order = members.to_vec();
    for epoch in 0..config.epochs {
        let mut rng = stream(config.seed, Purpose::Shuffle, epoch as u64);
        order.copy_from_slice(members);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x = data.select_rows(batch);
            let yb: Vec<u32> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&x, &yb);
            if !loss.is_finite() {
                return Err(Error::Divergence { step: model.steps() });
            }
            model.sgd_step(&grad, config.learning_rate);
            if !model.is_finite() {
                return Err(Error::Divergence { step: model.steps() });
            }
            record_due(&model, &mut next, &mut checkpoints);
        }
    }
    record_due(&model, &mut next, &mut checkpoints);
    debug_assert_eq!(checkpoints.len(), count);
    Ok(TrainRun {
        config: config.clone(),
        layer_sizes: sizes,
        members: members.to_vec(),
        checkpoints,
        model,
    })
}

/// Random batch used by gradient-check tests and the acceptance suite.
pub fn random_batch(d: usize, classes: usize, batch: usize, seed: u64) -> (Matrix, Vec<u32>) {
    let mut rng = stream(seed, Purpose::Init, 99);
    let data = (0..d * batch).map(|_| StandardNormal.sample(&mut rng)).collect();
    let labels = (0..batch).map(|_| rng.random_range(0..classes as u32)).collect();
    (Matrix::from_vec(batch, d, data).unwrap(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_gradient_matches() {
        let model = TinyClassifier::zeros(&[4, 6, 3]).unwrap();
        let (x, y) = random_batch(4, 3, 8, 1);
        let logits = model.logits(&x);
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
        let check = gradient_check(&model, &x, &y, 10_000, 0).unwrap();
        assert!(check.max_relative_error < 1e-6, "{check:?}");
        // First-layer weights sit on the kink and are excluded.
        assert!(check.skipped >= 24);
        assert!(check.checked > 0);
    }

    #[test]
    fn random_network_gradient_matches() {
        let model = TinyClassifier::new(&[5, 16, 8, 3], 2).unwrap();
        let (x, y) = random_batch(5, 3, 8, 2);
        let check = gradient_check(&model, &x, &y, 10_000, 0).unwrap();
        assert!(check.max_relative_error < 1e-4, "{check:?}");
        assert!(check.checked > check.skipped);
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[0.0; 4], 2) - 4f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[30.0, 0.0, 0.0], 0) < 1e-12);
    }

    fn blobs(n: usize, seed: u64) -> (Matrix, LabelSet) {
        let cfg = crate::synthetic::MixtureConfig::symmetric(2, 2.0, 0.0, n, seed);
        let s = crate::synthetic::sample_mixture(&cfg).unwrap();
        (s.data.clone(), s.label_set().unwrap())
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (x, labels) = blobs(64, 3);
        let members: Vec<usize> = (0..64).collect();
        let cfg = TrainConfig {
            hidden: vec![8],
            epochs: 2,
            learning_rate: 0.0,
            seed: 5,
            ..Default::default()
        };
        let run = train_classifier(&x, &labels, &members, &cfg).unwrap();
        let init = TinyClassifier::new(&run.layer_sizes, 5).unwrap();
        assert_eq!(run.model.params(), init.params());
        assert_eq!(run.checkpoints.len(), 11);
        for c in &run.checkpoints {
            assert_eq!(c.logits, run.checkpoints[0].logits);
        }
    }

    #[test]
    fn single_sample_is_memorized() {
        let x = Matrix::from_rows(&[[0.3, -1.2, 0.5]]).unwrap();
        let labels = LabelSet::new(vec![1], Some(2), None).unwrap();
        let cfg = TrainConfig {
            hidden: vec![16],
            epochs: 100,
            learning_rate: 0.5,
            checkpoint_stride: 1.0,
            ..Default::default()
        };
        let run = train_classifier(&x, &labels, &[0], &cfg).unwrap();
        let last = run.checkpoints.last().unwrap();
        assert!(last.train_losses[0] < 1e-3, "{}", last.train_losses[0]);
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let (x, labels) = blobs(400, 7);
        let members: Vec<usize> = (0..400).collect();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 1,
            ..Default::default()
        };
        let run = train_classifier(&x, &labels, &members, &cfg).unwrap();
        let logits = &run.checkpoints.last().unwrap().logits;
        let correct = (0..400)
            .filter(|&i| {
                let r = logits.row(i);
                let pred = if r[1] > r[0] { 1 } else { 0 };
                pred == labels.labels()[i]
            })
            .count();
        assert!(correct as f64 / 400.0 > 0.95, "{correct}");
    }

    #[test]
    fn checkpoints_follow_stride() {
        let (x, labels) = blobs(100, 2);
        let members: Vec<usize> = (0..50).collect();
        let cfg = TrainConfig {
            hidden: vec![4],
            epochs: 1,
            record_representations: true,
            ..Default::default()
        };
        let run = train_classifier(&x, &labels, &members, &cfg).unwrap();
        let epochs: Vec<f64> = run.checkpoints.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        let reps = run.checkpoints[1].representations.as_ref().unwrap();
        assert_eq!(reps.len(), 2);
        assert_eq!(reps[0].rows(), 100);
        assert_eq!(reps[0].cols(), 4);
        assert_eq!(run.checkpoints[1].train_losses.len(), 50);
        assert_eq!(checkpoint_tag(0.4), "epoch0.4");
    }

    #[test]
    fn stride_must_divide_epochs() {
        let cfg = TrainConfig {
            epochs: 1,
            checkpoint_stride: 0.3,
            ..Default::default()
        };
        assert!(cfg.checkpoint_count().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (x, labels) = blobs(64, 3);
        let members: Vec<usize> = (0..64).collect();
        let cfg = TrainConfig {
            hidden: vec![8],
            epochs: 5,
            learning_rate: 1e200,
            ..Default::default()
        };
        let err = train_classifier(&x, &labels, &members, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
