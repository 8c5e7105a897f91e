//! A small fully-connected classifier with access to hidden activations.
//!
//! Hidden layers use the rectifier, the output layer is a softmax over
//! classes, and training is mini-batch SGD with momentum on the mean
//! cross-entropy. Everything is seeded through [`SeededRng`], so a fixed
//! seed reproduces the same parameters bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Number of hidden layers exposed as taps, counted from the end.
pub const TAP_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`; the layer computes `x W + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefNet {
    dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Array2<f64>,
    /// Post-activation hidden outputs keyed by depth from the end
    /// (1 = last hidden layer). At most [`TAP_COUNT`] entries.
    pub taps: BTreeMap<usize, Array2<f64>>,
}

impl Forward {
    pub fn probabilities(&self) -> Array2<f64> {
        softmax(self.logits.view())
    }

    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(self.logits.view())
    }
}

pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn argmax_rows(m: ArrayView2<'_, f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Parameter gradients, laid out like [`RefNet`] layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl RefNet {
    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "network dims must have at least an input and an output and no zeros, got {dims:?}"
            )));
        }
        let mut rng = SeededRng::new(seed);
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.uniform(-limit, limit));
                Dense {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(RefNet {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} input features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer plus the post-activations feeding each.
    fn forward_cache(&self, x: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.w) + &layer.b;
            let next = if idx + 1 < self.layers.len() {
                z.mapv(|v| v.max(0.0))
            } else {
                z.clone()
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        (inputs, pre)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let (_, mut pre) = self.forward_cache(x);
        Ok(pre.pop().unwrap())
    }

    /// Logits plus the last [`TAP_COUNT`] hidden post-activations.
    pub fn forward_with_taps(&self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        self.check_input(x)?;
        let (mut inputs, mut pre) = self.forward_cache(x);
        let logits = pre.pop().unwrap();
        // inputs[l] is the input of layer l; inputs[1..] are hidden outputs.
        let hidden: Vec<Array2<f64>> = inputs.drain(1..).collect();
        let taps = hidden
            .into_iter()
            .rev()
            .take(TAP_COUNT)
            .enumerate()
            .map(|(i, a)| (i + 1, a))
            .collect();
        Ok(Forward { logits, taps })
    }

    /// Mean cross-entropy of the softmax output against integer labels.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> Result<f64> {
        let logits = self.forward(x)?;
        check_labels(y, logits.nrows(), self.num_classes())?;
        Ok(cross_entropy(logits.view(), y))
    }

    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
    ) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        check_labels(y, x.nrows(), self.num_classes())?;
        let (inputs, pre) = self.forward_cache(x);
        let logits = pre.last().unwrap();
        let loss = cross_entropy(logits.view(), y);

        let batch = x.nrows() as f64;
        let mut delta = softmax(logits.view());
        for (mut row, &label) in delta.rows_mut().into_iter().zip(y) {
            row[label] -= 1.0;
        }
        delta /= batch;

        let mut grads = Vec::with_capacity(self.layers.len());
        for idx in (0..self.layers.len()).rev() {
            let dw = inputs[idx].t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            if idx > 0 {
                let mut back = delta.dot(&self.layers[idx].w.t());
                Zip::from(&mut back).and(&pre[idx - 1]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
            grads.push(Dense { w: dw, b: db });
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> Result<f64> {
        let logits = self.forward(x)?;
        if y.len() != logits.nrows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} samples",
                y.len(),
                logits.nrows()
            )));
        }
        let correct = argmax_rows(logits.view())
            .iter()
            .zip(y)
            .filter(|(p, t)| p == t)
            .count();
        Ok(correct as f64 / y.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string(&ModelFile::from(self)).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        file.try_into()
    }
}

/// Model file layout: `{"dims": [...], "layers": [{"w": [[...]], "b": [...]}]}`
/// with `w` stored as `fan_in` rows of `fan_out` values.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    dims: Vec<usize>,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<&RefNet> for ModelFile {
    fn from(net: &RefNet) -> Self {
        ModelFile {
            dims: net.dims.clone(),
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.w.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: l.b.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for RefNet {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.layers.len() + 1 != file.dims.len() {
            return Err(Error::Config(format!(
                "model has {} dims but {} layers",
                file.dims.len(),
                file.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (idx, (layer, pair)) in file
            .layers
            .into_iter()
            .zip(file.dims.windows(2))
            .enumerate()
        {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if layer.w.len() != fan_in
                || layer.w.iter().any(|r| r.len() != fan_out)
                || layer.b.len() != fan_out
            {
                return Err(Error::Config(format!(
                    "layer {idx} does not match dims {fan_in}x{fan_out}"
                )));
            }
            let w = Array2::from_shape_vec((fan_in, fan_out), layer.w.concat())
                .map_err(|e| Error::Config(e.to_string()))?;
            layers.push(Dense {
                w,
                b: Array1::from(layer.b),
            });
        }
        let net = RefNet {
            dims: file.dims,
            layers,
        };
        if !net.is_finite() {
            return Err(Error::Config("model has non-finite parameters".into()));
        }
        Ok(net)
    }
}

fn check_labels(y: &[usize], rows: usize, classes: usize) -> Result<()> {
    if y.len() != rows {
        return Err(Error::Dimension(format!(
            "{} labels for {rows} samples",
            y.len()
        )));
    }
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, &c)| c >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            value: value as i64,
            num_classes: classes,
        });
    }
    Ok(())
}

fn cross_entropy(logits: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, &label)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[label]
        })
        .sum();
    total / y.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Fraction of training labels permuted among themselves before training.
    #[serde(default)]
    pub shuffle_fraction: f64,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.shuffle_fraction) {
            return Err(Error::Config("shuffle fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Permutes the labels of a random `fraction` of the samples among
/// themselves. With `fraction = 1` the labels become independent of inputs.
pub fn shuffle_labels(y: &[usize], fraction: f64, rng: &mut SeededRng) -> Vec<usize> {
    let count = (fraction * y.len() as f64).round() as usize;
    let all: Vec<usize> = (0..y.len()).collect();
    let chosen = rng.choose_multiple(&all, count);
    let mut values: Vec<usize> = chosen.iter().map(|&i| y[i]).collect();
    rng.shuffle(&mut values);
    let mut out = y.to_vec();
    for (&i, v) in chosen.iter().zip(values) {
        out[i] = v;
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Labels actually trained on (after shuffling).
    pub labels: Vec<usize>,
    /// Training accuracy against `labels` after each epoch.
    pub epoch_accuracy: Vec<f64>,
}

/// Trains in place for `spec.epochs` epochs.
pub fn train(
    net: &mut RefNet,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    spec: &TrainSpec,
) -> Result<TrainOutcome> {
    train_until(net, x, y, spec, None)
}

/// Like [`train`], but stops early once training accuracy reaches `target`.
pub fn train_until(
    net: &mut RefNet,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    spec: &TrainSpec,
    target: Option<f64>,
) -> Result<TrainOutcome> {
    spec.validate()?;
    net.check_input(x)?;
    check_labels(y, x.nrows(), net.num_classes())?;
    let mut rng = SeededRng::new(spec.seed);
    let labels = shuffle_labels(y, spec.shuffle_fraction, &mut rng);

    let mut velocity: Vec<Dense> = net
        .layers
        .iter()
        .map(|l| Dense {
            w: Array2::zeros(l.w.raw_dim()),
            b: Array1::zeros(l.b.raw_dim()),
        })
        .collect();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut epoch_accuracy = Vec::with_capacity(spec.epochs);
    for _ in 0..spec.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(spec.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (_, grads) = net.loss_and_gradients(bx.view(), &by)?;
            for ((layer, v), g) in net.layers.iter_mut().zip(&mut velocity).zip(grads.layers) {
                Zip::from(&mut v.w)
                    .and(&g.w)
                    .for_each(|v, &g| *v = spec.momentum * *v - spec.learning_rate * g);
                Zip::from(&mut v.b)
                    .and(&g.b)
                    .for_each(|v, &g| *v = spec.momentum * *v - spec.learning_rate * g);
                layer.w += &v.w;
                layer.b += &v.b;
            }
        }
        if !net.is_finite() {
            return Err(Error::Config(
                "training diverged (non-finite parameters); lower the learning rate".into(),
            ));
        }
        let acc = net.accuracy(x, &labels)?;
        epoch_accuracy.push(acc);
        if target.is_some_and(|t| acc >= t) {
            break;
        }
    }
    Ok(TrainOutcome {
        labels,
        epoch_accuracy,
    })
}

/// Train accuracy minus test accuracy.
pub fn generalization_gap(
    net: &RefNet,
    train: (ArrayView2<'_, f64>, &[usize]),
    test: (ArrayView2<'_, f64>, &[usize]),
) -> Result<f64> {
    Ok(net.accuracy(train.0, train.1)? - net.accuracy(test.0, test.1)?)
}

/// Class-conditional Gaussian blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Scale of the class centers relative to the unit within-class spread.
    pub separation: f64,
    /// Fraction of labels (train and test) replaced by a uniformly random class.
    #[serde(default)]
    pub label_noise: f64,
}

#[derive(Debug, Clone)]
pub struct BlobData {
    pub train_x: Array2<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim == 0 || self.train_per_class == 0 {
            return Err(Error::Config(
                "blobs need at least 2 classes, 1 dimension and 1 sample per class".into(),
            ));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::Config("separation must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Config("label noise must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<BlobData> {
        self.validate()?;
        let mut rng = SeededRng::new(seed);
        let centers = Array2::from_shape_simple_fn((self.num_classes, self.dim), || {
            self.separation * rng.normal()
        });
        let draw = |per_class: usize, rng: &mut SeededRng| {
            let n = per_class * self.num_classes;
            let mut x = Array2::zeros((n, self.dim));
            let mut y = Vec::with_capacity(n);
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            for (row, &slot) in order.iter().enumerate() {
                let class = slot % self.num_classes;
                for d in 0..self.dim {
                    x[[row, d]] = centers[[class, d]] + rng.normal();
                }
                let label = if rng.next_f64() < self.label_noise {
                    rng.below(self.num_classes as u64) as usize
                } else {
                    class
                };
                y.push(label);
            }
            (x, y)
        };
        let (train_x, train_y) = draw(self.train_per_class, &mut rng);
        let (test_x, test_y) = draw(self.test_per_class, &mut rng);
        Ok(BlobData {
            train_x,
            train_y,
            test_x,
            test_y,
        })
    }
}

impl crate::scoring::Embedder for RefNet {
    fn embed(&self, inputs: ArrayView2<'_, f64>, depths: &[usize]) -> Result<Vec<Array2<f64>>> {
        let mut fwd = self.forward_with_taps(inputs)?;
        depths
            .iter()
            .map(|d| {
                fwd.taps.remove(d).ok_or_else(|| {
                    Error::MissingLayer(format!(
                        "network has {} hidden layers; no tap at depth {d}",
                        self.hidden_layers()
                    ))
                })
            })
            .collect()
    }
}
