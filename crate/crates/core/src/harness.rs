//! Model zoos, generalization gaps and rank correlation between scores and
//! gaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refnet::{train, BlobData, BlobSpec, RefNet, TrainSpec};
use crate::rng::SeededRng;
use crate::scoring::{run_score, Embedder, Method, ScorePreset, VertexPolicy};
use crate::tensor_io::{DatasetManifest, EmbeddingMatrix, Labels, Layer};

/// Kendall's tau-b between two paired samples, with tie correction.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "kendall_tau: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Dimension(
            "kendall_tau needs at least 2 pairs".into(),
        ));
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(Error::Config(format!(
            "kendall_tau: non-finite value at {i}"
        )));
    }
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_a, mut tied_b) = (0i64, 0i64);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            match (da == 0.0, db == 0.0) {
                (true, true) => {
                    tied_a += 1;
                    tied_b += 1;
                }
                (true, false) => tied_a += 1,
                (false, true) => tied_b += 1,
                (false, false) if (da > 0.0) == (db > 0.0) => concordant += 1,
                (false, false) => discordant += 1,
            }
        }
    }
    let n = a.len() as i64;
    let pairs = n * (n - 1) / 2;
    let denom = (((pairs - tied_a) * (pairs - tied_b)) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Config(
            "kendall_tau undefined: one of the samples is constant".into(),
        ));
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// One zoo member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooModel {
    pub width: usize,
    /// Hidden layer count.
    pub depth: usize,
    pub epochs: usize,
    /// Fraction of training labels shuffled before training.
    pub noise: f64,
}

/// Optimizer settings shared by every zoo member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Optimizer {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooSpec {
    pub data: BlobSpec,
    pub optimizer: Optimizer,
    pub models: Vec<ZooModel>,
    /// Vertex count per graph; defaults to the preset value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_vertices: Option<usize>,
}

const DEFAULT_ZOO: &str = include_str!("../zoo/default.json");

impl ZooSpec {
    /// The bundled 12-model zoo.
    pub fn default_zoo() -> Self {
        serde_json::from_str(DEFAULT_ZOO).expect("bundled zoo parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ZooSpec = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("zoo has no models".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.width == 0 {
                return Err(Error::Config(format!("model {i}: width must be positive")));
            }
            if m.depth < 1 {
                return Err(Error::Config(format!(
                    "model {i}: depth must be at least 1"
                )));
            }
            self.train_spec(m, 0).validate()?;
        }
        if self.target_vertices.is_some_and(|t| t < 2) {
            return Err(Error::Config("target_vertices must be at least 2".into()));
        }
        Ok(())
    }

    fn train_spec(&self, m: &ZooModel, seed: u64) -> TrainSpec {
        TrainSpec {
            epochs: m.epochs,
            batch_size: self.optimizer.batch_size,
            learning_rate: self.optimizer.learning_rate,
            momentum: self.optimizer.momentum,
            seed,
            shuffle_fraction: m.noise,
        }
    }
}

/// One row of the zoo table. Scores are `None` when the method was not run
/// or could not be computed for that model (see `errors`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooRow {
    pub model_id: usize,
    pub width: usize,
    pub depth: usize,
    pub epochs: usize,
    pub noise: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gap: f64,
    pub vr: Option<f64>,
    pub wcv: Option<f64>,
    pub vpm: Option<f64>,
    /// Presets the scores were computed with.
    pub presets: BTreeMap<Method, ScorePreset>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<Method, String>,
}

impl ZooRow {
    pub fn score(&self, method: Method) -> Option<f64> {
        match method {
            Method::Vr => self.vr,
            Method::Wcv => self.wcv,
            Method::Vpm => self.vpm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooReport {
    pub seed: u64,
    pub rows: Vec<ZooRow>,
    /// Kendall tau of each method's score against the gap, over the models
    /// where the score exists.
    pub tau: BTreeMap<Method, Option<f64>>,
}

pub const CSV_HEADER: &str = "model_id,width,depth,epochs,noise,train_acc,test_acc,gap,vr,wcv,vpm";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ZooReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.model_id,
                r.width,
                r.depth,
                r.epochs,
                r.noise,
                r.train_acc,
                r.test_acc,
                r.gap,
                cell(r.vr),
                cell(r.wcv),
                cell(r.vpm)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("zoo report serialization cannot fail")
    }

    pub fn tau(&self, method: Method) -> Option<f64> {
        self.tau.get(&method).copied().flatten()
    }
}

/// Taps of every hidden layer of `net` on `x`, labeled with `y`.
pub fn tap_manifest(net: &RefNet, x: &EmbeddingMatrix, y: &[usize]) -> Result<DatasetManifest> {
    let fwd = net.forward_with_taps(x.view())?;
    let layers = fwd
        .taps
        .into_iter()
        .map(|(d, a)| Layer::new(format!("hidden-{d}"), d, a))
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(layers, Labels::Hard(y.to_vec()), net.num_classes())?
        .with_inputs(x.clone())
}

fn stream_seed(seed: u64, index: u64) -> u64 {
    SeededRng::for_stream(seed, index).next_u64()
}

fn train_model(
    spec: &ZooSpec,
    data: &BlobData,
    model_id: usize,
    seed: u64,
    presets: &[ScorePreset],
) -> Result<ZooRow> {
    let m = &spec.models[model_id];
    let model_seed = stream_seed(seed, model_id as u64);
    let mut dims = vec![spec.data.dim];
    dims.extend(std::iter::repeat_n(m.width, m.depth));
    dims.push(spec.data.num_classes);
    let mut net = RefNet::init(&dims, model_seed)?;
    let outcome = train(
        &mut net,
        data.train_x.view(),
        &data.train_y,
        &spec.train_spec(m, model_seed),
    )?;
    let train_acc = net.accuracy(data.train_x.view(), &outcome.labels)?;
    let test_acc = net.accuracy(data.test_x.view(), &data.test_y)?;

    let x = EmbeddingMatrix::new(data.train_x.clone())?;
    let manifest = tap_manifest(&net, &x, &outcome.labels)?;
    let mut row = ZooRow {
        model_id,
        width: m.width,
        depth: m.depth,
        epochs: m.epochs,
        noise: m.noise,
        train_acc,
        test_acc,
        gap: train_acc - test_acc,
        vr: None,
        wcv: None,
        vpm: None,
        presets: BTreeMap::new(),
        errors: BTreeMap::new(),
    };
    for preset in presets {
        let mut preset = *preset;
        if let Some(t) = spec.target_vertices {
            preset.target_vertices = t;
        }
        row.presets.insert(preset.method, preset);
        match run_score(&manifest, &preset, seed, Some(&net as &dyn Embedder)) {
            Ok(report) => {
                let v = Some(report.final_score);
                match preset.method {
                    Method::Vr => row.vr = v,
                    Method::Wcv => row.wcv = v,
                    Method::Vpm => row.vpm = v,
                }
            }
            Err(e) => {
                row.errors.insert(preset.method, e.to_string());
            }
        }
    }
    Ok(row)
}

/// Trains and scores every zoo model. Models run in parallel; each derives
/// its own seed from `(seed, model index)` so results do not depend on
/// scheduling.
pub fn run_zoo(spec: &ZooSpec, presets: &[ScorePreset], seed: u64) -> Result<ZooReport> {
    spec.validate()?;
    for p in presets {
        p.validate()?;
    }
    let data = spec.data.generate(seed)?;
    let rows = (0..spec.models.len())
        .into_par_iter()
        .map(|i| train_model(spec, &data, i, seed, presets))
        .collect::<Result<Vec<_>>>()?;
    let mut tau = BTreeMap::new();
    for p in presets {
        let (scores, gaps): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|r| r.score(p.method).map(|s| (s, r.gap)))
            .unzip();
        tau.insert(p.method, kendall_tau(&scores, &gaps).ok());
    }
    Ok(ZooReport { seed, rows, tau })
}

/// Presets used by the zoo experiment.
pub fn default_presets() -> Vec<ScorePreset> {
    Method::ALL
        .iter()
        .map(|&m| ScorePreset::for_method(m))
        .collect()
}

/// Setup of the generalizer/memorizer contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub data: BlobSpec,
    pub hidden: Vec<usize>,
    pub optimizer: Optimizer,
    /// Both nets train for this many epochs, well past fitting their labels.
    pub epochs: usize,
    /// Training accuracy both nets must reach for the contrast to be valid.
    pub min_train_accuracy: f64,
}

impl Default for ContrastSpec {
    fn default() -> Self {
        ContrastSpec {
            data: BlobSpec {
                num_classes: 4,
                dim: 16,
                train_per_class: 50,
                test_per_class: 50,
                separation: 2.0,
                label_noise: 0.0,
            },
            hidden: vec![128; 4],
            optimizer: Optimizer {
                batch_size: 20,
                learning_rate: 0.02,
                momentum: 0.9,
            },
            epochs: 300,
            min_train_accuracy: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastNet {
    pub train_acc: f64,
    pub test_acc: f64,
    pub epochs: usize,
    /// VPM score on mixup vertices.
    pub sigma_mixup: f64,
    /// The same score on original training vertices.
    pub sigma_original: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastOutcome {
    pub seed: u64,
    pub generalizer: ContrastNet,
    pub memorizer: ContrastNet,
}

fn contrast_net(
    spec: &ContrastSpec,
    data: &BlobData,
    shuffle_fraction: f64,
    seed: u64,
) -> Result<ContrastNet> {
    let mut dims = vec![spec.data.dim];
    dims.extend(&spec.hidden);
    dims.push(spec.data.num_classes);
    let mut net = RefNet::init(&dims, seed)?;
    let train_spec = TrainSpec {
        epochs: spec.epochs,
        batch_size: spec.optimizer.batch_size,
        learning_rate: spec.optimizer.learning_rate,
        momentum: spec.optimizer.momentum,
        seed,
        shuffle_fraction,
    };
    let outcome = train(&mut net, data.train_x.view(), &data.train_y, &train_spec)?;
    let train_acc = net.accuracy(data.train_x.view(), &outcome.labels)?;
    if train_acc < spec.min_train_accuracy {
        return Err(Error::Config(format!(
            "contrast net (label shuffle {shuffle_fraction}) reached train accuracy {train_acc}, \
             below the required {}; train longer",
            spec.min_train_accuracy
        )));
    }
    let test_acc = net.accuracy(data.test_x.view(), &data.test_y)?;
    let x = EmbeddingMatrix::new(data.train_x.clone())?;
    let manifest = tap_manifest(&net, &x, &outcome.labels)?;
    let mut preset = ScorePreset::vpm();
    preset.target_vertices = manifest.len();
    let embedder = Some(&net as &dyn Embedder);
    let mixed = run_score(&manifest, &preset, seed, embedder)?.final_score;
    let original = run_score(
        &manifest,
        &preset.with_vertex_policy(VertexPolicy::Original),
        seed,
        embedder,
    )?
    .final_score;
    Ok(ContrastNet {
        train_acc,
        test_acc,
        epochs: outcome.epoch_accuracy.len(),
        sigma_mixup: mixed,
        sigma_original: original,
    })
}

/// Trains a net on clean labels and one on fully shuffled labels until both
/// fit their training labels, then scores both with and without mixup.
pub fn contrast_test_with(spec: &ContrastSpec, seed: u64) -> Result<ContrastOutcome> {
    let data = spec.data.generate(seed)?;
    let (g, m) = rayon::join(
        || contrast_net(spec, &data, 0.0, stream_seed(seed, 0)),
        || contrast_net(spec, &data, 1.0, stream_seed(seed, 1)),
    );
    Ok(ContrastOutcome {
        seed,
        generalizer: g?,
        memorizer: m?,
    })
}

pub fn contrast_test(seed: u64) -> Result<ContrastOutcome> {
    contrast_test_with(&ContrastSpec::default(), seed)
}
