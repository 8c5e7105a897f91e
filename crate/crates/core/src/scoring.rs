//! Multi-graph generalization scores (VR, WCV, VPM).
//!
//! Each of the `n_graphs` graphs draws its own class-balanced vertex set
//! (optionally replaced or extended by mixup samples) from an independent
//! random stream, measures the normalized label variation at the layers the
//! method needs, and turns those into a per-graph score. The reported score
//! is the median over graphs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_lgg, median, Bandwidth, GraphConfig, Kernel};
use crate::mixup::{mix_rows, MixupPlan};
use crate::rng::SeededRng;
use crate::tensor_io::{DatasetManifest, EmbeddingMatrix, LabelMatrix};
use crate::variation::variation;

/// Vertex count per graph before the `max(., C)` adjustment.
pub const DEFAULT_TARGET_VERTICES: usize = 500;

/// Produces layer activations for arbitrary inputs, so mixed inputs can be
/// embedded on the fly.
pub trait Embedder: Sync {
    /// One `rows x width` matrix per requested depth, in the order given.
    fn embed(&self, inputs: ArrayView2<'_, f64>, depths: &[usize]) -> Result<Vec<Array2<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vr,
    Wcv,
    Vpm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vr, Method::Wcv, Method::Vpm];

    pub fn required_depths(self) -> &'static [usize] {
        match self {
            Method::Vr | Method::Wcv => &[1, 2, 3],
            Method::Vpm => &[2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Vr => "vr",
            Method::Wcv => "wcv",
            Method::Vpm => "vpm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vr" => Ok(Method::Vr),
            "wcv" => Ok(Method::Wcv),
            "vpm" => Ok(Method::Vpm),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Which rows become graph vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VertexPolicy {
    /// Class-balanced original samples.
    Original,
    /// Mixup samples only.
    MixedOnly,
    /// Half original, half mixup.
    OriginalPlusMixed,
}

impl FromStr for VertexPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(VertexPolicy::Original),
            "mixed" | "mixed-only" => Ok(VertexPolicy::MixedOnly),
            "both" | "original-plus-mixed" => Ok(VertexPolicy::OriginalPlusMixed),
            other => Err(Error::Config(format!("unknown vertex policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePreset {
    pub method: Method,
    pub n_graphs: usize,
    pub graph: GraphConfig,
    pub alpha: Option<f64>,
    pub use_mixup: bool,
    pub vertex_policy: VertexPolicy,
    pub target_vertices: usize,
}

impl ScorePreset {
    pub fn vr() -> Self {
        ScorePreset {
            method: Method::Vr,
            n_graphs: 11,
            graph: GraphConfig {
                kernel: Kernel::Cosine,
                k: 20,
                binarize: false,
                symmetrize: true,
                normalize: false,
                rbf_bandwidth: Bandwidth::MedianHeuristic,
            },
            alpha: None,
            use_mixup: false,
            vertex_policy: VertexPolicy::Original,
            target_vertices: DEFAULT_TARGET_VERTICES,
        }
    }

    pub fn wcv() -> Self {
        ScorePreset {
            method: Method::Wcv,
            n_graphs: 1,
            graph: GraphConfig {
                kernel: Kernel::Rbf,
                k: 1,
                binarize: false,
                symmetrize: true,
                normalize: true,
                rbf_bandwidth: Bandwidth::MedianHeuristic,
            },
            alpha: None,
            use_mixup: false,
            vertex_policy: VertexPolicy::Original,
            target_vertices: DEFAULT_TARGET_VERTICES,
        }
    }

    pub fn vpm() -> Self {
        ScorePreset {
            method: Method::Vpm,
            n_graphs: 80,
            graph: GraphConfig {
                kernel: Kernel::Rbf,
                k: 1,
                binarize: true,
                symmetrize: false,
                normalize: true,
                rbf_bandwidth: Bandwidth::MedianHeuristic,
            },
            alpha: Some(2.0),
            use_mixup: true,
            vertex_policy: VertexPolicy::MixedOnly,
            target_vertices: DEFAULT_TARGET_VERTICES,
        }
    }

    /// The single-graph variant of [`ScorePreset::vpm`].
    pub fn vpm_final() -> Self {
        ScorePreset {
            n_graphs: 1,
            ..Self::vpm()
        }
    }

    pub fn for_method(method: Method) -> Self {
        match method {
            Method::Vr => Self::vr(),
            Method::Wcv => Self::wcv(),
            Method::Vpm => Self::vpm(),
        }
    }

    /// Switches the vertex policy, turning mixup on or off to match.
    pub fn with_vertex_policy(mut self, policy: VertexPolicy) -> Self {
        self.vertex_policy = policy;
        self.use_mixup = policy != VertexPolicy::Original;
        if self.use_mixup && self.alpha.is_none() {
            self.alpha = Some(2.0);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        if self.n_graphs == 0 {
            return Err(Error::Config("at least one graph is required".into()));
        }
        if self.target_vertices < 2 {
            return Err(Error::Config(
                "target vertex count must be at least 2".into(),
            ));
        }
        if self.use_mixup != (self.vertex_policy != VertexPolicy::Original) {
            return Err(Error::Config(
                "use_mixup must be set exactly when the vertex policy includes mixed samples"
                    .into(),
            ));
        }
        if self.use_mixup {
            match self.alpha {
                Some(a) if a.is_finite() && a > 0.0 => {}
                other => {
                    return Err(Error::Config(format!(
                        "mixup presets need alpha > 0, got {other:?}"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassShortfall {
    pub class: usize,
    pub wanted: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexSample {
    pub indices: Vec<usize>,
    pub shortfall: Vec<ClassShortfall>,
}

/// Class-balanced sampling without replacement.
///
/// Each class gets `max(1, target / C)` samples; when `C < target` the
/// remaining `target - quota * C` go one each to the lowest-numbered classes.
/// Classes with too few samples contribute all they have.
pub fn sample_vertices(
    classes: &[usize],
    num_classes: usize,
    target: usize,
    rng: &mut SeededRng,
) -> Result<VertexSample> {
    if num_classes == 0 {
        return Err(Error::Config("num_classes must be at least 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in classes.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::LabelOutOfRange {
                index: i,
                value: c as i64,
                num_classes,
            });
        }
        by_class[c].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(empty));
    }
    let quota = (target / num_classes).max(1);
    let remainder = target.saturating_sub(quota * num_classes);
    let mut indices = Vec::with_capacity(quota * num_classes + remainder);
    let mut shortfall = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        let wanted = quota + usize::from(class < remainder);
        if members.len() < wanted {
            shortfall.push(ClassShortfall {
                class,
                wanted,
                available: members.len(),
            });
        }
        indices.extend(rng.choose_multiple(members, wanted));
    }
    Ok(VertexSample { indices, shortfall })
}

/// Vertex rows of one graph: activations per depth plus matching labels.
#[derive(Debug, Clone)]
pub struct GraphVertices {
    pub layers: BTreeMap<usize, EmbeddingMatrix>,
    pub labels: LabelMatrix,
    pub shortfall: Vec<ClassShortfall>,
}

impl GraphVertices {
    pub fn len(&self) -> usize {
        self.labels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.rows() == 0
    }

    fn concat(self, other: GraphVertices) -> Result<GraphVertices> {
        let mut layers = BTreeMap::new();
        for (depth, a) in self.layers {
            let b = other
                .layers
                .get(&depth)
                .ok_or_else(|| Error::MissingLayer(format!("no mixed rows at depth {depth}")))?;
            let joined = concatenate(Axis(0), &[a.view(), b.view()])
                .map_err(|e| Error::Dimension(e.to_string()))?;
            layers.insert(depth, EmbeddingMatrix::new(joined)?);
        }
        let labels = concatenate(Axis(0), &[self.labels.view(), other.labels.view()])
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let mut shortfall = self.shortfall;
        shortfall.extend(other.shortfall);
        Ok(GraphVertices {
            layers,
            labels: LabelMatrix::new(labels)?,
            shortfall,
        })
    }
}

/// Normalized variation of one layer plus the raw quantities behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSigma {
    pub normalized: f64,
    pub raw: f64,
    pub weight: f64,
}

/// Builds the graph for one layer's vertex rows and measures its variation.
pub fn layer_sigma(
    embeddings: &EmbeddingMatrix,
    labels: &LabelMatrix,
    cfg: &GraphConfig,
) -> Result<LayerSigma> {
    let g = build_lgg(embeddings, cfg)?;
    let v = variation(&g, labels)?;
    Ok(LayerSigma {
        normalized: v.normalized(),
        raw: v.sigma,
        weight: v.weight,
    })
}

pub fn score_vr(s1: f64, s2: f64, s3: f64) -> f64 {
    ((s3 - s2).abs() + (s2 - s1).abs()) / 2.0
}

pub fn score_wcv(s1: f64, s2: f64, s3: f64) -> f64 {
    s1.max(s2).max(s3)
}

pub fn score_vpm(s2: f64) -> f64 {
    s2
}

fn method_score(method: Method, sigma: &BTreeMap<usize, LayerSigma>) -> Result<f64> {
    let get = |d: usize| {
        sigma
            .get(&d)
            .map(|s| s.normalized)
            .ok_or_else(|| Error::MissingLayer(format!("no sigma at depth {d}")))
    };
    Ok(match method {
        Method::Vr => score_vr(get(1)?, get(2)?, get(3)?),
        Method::Wcv => score_wcv(get(1)?, get(2)?, get(3)?),
        Method::Vpm => score_vpm(get(2)?),
    })
}

/// Draws vertex sets for a dataset, embedding mixed inputs on demand.
pub struct VertexSource<'a> {
    manifest: &'a DatasetManifest,
    embedder: Option<&'a dyn Embedder>,
    labels: LabelMatrix,
    classes: Vec<usize>,
}

impl<'a> VertexSource<'a> {
    pub fn new(manifest: &'a DatasetManifest, embedder: Option<&'a dyn Embedder>) -> Self {
        VertexSource {
            manifest,
            embedder,
            labels: manifest.label_matrix(),
            classes: manifest.labels().classes(),
        }
    }

    fn can_embed(&self) -> bool {
        self.embedder.is_some() && self.manifest.inputs().is_some()
    }

    /// Checks up front that `preset` can be served, so failures name the
    /// missing piece instead of a graph index.
    pub fn check(&self, preset: &ScorePreset) -> Result<()> {
        preset.validate()?;
        let need = preset.method.required_depths();
        let present = self.manifest.depths();
        let missing: Vec<usize> = need
            .iter()
            .copied()
            .filter(|d| !present.contains(d))
            .collect();
        if !missing.is_empty() && preset.vertex_policy != VertexPolicy::MixedOnly {
            return Err(Error::MissingLayer(format!(
                "{} needs {} layer taps (depth_from_end {:?}); manifest provides {:?}",
                preset.method.name().to_uppercase(),
                need.len(),
                need,
                present
            )));
        }
        if preset.use_mixup && !self.can_embed() {
            let section = self.manifest.mixup().ok_or_else(|| {
                Error::MissingMixup(
                    "this preset uses mixup but the manifest has no mixup section and no \
                     embedder is available; write a plan with `lgg mixup plan`, run the \
                     exporter with that plan file, and add its mixup section to the manifest"
                        .into(),
                )
            })?;
            let missing: Vec<usize> = need
                .iter()
                .copied()
                .filter(|d| section.layer(*d).is_none())
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingMixup(format!(
                    "mixup section lacks mixed activations at depth_from_end {missing:?}; \
                     re-run the exporter with those layers tapped"
                )));
            }
        }
        Ok(())
    }

    fn original(
        &self,
        depths: &[usize],
        target: usize,
        rng: &mut SeededRng,
    ) -> Result<GraphVertices> {
        let sample = sample_vertices(&self.classes, self.manifest.num_classes(), target, rng)?;
        let mut layers = BTreeMap::new();
        for &d in depths {
            let layer = self
                .manifest
                .layer(d)
                .ok_or_else(|| Error::MissingLayer(format!("no layer at depth {d}")))?;
            layers.insert(d, layer.embeddings.select(&sample.indices));
        }
        Ok(GraphVertices {
            layers,
            labels: self.labels.select(&sample.indices),
            shortfall: sample.shortfall,
        })
    }

    fn mixed(
        &self,
        depths: &[usize],
        target: usize,
        alpha: f64,
        stream_seed: u64,
        rng: &mut SeededRng,
    ) -> Result<GraphVertices> {
        if let (Some(embedder), Some(inputs)) = (self.embedder, self.manifest.inputs()) {
            // Fresh pairs among a class-balanced source pool for every graph.
            let pool = sample_vertices(&self.classes, self.manifest.num_classes(), target, rng)?;
            let local = MixupPlan::generate_with(
                pool.indices.len(),
                pool.indices.len(),
                alpha,
                stream_seed,
                rng,
            )?;
            let plan = local.remap(&pool.indices)?;
            let mixed_inputs = mix_rows(inputs.view(), &plan)?;
            let acts = embedder.embed(mixed_inputs.view(), depths)?;
            let mut layers = BTreeMap::new();
            for (&d, a) in depths.iter().zip(acts) {
                layers.insert(d, EmbeddingMatrix::new(a)?);
            }
            return Ok(GraphVertices {
                layers,
                labels: LabelMatrix::new(mix_rows(self.labels.view(), &plan)?)?,
                shortfall: pool.shortfall,
            });
        }
        let section = self
            .manifest
            .mixup()
            .ok_or_else(|| Error::MissingMixup("no mixup rows available".into()))?;
        // Precomputed rows: a uniform subset of the exported mixed samples.
        let all: Vec<usize> = (0..section.plan.len()).collect();
        let rows = rng.choose_multiple(&all, target);
        let mut layers = BTreeMap::new();
        for &d in depths {
            let layer = section
                .layer(d)
                .ok_or_else(|| Error::MissingMixup(format!("no mixed rows at depth {d}")))?;
            layers.insert(d, layer.embeddings.select(&rows));
        }
        Ok(GraphVertices {
            layers,
            labels: section.soft_labels.select(&rows),
            shortfall: Vec::new(),
        })
    }

    /// Vertex rows of graph `index` under `preset`, drawn from the stream
    /// `seed ^ index`.
    pub fn draw(&self, preset: &ScorePreset, seed: u64, index: u64) -> Result<GraphVertices> {
        let stream_seed = seed ^ index;
        let mut rng = SeededRng::new(stream_seed);
        let depths = preset.method.required_depths();
        let target = preset.target_vertices;
        let alpha = preset.alpha.unwrap_or(2.0);
        match preset.vertex_policy {
            VertexPolicy::Original => self.original(depths, target, &mut rng),
            VertexPolicy::MixedOnly => self.mixed(depths, target, alpha, stream_seed, &mut rng),
            VertexPolicy::OriginalPlusMixed => {
                let half = target / 2;
                let orig = self.original(depths, half, &mut rng)?;
                let mixed = self.mixed(depths, target - half, alpha, stream_seed, &mut rng)?;
                orig.concat(mixed)
            }
        }
    }
}

/// Normalized variation of one layer, computed on the vertex set of graph 0
/// for `seed`.
pub fn sigma_for_layer(
    manifest: &DatasetManifest,
    depth: usize,
    preset: &ScorePreset,
    seed: u64,
    embedder: Option<&dyn Embedder>,
) -> Result<LayerSigma> {
    let source = VertexSource::new(manifest, embedder);
    preset.validate()?;
    let mut probe = *preset;
    probe.method = match depth {
        2 => Method::Vpm,
        _ => Method::Wcv,
    };
    source.check(&probe)?;
    let vertices = source.draw(&probe, seed, 0)?;
    let emb = vertices
        .layers
        .get(&depth)
        .ok_or_else(|| Error::MissingLayer(format!("no layer at depth {depth}")))?;
    layer_sigma(emb, &vertices.labels, &preset.graph)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphScore {
    pub index: usize,
    /// Seed of the random stream that chose this graph's vertices.
    pub stream_seed: u64,
    pub vertices: usize,
    /// Normalized variation per depth from the end.
    pub sigma: BTreeMap<usize, f64>,
    /// Unnormalized variation per depth.
    pub raw_sigma: BTreeMap<usize, f64>,
    /// Normalizing edge weight per depth.
    pub edge_weight: BTreeMap<usize, f64>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shortfall: Vec<ClassShortfall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub method: Method,
    pub seed: u64,
    pub preset: ScorePreset,
    pub graphs: Vec<GraphScore>,
    #[serde(rename = "final")]
    pub final_score: f64,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

fn score_graph(
    source: &VertexSource<'_>,
    preset: &ScorePreset,
    seed: u64,
    index: usize,
) -> Result<GraphScore> {
    let vertices = source.draw(preset, seed, index as u64)?;
    let mut sigma = BTreeMap::new();
    for (&depth, emb) in &vertices.layers {
        sigma.insert(depth, layer_sigma(emb, &vertices.labels, &preset.graph)?);
    }
    let score = method_score(preset.method, &sigma)?;
    Ok(GraphScore {
        index,
        stream_seed: seed ^ index as u64,
        vertices: vertices.len(),
        sigma: sigma.iter().map(|(&d, s)| (d, s.normalized)).collect(),
        raw_sigma: sigma.iter().map(|(&d, s)| (d, s.raw)).collect(),
        edge_weight: sigma.iter().map(|(&d, s)| (d, s.weight)).collect(),
        score,
        shortfall: vertices.shortfall,
    })
}

/// Scores `manifest` with `preset`: one score per graph, median overall.
///
/// Graphs are evaluated in parallel on the current rayon pool; each uses its
/// own stream, so the report does not depend on scheduling.
pub fn run_score(
    manifest: &DatasetManifest,
    preset: &ScorePreset,
    seed: u64,
    embedder: Option<&dyn Embedder>,
) -> Result<ScoreReport> {
    let source = VertexSource::new(manifest, embedder);
    source.check(preset)?;
    let graphs = (0..preset.n_graphs)
        .into_par_iter()
        .map(|index| {
            score_graph(&source, preset, seed, index).map_err(|e| Error::Graph {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = graphs.iter().map(|g| g.score).collect();
    let final_score = median(&scores).expect("at least one graph");
    Ok(ScoreReport {
        method: preset.method,
        seed,
        preset: *preset,
        graphs,
        final_score,
    })
}
