//! JSON manifest tying layer activations, labels and mixup data together.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{read_array_file, read_labels, EmbeddingMatrix, LabelMatrix, Labels};
use crate::error::{Error, Result};
use crate::mixup::MixupPlan;

/// On-disk manifest schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSpec {
    pub layers: Vec<ManifestLayerSpec>,
    pub labels: String,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixup: Option<ManifestMixupSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLayerSpec {
    pub name: String,
    pub file: String,
    pub depth_from_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMixupSpec {
    pub plan: String,
    pub layers: Vec<ManifestLayerSpec>,
    pub soft_labels: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub depth_from_end: usize,
    pub embeddings: EmbeddingMatrix,
}

/// Precomputed mixup rows: embeddings of mixed inputs and their soft labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupSection {
    pub plan: MixupPlan,
    pub layers: Vec<Layer>,
    pub soft_labels: LabelMatrix,
}

/// A validated dataset: every array agrees on the number of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    layers: Vec<Layer>,
    labels: Labels,
    num_classes: usize,
    inputs: Option<EmbeddingMatrix>,
    mixup: Option<MixupSection>,
}

fn check_depths(layers: &[Layer]) -> Result<()> {
    let mut seen: BTreeMap<usize, &str> = BTreeMap::new();
    for layer in layers {
        if layer.depth_from_end == 0 {
            return Err(Error::Manifest(format!(
                "layer {:?} has depth_from_end 0; depths start at 1",
                layer.name
            )));
        }
        if let Some(first) = seen.insert(layer.depth_from_end, &layer.name) {
            return Err(Error::DuplicateDepth {
                depth: layer.depth_from_end,
                first: first.to_string(),
                second: layer.name.clone(),
            });
        }
    }
    Ok(())
}

fn check_rows(layers: &[Layer], expected: usize) -> Result<()> {
    for layer in layers {
        if layer.embeddings.rows() != expected {
            return Err(Error::RowMismatch {
                layer: layer.name.clone(),
                expected,
                found: layer.embeddings.rows(),
            });
        }
    }
    Ok(())
}

impl DatasetManifest {
    pub fn new(layers: Vec<Layer>, labels: Labels, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Manifest("num_classes must be at least 1".into()));
        }
        if layers.is_empty() {
            return Err(Error::Manifest("manifest lists no layers".into()));
        }
        check_depths(&layers)?;
        check_rows(&layers, labels.len())?;
        // Validates class range / soft-label width.
        labels.to_matrix(num_classes)?;
        Ok(DatasetManifest {
            layers,
            labels,
            num_classes,
            inputs: None,
            mixup: None,
        })
    }

    pub fn with_inputs(mut self, inputs: EmbeddingMatrix) -> Result<Self> {
        if inputs.rows() != self.len() {
            return Err(Error::RowMismatch {
                layer: "inputs".into(),
                expected: self.len(),
                found: inputs.rows(),
            });
        }
        self.inputs = Some(inputs);
        Ok(self)
    }

    pub fn with_mixup(mut self, section: MixupSection) -> Result<Self> {
        section.plan.validate(self.len())?;
        check_depths(&section.layers)?;
        let mixed = section.plan.len();
        if section.soft_labels.rows() != mixed {
            return Err(Error::RowMismatch {
                layer: "mixup soft_labels".into(),
                expected: mixed,
                found: section.soft_labels.rows(),
            });
        }
        if section.soft_labels.num_classes() != self.num_classes {
            return Err(Error::Manifest(format!(
                "mixup soft labels have {} classes, manifest declares {}",
                section.soft_labels.num_classes(),
                self.num_classes
            )));
        }
        check_rows(&section.layers, mixed)?;
        self.mixup = Some(section);
        Ok(self)
    }

    /// Reads and validates a manifest; relative paths resolve against the
    /// manifest's directory. All arrays are loaded eagerly.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ManifestSpec = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_spec(&spec, base)
    }

    pub fn from_spec(spec: &ManifestSpec, base: &Path) -> Result<Self> {
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let load_layers = |specs: &[ManifestLayerSpec]| -> Result<Vec<Layer>> {
            specs
                .iter()
                .map(|l| {
                    Ok(Layer {
                        name: l.name.clone(),
                        depth_from_end: l.depth_from_end,
                        embeddings: read_array_file(&resolve(&l.file))?,
                    })
                })
                .collect()
        };

        let layers = load_layers(&spec.layers)?;
        let labels = read_labels(&resolve(&spec.labels), spec.num_classes)?;
        let mut manifest = DatasetManifest::new(layers, labels, spec.num_classes)?;
        if let Some(inputs) = &spec.inputs {
            manifest = manifest.with_inputs(read_array_file(&resolve(inputs))?)?;
        }
        if let Some(mix) = &spec.mixup {
            let plan = MixupPlan::load(&resolve(&mix.plan))?;
            let soft_labels = match read_labels(&resolve(&mix.soft_labels), spec.num_classes)? {
                Labels::Soft(m) => m,
                hard => hard.to_matrix(spec.num_classes)?,
            };
            manifest = manifest.with_mixup(MixupSection {
                plan,
                layers: load_layers(&mix.layers)?,
                soft_labels,
            })?;
        }
        Ok(manifest)
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, depth_from_end: usize) -> Option<&Layer> {
        self.layers
            .iter()
            .find(|l| l.depth_from_end == depth_from_end)
    }

    pub fn depths(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.depth_from_end).collect();
        d.sort_unstable();
        d
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn inputs(&self) -> Option<&EmbeddingMatrix> {
        self.inputs.as_ref()
    }

    pub fn mixup(&self) -> Option<&MixupSection> {
        self.mixup.as_ref()
    }

    pub fn label_matrix(&self) -> LabelMatrix {
        self.labels
            .to_matrix(self.num_classes)
            .expect("labels validated at construction")
    }
}

impl MixupSection {
    pub fn layer(&self, depth_from_end: usize) -> Option<&Layer> {
        self.layers
            .iter()
            .find(|l| l.depth_from_end == depth_from_end)
    }
}

impl Layer {
    pub fn new(name: impl Into<String>, depth_from_end: usize, data: Array2<f64>) -> Result<Self> {
        Ok(Layer {
            name: name.into(),
            depth_from_end,
            embeddings: EmbeddingMatrix::new(data)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{write_labels, write_matrix_f32};
    use tempfile::tempdir;

    fn write_fixture(dir: &Path, rows: &[(&str, usize, usize)], n_labels: usize) -> PathBuf {
        let mut layers = Vec::new();
        for (name, depth, n) in rows {
            let file = format!("{name}.npy");
            let data = Array2::from_shape_fn((*n, 4), |(i, j)| (i * 4 + j) as f64);
            write_matrix_f32(&dir.join(&file), data.view()).unwrap();
            layers.push(ManifestLayerSpec {
                name: name.to_string(),
                file,
                depth_from_end: *depth,
            });
        }
        let classes: Vec<usize> = (0..n_labels).map(|i| i % 10).collect();
        write_labels(&dir.join("labels.npy"), &classes).unwrap();
        let spec = ManifestSpec {
            layers,
            labels: "labels.npy".into(),
            num_classes: 10,
            inputs: None,
            mixup: None,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
        path
    }

    #[test]
    fn valid_manifest_loads() {
        let dir = tempdir().unwrap();
        let path = write_fixture(
            dir.path(),
            &[("fc1", 3, 500), ("fc2", 2, 500), ("fc3", 1, 500)],
            500,
        );
        let m = DatasetManifest::load(&path).unwrap();
        assert_eq!(m.len(), 500);
        assert_eq!(m.depths(), vec![1, 2, 3]);
        assert_eq!(m.layer(2).unwrap().name, "fc2");
    }

    #[test]
    fn row_mismatch_names_layer() {
        let dir = tempdir().unwrap();
        let path = write_fixture(
            dir.path(),
            &[("fc1", 3, 500), ("fc2", 2, 499), ("fc3", 1, 500)],
            500,
        );
        match DatasetManifest::load(&path) {
            Err(Error::RowMismatch {
                layer,
                expected: 500,
                found: 499,
            }) => {
                assert_eq!(layer, "fc2")
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_depth_rejected() {
        let dir = tempdir().unwrap();
        let path = write_fixture(dir.path(), &[("a", 1, 20), ("b", 1, 20)], 20);
        assert!(matches!(
            DatasetManifest::load(&path),
            Err(Error::DuplicateDepth { depth: 1, .. })
        ));
    }

    #[test]
    fn missing_key_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"layers": [], "num_classes": 2}"#).unwrap();
        assert!(matches!(
            DatasetManifest::load(&path),
            Err(Error::Json { .. })
        ));
    }

    #[test]
    fn missing_file_reports_path() {
        let dir = tempdir().unwrap();
        let path = write_fixture(dir.path(), &[("a", 1, 20)], 20);
        fs::remove_file(dir.path().join("a.npy")).unwrap();
        let err = DatasetManifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("a.npy"), "{err}");
    }

    #[test]
    fn mixup_section_validated() {
        let y = Labels::Hard(vec![0, 1, 0, 1]);
        let layer = Layer::new("h", 2, Array2::ones((4, 3))).unwrap();
        let base = DatasetManifest::new(vec![layer], y.clone(), 2).unwrap();
        let plan = MixupPlan::generate(6, 4, 2.0, 1).unwrap();
        let soft = crate::mixup::mix_rows(y.to_matrix(2).unwrap().view(), &plan).unwrap();
        let section = MixupSection {
            plan: plan.clone(),
            layers: vec![Layer::new("h", 2, Array2::ones((6, 3))).unwrap()],
            soft_labels: LabelMatrix::new(soft.clone()).unwrap(),
        };
        assert!(base.clone().with_mixup(section).is_ok());

        let bad = MixupSection {
            plan,
            layers: vec![Layer::new("h", 2, Array2::ones((5, 3))).unwrap()],
            soft_labels: LabelMatrix::new(soft).unwrap(),
        };
        assert!(matches!(
            base.with_mixup(bad),
            Err(Error::RowMismatch {
                found: 5,
                expected: 6,
                ..
            })
        ));
    }
}
