#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lgg::graph::SparseGraph;
use lgg::refnet::{train, BlobSpec, RefNet, TrainSpec};
use lgg::rng::SeededRng;
use lgg::tensor_io::{write_labels, write_matrix_f64, LabelMatrix};
use ndarray::Array2;
use serde_json::json;

/// Dense symmetric weight matrix with roughly `density` of the off-diagonal
/// pairs connected, plus the sparse graph holding the same edges.
pub fn random_symmetric(rng: &mut SeededRng, n: usize, density: f64) -> (Array2<f64>, SparseGraph) {
    let mut w = Array2::zeros((n, n));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.next_f64() < density {
                let v = rng.uniform(0.01, 5.0);
                w[[i, j]] = v;
                w[[j, i]] = v;
                edges.push((i, j, v).into());
                edges.push((j, i, v).into());
            }
        }
    }
    (w, SparseGraph::new(n, edges, true).unwrap())
}

pub fn random_one_hot(rng: &mut SeededRng, n: usize, c: usize) -> LabelMatrix {
    let mut y = Array2::zeros((n, c));
    for i in 0..n {
        y[[i, rng.below(c as u64) as usize]] = 1.0;
    }
    LabelMatrix::new(y).unwrap()
}

pub fn random_simplex(rng: &mut SeededRng, n: usize, c: usize) -> LabelMatrix {
    let mut y = Array2::from_shape_simple_fn((n, c), || rng.uniform(0.0, 1.0) + 1e-3);
    for mut row in y.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    LabelMatrix::new(y).unwrap()
}

/// `tr(Y^T (D - W) Y)` from a dense weight matrix.
pub fn dense_trace(w: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = w.nrows();
    let mut total = 0.0;
    for c in 0..y.ncols() {
        for i in 0..n {
            let deg: f64 = w.row(i).sum();
            total += deg * y[[i, c]] * y[[i, c]];
            for j in 0..n {
                total -= w[[i, j]] * y[[i, c]] * y[[j, c]];
            }
        }
    }
    total
}

pub struct Fixture {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub model: PathBuf,
    pub net: RefNet,
}

/// Trains a small 3-hidden-layer net on blobs and writes its taps, labels,
/// inputs, model file and manifest into `dir`.
pub fn write_refnet_fixture(dir: &Path, seed: u64) -> Fixture {
    let blobs = BlobSpec {
        num_classes: 3,
        dim: 6,
        train_per_class: 40,
        test_per_class: 10,
        separation: 2.0,
        label_noise: 0.0,
    };
    let data = blobs.generate(seed).unwrap();
    let mut net = RefNet::init(&[6, 16, 16, 16, 3], seed).unwrap();
    let spec = TrainSpec {
        epochs: 10,
        batch_size: 10,
        learning_rate: 0.05,
        momentum: 0.9,
        seed,
        shuffle_fraction: 0.0,
    };
    train(&mut net, data.train_x.view(), &data.train_y, &spec).unwrap();
    let fwd = net.forward_with_taps(data.train_x.view()).unwrap();
    let mut layers = Vec::new();
    for (depth, act) in &fwd.taps {
        let file = format!("hidden{depth}.npy");
        write_matrix_f64(&dir.join(&file), act.view()).unwrap();
        layers
            .push(json!({"name": format!("hidden{depth}"), "file": file, "depth_from_end": depth}));
    }
    write_labels(&dir.join("labels.npy"), &data.train_y).unwrap();
    write_matrix_f64(&dir.join("inputs.npy"), data.train_x.view()).unwrap();
    let model = dir.join("model.json");
    net.save(&model).unwrap();
    let manifest = dir.join("manifest.json");
    let doc = json!({
        "layers": layers,
        "labels": "labels.npy",
        "num_classes": 3,
        "inputs": "inputs.npy",
    });
    std::fs::write(&manifest, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        manifest,
        model,
        net,
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter.
pub fn max_gradient_error(net: &RefNet, x: &Array2<f64>, y: &[usize], eps: f64) -> f64 {
    let (_, grads) = net.loss_and_gradients(x.view(), y).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].w.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.layers()[l].w[[r, c]];
                probe.layers_mut()[l].w[[r, c]] = orig + eps;
                let up = probe.loss(x.view(), y).unwrap();
                probe.layers_mut()[l].w[[r, c]] = orig - eps;
                let down = probe.loss(x.view(), y).unwrap();
                probe.layers_mut()[l].w[[r, c]] = orig;
                worst = worst.max(rel(grads.layers[l].w[[r, c]], (up - down) / (2.0 * eps)));
            }
        }
        for k in 0..net.layers()[l].b.len() {
            let orig = probe.layers()[l].b[k];
            probe.layers_mut()[l].b[k] = orig + eps;
            let up = probe.loss(x.view(), y).unwrap();
            probe.layers_mut()[l].b[k] = orig - eps;
            let down = probe.loss(x.view(), y).unwrap();
            probe.layers_mut()[l].b[k] = orig;
            worst = worst.max(rel(grads.layers[l].b[k], (up - down) / (2.0 * eps)));
        }
    }
    worst
}
