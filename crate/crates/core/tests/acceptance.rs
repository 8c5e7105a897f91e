//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lgg::graph::{
    build_lgg, combinatorial_laplacian, cosine_similarity, knn_threshold, rbf_similarity,
    symmetrize, Bandwidth, GraphConfig, Kernel,
};
use lgg::harness::{contrast_test, default_presets, run_zoo, ZooSpec};
use lgg::mixup::sample_beta;
use lgg::refnet::RefNet;
use lgg::rng::SeededRng;
use lgg::scoring::{Method, ScorePreset, VertexPolicy};
use lgg::tensor_io::{one_hot, EmbeddingMatrix, LabelMatrix};
use lgg::variation::{label_variation, normalized_label_variation, variation};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde_json::json;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn sigma_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = SeededRng::new(20_001);
    let mut worst: f64 = 0.0;
    for t in 0..200 {
        let n = 2 + rng.below(49) as usize;
        let c = 1 + rng.below(6) as usize;
        let density = rng.uniform(0.05, 0.9);
        let (w, g) = common::random_symmetric(&mut rng, n, density);
        let y = if t % 2 == 0 {
            common::random_one_hot(&mut rng, n, c)
        } else {
            common::random_simplex(&mut rng, n, c)
        };
        let got = label_variation(&g, &y).unwrap();
        let want = common::dense_trace(&w, &y.view().to_owned());
        worst = worst.max((got - want).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-10 && elapsed < Duration::from_secs(10),
        format!(
            "200 graphs, max |sparse - dense| = {worst:.3e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn two_vertex() -> Verdict {
    let mut rng = SeededRng::new(20_002);
    let y = one_hot(&[0, 1], 2).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let w = rng.uniform(1e-3, 100.0);
        let g = lgg::graph::SparseGraph::new(2, vec![(0, 1, w).into(), (1, 0, w).into()], true)
            .unwrap();
        let s = label_variation(&g, &y).unwrap();
        let sn = normalized_label_variation(&g, &y).unwrap();
        worst = worst.max((s - 2.0 * w).abs()).max((sn - 2.0).abs());
    }
    verdict(worst <= 1e-12, format!("20 weights, max error {worst:.3e}"))
}

fn spectral_radius(a: &Array2<f64>) -> f64 {
    // Power iteration on A^2 (positive semidefinite), whose top eigenvalue is
    // the squared spectral radius of the symmetric A.
    let n = a.nrows();
    let a2 = a.dot(a);
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let next = a2.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&next);
        v = next / norm;
    }
    lambda.max(0.0).sqrt()
}

fn graph_invariants() -> Verdict {
    let mut rng = SeededRng::new(20_003);
    let mut failures = Vec::new();
    let (mut max_rho, mut max_row, mut min_quad) = (0.0f64, 0.0f64, f64::INFINITY);
    for t in 0..60 {
        let n = 2 + rng.below(49) as usize;
        let d = 1 + rng.below(8) as usize;
        let x =
            EmbeddingMatrix::new(Array2::from_shape_simple_fn((n, d), || rng.normal())).unwrap();
        let k = 1 + rng.below(25) as usize;
        let kernel = if t % 2 == 0 {
            Kernel::Cosine
        } else {
            Kernel::Rbf
        };
        let binarize = rng.below(2) == 1;
        let s = match kernel {
            Kernel::Cosine => cosine_similarity(&x).unwrap(),
            Kernel::Rbf => rbf_similarity(&x, Bandwidth::MedianHeuristic).unwrap(),
        };
        let g = knn_threshold(s.view(), k, binarize).unwrap();
        if g.out_edge_counts().iter().any(|&c| c != k.min(n - 1)) {
            failures.push(format!("instance {t}: k-NN row count"));
        }
        let sym = symmetrize(&g);
        if symmetrize(&sym) != sym {
            failures.push(format!("instance {t}: symmetrize not idempotent"));
        }
        let cfg = GraphConfig {
            kernel,
            k,
            binarize,
            symmetrize: true,
            normalize: true,
            rbf_bandwidth: Bandwidth::MedianHeuristic,
        };
        let norm = build_lgg(&x, &cfg).unwrap();
        max_rho = max_rho.max(spectral_radius(&norm.to_dense()));

        let l = combinatorial_laplacian(&sym).unwrap();
        for r in l.row_sums() {
            max_row = max_row.max(r.abs());
        }
        for _ in 0..100 {
            let f = Array1::from_shape_simple_fn(n, || rng.normal());
            min_quad = min_quad.min(l.quadratic_form(f.view()));
        }
    }
    if max_rho > 1.0 + 1e-9 {
        failures.push(format!("spectral radius {max_rho}"));
    }
    if max_row > 1e-12 {
        failures.push(format!("Laplacian row sum {max_row:.3e}"));
    }
    if min_quad < -1e-12 {
        failures.push(format!("quadratic form {min_quad:.3e}"));
    }
    verdict(
        failures.is_empty(),
        format!(
            "60 instances, max spectral radius {max_rho:.12}, max |row sum| {max_row:.1e}, \
             min quadratic form {min_quad:.3e}{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join(", "))
            }
        ),
    )
}

fn homogeneity_permutation() -> Verdict {
    let mut rng = SeededRng::new(20_004);
    let (mut worst_scale, mut worst_perm, mut worst_pipeline) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = 2 + rng.below(39) as usize;
        let c = 2 + rng.below(4) as usize;
        let density = rng.uniform(0.1, 0.8);
        let (_, g) = common::random_symmetric(&mut rng, n, density);
        let y = common::random_simplex(&mut rng, n, c);
        let base = variation(&g, &y).unwrap().sigma;

        let factor = rng.uniform(0.01, 100.0);
        let scaled = variation(&g.scaled(factor).unwrap(), &y).unwrap().sigma;
        if base > 0.0 {
            worst_scale = worst_scale.max((scaled - factor * base).abs() / (factor * base));
        }

        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let mut py = Array2::zeros((n, c));
        for (v, &pv) in perm.iter().enumerate() {
            py.row_mut(pv).assign(&y.row(v));
        }
        let py = LabelMatrix::new(py).unwrap();
        let permuted = variation(&g.permuted(&perm).unwrap(), &py).unwrap().sigma;
        worst_perm = worst_perm.max((permuted - base).abs() / base.max(1e-300));

        // Whole pipeline on permuted embedding rows.
        let d = 3;
        let x = Array2::from_shape_simple_fn((n, d), || rng.normal());
        let mut px = Array2::zeros((n, d));
        for (v, &pv) in perm.iter().enumerate() {
            px.row_mut(pv).assign(&x.row(v));
        }
        let cfg = GraphConfig {
            kernel: Kernel::Rbf,
            k: 1 + rng.below(5) as usize,
            binarize: false,
            symmetrize: true,
            normalize: true,
            rbf_bandwidth: Bandwidth::MedianHeuristic,
        };
        let a = build_lgg(&EmbeddingMatrix::new(x).unwrap(), &cfg).unwrap();
        let b = build_lgg(&EmbeddingMatrix::new(px).unwrap(), &cfg).unwrap();
        let sa = variation(&a, &y).unwrap().sigma;
        let sb = variation(&b, &py).unwrap().sigma;
        worst_pipeline = worst_pipeline.max((sa - sb).abs() / sa.abs().max(1e-300));
    }
    verdict(
        worst_scale <= 1e-12 && worst_perm <= 1e-12 && worst_pipeline <= 1e-12,
        format!(
            "50 instances, scaling rel. error {worst_scale:.2e}, permutation rel. error \
             {worst_perm:.2e}, permuted-embedding pipeline rel. error {worst_pipeline:.2e}"
        ),
    )
}

fn beta_moments() -> Verdict {
    let start = Instant::now();
    let mut rng = SeededRng::new(20_005);
    let n = 100_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| sample_beta(2.0, &mut rng).unwrap())
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    let elapsed = start.elapsed();
    verdict(
        (mean - 0.5).abs() <= 0.01
            && (var - 0.05).abs() <= 0.005
            && elapsed < Duration::from_secs(1),
        format!(
            "mean {mean:.5}, variance {var:.5}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_check() -> Verdict {
    let mut rng = SeededRng::new(20_006);
    let mut net = RefNet::init(&[5, 8, 7, 6, 4], 31).unwrap();
    for layer in net.layers_mut() {
        layer.b.mapv_inplace(|_| rng.uniform(-0.3, 0.3));
    }
    let x = Array2::from_shape_simple_fn((10, 5), || rng.normal());
    let y: Vec<usize> = (0..10).map(|_| rng.below(4) as usize).collect();
    let params: usize = net.layers().iter().map(|l| l.w.len() + l.b.len()).sum();
    let err = common::max_gradient_error(&net, &x, &y, 1e-5);
    verdict(
        err <= 1e-5,
        format!("3 hidden layers, 10 samples, {params} parameters, max relative error {err:.2e}"),
    )
}

fn preset_fidelity() -> Verdict {
    let row = |graphs: usize,
               kernel: &str,
               k: usize,
               bin: bool,
               sym: bool,
               norm: bool,
               alpha: Option<f64>| {
        json!({
            "n_graphs": graphs, "kernel": kernel, "k": k, "binarize": bin,
            "symmetrize": sym, "normalize": norm, "alpha": alpha,
        })
    };
    let expected = [
        (
            "VR",
            ScorePreset::vr(),
            row(11, "cosine", 20, false, true, false, None),
        ),
        (
            "WCV",
            ScorePreset::wcv(),
            row(1, "rbf", 1, false, true, true, None),
        ),
        (
            "VPM",
            ScorePreset::vpm(),
            row(80, "rbf", 1, true, false, true, Some(2.0)),
        ),
        (
            "VPM final",
            ScorePreset::vpm_final(),
            row(1, "rbf", 1, true, false, true, Some(2.0)),
        ),
    ];
    let mut bad = Vec::new();
    for (name, preset, want) in &expected {
        let got = row(
            preset.n_graphs,
            &preset.graph.kernel.to_string(),
            preset.graph.k,
            preset.graph.binarize,
            preset.graph.symmetrize,
            preset.graph.normalize,
            preset.alpha,
        );
        let mixup_ok = preset.use_mixup == preset.alpha.is_some()
            && (preset.vertex_policy == VertexPolicy::Original) != preset.use_mixup;
        if &got != want || !mixup_ok || preset.validate().is_err() {
            bad.push(format!("{name}: {got}"));
        }
    }
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            "VR, WCV, VPM, VPM final rows match field for field".to_string()
        } else {
            bad.join("; ")
        },
    )
}

fn contrast() -> Verdict {
    let start = Instant::now();
    let outcomes: Vec<_> = (0..10u64)
        .into_par_iter()
        .map(|seed| contrast_test(seed).unwrap())
        .collect();
    let elapsed = start.elapsed();
    let wins = outcomes
        .iter()
        .filter(|o| o.memorizer.sigma_mixup > o.generalizer.sigma_mixup)
        .count();
    let close = outcomes
        .iter()
        .filter(|o| (o.memorizer.sigma_original - o.generalizer.sigma_original).abs() < 0.2)
        .count();
    let fitted = outcomes
        .iter()
        .all(|o| o.memorizer.train_acc >= 0.95 && o.generalizer.train_acc >= 0.95);
    let mean = |f: &dyn Fn(&lgg::harness::ContrastOutcome) -> f64| {
        outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64
    };
    verdict(
        wins >= 9 && close >= 7 && fitted && elapsed < Duration::from_secs(300),
        format!(
            "mixup: memorizer > generalizer in {wins}/10 (mean {:.3} vs {:.3}); original \
             vertices: |diff| < 0.2 in {close}/10 (mean {:.3} vs {:.3}); all nets fitted: \
             {fitted}; {:.1}s",
            mean(&|o| o.memorizer.sigma_mixup),
            mean(&|o| o.generalizer.sigma_mixup),
            mean(&|o| o.memorizer.sigma_original),
            mean(&|o| o.generalizer.sigma_original),
            elapsed.as_secs_f64()
        ),
    )
}

fn zoo_correlation() -> Verdict {
    let start = Instant::now();
    let zoo = ZooSpec::default_zoo();
    let mut taus = Vec::new();
    let mut others = Vec::new();
    for seed in 0..3u64 {
        let report = run_zoo(&zoo, &default_presets(), seed).unwrap();
        let t = report.tau(Method::Vpm).unwrap_or(f64::NAN);
        taus.push(t);
        others.push(format!(
            "seed {seed}: vr {:.3} wcv {:.3}",
            report.tau(Method::Vr).unwrap_or(f64::NAN),
            report.tau(Method::Wcv).unwrap_or(f64::NAN)
        ));
    }
    let elapsed = start.elapsed();
    let mean = taus.iter().sum::<f64>() / taus.len() as f64;
    verdict(
        taus.iter().all(|&t| t > 0.0) && mean >= 0.4 && elapsed < Duration::from_secs(1200),
        format!(
            "{} models, tau(vpm, gap) = [{}], mean {mean:.3}; for reference {}; {:.1}s",
            zoo.models.len(),
            taus.iter()
                .map(|t| format!("{t:.3}"))
                .collect::<Vec<_>>()
                .join(", "),
            others.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_refnet_fixture(dir.path(), 17);
    let mut bytes = Vec::new();
    for (i, method) in ["vpm", "vpm", "vr", "vr"].iter().enumerate() {
        let out = dir.path().join(format!("report{i}.json"));
        let o = Command::new(env!("CARGO_BIN_EXE_lgg"))
            .args(["score", "--manifest"])
            .arg(&fx.manifest)
            .args(["--method", method, "--seed", "7", "--model"])
            .arg(&fx.model)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !o.status.success() {
            return verdict(false, String::from_utf8_lossy(&o.stderr).into_owned());
        }
        bytes.push(std::fs::read(&out).unwrap());
    }
    verdict(
        bytes[0] == bytes[1] && bytes[2] == bytes[3],
        format!(
            "score --seed 7 twice: vpm reports identical ({} bytes), vr reports identical ({} bytes)",
            bytes[0].len(),
            bytes[2].len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("sigma oracle equivalence", sigma_oracle),
        ("two-vertex analytic case", two_vertex),
        ("graph invariant suite", graph_invariants),
        ("homogeneity and permutation", homogeneity_permutation),
        ("Beta(2,2) moments", beta_moments),
        ("gradient check", gradient_check),
        ("preset fidelity", preset_fidelity),
        ("contrast experiment", contrast),
        ("zoo correlation", zoo_correlation),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let v = run();
        println!(
            "{} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
