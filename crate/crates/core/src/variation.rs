//! Label variation: how much edge weight joins differently-labeled vertices.
//!
//! `sigma = 1/2 * sum_{(i,j) stored} w_ij * |Y_i - Y_j|^2`, which equals
//! `tr(Y^T L Y)` with `L = D - A` whenever both directions of each edge are
//! stored. Directed (unsymmetrized) graphs use the same sum over their
//! stored edges.

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::tensor_io::LabelMatrix;

/// Raw variation `sigma` together with the normalizing weight `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variation {
    pub sigma: f64,
    /// Half the total stored edge weight.
    pub weight: f64,
}

impl Variation {
    /// `sigma / W`, or 0 for a graph with no weight.
    pub fn normalized(&self) -> f64 {
        if self.weight > 0.0 {
            self.sigma / self.weight
        } else {
            0.0
        }
    }
}

fn check_dims(g: &SparseGraph, y: &LabelMatrix) -> Result<()> {
    if g.n() != y.rows() {
        return Err(Error::Dimension(format!(
            "graph has {} vertices but labels have {} rows",
            g.n(),
            y.rows()
        )));
    }
    Ok(())
}

pub fn variation(g: &SparseGraph, y: &LabelMatrix) -> Result<Variation> {
    check_dims(g, y)?;
    let labels = y.view();
    let mut sigma = 0.0;
    let mut weight = 0.0;
    for e in g.edges() {
        let diff: f64 = labels
            .row(e.src)
            .iter()
            .zip(labels.row(e.dst))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sigma += e.weight * diff;
        weight += e.weight;
    }
    Ok(Variation {
        sigma: 0.5 * sigma,
        weight: 0.5 * weight,
    })
}

pub fn label_variation(g: &SparseGraph, y: &LabelMatrix) -> Result<f64> {
    variation(g, y).map(|v| v.sigma)
}

/// `sigma` divided by the total undirected edge weight; lies in `[0, 2]`
/// for row-stochastic labels.
pub fn normalized_label_variation(g: &SparseGraph, y: &LabelMatrix) -> Result<f64> {
    variation(g, y).map(|v| v.normalized())
}
