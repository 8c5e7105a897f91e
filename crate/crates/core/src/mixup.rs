//! Mixup plans: seeded pair/coefficient lists applied to inputs and labels.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Draws `lambda ~ Beta(alpha, alpha)`.
pub fn sample_beta(alpha: f64, rng: &mut SeededRng) -> Result<f64> {
    check_alpha(alpha)?;
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("beta({alpha}): {e}")))?;
    Ok(beta.sample(rng.inner()))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "mixup alpha must be > 0, got {alpha}"
        )))
    }
}

/// One interpolated sample: `lambda * row[i] + (1 - lambda) * row[j]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct MixEntry {
    pub i: usize,
    pub j: usize,
    pub lambda: f64,
}

impl From<(usize, usize, f64)> for MixEntry {
    fn from((i, j, lambda): (usize, usize, f64)) -> Self {
        MixEntry { i, j, lambda }
    }
}

impl From<MixEntry> for (usize, usize, f64) {
    fn from(e: MixEntry) -> Self {
        (e.i, e.j, e.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupPlan {
    pub alpha: f64,
    pub seed: u64,
    pub entries: Vec<MixEntry>,
}

impl MixupPlan {
    /// `n_pairs` ordered pairs `i != j` over `n_source` rows, uniformly drawn,
    /// each with its own `lambda ~ Beta(alpha, alpha)`.
    pub fn generate(n_pairs: usize, n_source: usize, alpha: f64, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        Self::generate_with(n_pairs, n_source, alpha, seed, &mut rng)
    }

    pub(crate) fn generate_with(
        n_pairs: usize,
        n_source: usize,
        alpha: f64,
        seed: u64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if n_source < 2 {
            return Err(Error::Config(format!(
                "mixup needs at least 2 source rows, got {n_source}"
            )));
        }
        check_alpha(alpha)?;
        let n = n_source as u64;
        let mut entries = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let i = rng.below(n);
            // Uniform over the n - 1 indices different from i.
            let mut j = rng.below(n - 1);
            if j >= i {
                j += 1;
            }
            let lambda = sample_beta(alpha, rng)?;
            entries.push(MixEntry {
                i: i as usize,
                j: j as usize,
                lambda,
            });
        }
        Ok(MixupPlan {
            alpha,
            seed,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails if any entry is out of range for `rows` source rows or has
    /// `lambda` outside `[0, 1]`.
    pub fn validate(&self, rows: usize) -> Result<()> {
        for e in &self.entries {
            for index in [e.i, e.j] {
                if index >= rows {
                    return Err(Error::PlanIndex { index, rows });
                }
            }
            if !(0.0..=1.0).contains(&e.lambda) {
                return Err(Error::Config(format!(
                    "mixup lambda {} outside [0, 1]",
                    e.lambda
                )));
            }
        }
        Ok(())
    }

    /// Same pairs and coefficients with indices mapped through `map`.
    pub fn remap(&self, map: &[usize]) -> Result<MixupPlan> {
        self.validate(map.len())?;
        Ok(MixupPlan {
            alpha: self.alpha,
            seed: self.seed,
            entries: self
                .entries
                .iter()
                .map(|e| MixEntry {
                    i: map[e.i],
                    j: map[e.j],
                    lambda: e.lambda,
                })
                .collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: MixupPlan = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        check_alpha(plan.alpha)?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Row `t` of the result is `lambda_t * m[i_t] + (1 - lambda_t) * m[j_t]`.
pub fn mix_rows(m: ArrayView2<'_, f64>, plan: &MixupPlan) -> Result<Array2<f64>> {
    plan.validate(m.nrows())?;
    let mut out = Array2::zeros((plan.len(), m.ncols()));
    for (mut row, e) in out.rows_mut().into_iter().zip(&plan.entries) {
        let lam = e.lambda;
        Zip::from(&mut row)
            .and(m.row(e.i))
            .and(m.row(e.j))
            .for_each(|o, &a, &b| *o = lam * a + (1.0 - lam) * b);
    }
    Ok(out)
}
