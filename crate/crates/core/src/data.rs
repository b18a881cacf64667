//! Core data containers: test statistics, binary covariates and fold splits.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-experiment test statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScores(Vec<f64>);

impl ZScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|z| !z.is_finite()) {
            return Err(Error::input(format!(
                "z-score at row {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(ZScores(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Dense n x m matrix of binary covariates, stored row-major.
///
/// Every entry is 0 or 1 and no column is constant across all rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateMatrix {
    n: usize,
    m: usize,
    entries: Vec<u8>,
}

impl CovariateMatrix {
    pub fn new(n: usize, m: usize, entries: Vec<u8>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::input("covariate matrix must have at least one row and one column"));
        }
        if entries.len() != n * m {
            return Err(Error::input(format!(
                "covariate matrix has {} entries, expected {n} x {m}",
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|&v| v > 1) {
            return Err(Error::input(format!(
                "non-binary covariate at row {}, column {}",
                pos / m,
                pos % m
            )));
        }
        let constant = constant_columns(n, m, &entries);
        if let Some(&j) = constant.first() {
            return Err(Error::input(format!("covariate column {j} is constant across all rows")));
        }
        Ok(CovariateMatrix { n, m, entries })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::input(format!("row {i} has {} columns, expected {m}", rows[i].len())));
        }
        Self::new(n, m, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn column(&self, j: usize) -> Vec<u8> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    /// Gathers the given rows into a float matrix suitable for network input.
    pub fn rows_f64(&self, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.m));
        for (r, &i) in rows.iter().enumerate() {
            for (dst, &v) in out.row_mut(r).iter_mut().zip(self.row(i)) {
                *dst = f64::from(v);
            }
        }
        out
    }

    /// Returns a copy with the given columns removed.
    pub fn without_columns(&self, drop: &[usize]) -> Result<Self> {
        let keep: Vec<usize> = (0..self.m).filter(|j| !drop.contains(j)).collect();
        let mut entries = Vec::with_capacity(self.n * keep.len());
        for i in 0..self.n {
            let row = self.row(i);
            entries.extend(keep.iter().map(|&j| row[j]));
        }
        Self::new(self.n, keep.len(), entries)
    }
}

/// Indices of columns whose value never changes, for a raw row-major buffer.
pub fn constant_columns(n: usize, m: usize, entries: &[u8]) -> Vec<usize> {
    (0..m)
        .filter(|&j| {
            let first = entries[j];
            (1..n).all(|i| entries[i * m + j] == first)
        })
        .collect()
}

/// Assignment of experiments to cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn new(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::config(format!("need at least 2 folds, got {k}")));
        }
        if let Some(&f) = fold_of.iter().find(|&&f| f >= k) {
            return Err(Error::config(format!("fold index {f} out of range for {k} folds")));
        }
        let mut sizes = vec![0usize; k];
        for &f in &fold_of {
            sizes[f] += 1;
        }
        if let Some(f) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::config(format!("fold {f} is empty")));
        }
        Ok(FoldAssignment { fold_of, k })
    }

    /// Uniform random split: a seeded permutation dealt round-robin into k folds.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        if n < k {
            return Err(Error::config(format!("cannot split {n} experiments into {k} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut fold_of = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            fold_of[i] = pos % k;
        }
        Self::new(fold_of, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.fold_of
    }

    /// Experiments held out in fold `f`.
    pub fn members(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == f).collect()
    }

    /// Experiments used to train the model for fold `f`.
    pub fn training_rows(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != f).collect()
    }
}
