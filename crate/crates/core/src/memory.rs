//! Non-parametric classifier over a lookup table of per-image features.
//!
//! The table keeps one unit-norm row per training image; row j doubles as the
//! weight vector of class j. Class probabilities are a temperature-scaled
//! softmax over `V v / tau`. Rows are refreshed by a momentum moving average
//! followed by renormalization; the table itself carries no gradients.

use crate::encoder::{Embedding, UNIT_TOL};
use crate::error::{Error, Result};
use crate::mat::{dot, l2_norm, Mat};

#[derive(Clone, Debug, PartialEq)]
pub struct LookupTable {
    v: Mat, // N x d, rows unit norm
    tau: f64,
    mu: f64,
}

impl LookupTable {
    /// Builds the table from one embedding per training image.
    pub fn init_from_features(embeddings: &[Embedding], tau: f64, mu: f64) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::InvalidConfig("lookup table needs at least one row".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", tau)));
        }
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::InvalidConfig(format!(
                "memory momentum must be in [0,1], got {}",
                mu
            )));
        }
        let d = embeddings[0].dim();
        let mut v = Mat::zeros(embeddings.len(), d);
        for (i, e) in embeddings.iter().enumerate() {
            if e.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "embedding {} has dim {}, expected {}",
                    i,
                    e.dim(),
                    d
                )));
            }
            let n = l2_norm(e.as_slice());
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::DegenerateFeature(format!(
                    "embedding {} has norm {}, expected unit",
                    i, n
                )));
            }
            v.row_mut(i).copy_from_slice(e.as_slice());
        }
        Ok(LookupTable { v, tau, mu })
    }

    pub fn len(&self) -> usize {
        self.v.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.v.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.v.cols()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn momentum(&self) -> f64 {
        self.mu
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.v.row(i)
    }

    /// Softmax over `V_j . v / tau` with max-logit subtraction.
    pub fn class_probabilities(&self, v: &Embedding) -> Vec<f64> {
        let n = self.len();
        let mut logits = Vec::with_capacity(n);
        for j in 0..n {
            logits.push(dot(self.v.row(j), v.as_slice()) / self.tau);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        probs
    }

    /// `V_i <- normalize(mu * V_i + (1 - mu) * v)`; other rows untouched.
    /// The endpoints skip the blend entirely so they are exact.
    pub fn update_entry(&mut self, i: usize, v: &Embedding) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange(format!(
                "class index {} out of range for table of {}",
                i,
                self.len()
            )));
        }
        if v.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "embedding dim {} vs table dim {}",
                v.dim(),
                self.dim()
            )));
        }
        if self.mu == 1.0 {
            return Ok(());
        }
        if self.mu == 0.0 {
            self.v.row_mut(i).copy_from_slice(v.as_slice());
            return Ok(());
        }
        let mixed: Vec<f64> = self
            .v
            .row(i)
            .iter()
            .zip(v.as_slice())
            .map(|(&old, &new)| self.mu * old + (1.0 - self.mu) * new)
            .collect();
        let renorm = Embedding::normalize(&mixed)?;
        self.v.row_mut(i).copy_from_slice(renorm.as_slice());
        Ok(())
    }

    /// Max deviation of any row norm from 1; used by invariants and tests.
    pub fn max_row_norm_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (l2_norm(self.v.row(i)) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
