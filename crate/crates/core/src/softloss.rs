//! Softened target distributions and the softened cross-entropy.
//!
//! A target puts weight `lambda` on the anchor class and `(1-lambda)/k` on
//! each of the k reliable classes. With an empty reliable set the target
//! degenerates to the one-hot baseline label, so `lambda` is forced to 1
//! instead of dividing by zero.

use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::mat::axpy;
use crate::memory::LookupTable;

#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution {
    anchor_class: usize,
    reliable_classes: Vec<usize>,
    lambda: f64,
}

impl TargetDistribution {
    pub fn anchor(&self) -> usize {
        self.anchor_class
    }

    pub fn reliable(&self) -> &[usize] {
        &self.reliable_classes
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Weight on one reliable class.
    pub fn reliable_weight(&self) -> f64 {
        if self.reliable_classes.is_empty() {
            0.0
        } else {
            (1.0 - self.lambda) / self.reliable_classes.len() as f64
        }
    }

    /// Expands to a dense N-vector.
    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut t = vec![0.0; n];
        t[self.anchor_class] = self.lambda;
        let w = self.reliable_weight();
        for &j in &self.reliable_classes {
            t[j] = w;
        }
        t
    }
}

/// Builds the target for one training image.
pub fn build_target(
    anchor_class: usize,
    reliable_classes: &[usize],
    lambda: f64,
    n: usize,
) -> Result<TargetDistribution> {
    if anchor_class >= n {
        return Err(Error::IndexOutOfRange(format!(
            "anchor class {} out of range for {} classes",
            anchor_class, n
        )));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be in (0,1], got {}",
            lambda
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &j in reliable_classes {
        if j >= n {
            return Err(Error::IndexOutOfRange(format!(
                "reliable class {} out of range for {} classes",
                j, n
            )));
        }
        if j == anchor_class {
            return Err(Error::InvalidConfig(
                "anchor class cannot be its own reliable class".into(),
            ));
        }
        if !seen.insert(j) {
            return Err(Error::InvalidConfig(format!(
                "duplicate reliable class {}",
                j
            )));
        }
    }
    // Empty reliable set is baseline mode: the anchor takes all the mass.
    let lambda = if reliable_classes.is_empty() { 1.0 } else { lambda };
    Ok(TargetDistribution {
        anchor_class,
        reliable_classes: reliable_classes.to_vec(),
        lambda,
    })
}

/// Softened cross-entropy
/// `L = -lambda log p(anchor) - (1-lambda)/k * sum_j log p(reliable_j)`.
pub fn soft_cross_entropy(probs: &[f64], target: &TargetDistribution) -> Result<f64> {
    let grab = |j: usize| -> Result<f64> {
        let p = probs[j];
        if p <= 0.0 {
            return Err(Error::NonFinite(format!(
                "target class {} has zero probability",
                j
            )));
        }
        Ok(p)
    };
    let mut loss = -target.lambda * grab(target.anchor_class)?.ln();
    let w = target.reliable_weight();
    if w > 0.0 {
        for &j in &target.reliable_classes {
            loss -= w * grab(j)?.ln();
        }
    }
    Ok(loss)
}

/// Gradient of the softened loss with respect to the embedding v, before the
/// normalization Jacobian: `(1/tau) * sum_j (p_j - t_j) V_j`.
pub fn loss_grad_embedding(
    table: &LookupTable,
    v: &Embedding,
    target: &TargetDistribution,
) -> Vec<f64> {
    let probs = table.class_probabilities(v);
    let n = table.len();
    let t = target.dense(n);
    let mut grad = vec![0.0; table.dim()];
    for j in 0..n {
        let coeff = (probs[j] - t[j]) / table.tau();
        if coeff != 0.0 {
            axpy(&mut grad, table.row(j), coeff);
        }
    }
    grad
}
