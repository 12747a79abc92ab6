//! Composite dissimilarity and reliable-neighbor selection.
//!
//! `D = (1 - lambda_p) * d + lambda_p * d_part + CCE`, where `d` is the
//! Euclidean distance between global embeddings, `d_part` the mean distance
//! of corresponding stripe embeddings, and CCE adds `lambda_c` to same-camera
//! pairs so that cross-camera candidates win ties. The k candidates with the
//! smallest D (anchor excluded, ties to the smaller index) form the reliable
//! set of each anchor.

use crate::error::{Error, Result};
use crate::mat::l2_distance;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DissimilarityConfig {
    /// Balance between global and part distance, in [0,1].
    pub lambda_p: f64,
    /// Same-camera penalty, >= 0.
    pub lambda_c: f64,
    /// Reliable images per anchor.
    pub k: usize,
}

impl DissimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_p) {
            return Err(Error::InvalidConfig(format!(
                "lambda_p must be in [0,1], got {}",
                self.lambda_p
            )));
        }
        if self.lambda_c < 0.0 || !self.lambda_c.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda_c must be finite and >= 0, got {}",
                self.lambda_c
            )));
        }
        Ok(())
    }
}

/// The per-image snapshot mining operates on. Parts are unit-norm stripe
/// embeddings by default; raw pooled stripes when configured.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    pub global: Vec<f64>,
    pub parts: Vec<Vec<f64>>,
    pub camera: u32,
}

/// One selected neighbor with its component breakdown.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dissimilarity: f64,
    pub global_distance: f64,
    pub part_distance: f64,
    pub cce: f64,
}

/// The k nearest candidates of one anchor, ascending by dissimilarity.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliableSet {
    pub anchor: usize,
    pub neighbors: Vec<Neighbor>,
    /// True when fewer than k candidates existed (k > N-1).
    pub truncated: bool,
}

impl ReliableSet {
    pub fn neighbor_indices(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.index).collect()
    }
}

/// Euclidean distance between two global embeddings.
pub fn global_distance(a: &[f64], b: &[f64]) -> f64 {
    l2_distance(a, b)
}

/// Mean Euclidean distance of corresponding parts.
pub fn part_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "part counts differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| l2_distance(x, y)).sum();
    Ok(sum / a.len() as f64)
}

/// Cross-camera encouragement: `lambda_c` for same-camera pairs, else 0.
pub fn cce(cam_a: u32, cam_b: u32, lambda_c: f64) -> f64 {
    if cam_a == cam_b {
        lambda_c
    } else {
        0.0
    }
}

/// The component breakdown of one pair's dissimilarity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DissimilarityParts {
    pub global: f64,
    pub part: f64,
    pub cce: f64,
    pub overall: f64,
}

pub fn dissimilarity_parts(
    a: &ImageFeatures,
    b: &ImageFeatures,
    cfg: &DissimilarityConfig,
) -> Result<DissimilarityParts> {
    let d = global_distance(&a.global, &b.global);
    let d_part = part_distance(&a.parts, &b.parts)?;
    let c = cce(a.camera, b.camera, cfg.lambda_c);
    let overall = (1.0 - cfg.lambda_p) * d + cfg.lambda_p * d_part + c;
    Ok(DissimilarityParts {
        global: d,
        part: d_part,
        cce: c,
        overall,
    })
}

/// `D = (1-lambda_p) d + lambda_p d_part + CCE`.
pub fn overall_dissimilarity(
    a: &ImageFeatures,
    b: &ImageFeatures,
    cfg: &DissimilarityConfig,
) -> Result<f64> {
    Ok(dissimilarity_parts(a, b, cfg)?.overall)
}

/// Selects the k smallest-D candidates for one anchor. Ties break toward the
/// smaller index; k > N-1 truncates and flags the set.
pub fn select_reliable(
    features: &[ImageFeatures],
    anchor: usize,
    cfg: &DissimilarityConfig,
) -> Result<ReliableSet> {
    cfg.validate()?;
    if anchor >= features.len() {
        return Err(Error::IndexOutOfRange(format!(
            "anchor {} out of range for {} images",
            anchor,
            features.len()
        )));
    }
    let mut candidates = Vec::with_capacity(features.len().saturating_sub(1));
    for (j, feat) in features.iter().enumerate() {
        if j == anchor {
            continue;
        }
        let parts = dissimilarity_parts(&features[anchor], feat, cfg)?;
        candidates.push(Neighbor {
            index: j,
            dissimilarity: parts.overall,
            global_distance: parts.global,
            part_distance: parts.part,
            cce: parts.cce,
        });
    }
    candidates.sort_by(|a, b| {
        a.dissimilarity
            .total_cmp(&b.dissimilarity)
            .then(a.index.cmp(&b.index))
    });
    let truncated = cfg.k > candidates.len();
    candidates.truncate(cfg.k);
    Ok(ReliableSet {
        anchor,
        neighbors: candidates,
        truncated,
    })
}

/// Mines the reliable set of every anchor over an immutable snapshot.
///
/// The pairwise matrix is filled in cache-sized tiles using the symmetry of
/// D, then each row is reduced to its k smallest entries.
pub fn all_reliable_sets(
    features: &[ImageFeatures],
    cfg: &DissimilarityConfig,
) -> Result<Vec<ReliableSet>> {
    cfg.validate()?;
    let n = features.len();
    const TILE: usize = 64;
    let mut dissim = vec![f64::INFINITY; n * n];
    let mut breakdown = vec![
        DissimilarityParts {
            global: 0.0,
            part: 0.0,
            cce: 0.0,
            overall: 0.0
        };
        n * n
    ];
    for bi in (0..n).step_by(TILE) {
        for bj in (bi..n).step_by(TILE) {
            for i in bi..(bi + TILE).min(n) {
                let j_start = if bi == bj { i + 1 } else { bj };
                for j in j_start..(bj + TILE).min(n) {
                    let parts = dissimilarity_parts(&features[i], &features[j], cfg)?;
                    dissim[i * n + j] = parts.overall;
                    dissim[j * n + i] = parts.overall;
                    breakdown[i * n + j] = parts;
                    breakdown[j * n + i] = parts;
                }
            }
        }
    }
    let mut sets = Vec::with_capacity(n);
    for anchor in 0..n {
        let mut candidates: Vec<Neighbor> = (0..n)
            .filter(|&j| j != anchor)
            .map(|j| {
                let parts = breakdown[anchor * n + j];
                Neighbor {
                    index: j,
                    dissimilarity: dissim[anchor * n + j],
                    global_distance: parts.global,
                    part_distance: parts.part,
                    cce: parts.cce,
                }
            })
            .collect();
        candidates.sort_by(|a, b| {
            a.dissimilarity
                .total_cmp(&b.dissimilarity)
                .then(a.index.cmp(&b.index))
        });
        let truncated = cfg.k > candidates.len();
        candidates.truncate(cfg.k);
        sets.push(ReliableSet {
            anchor,
            neighbors: candidates,
            truncated,
        });
    }
    Ok(sets)
}

/// Mean fraction of cross-camera neighbors over all reliable sets.
pub fn cross_camera_fraction(sets: &[ReliableSet], features: &[ImageFeatures]) -> f64 {
    let mut total = 0usize;
    let mut cross = 0usize;
    for set in sets {
        for nb in &set.neighbors {
            total += 1;
            if features[nb.index].camera != features[set.anchor].camera {
                cross += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        cross as f64 / total as f64
    }
}
