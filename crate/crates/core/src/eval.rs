//! Re-identification evaluation: Euclidean ranking, CMC, mAP.
//!
//! Gallery entries sharing both identity and camera with the query are junk
//! under the standard protocol: they are removed from the ranking entirely.
//! Remaining same-identity entries are matches; everything else counts as a
//! distractor. A query without any valid cross-camera match is an error.

use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::mat::l2_distance;

/// Identity and camera labels of one gallery or query item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ItemMeta {
    pub identity: u32,
    pub camera: u32,
}

/// One query's ranked gallery plus its precision summary.
#[derive(Clone, Debug)]
pub struct QueryResult {
    /// Gallery indices by ascending distance (junk removed).
    pub ranking: Vec<(usize, f64)>,
    /// 1-based rank of the first correct match.
    pub first_match_rank: usize,
    pub average_precision: f64,
}

#[derive(Clone, Debug)]
pub struct RankingResult {
    pub per_query: Vec<QueryResult>,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
}

/// Sorts the whole gallery by distance to the query, ties by gallery index.
pub fn rank_gallery(query: &[f64], gallery: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let mut order: Vec<(usize, f64)> = gallery
        .iter()
        .enumerate()
        .map(|(j, g)| (j, l2_distance(query, g)))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    order
}

/// CMC and mAP over all queries.
pub fn compute_metrics(
    query_embeddings: &[Vec<f64>],
    query_meta: &[ItemMeta],
    gallery_embeddings: &[Vec<f64>],
    gallery_meta: &[ItemMeta],
) -> Result<RankingResult> {
    if query_embeddings.len() != query_meta.len()
        || gallery_embeddings.len() != gallery_meta.len()
    {
        return Err(Error::DimensionMismatch(
            "metadata and embedding counts differ".into(),
        ));
    }
    if gallery_embeddings.is_empty() || query_embeddings.is_empty() {
        return Err(Error::Eval("empty query or gallery".into()));
    }
    let mut per_query = Vec::with_capacity(query_meta.len());
    let (mut hits1, mut hits5, mut hits10) = (0usize, 0usize, 0usize);
    let mut ap_sum = 0.0;
    for (q, meta) in query_embeddings.iter().zip(query_meta) {
        let full = rank_gallery(q, gallery_embeddings);
        // drop junk: same identity AND same camera as the query
        let ranking: Vec<(usize, f64)> = full
            .into_iter()
            .filter(|&(j, _)| {
                !(gallery_meta[j].identity == meta.identity
                    && gallery_meta[j].camera == meta.camera)
            })
            .collect();
        let is_match =
            |j: usize| -> bool { gallery_meta[j].identity == meta.identity };
        let num_matches = ranking.iter().filter(|&&(j, _)| is_match(j)).count();
        if num_matches == 0 {
            return Err(Error::Eval(format!(
                "query identity {} camera {} has no valid cross-camera match",
                meta.identity, meta.camera
            )));
        }
        let mut first_match_rank = 0usize;
        let mut ap = 0.0;
        let mut seen_matches = 0usize;
        for (pos, &(j, _)) in ranking.iter().enumerate() {
            if is_match(j) {
                seen_matches += 1;
                if first_match_rank == 0 {
                    first_match_rank = pos + 1;
                }
                ap += seen_matches as f64 / (pos + 1) as f64;
            }
        }
        ap /= num_matches as f64;
        if first_match_rank <= 1 {
            hits1 += 1;
        }
        if first_match_rank <= 5 {
            hits5 += 1;
        }
        if first_match_rank <= 10 {
            hits10 += 1;
        }
        ap_sum += ap;
        per_query.push(QueryResult {
            ranking,
            first_match_rank,
            average_precision: ap,
        });
    }
    let n = query_meta.len() as f64;
    Ok(RankingResult {
        per_query,
        rank1: hits1 as f64 / n,
        rank5: hits5 as f64 / n,
        rank10: hits10 as f64 / n,
        map: ap_sum / n,
    })
}

/// Renormalized mean of frame embeddings.
pub fn tracklet_feature(frames: &[Embedding]) -> Result<Embedding> {
    if frames.is_empty() {
        return Err(Error::Eval("empty tracklet".into()));
    }
    let d = frames[0].dim();
    let mut mean = vec![0.0; d];
    for f in frames {
        if f.dim() != d {
            return Err(Error::DimensionMismatch(
                "tracklet frames have mixed dimensions".into(),
            ));
        }
        for (m, x) in mean.iter_mut().zip(f.as_slice()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= frames.len() as f64;
    }
    Embedding::normalize(&mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        Embedding::normalize(&v).unwrap().into_vec()
    }

    #[test]
    fn query_in_gallery_ranks_first_with_zero_distance() {
        let q = unit(vec![0.3, 0.7, 0.1]);
        let gallery = vec![unit(vec![1.0, 0.0, 0.0]), q.clone(), unit(vec![0.0, 1.0, 0.0])];
        let order = rank_gallery(&q, &gallery);
        assert_eq!(order[0].0, 1);
        assert_eq!(order[0].1, 0.0);
    }

    #[test]
    fn orthogonal_gallery_ties_break_by_index() {
        let q = unit(vec![1.0, 0.0, 0.0, 0.0]);
        let gallery = vec![
            unit(vec![0.0, 1.0, 0.0, 0.0]),
            unit(vec![0.0, 0.0, 1.0, 0.0]),
            unit(vec![0.0, 0.0, 0.0, 1.0]),
        ];
        let order = rank_gallery(&q, &gallery);
        let sqrt2 = 2.0f64.sqrt();
        for (pos, &(j, d)) in order.iter().enumerate() {
            assert_eq!(j, pos);
            assert!((d - sqrt2).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_matches_full_sort_oracle() {
        let mut rng = stream(80, "rank", 0, 0);
        let d = 5;
        let q = unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
        let gallery: Vec<Vec<f64>> = (0..40)
            .map(|_| unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let order = rank_gallery(&q, &gallery);
        let mut oracle: Vec<(usize, f64)> = gallery
            .iter()
            .enumerate()
            .map(|(j, g)| (j, l2_distance(&q, g)))
            .collect();
        oracle.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        assert_eq!(order, oracle);
    }

    #[test]
    fn perfect_embeddings_score_one() {
        // identities embedded one-hot: every match at distance 0
        let ids = [0u32, 1, 2];
        let mut queries = Vec::new();
        let mut qmeta = Vec::new();
        let mut gallery = Vec::new();
        let mut gmeta = Vec::new();
        for &id in &ids {
            let mut v = vec![0.0; 3];
            v[id as usize] = 1.0;
            queries.push(v.clone());
            qmeta.push(ItemMeta {
                identity: id,
                camera: 0,
            });
            gallery.push(v);
            gmeta.push(ItemMeta {
                identity: id,
                camera: 1,
            });
        }
        let res = compute_metrics(&queries, &qmeta, &gallery, &gmeta).unwrap();
        assert_eq!(res.rank1, 1.0);
        assert_eq!(res.map, 1.0);
    }

    #[test]
    fn junk_same_camera_entries_are_removed() {
        // the only same-identity entry under the query's own camera must not
        // count as a match nor as a distractor
        let q = vec![unit(vec![1.0, 0.0])];
        let qmeta = vec![ItemMeta {
            identity: 5,
            camera: 2,
        }];
        let gallery = vec![
            unit(vec![1.0, 0.0]), // same id, same camera: junk
            unit(vec![0.9, 0.1]), // same id, other camera: match
            unit(vec![0.0, 1.0]), // distractor
        ];
        let gmeta = vec![
            ItemMeta {
                identity: 5,
                camera: 2,
            },
            ItemMeta {
                identity: 5,
                camera: 3,
            },
            ItemMeta {
                identity: 6,
                camera: 3,
            },
        ];
        let res = compute_metrics(&q, &qmeta, &gallery, &gmeta).unwrap();
        assert_eq!(res.per_query[0].ranking.len(), 2);
        assert_eq!(res.rank1, 1.0);
        assert_eq!(res.map, 1.0);
    }

    #[test]
    fn query_without_cross_camera_match_errors() {
        let q = vec![unit(vec![1.0, 0.0])];
        let qmeta = vec![ItemMeta {
            identity: 5,
            camera: 2,
        }];
        let gallery = vec![unit(vec![1.0, 0.0]), unit(vec![0.0, 1.0])];
        let gmeta = vec![
            ItemMeta {
                identity: 5,
                camera: 2, // junk: only same-id entry shares the camera
            },
            ItemMeta {
                identity: 6,
                camera: 3,
            },
        ];
        assert!(matches!(
            compute_metrics(&q, &qmeta, &gallery, &gmeta),
            Err(Error::Eval(_))
        ));
    }

    #[test]
    fn random_embeddings_hit_one_over_g() {
        // Monte Carlo oracle: with one true match among G random gallery
        // items, rank-1 converges to 1/G.
        let mut rng = stream(81, "mc", 0, 0);
        let g = 5usize;
        let trials = 4000;
        let d = 8;
        let mut hits = 0usize;
        for _ in 0..trials {
            let q = unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let queries = vec![q];
            let qmeta = vec![ItemMeta {
                identity: 0,
                camera: 0,
            }];
            let gallery: Vec<Vec<f64>> = (0..g)
                .map(|_| unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect();
            let gmeta: Vec<ItemMeta> = (0..g)
                .map(|j| ItemMeta {
                    identity: j as u32, // index 0 is the true match
                    camera: 1,
                })
                .collect();
            let res = compute_metrics(&queries, &qmeta, &gallery, &gmeta).unwrap();
            if res.rank1 == 1.0 {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        assert!(
            (rate - 1.0 / g as f64).abs() < 0.03,
            "rank-1 rate {} far from {}",
            rate,
            1.0 / g as f64
        );
    }

    #[test]
    fn cmc_is_monotone_and_map_bounded() {
        let mut rng = stream(82, "cmc", 0, 0);
        let d = 6;
        let queries: Vec<Vec<f64>> = (0..20)
            .map(|_| unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let qmeta: Vec<ItemMeta> = (0..20)
            .map(|i| ItemMeta {
                identity: i as u32,
                camera: 0,
            })
            .collect();
        let mut gallery = Vec::new();
        let mut gmeta = Vec::new();
        for i in 0..20u32 {
            for c in 1..3u32 {
                gallery.push(unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()));
                gmeta.push(ItemMeta {
                    identity: i,
                    camera: c,
                });
            }
        }
        let res = compute_metrics(&queries, &qmeta, &gallery, &gmeta).unwrap();
        assert!(res.rank1 <= res.rank5);
        assert!(res.rank5 <= res.rank10);
        assert!(res.map > 0.0 && res.map <= 1.0);
        for q in &res.per_query {
            assert!(q.average_precision >= 0.0 && q.average_precision <= 1.0);
            // distances ascend
            for w in q.ranking.windows(2) {
                assert!(w[0].1 <= w[1].1);
            }
        }
    }

    #[test]
    fn ranking_is_rotation_invariant() {
        // a common rotation of all embeddings preserves distances, hence ranks
        let mut rng = stream(83, "rot", 0, 0);
        let theta: f64 = 1.1;
        let (s, c) = theta.sin_cos();
        let rot = |v: &[f64]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let queries: Vec<Vec<f64>> = (0..5)
            .map(|_| unit(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
            .collect();
        let gallery: Vec<Vec<f64>> = (0..15)
            .map(|_| unit(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
            .collect();
        for q in &queries {
            let base: Vec<usize> = rank_gallery(q, &gallery).iter().map(|&(j, _)| j).collect();
            let rot_gallery: Vec<Vec<f64>> = gallery.iter().map(|g| rot(g)).collect();
            let rotated: Vec<usize> = rank_gallery(&rot(q), &rot_gallery)
                .iter()
                .map(|&(j, _)| j)
                .collect();
            assert_eq!(base, rotated);
        }
    }

    #[test]
    fn tracklet_feature_closed_forms() {
        let a = Embedding::normalize(&[1.0, 0.0]).unwrap();
        let b = Embedding::normalize(&[0.0, 1.0]).unwrap();
        // single frame: identity
        assert_eq!(tracklet_feature(&[a.clone()]).unwrap(), a);
        // identical frames: unchanged
        assert_eq!(tracklet_feature(&[a.clone(), a.clone()]).unwrap(), a);
        // orthogonal frames: (a+b)/sqrt(2)
        let t = tracklet_feature(&[a.clone(), b.clone()]).unwrap();
        let inv = 1.0 / 2.0f64.sqrt();
        assert!((t.as_slice()[0] - inv).abs() < 1e-12);
        assert!((t.as_slice()[1] - inv).abs() < 1e-12);
    }

    #[test]
    fn degenerate_tracklets_error() {
        assert!(tracklet_feature(&[]).is_err());
        let a = Embedding::normalize(&[1.0, 0.0]).unwrap();
        let neg = Embedding::normalize(&[-1.0, 0.0]).unwrap();
        assert!(matches!(
            tracklet_feature(&[a, neg]),
            Err(Error::DegenerateFeature(_))
        ));
    }
}
