//! Exact k-nearest-neighbour classification on p-normalized features.
//!
//! Every row is first scaled to unit p-norm, then compared with the same
//! p-norm distance: D_p(a, b) = || a/||a||_p - b/||b||_p ||_p, p in {1, 2}.
//! Rows with zero norm cannot be normalized and are an error.

use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Which p-norm drives both the row normalization and the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnNorm {
    L1,
    L2,
}

impl KnnNorm {
    fn row_norm(self, row: &[f64]) -> f64 {
        match self {
            KnnNorm::L1 => row.iter().map(|v| v.abs()).sum(),
            KnnNorm::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KnnNorm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            KnnNorm::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }
}

/// [N, F] tensor -> rows of unit p-norm in f64. Errors on a zero-norm row.
fn normalized_rows<S: Scalar>(x: &Tensor<S>, norm: KnnNorm, what: &str) -> Result<Vec<Vec<f64>>> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "knn_classify",
            detail: format!("{what}: expected non-empty [N, F] features, got {shape:?}"),
        });
    }
    let (n, f) = (shape[0], shape[1]);
    let data = x.data();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<f64> = (0..f).map(|j| data[i * f + j].fl()).collect();
        let norm_val = norm.row_norm(&row);
        if norm_val == 0.0 {
            return Err(TensorError::Domain {
                op: "knn_classify",
                detail: format!("{what} row {i} has zero {norm:?} norm and cannot be normalized"),
            });
        }
        for v in row.iter_mut() {
            *v /= norm_val;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Labels ranked for one query: sorted by vote count (descending), breaking
/// ties by which label owns the nearer neighbour among the k. The top-1
/// prediction is the first entry.
fn rank_labels(neighbour_labels: &[u8]) -> Vec<u8> {
    // best_rank[label] = position of that label's nearest voter in the
    // sorted neighbour list (smaller = nearer).
    let mut votes: Vec<(u8, usize, usize)> = Vec::new(); // (label, count, best_rank)
    for (rank, &label) in neighbour_labels.iter().enumerate() {
        match votes.iter_mut().find(|(l, _, _)| *l == label) {
            Some((_, count, _)) => *count += 1,
            None => votes.push((label, 1, rank)),
        }
    }
    votes.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    votes.into_iter().map(|(l, _, _)| l).collect()
}

/// For each query row, the full label ranking (most-voted first) among its
/// k nearest training rows. `k` must satisfy 1 <= k <= N_train.
pub fn knn_rankings<S: Scalar>(
    train_x: &Tensor<S>,
    train_y: &[u8],
    query_x: &Tensor<S>,
    k: usize,
    norm: KnnNorm,
) -> Result<Vec<Vec<u8>>> {
    let train = normalized_rows(train_x, norm, "training set")?;
    let query = normalized_rows(query_x, norm, "query set")?;
    if train_y.len() != train.len() {
        return Err(TensorError::ShapeMismatch {
            op: "knn_classify",
            detail: format!("{} training rows but {} labels", train.len(), train_y.len()),
        });
    }
    if train[0].len() != query[0].len() {
        return Err(TensorError::ShapeMismatch {
            op: "knn_classify",
            detail: format!(
                "feature width mismatch: train {} vs query {}",
                train[0].len(),
                query[0].len()
            ),
        });
    }
    if k == 0 || k > train.len() {
        return Err(TensorError::Domain {
            op: "knn_classify",
            detail: format!("k = {k} outside 1..={}", train.len()),
        });
    }
    let mut out = Vec::with_capacity(query.len());
    for q in &query {
        // (distance, train index): equal distances resolve by index so the
        // neighbour order is deterministic.
        let mut dist: Vec<(f64, usize)> =
            train.iter().enumerate().map(|(j, t)| (norm.distance(q, t), j)).collect();
        dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let neighbour_labels: Vec<u8> = dist[..k].iter().map(|&(_, j)| train_y[j]).collect();
        out.push(rank_labels(&neighbour_labels));
    }
    Ok(out)
}

/// Top-1 predictions only.
pub fn knn_classify<S: Scalar>(
    train_x: &Tensor<S>,
    train_y: &[u8],
    query_x: &Tensor<S>,
    k: usize,
    norm: KnnNorm,
) -> Result<Vec<u8>> {
    Ok(knn_rankings(train_x, train_y, query_x, k, norm)?
        .into_iter()
        .map(|ranking| ranking[0])
        .collect())
}

/// Top-1 and top-5 accuracy in percent. A top-5 hit means the true label is
/// among the first five entries of the vote ranking (labels with no votes
/// never count, even when fewer than five labels received votes). With
/// k < 5 the ranking cannot hold five distinct voted labels, so top-5 is
/// undefined and reported as `None`.
pub fn knn_accuracy<S: Scalar>(
    train_x: &Tensor<S>,
    train_y: &[u8],
    val_x: &Tensor<S>,
    val_y: &[u8],
    k: usize,
    norm: KnnNorm,
) -> Result<(f64, Option<f64>)> {
    let rankings = knn_rankings(train_x, train_y, val_x, k, norm)?;
    if val_y.len() != rankings.len() {
        return Err(TensorError::ShapeMismatch {
            op: "knn_classify",
            detail: format!("{} query rows but {} labels", rankings.len(), val_y.len()),
        });
    }
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for (ranking, &y) in rankings.iter().zip(val_y) {
        if ranking[0] == y {
            top1 += 1;
        }
        if ranking.iter().take(5).any(|&l| l == y) {
            top5 += 1;
        }
    }
    let n = val_y.len() as f64;
    let top5 = (k >= 5).then(|| 100.0 * top5 as f64 / n);
    Ok((100.0 * top1 as f64 / n, top5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Prng, StreamId};

    /// Three well-separated clusters of `per` points each in 8-D.
    fn clusters(per: usize, seed: u64) -> (Tensor<f64>, Vec<u8>) {
        let mut rng = Prng::with_stream(seed, StreamId::Eval as u64);
        let f = 8usize;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for class in 0u8..3 {
            for _ in 0..per {
                for j in 0..f {
                    let center = if j == class as usize { 5.0 } else { 0.0 };
                    data.push(center + 0.2 * rng.normal());
                }
                labels.push(class);
            }
        }
        (Tensor::new(&[3 * per, f], data).unwrap(), labels)
    }

    #[test]
    fn separated_clusters_are_perfect_for_both_norms_and_ks() {
        let (train_x, train_y) = clusters(50, 21);
        let (val_x, val_y) = clusters(30, 22);
        for norm in [KnnNorm::L1, KnnNorm::L2] {
            for k in [1usize, 5] {
                let (top1, top5) =
                    knn_accuracy(&train_x, &train_y, &val_x, &val_y, k, norm).unwrap();
                assert_eq!(top1, 100.0, "k={k} norm={norm:?}");
                // Top-5 needs at least five neighbours to be meaningful.
                let expect_top5 = if k >= 5 { Some(100.0) } else { None };
                assert_eq!(top5, expect_top5, "k={k} norm={norm:?}");
            }
        }
    }

    #[test]
    fn predictions_are_scale_invariant() {
        let (train_x, train_y) = clusters(20, 31);
        let (val_x, _) = clusters(15, 32);
        let scaled_train = Tensor::from_fn(train_x.shape(), |i| train_x.get(i) * 7.0);
        let scaled_val = Tensor::from_fn(val_x.shape(), |i| val_x.get(i) * 0.03);
        for norm in [KnnNorm::L1, KnnNorm::L2] {
            let base = knn_classify(&train_x, &train_y, &val_x, 5, norm).unwrap();
            let scaled = knn_classify(&scaled_train, &train_y, &scaled_val, 5, norm).unwrap();
            assert_eq!(base, scaled, "norm={norm:?}");
        }
    }

    #[test]
    fn vote_ties_go_to_the_nearer_neighbour() {
        // 1-D-ish features on a line (2-D so norms differ from coordinates):
        // train points at x = 1.0 (label 0) and x = 3.0 (label 1); the query
        // sits nearer the label-0 point. k=2 gives one vote each; label 0
        // must win because its voter is nearer.
        let train_x =
            Tensor::<f64>::new(&[2, 2], vec![1.0, 1.0, 1.0, 3.0]).unwrap();
        let train_y = vec![0u8, 1u8];
        let query = Tensor::<f64>::new(&[1, 2], vec![1.0, 1.5]).unwrap();
        for norm in [KnnNorm::L1, KnnNorm::L2] {
            let pred = knn_classify(&train_x, &train_y, &query, 2, norm).unwrap();
            assert_eq!(pred, vec![0u8], "norm={norm:?}");
        }

        // Two votes each with k=4; the nearest voter overall belongs to
        // label 1 this time.
        let train_x = Tensor::<f64>::new(
            &[4, 2],
            vec![1.0, 1.45, 1.0, 3.0, 1.0, 1.4, 1.0, 2.9],
        )
        .unwrap();
        let train_y = vec![0u8, 0u8, 1u8, 1u8];
        let query = Tensor::<f64>::new(&[1, 2], vec![1.0, 1.41]).unwrap();
        let pred = knn_classify(&train_x, &train_y, &query, 4, KnnNorm::L2).unwrap();
        assert_eq!(pred, vec![1u8]);
    }

    #[test]
    fn query_equal_to_a_training_point_recovers_its_label() {
        let (train_x, train_y) = clusters(10, 41);
        // Copy training row 17 as the query.
        let f = train_x.shape()[1];
        let row: Vec<f64> = (0..f).map(|j| train_x.get(17 * f + j)).collect();
        let query = Tensor::new(&[1, f], row).unwrap();
        let pred = knn_classify(&train_x, &train_y, &query, 1, KnnNorm::L2).unwrap();
        assert_eq!(pred[0], train_y[17]);
    }

    #[test]
    fn top5_ranking_counts_votes_then_proximity() {
        // k = 9 neighbours hand-placed on a line so the neighbour order is
        // their index order. Labels: 2,2,2,5,5,7,1,4,9 -> votes 2:3, 5:2,
        // then 7,1,4,9 with one each resolved by nearness.
        let labels = [2u8, 2, 2, 5, 5, 7, 1, 4, 9];
        let n = labels.len();
        let mut data = Vec::new();
        for i in 0..n {
            data.push(1.0);
            data.push(1.0 + 0.1 * i as f64);
        }
        let train_x = Tensor::<f64>::new(&[n, 2], data).unwrap();
        let query = Tensor::<f64>::new(&[1, 2], vec![1.0, 1.0]).unwrap();
        let ranking = knn_rankings(&train_x, &labels, &query, n, KnnNorm::L2).unwrap();
        assert_eq!(ranking[0], vec![2u8, 5, 7, 1, 4, 9]);
        // The top-5 window therefore contains label 4 but not label 9, and a
        // label that received no votes is never a top-5 hit.
        assert!(ranking[0][..5].contains(&4));
        assert!(!ranking[0][..5].contains(&9));
        let (top1, top5) =
            knn_accuracy(&train_x, &labels, &query, &[0u8], n, KnnNorm::L2).unwrap();
        // True label 0 never received a vote: miss on both metrics.
        assert_eq!((top1, top5), (0.0, Some(0.0)));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let train_x = Tensor::<f64>::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let train_y = vec![0u8, 1u8];
        let query = Tensor::<f64>::new(&[1, 2], vec![1.0, 1.0]).unwrap();
        // Zero-norm training row.
        assert!(knn_classify(&train_x, &train_y, &query, 1, KnnNorm::L2).is_err());
        let ok_train = Tensor::<f64>::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // k out of range.
        assert!(knn_classify(&ok_train, &train_y, &query, 0, KnnNorm::L2).is_err());
        assert!(knn_classify(&ok_train, &train_y, &query, 3, KnnNorm::L2).is_err());
        // Label count mismatch.
        assert!(knn_classify(&ok_train, &[0u8], &query, 1, KnnNorm::L2).is_err());
        // Width mismatch.
        let wide = Tensor::<f64>::new(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(knn_classify(&ok_train, &train_y, &wide, 1, KnnNorm::L2).is_err());
    }
}
