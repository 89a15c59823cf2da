//! Fréchet distance between feature distributions and the exponentiated-KL
//! classifier score, both computed in f64 throughout.

use nalgebra::{DMatrix, DVector};

use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Eigenvalues this far below zero are treated as numerical noise and
/// clamped to zero; anything more negative is a genuine domain error.
const EIG_CLAMP: f64 = -1e-6;

/// Sample mean and unbiased covariance (1/(N-1)) of row-major features
/// [N, F]. Requires N >= 2.
pub fn mean_and_cov<S: Scalar>(x: &Tensor<S>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "mean_and_cov",
            detail: format!("expected [N, F] features, got {shape:?}"),
        });
    }
    let (n, f) = (shape[0], shape[1]);
    if n < 2 {
        return Err(TensorError::Domain {
            op: "mean_and_cov",
            detail: format!("need at least 2 rows for a covariance, got {n}"),
        });
    }
    let data = x.data();
    let mut mean = DVector::<f64>::zeros(f);
    for i in 0..n {
        for j in 0..f {
            mean[j] += data[i * f + j].fl();
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::<f64>::zeros(f, f);
    for i in 0..n {
        let row: Vec<f64> = (0..f).map(|j| data[i * f + j].fl() - mean[j]).collect();
        for a in 0..f {
            for b in a..f {
                cov[(a, b)] += row[a] * row[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..f {
        for b in a..f {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((mean, cov))
}

/// Eigendecompose a symmetric matrix and clamp slightly negative eigenvalues
/// to zero. Eigenvalues below the clamp threshold are a domain error
/// (`what` names the offending matrix in the message).
fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let mut vals = sym.eigenvalues;
    for v in vals.iter_mut() {
        if *v < EIG_CLAMP {
            return Err(TensorError::Domain {
                op: "frechet_distance",
                detail: format!("{what} has eigenvalue {v}, below the PSD tolerance {EIG_CLAMP}"),
            });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok((vals, sym.eigenvectors))
}

/// Squared Fréchet distance between two Gaussians given their moments:
/// ||mu_a - mu_b||^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2}).
///
/// The matrix square root is taken by eigendecomposing the symmetrized
/// product S^{1/2} cov_b S^{1/2} where S = cov_a, which shares its spectrum
/// with cov_a cov_b but stays symmetric under floating point.
pub fn frechet_from_moments(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let f = mu_a.len();
    if mu_b.len() != f
        || cov_a.nrows() != f
        || cov_a.ncols() != f
        || cov_b.nrows() != f
        || cov_b.ncols() != f
    {
        return Err(TensorError::ShapeMismatch {
            op: "frechet_distance",
            detail: format!(
                "moment dimensions disagree: mu {} vs {}, cov {}x{} vs {}x{}",
                f,
                mu_b.len(),
                cov_a.nrows(),
                cov_a.ncols(),
                cov_b.nrows(),
                cov_b.ncols()
            ),
        });
    }
    let (vals_a, vecs_a) = psd_eigen(cov_a, "first covariance")?;
    // S_a^{1/2} = V diag(sqrt(lambda)) V^T.
    let sqrt_diag = DMatrix::from_diagonal(&vals_a.map(f64::sqrt));
    let root_a = &vecs_a * sqrt_diag * vecs_a.transpose();
    let mut inner = &root_a * cov_b * &root_a;
    // Symmetrize against round-off before the second eigendecomposition.
    inner = (&inner + inner.transpose()) * 0.5;
    let (vals_m, _) = psd_eigen(&inner, "symmetrized covariance product")?;
    let trace_sqrt: f64 = vals_m.iter().map(|&v| v.sqrt()).sum();
    let mean_term: f64 = (mu_a - mu_b).norm_squared();
    Ok(mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt)
}

/// Squared Fréchet distance between the Gaussian fits of two feature sets
/// [N, F] and [M, F]. Each set needs at least 2 rows.
pub fn frechet_distance<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    let (mu_a, cov_a) = mean_and_cov(a)?;
    let (mu_b, cov_b) = mean_and_cov(b)?;
    frechet_from_moments(&mu_a, &cov_a, &mu_b, &cov_b)
}

/// Floor inside the logarithms of the classifier score.
const SCORE_EPS: f64 = 1e-12;

/// Exponentiated mean KL divergence between each row of `probs` [N, K] and
/// the column-mean (marginal) distribution, computed in log space:
/// exp( mean_i sum_k p_ik (ln(p_ik + eps) - ln(pbar_k + eps)) ).
/// Lies in [1, K] up to the epsilon floor. Rows must be probability
/// vectors: non-negative, summing to 1 within 1e-4.
pub fn classifier_score<S: Scalar>(probs: &Tensor<S>) -> Result<f64> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "classifier_score",
            detail: format!("expected non-empty [N, K] probabilities, got {shape:?}"),
        });
    }
    let (n, k) = (shape[0], shape[1]);
    let data = probs.data();
    let mut marginal = vec![0.0f64; k];
    for i in 0..n {
        let mut row_sum = 0.0f64;
        for j in 0..k {
            let p = data[i * k + j].fl();
            if p < 0.0 {
                return Err(TensorError::Domain {
                    op: "classifier_score",
                    detail: format!("negative probability {p} at row {i}, column {j}"),
                });
            }
            row_sum += p;
            marginal[j] += p;
        }
        if (row_sum - 1.0).abs() > 1e-4 {
            return Err(TensorError::Domain {
                op: "classifier_score",
                detail: format!("row {i} sums to {row_sum}, not a probability vector"),
            });
        }
    }
    for m in marginal.iter_mut() {
        *m /= n as f64;
    }
    let mut mean_kl = 0.0f64;
    for i in 0..n {
        let mut kl = 0.0f64;
        for j in 0..k {
            let p = data[i * k + j].fl();
            if p > 0.0 {
                kl += p * ((p + SCORE_EPS).ln() - (marginal[j] + SCORE_EPS).ln());
            }
        }
        mean_kl += kl;
    }
    mean_kl /= n as f64;
    Ok(mean_kl.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Prng, StreamId};

    fn random_features(n: usize, f: usize, seed: u64, shift: f64) -> Tensor<f64> {
        let mut rng = Prng::with_stream(seed, StreamId::Eval as u64);
        Tensor::from_fn(&[n, f], |_| rng.normal() + shift)
    }

    #[test]
    fn moments_match_hand_computation() {
        // Three 2-D points: (0,0), (2,0), (0,6).
        let x = Tensor::<f64>::new(&[3, 2], vec![0.0, 0.0, 2.0, 0.0, 0.0, 6.0]).unwrap();
        let (mu, cov) = mean_and_cov(&x).unwrap();
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((mu[1] - 2.0).abs() < 1e-15);
        // Deviations: (-2/3,-2), (4/3,-2), (-2/3,4); divide by N-1 = 2.
        let c00 = ((4.0 / 9.0) + (16.0 / 9.0) + (4.0 / 9.0)) / 2.0;
        let c01 = ((4.0 / 3.0) + (-8.0 / 3.0) + (-8.0 / 3.0)) / 2.0;
        let c11 = (4.0 + 4.0 + 16.0) / 2.0;
        assert!((cov[(0, 0)] - c00).abs() < 1e-12);
        assert!((cov[(0, 1)] - c01).abs() < 1e-12);
        assert!((cov[(1, 0)] - c01).abs() < 1e-12);
        assert!((cov[(1, 1)] - c11).abs() < 1e-12);
        assert!(mean_and_cov(&Tensor::<f64>::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn distance_from_exact_moments_matches_closed_forms() {
        // 1-D: N(0,1) vs N(1,1) -> 1^2 + 1 + 1 - 2*sqrt(1) = 1.
        let mu_a = DVector::from_vec(vec![0.0]);
        let mu_b = DVector::from_vec(vec![1.0]);
        let eye = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0]));
        let d = frechet_from_moments(&mu_a, &eye, &mu_b, &eye).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "got {d}");

        // Diagonal 2-D: sum over axes of (mu_a-mu_b)^2 + (sqrt(va)-sqrt(vb))^2.
        let mu_a = DVector::from_vec(vec![1.0, -2.0]);
        let mu_b = DVector::from_vec(vec![0.0, 1.0]);
        let cov_a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let cov_b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 16.0]));
        let expect = (1.0f64 + 9.0) + (2.0f64 - 1.0).powi(2) + (3.0f64 - 4.0).powi(2);
        let d = frechet_from_moments(&mu_a, &cov_a, &mu_b, &cov_b).unwrap();
        assert!((d - expect).abs() < 1e-10, "got {d}, want {expect}");
    }

    #[test]
    fn self_distance_is_zero_and_order_symmetric() {
        let a = random_features(400, 6, 11, 0.0);
        let b = random_features(300, 6, 12, 0.5);
        let self_d = frechet_distance(&a, &a).unwrap();
        assert!(self_d.abs() <= 1e-6, "self distance {self_d}");
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-9, "asymmetry {ab} vs {ba}");
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let mu = DVector::from_vec(vec![0.0, 0.0]);
        let good = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0]));
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.01]));
        let err = frechet_from_moments(&mu, &bad, &mu, &good).unwrap_err();
        assert!(format!("{err}").contains("PSD"), "unexpected error {err}");
        // A tiny negative eigenvalue inside the tolerance is clamped, not fatal.
        let tiny = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-9]));
        frechet_from_moments(&mu, &tiny, &mu, &good).unwrap();
    }

    #[test]
    fn classifier_score_limits() {
        let k = 7usize;
        // Uniform rows carry zero KL against the marginal -> score 1.
        let uniform = Tensor::<f64>::full(&[5, k], 1.0 / k as f64);
        let s = classifier_score(&uniform).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "uniform score {s}");
        // One one-hot row per class -> marginal uniform -> score K.
        let onehots = Tensor::<f64>::from_fn(&[k, k], |i| if i / k == i % k { 1.0 } else { 0.0 });
        let s = classifier_score(&onehots).unwrap();
        assert!((s - k as f64).abs() / (k as f64) < 1e-6, "one-hot score {s}");
        // A single row equals its own marginal -> score 1.
        let single = Tensor::<f64>::new(&[1, 3], vec![0.2, 0.3, 0.5]).unwrap();
        let s = classifier_score(&single).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classifier_score_matches_direct_summation() {
        // Half uniform rows, half one-hot class 0 rows; oracle computed by
        // literal summation of the definition.
        let k = 4usize;
        let n = 6usize;
        let mut rows = Vec::new();
        for i in 0..n {
            if i % 2 == 0 {
                rows.extend(std::iter::repeat(1.0 / k as f64).take(k));
            } else {
                rows.push(1.0);
                rows.extend(std::iter::repeat(0.0).take(k - 1));
            }
        }
        let probs = Tensor::<f64>::new(&[n, k], rows.clone()).unwrap();
        let got = classifier_score(&probs).unwrap();

        let mut marginal = vec![0.0f64; k];
        for i in 0..n {
            for j in 0..k {
                marginal[j] += rows[i * k + j];
            }
        }
        for m in marginal.iter_mut() {
            *m /= n as f64;
        }
        let mut mean_kl = 0.0;
        for i in 0..n {
            for j in 0..k {
                let p = rows[i * k + j];
                if p > 0.0 {
                    mean_kl += p * ((p + 1e-12).ln() - (marginal[j] + 1e-12).ln());
                }
            }
        }
        let want = (mean_kl / n as f64).exp();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
        assert!(got >= 1.0 - 1e-12 && got <= k as f64 + 1e-12);
    }

    #[test]
    fn classifier_score_rejects_bad_rows() {
        let bad_sum = Tensor::<f64>::new(&[1, 2], vec![0.7, 0.7]).unwrap();
        assert!(classifier_score(&bad_sum).is_err());
        let negative = Tensor::<f64>::new(&[1, 2], vec![1.5, -0.5]).unwrap();
        assert!(classifier_score(&negative).is_err());
    }
}
