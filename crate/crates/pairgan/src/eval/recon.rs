//! Reconstruction quality: relative L1 error against a shifted-neighbour
//! baseline, plus iterated encode/decode chains.

use crate::models::{Encoder, Generator};
use crate::tensor::{Result, Scalar, Tensor, TensorError};

use super::{deterministic_latents, generate_images};

/// Deterministic reconstructions G(E(x)) using EMA weights and eval-mode
/// normalization for both networks (the encoder contributes its mean
/// latent; no sampling anywhere).
pub fn reconstruct<S: Scalar>(
    enc: &Encoder<S>,
    gen: &Generator<S>,
    xs: &Tensor<S>,
) -> Result<Tensor<S>> {
    let zs = deterministic_latents(enc, xs)?;
    generate_images(gen, &zs)
}

/// Relative L1 reconstruction error from precomputed reconstructions.
///
/// numerator   = sum_i || x_i - xhat_i ||_1
/// denominator = sum_i || x_{(i+1) mod N} - xhat_i ||_1
///
/// The denominator swaps each target for its neighbouring image, so 1.0
/// means the reconstruction carries no more information about its input
/// than an arbitrary dataset image; a perfect reconstructor scores 0.
/// Needs N >= 2 (with N = 1 both sums coincide).
pub fn relative_l1_from_pairs<S: Scalar>(xs: &Tensor<S>, xhats: &Tensor<S>) -> Result<f64> {
    if xs.shape() != xhats.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "relative_l1",
            detail: format!("inputs {:?} vs reconstructions {:?}", xs.shape(), xhats.shape()),
        });
    }
    let shape = xs.shape();
    if shape.is_empty() || shape[0] < 2 {
        return Err(TensorError::Domain {
            op: "relative_l1",
            detail: format!("need at least 2 images, got shape {shape:?}"),
        });
    }
    let n = shape[0];
    let per: usize = shape[1..].iter().product();
    let x = xs.data();
    let xh = xhats.data();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..n {
        let j = (i + 1) % n;
        for t in 0..per {
            let rec = xh[i * per + t].fl();
            num += (x[i * per + t].fl() - rec).abs();
            den += (x[j * per + t].fl() - rec).abs();
        }
    }
    if den == 0.0 {
        return Err(TensorError::Domain {
            op: "relative_l1",
            detail: "degenerate dataset: neighbour baseline distance is zero".into(),
        });
    }
    Ok(num / den)
}

/// Relative L1 error of the model's own reconstructions on `xs`.
pub fn relative_l1<S: Scalar>(
    enc: &Encoder<S>,
    gen: &Generator<S>,
    xs: &Tensor<S>,
) -> Result<f64> {
    let xhats = reconstruct(enc, gen, xs)?;
    relative_l1_from_pairs(xs, &xhats)
}

/// Iterated reconstruction chain R_0 = x, R_{i+1} = G(E(R_i)).
/// Returns steps + 1 tensors starting with the input itself. Every
/// generated iterate lies strictly inside (-1, 1); the input is returned
/// as given. Requires the generator resolution to match the input.
pub fn iterated_reconstruction<S: Scalar>(
    enc: &Encoder<S>,
    gen: &Generator<S>,
    x: &Tensor<S>,
    steps: usize,
) -> Result<Vec<Tensor<S>>> {
    let shape = x.shape();
    if shape.len() != 4 || shape[2] != gen.arch.out_res || shape[3] != gen.arch.out_res {
        return Err(TensorError::ShapeMismatch {
            op: "iterated_reconstruction",
            detail: format!(
                "iteration needs generator output {0}x{0} to feed back as input, got {shape:?}",
                gen.arch.out_res
            ),
        });
    }
    let mut chain = Vec::with_capacity(steps + 1);
    chain.push(x.clone());
    for _ in 0..steps {
        let next = reconstruct(enc, gen, chain.last().unwrap())?;
        chain.push(next);
    }
    Ok(chain)
}
