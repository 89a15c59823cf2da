//! Encoder E: image -> latent distribution parameters.
//!
//! Trunk: three stride-2 3x3 conv blocks (widths w, 2w, 4w), each
//! conv -> batch norm -> relu, followed by global average pooling. The
//! pooled vector (dim 4w) is the representation evaluated by probes and
//! k-NN. A residual MLP head maps it to mu (and, in stochastic mode,
//! sigma_hat with sigma = softplus(sigma_hat)).
//!
//! Encoder weights never get spectral normalization; all trainable encoder
//! tensors carry EMA shadows.

use super::{init_res_mlp, init_weight, linear, run_res_mlp, Binder, ParamTree};
use crate::rng::Prng;
use crate::tensor::{BnLayout, Result, Scalar, Tape, Tensor, TensorError, Var};

/// How the encoder turns its head output into a latent sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// z = mu + eps * softplus(sigma_hat), eps ~ N(0, I).
    Stochastic,
    /// z = mu.
    Deterministic,
    /// z = tanh(mu), matching a uniform (-1,1) prior's support.
    TanhDeterministic,
}

#[derive(Debug, Clone)]
pub struct EncoderArch {
    pub in_ch: usize,
    pub in_res: usize,
    /// Base trunk width; stages use w, 2w, 4w.
    pub width: usize,
    pub head_width: usize,
    pub head_blocks: usize,
    pub latent_dim: usize,
    pub mode: EncoderMode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl EncoderArch {
    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0
            || self.width == 0
            || self.head_width == 0
            || self.latent_dim == 0
            || self.in_res < 8
        {
            return Err(TensorError::Domain {
                op: "encoder_arch",
                detail: format!(
                    "channels/widths/latent must be positive and input resolution >= 8, got {self:?}"
                ),
            });
        }
        Ok(())
    }

    /// Pooled-feature dimension (the probed representation).
    pub fn feat_dim(&self) -> usize {
        4 * self.width
    }

    fn head_out_dim(&self) -> usize {
        match self.mode {
            EncoderMode::Stochastic => 2 * self.latent_dim,
            _ => self.latent_dim,
        }
    }
}

/// Tape handles produced by one encoder forward pass.
pub struct EncVars {
    pub mu: Var,
    /// softplus(sigma_hat); present only in stochastic mode.
    pub sigma: Option<Var>,
    pub z: Var,
    /// Globally pooled trunk feature [B, 4w].
    pub feat: Var,
}

pub struct Encoder<S: Scalar = f32> {
    pub arch: EncoderArch,
    pub params: ParamTree<S>,
}

impl<S: Scalar> Encoder<S> {
    pub fn init(arch: EncoderArch, rng: &mut Prng) -> Result<Self> {
        arch.validate()?;
        let mut p = ParamTree::new();
        let widths = [arch.width, 2 * arch.width, 4 * arch.width];
        let mut c_in = arch.in_ch;
        for (i, &c_out) in widths.iter().enumerate() {
            let idx = i + 1;
            p.insert_trainable(
                &format!("e.conv{idx}.w"),
                init_weight(&[c_out, c_in, 3, 3], c_in * 9, rng)?,
                false,
                true,
                rng,
            )?;
            p.insert_trainable(&format!("e.bn{idx}.gamma"), Tensor::full(&[c_out], S::fr(1.0)), false, true, rng)?;
            p.insert_trainable(&format!("e.bn{idx}.beta"), Tensor::zeros(&[c_out]), false, true, rng)?;
            p.insert_state(&format!("e.bn{idx}.running_mean"), Tensor::zeros(&[c_out]))?;
            p.insert_state(&format!("e.bn{idx}.running_var"), Tensor::full(&[c_out], S::fr(1.0)))?;
            p.insert_state(&format!("e.bn{idx}.count"), Tensor::zeros(&[1]))?;
            c_in = c_out;
        }
        init_res_mlp(&mut p, "e.head", arch.feat_dim(), arch.head_width, arch.head_blocks, false, true, rng)?;
        p.insert_trainable(
            "e.head.out.w",
            init_weight(&[arch.head_width, arch.head_out_dim()], arch.head_width, rng)?,
            false,
            true,
            rng,
        )?;
        p.insert_trainable("e.head.out.b", Tensor::zeros(&[arch.head_out_dim()]), false, true, rng)?;
        Ok(Encoder { arch, params: p })
    }

    /// Build the encoder forward on `tape`.
    ///
    /// `eps`: pre-drawn N(0,I) noise [B, latent_dim]; required in stochastic
    /// mode and rejected otherwise (deterministic modes are pure functions).
    /// `train`: batch-norm statistic source (batch vs running moments).
    /// `learn`: bind weights trainably and commit state updates.
    pub fn forward(
        &mut self,
        tape: &Tape<S>,
        x: Var,
        eps: Option<Var>,
        train: bool,
        learn: bool,
    ) -> Result<(EncVars, Vec<(String, Var)>)> {
        let xs = tape.shape(x);
        if xs.len() != 4 || xs[1] != self.arch.in_ch || xs[2] != self.arch.in_res || xs[3] != self.arch.in_res
        {
            return Err(TensorError::ShapeMismatch {
                op: "encode",
                detail: format!(
                    "expected [B,{},{},{}], got {:?}",
                    self.arch.in_ch, self.arch.in_res, self.arch.in_res, xs
                ),
            });
        }
        let arch = self.arch.clone();
        let mut binder = Binder::new(tape, &mut self.params, learn);
        let mut h = x;
        for idx in 1..=3 {
            let w = binder.bind(&format!("e.conv{idx}.w"))?;
            h = tape.conv2d(h, w, 2, 1)?;
            h = binder.batch_norm(
                h,
                &format!("e.bn{idx}"),
                BnLayout::Chan,
                train,
                arch.bn_momentum,
                arch.bn_eps,
            )?;
            h = tape.relu(h)?;
        }
        let feat = tape.global_avg_pool(h)?;
        let hid = run_res_mlp(&mut binder, "e.head", feat, arch.head_blocks)?;
        let w_out = binder.bind("e.head.out.w")?;
        let b_out = binder.bind("e.head.out.b")?;
        let head = linear(tape, hid, w_out, Some(b_out))?;

        let dim = arch.latent_dim;
        let vars = match arch.mode {
            EncoderMode::Stochastic => {
                let eps = eps.ok_or_else(|| TensorError::Domain {
                    op: "encode",
                    detail: "stochastic mode requires pre-drawn noise".into(),
                })?;
                let es = tape.shape(eps);
                if es != [xs[0], dim] {
                    return Err(TensorError::ShapeMismatch {
                        op: "encode",
                        detail: format!("noise shape {es:?}, expected [{}, {dim}]", xs[0]),
                    });
                }
                let mu = tape.slice_axis1(head, 0, dim)?;
                let sigma_hat = tape.slice_axis1(head, dim, dim)?;
                let sigma = tape.softplus(sigma_hat)?;
                let z = tape.add(mu, tape.mul(eps, sigma)?)?;
                EncVars { mu, sigma: Some(sigma), z, feat }
            }
            EncoderMode::Deterministic => {
                reject_eps(&eps)?;
                EncVars { mu: head, sigma: None, z: head, feat }
            }
            EncoderMode::TanhDeterministic => {
                reject_eps(&eps)?;
                let z = tape.tanh(head)?;
                EncVars { mu: head, sigma: None, z, feat }
            }
        };
        Ok((vars, binder.into_bindings()))
    }
}

fn reject_eps(eps: &Option<Var>) -> Result<()> {
    if eps.is_some() {
        return Err(TensorError::Domain {
            op: "encode",
            detail: "deterministic mode consumes no noise".into(),
        });
    }
    Ok(())
}
