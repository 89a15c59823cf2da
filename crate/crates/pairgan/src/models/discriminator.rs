//! Joint discriminator D = (F, H, J) with scalar score projections.
//!
//! F is a conv trunk mirroring the encoder's (stride-2 3x3 convs with
//! per-channel biases — no batch norm anywhere in D) pooled to a vector.
//! H is a residual MLP over the latent; J is a residual MLP over the
//! concatenation [F(x), H(z)]. Scores are bias-free projections:
//! s_x from F, s_z from H, s_xz from J.
//!
//! In no-pair mode (plain GAN without an encoder) H and J do not exist and
//! only s_x is produced. All rank>=2 discriminator weights are spectrally
//! normalized (when enabled); no discriminator tensor has an EMA shadow.

use super::{init_res_mlp, init_weight, run_res_mlp, Binder, ParamTree};
use crate::rng::Prng;
use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone)]
pub struct DiscriminatorArch {
    pub in_ch: usize,
    pub in_res: usize,
    /// F trunk base width; stages use w, 2w, 4w.
    pub width: usize,
    pub mlp_width: usize,
    pub mlp_blocks: usize,
    pub latent_dim: usize,
    /// When false (plain-GAN mode) H and J are absent.
    pub pair_heads: bool,
    pub spectral: bool,
}

impl DiscriminatorArch {
    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0
            || self.width == 0
            || self.mlp_width == 0
            || self.latent_dim == 0
            || self.in_res < 8
        {
            return Err(TensorError::Domain {
                op: "discriminator_arch",
                detail: "widths/channels/latent must be positive, resolution >= 8".into(),
            });
        }
        Ok(())
    }

    pub fn feat_dim(&self) -> usize {
        4 * self.width
    }
}

/// Score handles for one batch of (x, z) pairs; each is [B].
pub struct ScoreVars {
    pub s_x: Var,
    pub s_z: Option<Var>,
    pub s_xz: Option<Var>,
}

pub struct Discriminator<S: Scalar = f32> {
    pub arch: DiscriminatorArch,
    pub params: ParamTree<S>,
}

impl<S: Scalar> Discriminator<S> {
    pub fn init(arch: DiscriminatorArch, rng: &mut Prng) -> Result<Self> {
        arch.validate()?;
        let mut p = ParamTree::new();
        let widths = [arch.width, 2 * arch.width, 4 * arch.width];
        let mut c_in = arch.in_ch;
        for (i, &c_out) in widths.iter().enumerate() {
            let idx = i + 1;
            p.insert_trainable(
                &format!("d.f.conv{idx}.w"),
                init_weight(&[c_out, c_in, 3, 3], c_in * 9, rng)?,
                arch.spectral,
                false,
                rng,
            )?;
            p.insert_trainable(&format!("d.f.conv{idx}.b"), Tensor::zeros(&[c_out]), false, false, rng)?;
            c_in = c_out;
        }
        p.insert_trainable(
            "d.f.proj.w",
            init_weight(&[arch.feat_dim(), 1], arch.feat_dim(), rng)?,
            arch.spectral,
            false,
            rng,
        )?;
        if arch.pair_heads {
            init_res_mlp(&mut p, "d.h", arch.latent_dim, arch.mlp_width, arch.mlp_blocks, arch.spectral, false, rng)?;
            p.insert_trainable(
                "d.h.proj.w",
                init_weight(&[arch.mlp_width, 1], arch.mlp_width, rng)?,
                arch.spectral,
                false,
                rng,
            )?;
            let j_in = arch.feat_dim() + arch.mlp_width;
            init_res_mlp(&mut p, "d.j", j_in, arch.mlp_width, arch.mlp_blocks, arch.spectral, false, rng)?;
            p.insert_trainable(
                "d.j.proj.w",
                init_weight(&[arch.mlp_width, 1], arch.mlp_width, rng)?,
                arch.spectral,
                false,
                rng,
            )?;
        }
        Ok(Discriminator { arch, params: p })
    }

    /// Score a batch of (x, z) pairs. `z` is required in pair mode and
    /// rejected in plain-GAN mode. D has no batch norm, so there is no
    /// train/eval distinction beyond `learn`.
    pub fn forward(
        &mut self,
        tape: &Tape<S>,
        x: Var,
        z: Option<Var>,
        learn: bool,
    ) -> Result<(ScoreVars, Vec<(String, Var)>)> {
        let xs = tape.shape(x);
        if xs.len() != 4 || xs[1] != self.arch.in_ch || xs[2] != self.arch.in_res || xs[3] != self.arch.in_res
        {
            return Err(TensorError::ShapeMismatch {
                op: "discriminate",
                detail: format!(
                    "expected x [B,{},{},{}], got {:?}",
                    self.arch.in_ch, self.arch.in_res, self.arch.in_res, xs
                ),
            });
        }
        let arch = self.arch.clone();
        let batch = xs[0];
        let mut binder = Binder::new(tape, &mut self.params, learn);

        let mut h = x;
        for idx in 1..=3 {
            let w = binder.bind(&format!("d.f.conv{idx}.w"))?;
            let b = binder.bind(&format!("d.f.conv{idx}.b"))?;
            h = tape.conv2d(h, w, 2, 1)?;
            h = tape.add_chan_bias(h, b)?;
            h = tape.relu(h)?;
        }
        let f_feat = tape.global_avg_pool(h)?;
        let s_x = project(tape, &mut binder, "d.f.proj.w", f_feat, batch)?;

        if !arch.pair_heads {
            if z.is_some() {
                return Err(TensorError::Domain {
                    op: "discriminate",
                    detail: "plain-GAN discriminator has no latent heads".into(),
                });
            }
            return Ok((ScoreVars { s_x, s_z: None, s_xz: None }, binder.into_bindings()));
        }

        let z = z.ok_or_else(|| TensorError::Domain {
            op: "discriminate",
            detail: "pair scoring requires a latent batch".into(),
        })?;
        let zs = tape.shape(z);
        if zs != [batch, arch.latent_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "discriminate",
                detail: format!("expected z [{batch},{}], got {zs:?}", arch.latent_dim),
            });
        }
        let h_feat = run_res_mlp(&mut binder, "d.h", z, arch.mlp_blocks)?;
        let s_z = project(tape, &mut binder, "d.h.proj.w", h_feat, batch)?;
        let joint_in = tape.concat(&[f_feat, h_feat])?;
        let j_feat = run_res_mlp(&mut binder, "d.j", joint_in, arch.mlp_blocks)?;
        let s_xz = project(tape, &mut binder, "d.j.proj.w", j_feat, batch)?;
        Ok((ScoreVars { s_x, s_z: Some(s_z), s_xz: Some(s_xz) }, binder.into_bindings()))
    }
}

fn project<S: Scalar>(
    tape: &Tape<S>,
    binder: &mut Binder<'_, S>,
    name: &str,
    feat: Var,
    batch: usize,
) -> Result<Var> {
    let w = binder.bind(name)?;
    let s = tape.matmul(feat, w)?;
    tape.reshape(s, &[batch])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use crate::tensor::grad_check;

    fn tiny(pair: bool) -> DiscriminatorArch {
        DiscriminatorArch {
            in_ch: 1,
            in_res: 8,
            width: 2,
            mlp_width: 8,
            mlp_blocks: 1,
            latent_dim: 4,
            pair_heads: pair,
            spectral: true,
        }
    }

    fn rand_t(rng: &mut Prng, shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal() * scale).collect()).unwrap()
    }

    #[test]
    fn score_shapes_and_joint_input_structure() {
        let mut rng = Prng::new(1, StreamId::Init);
        let mut d = Discriminator::<f64>::init(tiny(true), &mut rng).unwrap();
        // J consumes [F(x), H(z)]: its input layer must be (4w + mlp_width) wide.
        assert_eq!(d.params.get("d.j.in.w").unwrap().value.shape(), &[8 + 8, 8]);
        let mut drng = Prng::new(2, StreamId::Data);
        let x = rand_t(&mut drng, &[2, 1, 8, 8], 0.5);
        let z = rand_t(&mut drng, &[2, 4], 1.0);
        let tape = Tape::new();
        let (sv, _) = d.forward(&tape, tape.leaf(x), Some(tape.leaf(z)), false).unwrap();
        assert_eq!(tape.value(sv.s_x).shape(), &[2]);
        assert_eq!(tape.value(sv.s_z.unwrap()).shape(), &[2]);
        assert_eq!(tape.value(sv.s_xz.unwrap()).shape(), &[2]);
    }

    #[test]
    fn all_zero_parameters_give_exactly_zero_scores() {
        let mut rng = Prng::new(3, StreamId::Init);
        let mut d = Discriminator::<f64>::init(tiny(true), &mut rng).unwrap();
        let names: Vec<String> = d.params.names().cloned().collect();
        for n in names {
            let shape = d.params.get(&n).unwrap().value.shape().to_vec();
            d.params.set_value(&n, Tensor::zeros(&shape)).unwrap();
        }
        let mut drng = Prng::new(4, StreamId::Data);
        let x = rand_t(&mut drng, &[3, 1, 8, 8], 0.5);
        let z = rand_t(&mut drng, &[3, 4], 1.0);
        let tape = Tape::new();
        let (sv, _) = d.forward(&tape, tape.leaf(x), Some(tape.leaf(z)), false).unwrap();
        assert!(tape.value(sv.s_x).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(sv.s_z.unwrap()).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(sv.s_xz.unwrap()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plain_gan_mode_has_no_latent_heads() {
        let mut rng = Prng::new(5, StreamId::Init);
        let mut d = Discriminator::<f64>::init(tiny(false), &mut rng).unwrap();
        assert!(!d.params.contains("d.h.in.w"));
        assert!(!d.params.contains("d.j.in.w"));
        assert!(!d.params.contains("d.h.proj.w"));
        let mut drng = Prng::new(6, StreamId::Data);
        let x = rand_t(&mut drng, &[2, 1, 8, 8], 0.5);
        let tape = Tape::new();
        let (sv, _) = d.forward(&tape, tape.leaf(x.clone()), None, false).unwrap();
        assert!(sv.s_z.is_none() && sv.s_xz.is_none());
        // Passing z in plain mode is an error.
        let tape2 = Tape::new();
        let zv = tape2.leaf(Tensor::<f64>::zeros(&[2, 4]));
        assert!(d.forward(&tape2, tape2.leaf(x), Some(zv), false).is_err());
    }

    #[test]
    fn scores_are_differentiable_in_both_inputs() {
        let mut rng = Prng::new(7, StreamId::Init);
        let mut d = Discriminator::<f64>::init(tiny(true), &mut rng).unwrap();
        let mut drng = Prng::new(8, StreamId::Data);
        let x0 = rand_t(&mut drng, &[2, 1, 8, 8], 0.5);
        let z0 = rand_t(&mut drng, &[2, 4], 1.0);

        let mut run = |x: Tensor<f64>, z: Tensor<f64>, want_grads: bool| {
            let tape = Tape::new();
            let xv = tape.trainable_leaf(x);
            let zv = tape.trainable_leaf(z);
            let (sv, _) = d.forward(&tape, xv, Some(zv), false).unwrap();
            let sum = tape
                .add(tape.add(sv.s_x, sv.s_z.unwrap()).unwrap(), sv.s_xz.unwrap())
                .unwrap();
            let loss = tape.mean(sum).unwrap();
            let l = tape.value(loss).get(0);
            if want_grads {
                let g = tape.backward(loss).unwrap();
                (l, Some(g.get(xv).unwrap().clone()), Some(g.get(zv).unwrap().clone()))
            } else {
                (l, None, None)
            }
        };
        let (_, gx, gz) = run(x0.clone(), z0.clone(), true);

        let rx = grad_check(
            |p| Ok(run(p.clone(), z0.clone(), false).0),
            &x0,
            &gx.unwrap(),
            1e-4,
        )
        .unwrap();
        assert!(rx.max_rel_err < 1e-3, "x grad rel err {}", rx.max_rel_err);
        let rz = grad_check(
            |p| Ok(run(x0.clone(), p.clone(), false).0),
            &z0,
            &gz.unwrap(),
            1e-4,
        )
        .unwrap();
        assert!(rz.max_rel_err < 1e-3, "z grad rel err {}", rz.max_rel_err);
    }

    #[test]
    fn spectral_everywhere_rank_two_and_no_shadows() {
        let mut rng = Prng::new(9, StreamId::Init);
        let d = Discriminator::<f32>::init(tiny(true), &mut rng).unwrap();
        for (name, e) in d.params.iter() {
            assert!(e.ema.is_none(), "{name}: discriminator tensors are never averaged");
            if e.trainable {
                assert_eq!(e.spectral.is_some(), e.value.rank() >= 2, "{name} spectral flag");
            }
        }
    }
}
