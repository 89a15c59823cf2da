//! Generator G: latent -> image in (-1, 1).
//!
//! A linear stem maps the first latent slice to a 4x4 feature map (4w
//! channels), followed by stride-2 transposed-conv stages that halve the
//! channel count and double the resolution. The latent is split into
//! `groups` contiguous slices distributed over the injection sites (stem +
//! each stage): a site's slices are broadcast spatially and concatenated to
//! its input channels. The final stage maps to image channels with a
//! per-channel bias and tanh (no batch norm on the output).
//!
//! All rank>=2 generator weights are spectrally normalized (when enabled);
//! every trainable tensor carries an EMA shadow.

use super::{group_site_split, init_weight, Binder, LatentSpec, ParamTree};
use crate::rng::Prng;
use crate::tensor::{BnLayout, Result, Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone)]
pub struct GeneratorArch {
    pub out_ch: usize,
    /// Output resolution: 4 * 2^stages for stages >= 1 (8, 16, 32, ...).
    pub out_res: usize,
    /// Base width; the stem produces 4w channels.
    pub width: usize,
    pub latent: LatentSpec,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub spectral: bool,
}

impl GeneratorArch {
    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        if self.out_ch == 0 || self.width == 0 {
            return Err(TensorError::Domain {
                op: "generator_arch",
                detail: "channels and width must be positive".into(),
            });
        }
        if self.stages() == 0 || self.out_res != 4 << self.stages() {
            return Err(TensorError::Domain {
                op: "generator_arch",
                detail: format!("output resolution {} is not 4*2^k with k >= 1", self.out_res),
            });
        }
        Ok(())
    }

    /// Number of stride-2 upsampling stages after the 4x4 stem.
    pub fn stages(&self) -> usize {
        let mut r = self.out_res;
        let mut s = 0;
        while r > 4 && r % 2 == 0 {
            r /= 2;
            s += 1;
        }
        s
    }

    /// Channels entering stage i (1-based), before injection.
    fn stage_in_ch(&self, i: usize) -> usize {
        (4 * self.width) >> (i - 1)
    }

    /// Channels leaving stage i: halved width, or image channels at the end.
    fn stage_out_ch(&self, i: usize) -> usize {
        if i == self.stages() {
            self.out_ch
        } else {
            (4 * self.width) >> i
        }
    }

    /// Latent coordinate span injected at site s (0 = stem, then stages).
    fn site_span(&self, split: &[(usize, usize)], s: usize) -> (usize, usize) {
        let gd = self.latent.group_dim();
        let (a, b) = split[s];
        (a * gd, b * gd)
    }
}

pub struct Generator<S: Scalar = f32> {
    pub arch: GeneratorArch,
    pub params: ParamTree<S>,
}

impl<S: Scalar> Generator<S> {
    pub fn init(arch: GeneratorArch, rng: &mut Prng) -> Result<Self> {
        arch.validate()?;
        let mut p = ParamTree::new();
        let stages = arch.stages();
        let split = group_site_split(arch.latent.groups, 1 + stages);
        let (s0, e0) = arch.site_span(&split, 0);
        let stem_out = 4 * arch.width * 16;
        p.insert_trainable(
            "g.stem.w",
            init_weight(&[e0 - s0, stem_out], e0 - s0, rng)?,
            arch.spectral,
            true,
            rng,
        )?;
        insert_bn(&mut p, "g.bn0", 4 * arch.width, rng)?;
        for i in 1..=stages {
            let (si, ei) = arch.site_span(&split, i);
            let c_in = arch.stage_in_ch(i) + (ei - si);
            let c_out = arch.stage_out_ch(i);
            let name = if i == stages { "g.out.w".to_string() } else { format!("g.block{i}.w") };
            p.insert_trainable(
                &name,
                init_weight(&[c_in, c_out, 4, 4], c_in * 16, rng)?,
                arch.spectral,
                true,
                rng,
            )?;
            if i == stages {
                p.insert_trainable("g.out.b", Tensor::zeros(&[c_out]), false, true, rng)?;
            } else {
                insert_bn(&mut p, &format!("g.bn{i}"), c_out, rng)?;
            }
        }
        Ok(Generator { arch, params: p })
    }

    /// Build the generator forward on `tape`; returns the image handle
    /// [B, out_ch, out_res, out_res] with every value strictly in (-1, 1).
    pub fn forward(
        &mut self,
        tape: &Tape<S>,
        z: Var,
        train: bool,
        learn: bool,
    ) -> Result<(Var, Vec<(String, Var)>)> {
        let zs = tape.shape(z);
        if zs.len() != 2 || zs[1] != self.arch.latent.dim {
            return Err(TensorError::ShapeMismatch {
                op: "generate",
                detail: format!("expected z [B,{}], got {zs:?}", self.arch.latent.dim),
            });
        }
        let arch = self.arch.clone();
        let stages = arch.stages();
        let split = group_site_split(arch.latent.groups, 1 + stages);
        let mut binder = Binder::new(tape, &mut self.params, learn);

        let (s0, e0) = arch.site_span(&split, 0);
        let z0 = tape.slice_axis1(z, s0, e0 - s0)?;
        let w_stem = binder.bind("g.stem.w")?;
        let stem = tape.matmul(z0, w_stem)?;
        let mut h = tape.reshape(stem, &[zs[0], 4 * arch.width, 4, 4])?;
        h = binder.batch_norm(h, "g.bn0", BnLayout::Chan, train, arch.bn_momentum, arch.bn_eps)?;
        h = tape.relu(h)?;

        let mut res = 4usize;
        for i in 1..=stages {
            let (si, ei) = arch.site_span(&split, i);
            if ei > si {
                let zi = tape.slice_axis1(z, si, ei - si)?;
                let bc = tape.broadcast_channels(zi, res, res)?;
                h = tape.concat(&[h, bc])?;
            }
            if i == stages {
                let w = binder.bind("g.out.w")?;
                let b = binder.bind("g.out.b")?;
                h = tape.conv_t2d(h, w, 2, 1)?;
                h = tape.add_chan_bias(h, b)?;
                h = tape.tanh(h)?;
            } else {
                let w = binder.bind(&format!("g.block{i}.w"))?;
                h = tape.conv_t2d(h, w, 2, 1)?;
                h = binder.batch_norm(
                    h,
                    &format!("g.bn{i}"),
                    BnLayout::Chan,
                    train,
                    arch.bn_momentum,
                    arch.bn_eps,
                )?;
                h = tape.relu(h)?;
            }
            res *= 2;
        }
        Ok((h, binder.into_bindings()))
    }
}

fn insert_bn<S: Scalar>(p: &mut ParamTree<S>, prefix: &str, ch: usize, rng: &mut Prng) -> Result<()> {
    p.insert_trainable(&format!("{prefix}.gamma"), Tensor::full(&[ch], S::fr(1.0)), false, true, rng)?;
    p.insert_trainable(&format!("{prefix}.beta"), Tensor::zeros(&[ch]), false, true, rng)?;
    p.insert_state(&format!("{prefix}.running_mean"), Tensor::zeros(&[ch]))?;
    p.insert_state(&format!("{prefix}.running_var"), Tensor::full(&[ch], S::fr(1.0)))?;
    p.insert_state(&format!("{prefix}.count"), Tensor::zeros(&[1]))
}
