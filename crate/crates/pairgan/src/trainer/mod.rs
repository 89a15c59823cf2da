//! Alternating adversarial training loop.
//!
//! One training step = `d_substeps` discriminator updates followed by one
//! joint encoder/generator update, each on a fresh minibatch. Random draws
//! per (sub)step, in fixed order:
//!
//! 1. data stream: one provider call for the image batch;
//! 2. latent stream: batch x latent_dim prior coordinates;
//! 3. noise stream: batch x latent_dim reparameterization normals
//!    (only when an encoder is present and stochastic).
//!
//! State purity: a network's tensors (weights, spectral vectors, batch-norm
//! running moments, EMA shadows, optimizer moments) change only during that
//! network's own update. Frozen networks still run in batch-statistics mode
//! inside a training step, but commit nothing.
//!
//! During discriminator updates the two branches are scored as one
//! concatenated batch (reals first, fakes second), so each discriminator
//! weight is bound once: exactly one power-iteration advance and one
//! gradient per sub-step. The discriminator has no batch norm, so batch
//! composition does not leak between branches.

pub mod adam;
pub mod checkpoint;

use std::collections::BTreeMap;

use crate::models::{
    sample_prior, Discriminator, Encoder, EncoderMode, Generator, ScoreVars,
};
use crate::objective::{self, AblationFlags, TermMeans};
use crate::rng::{Prng, PrngState, StreamId};
use crate::tensor::{area_downsample, GradMap, Result, Scalar, Tape, Tensor, TensorError, Var};

use adam::{Adam, AdamConfig};
use checkpoint::Record;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub batch: usize,
    pub d_substeps: u32,
    pub lr_d: f64,
    pub lr_eg: f64,
    /// Extra learning-rate multiplier for the encoder (on top of lr_eg).
    pub eta_e: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub ema_decay: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch: 64,
            d_substeps: 2,
            lr_d: 4e-4,
            lr_eg: 1e-4,
            eta_e: 1.0,
            beta1: 0.0,
            beta2: 0.999,
            adam_eps: 1e-8,
            ema_decay: 0.9999,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.d_substeps == 0 {
            return Err(TensorError::Domain {
                op: "train_settings",
                detail: "batch and d_substeps must be positive".into(),
            });
        }
        if self.eta_e <= 0.0 || !(0.0..1.0).contains(&self.ema_decay) {
            return Err(TensorError::Domain {
                op: "train_settings",
                detail: "eta_e must be positive, ema_decay in [0,1)".into(),
            });
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

/// Batch provider: fills a [batch, C, H, W] tensor of reals, drawing only
/// from the passed RNG (this is what makes checkpoint resume exact).
pub type BatchProvider<'a, S> = dyn FnMut(usize, &mut Prng) -> Result<Tensor<S>> + 'a;

/// One step's scalar log output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    /// Discriminator loss at the last sub-step of this step.
    pub loss_d: f64,
    pub loss_eg: f64,
    /// Raw score means from the last discriminator sub-step.
    pub real: TermMeans,
    pub fake: TermMeans,
}

pub const CSV_HEADER: &str =
    "step,loss_d,loss_eg,sx_real,sz_real,sxz_real,sx_fake,sz_fake,sxz_fake";

fn csv_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.9e}"),
        None => String::new(),
    }
}

impl TrainLogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            csv_cell(Some(self.loss_d)),
            csv_cell(Some(self.loss_eg)),
            csv_cell(Some(self.real.s_x)),
            csv_cell(self.real.s_z),
            csv_cell(self.real.s_xz),
            csv_cell(Some(self.fake.s_x)),
            csv_cell(self.fake.s_z),
            csv_cell(self.fake.s_xz),
        )
    }
}

pub struct Trainer<S: Scalar = f32> {
    pub settings: TrainSettings,
    pub flags: AblationFlags,
    pub enc: Option<Encoder<S>>,
    pub gen: Generator<S>,
    pub disc: Discriminator<S>,
    pub opt_e: Option<Adam<S>>,
    pub opt_g: Adam<S>,
    pub opt_d: Adam<S>,
    pub data_rng: Prng,
    pub latent_rng: Prng,
    pub noise_rng: Prng,
    pub step: u64,
    /// Verbatim copy of the run's config file, carried inside checkpoints
    /// so a saved model is self-describing. Not interpreted by the trainer.
    pub config_echo: Vec<u8>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(
        enc: Option<Encoder<S>>,
        gen: Generator<S>,
        disc: Discriminator<S>,
        flags: AblationFlags,
        settings: TrainSettings,
        master_seed: u64,
    ) -> Result<Self> {
        flags.validate()?;
        settings.validate()?;
        if flags.pairing != enc.is_some() {
            return Err(TensorError::Domain {
                op: "trainer",
                detail: "pairing flag must match encoder presence".into(),
            });
        }
        if disc.arch.pair_heads != flags.pairing {
            return Err(TensorError::Domain {
                op: "trainer",
                detail: "discriminator latent heads must match pairing mode".into(),
            });
        }
        if gen.arch.out_res != disc.arch.in_res || gen.arch.out_ch != disc.arch.in_ch {
            return Err(TensorError::Domain {
                op: "trainer",
                detail: format!(
                    "generator output {}x{}x{} does not feed discriminator {}x{}x{}",
                    gen.arch.out_ch, gen.arch.out_res, gen.arch.out_res,
                    disc.arch.in_ch, disc.arch.in_res, disc.arch.in_res
                ),
            });
        }
        if disc.arch.latent_dim != gen.arch.latent.dim {
            return Err(TensorError::Domain {
                op: "trainer",
                detail: "discriminator latent width must match the prior".into(),
            });
        }
        if let Some(e) = &enc {
            if e.arch.latent_dim != gen.arch.latent.dim {
                return Err(TensorError::Domain {
                    op: "trainer",
                    detail: "encoder latent width must match the prior".into(),
                });
            }
            if e.arch.in_ch != gen.arch.out_ch {
                return Err(TensorError::Domain {
                    op: "trainer",
                    detail: "encoder and generator image channels differ".into(),
                });
            }
            if e.arch.in_res % disc.arch.in_res != 0 {
                return Err(TensorError::Domain {
                    op: "trainer",
                    detail: format!(
                        "encoder resolution {} must be an integer multiple of discriminator resolution {}",
                        e.arch.in_res, disc.arch.in_res
                    ),
                });
            }
        }
        let opt_e = match &enc {
            Some(_) => Some(Adam::new(settings.adam(settings.lr_eg * settings.eta_e))?),
            None => None,
        };
        let opt_g = Adam::new(settings.adam(settings.lr_eg))?;
        let opt_d = Adam::new(settings.adam(settings.lr_d))?;
        Ok(Trainer {
            settings,
            flags,
            enc,
            gen,
            disc,
            opt_e,
            opt_g,
            opt_d,
            data_rng: Prng::new(master_seed, StreamId::Data),
            latent_rng: Prng::new(master_seed, StreamId::Latent),
            noise_rng: Prng::new(master_seed, StreamId::Noise),
            step: 0,
            config_echo: Vec::new(),
        })
    }

    fn stochastic(&self) -> bool {
        matches!(&self.enc, Some(e) if e.arch.mode == EncoderMode::Stochastic)
    }

    /// Real batch at discriminator resolution (area-mean downsample when the
    /// encoder consumes higher-resolution images than the discriminator).
    fn real_for_disc(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let factor = match &self.enc {
            Some(e) => e.arch.in_res / self.disc.arch.in_res,
            None => 1,
        };
        area_downsample(x, factor)
    }

    /// Draws for one (sub)step, in the documented stream order.
    fn draw_inputs(
        &mut self,
        provider: &mut BatchProvider<'_, S>,
    ) -> Result<(Tensor<S>, Tensor<S>, Option<Tensor<S>>)> {
        let b = self.settings.batch;
        let x = provider(b, &mut self.data_rng)?;
        let want_res = match &self.enc {
            Some(e) => e.arch.in_res,
            None => self.disc.arch.in_res,
        };
        let want = [b, self.gen.arch.out_ch, want_res, want_res];
        if x.shape() != want {
            return Err(TensorError::ShapeMismatch {
                op: "trainer",
                detail: format!("provider returned {:?}, expected {:?}", x.shape(), want),
            });
        }
        let z = sample_prior(&self.gen.arch.latent, b, &mut self.latent_rng)?;
        let eps = if self.stochastic() {
            let dim = self.gen.arch.latent.dim;
            Some(Tensor::from_fn(&[b, dim], |_| S::fr(self.noise_rng.normal())))
        } else {
            None
        };
        Ok((x, z, eps))
    }

    fn d_substep(
        &mut self,
        provider: &mut BatchProvider<'_, S>,
    ) -> Result<(f64, TermMeans, TermMeans)> {
        let (x, z, eps) = self.draw_inputs(provider)?;
        let b = self.settings.batch;

        // Frozen encoder/generator passes: values only, nothing committed.
        let z_enc = match &mut self.enc {
            Some(enc) => {
                let t = Tape::new();
                let xv = t.leaf(x.clone());
                let ev = eps.as_ref().map(|e| t.leaf(e.clone()));
                let (evars, _) = enc.forward(&t, xv, ev, true, false)?;
                Some(t.value(evars.z))
            }
            None => None,
        };
        let x_fake = {
            let t = Tape::new();
            let zv = t.leaf(z.clone());
            let (img, _) = self.gen.forward(&t, zv, true, false)?;
            t.value(img)
        };

        let x_all = concat_batch(&self.real_for_disc(&x)?, &x_fake)?;
        let tape = Tape::new();
        let xv = tape.leaf(x_all);
        let zv = match z_enc {
            Some(ze) => Some(tape.leaf(concat_batch(&ze, &z)?)),
            None => None,
        };
        let (scores, bindings) = self.disc.forward(&tape, xv, zv, true)?;
        let (real_scores, fake_scores) = split_scores(&tape, &scores, b)?;
        let loss = objective::d_loss(&tape, &real_scores, &fake_scores, &self.flags)?;
        let loss_val = tape.value(loss).get(0).fl();
        let gmap = tape.backward(loss)?;
        let grads = collect_grads(&gmap, &bindings)?;
        self.opt_d.apply(&mut self.disc.params, &grads)?;
        Ok((
            loss_val,
            objective::score_means(&tape, &real_scores),
            objective::score_means(&tape, &fake_scores),
        ))
    }

    fn eg_step(&mut self, provider: &mut BatchProvider<'_, S>) -> Result<f64> {
        let (x, z, eps) = self.draw_inputs(provider)?;
        let tape = Tape::new();
        let zv = tape.leaf(z);

        let (loss, e_bind, g_bind) = if let Some(enc) = &mut self.enc {
            let xv = tape.leaf(x.clone());
            let ev = eps.as_ref().map(|e| tape.leaf(e.clone()));
            let (evars, e_bind) = enc.forward(&tape, xv, ev, true, true)?;
            let factor = enc.arch.in_res / self.disc.arch.in_res;
            let x_d = if factor == 1 { xv } else { tape.leaf(area_downsample(&x, factor)?) };
            let (x_fake, g_bind) = self.gen.forward(&tape, zv, true, true)?;
            let (real_scores, _) = self.disc.forward(&tape, x_d, Some(evars.z), false)?;
            let (fake_scores, _) = self.disc.forward(&tape, x_fake, Some(zv), false)?;
            let loss = objective::eg_loss(&tape, &real_scores, &fake_scores, &self.flags)?;
            (loss, e_bind, g_bind)
        } else {
            let (x_fake, g_bind) = self.gen.forward(&tape, zv, true, true)?;
            let (fake_scores, _) = self.disc.forward(&tape, x_fake, None, false)?;
            let loss = objective::eg_branch_loss(&tape, &fake_scores, -1.0, &self.flags)?;
            (loss, Vec::new(), g_bind)
        };

        let loss_val = tape.value(loss).get(0).fl();
        let gmap = tape.backward(loss)?;
        if let (Some(enc), Some(opt_e)) = (&mut self.enc, &mut self.opt_e) {
            let e_grads = collect_grads(&gmap, &e_bind)?;
            opt_e.apply(&mut enc.params, &e_grads)?;
        }
        let g_grads = collect_grads(&gmap, &g_bind)?;
        self.opt_g.apply(&mut self.gen.params, &g_grads)?;

        let decay = self.settings.ema_decay;
        if let Some(enc) = &mut self.enc {
            enc.params.ema_step(decay);
        }
        self.gen.params.ema_step(decay);
        Ok(loss_val)
    }

    /// One full training step: `d_substeps` discriminator updates, then one
    /// encoder/generator update, then the EMA update.
    ///
    /// Divergence policy: a non-finite value aborts the step with an error
    /// at the op that produced it (every graph op and the optimizer check;
    /// values are never clipped or replaced), so an exploding run fails
    /// loudly instead of polluting ablation comparisons.
    pub fn train_step(&mut self, provider: &mut BatchProvider<'_, S>) -> Result<TrainLogRow> {
        let mut last = (0.0, TermMeans { s_x: 0.0, s_z: None, s_xz: None }, TermMeans {
            s_x: 0.0,
            s_z: None,
            s_xz: None,
        });
        for _ in 0..self.settings.d_substeps {
            last = self.d_substep(provider)?;
        }
        let loss_eg = self.eg_step(provider)?;
        self.step += 1;
        Ok(TrainLogRow { step: self.step, loss_d: last.0, loss_eg, real: last.1, fake: last.2 })
    }

    // ------------------------------------------------------------------
    // Checkpointing
    // ------------------------------------------------------------------

    fn adam_records<T: Scalar>(prefix: &str, opt: &Adam<T>) -> Vec<Record> {
        let mut out = vec![Record::scalar_u64(format!("{prefix}t"), opt.t)];
        for name in opt.moment_names() {
            let (m, v) = opt.moments(name).expect("iterating existing moments");
            out.push(Record::f64(
                format!("{prefix}m/{name}"),
                &[m.len()],
                m.iter().map(|&x| x.fl()).collect(),
            ));
            out.push(Record::f64(
                format!("{prefix}v/{name}"),
                &[v.len()],
                v.iter().map(|&x| x.fl()).collect(),
            ));
        }
        out
    }

    fn restore_adam<T: Scalar>(
        prefix: &str,
        opt: &mut Adam<T>,
        map: &BTreeMap<String, Record>,
    ) -> Result<()> {
        opt.t = map
            .get(&format!("{prefix}t"))
            .ok_or_else(|| TensorError::Format {
                what: "checkpoint",
                detail: format!("missing optimizer step count {prefix}t"),
            })?
            .as_u64_scalar()?;
        let m_prefix = format!("{prefix}m/");
        for (key, rec) in map.range(m_prefix.clone()..) {
            if !key.starts_with(&m_prefix) {
                break;
            }
            let name = &key[m_prefix.len()..];
            let v_rec = map.get(&format!("{prefix}v/{name}")).ok_or_else(|| {
                TensorError::Format {
                    what: "checkpoint",
                    detail: format!("missing second moment {prefix}v/{name}"),
                }
            })?;
            let m: Vec<T> = rec.as_f64()?.iter().map(|&x| T::fr(x)).collect();
            let v: Vec<T> = v_rec.as_f64()?.iter().map(|&x| T::fr(x)).collect();
            opt.set_moments(name, m, v)?;
        }
        Ok(())
    }

    fn checkpoint_records(&self) -> Vec<Record> {
        let mut records = vec![
            Record::scalar_u64("meta/step", self.step),
            Record::bytes("meta/config", self.config_echo.clone()),
            Record::bytes("rng/data", self.data_rng.state().to_bytes().to_vec()),
            Record::bytes("rng/latent", self.latent_rng.state().to_bytes().to_vec()),
            Record::bytes("rng/noise", self.noise_rng.state().to_bytes().to_vec()),
        ];
        if let Some(enc) = &self.enc {
            records.extend(checkpoint::tree_records("e/", &enc.params));
        }
        records.extend(checkpoint::tree_records("g/", &self.gen.params));
        records.extend(checkpoint::tree_records("d/", &self.disc.params));
        if let Some(opt_e) = &self.opt_e {
            records.extend(Self::adam_records("adam_e/", opt_e));
        }
        records.extend(Self::adam_records("adam_g/", &self.opt_g));
        records.extend(Self::adam_records("adam_d/", &self.opt_d));
        records
    }

    pub fn save_checkpoint(&self, w: &mut impl std::io::Write) -> Result<()> {
        checkpoint::write_records(w, &self.checkpoint_records())
    }

    /// Restore a checkpoint written by [`save_checkpoint`] into a trainer
    /// built with the same architecture and settings. After this, training
    /// continues exactly as if it had never stopped.
    pub fn load_checkpoint(&mut self, r: &mut impl std::io::Read) -> Result<()> {
        let map = checkpoint::record_map(checkpoint::read_records(r)?)?;
        self.step = map
            .get("meta/step")
            .ok_or_else(|| TensorError::Format {
                what: "checkpoint",
                detail: "missing meta/step".into(),
            })?
            .as_u64_scalar()?;
        self.config_echo = map
            .get("meta/config")
            .ok_or_else(|| TensorError::Format {
                what: "checkpoint",
                detail: "missing meta/config".into(),
            })?
            .as_bytes()?
            .to_vec();
        let restore_rng = |name: &str| -> Result<Prng> {
            let rec = map.get(name).ok_or_else(|| TensorError::Format {
                what: "checkpoint",
                detail: format!("missing RNG state {name}"),
            })?;
            let state = PrngState::from_bytes(rec.as_bytes()?).ok_or_else(|| {
                TensorError::Format {
                    what: "checkpoint",
                    detail: format!("{name}: bad RNG state length"),
                }
            })?;
            Ok(Prng::restore(&state))
        };
        self.data_rng = restore_rng("rng/data")?;
        self.latent_rng = restore_rng("rng/latent")?;
        self.noise_rng = restore_rng("rng/noise")?;
        if let Some(enc) = &mut self.enc {
            checkpoint::restore_tree("e/", &mut enc.params, &map)?;
        }
        checkpoint::restore_tree("g/", &mut self.gen.params, &map)?;
        checkpoint::restore_tree("d/", &mut self.disc.params, &map)?;
        if let Some(opt_e) = &mut self.opt_e {
            Self::restore_adam("adam_e/", opt_e, &map)?;
        }
        Self::restore_adam("adam_g/", &mut self.opt_g, &map)?;
        Self::restore_adam("adam_d/", &mut self.opt_d, &map)?;
        // Every record must correspond to current state: a full re-serialize
        // of what we just restored must name exactly the file's records.
        let expected: std::collections::BTreeSet<String> =
            self.checkpoint_records().into_iter().map(|r| r.name).collect();
        for key in map.keys() {
            if !expected.contains(key) {
                return Err(TensorError::Format {
                    what: "checkpoint",
                    detail: format!("record {key} does not belong to this model"),
                });
            }
        }
        Ok(())
    }
}

/// Run `steps` training steps, invoking `on_row` after each.
pub fn run_training<S: Scalar>(
    trainer: &mut Trainer<S>,
    steps: u64,
    provider: &mut BatchProvider<'_, S>,
    mut on_row: impl FnMut(&TrainLogRow) -> Result<()>,
) -> Result<()> {
    for _ in 0..steps {
        let row = trainer.train_step(provider)?;
        on_row(&row)?;
    }
    Ok(())
}

/// Commit batch-norm running moments on a freshly initialized encoder by
/// running training-mode forwards (needed before any eval-mode use of an
/// untrained model). Draws nothing: stochastic heads are fed zero noise.
pub fn prime_encoder_norm<S: Scalar>(enc: &mut Encoder<S>, batches: &[Tensor<S>]) -> Result<()> {
    for x in batches {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let eps = match enc.arch.mode {
            EncoderMode::Stochastic => {
                Some(tape.leaf(Tensor::zeros(&[x.shape()[0], enc.arch.latent_dim])))
            }
            _ => None,
        };
        enc.forward(&tape, xv, eps, true, true)?;
    }
    Ok(())
}

/// Same priming for a freshly initialized generator (also advances its
/// spectral estimates by one step per batch, which only sharpens them).
pub fn prime_generator_norm<S: Scalar>(gen: &mut Generator<S>, zs: &[Tensor<S>]) -> Result<()> {
    for z in zs {
        let tape = Tape::new();
        let zv = tape.leaf(z.clone());
        gen.forward(&tape, zv, true, true)?;
    }
    Ok(())
}

/// Append two batches along axis 0 (shapes must otherwise agree).
pub fn concat_batch<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != b.rank() || a.shape()[1..] != b.shape()[1..] {
        return Err(TensorError::ShapeMismatch {
            op: "concat_batch",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(&shape, data)
}

/// Split concatenated [2B] scores back into (first half, second half).
fn split_halves<S: Scalar>(tape: &Tape<S>, v: Var, b: usize) -> Result<(Var, Var)> {
    let wide = tape.reshape(v, &[1, 2 * b])?;
    let first = tape.reshape(tape.slice_axis1(wide, 0, b)?, &[b])?;
    let second = tape.reshape(tape.slice_axis1(wide, b, b)?, &[b])?;
    Ok((first, second))
}

fn split_scores<S: Scalar>(
    tape: &Tape<S>,
    scores: &ScoreVars,
    b: usize,
) -> Result<(ScoreVars, ScoreVars)> {
    let (x1, x2) = split_halves(tape, scores.s_x, b)?;
    let (z1, z2) = match scores.s_z {
        Some(s) => {
            let (a, c) = split_halves(tape, s, b)?;
            (Some(a), Some(c))
        }
        None => (None, None),
    };
    let (j1, j2) = match scores.s_xz {
        Some(s) => {
            let (a, c) = split_halves(tape, s, b)?;
            (Some(a), Some(c))
        }
        None => (None, None),
    };
    Ok((
        ScoreVars { s_x: x1, s_z: z1, s_xz: j1 },
        ScoreVars { s_x: x2, s_z: z2, s_xz: j2 },
    ))
}

/// Gather per-parameter gradients by bound name, summing if a parameter was
/// bound more than once. Parameters that did not participate in the loss are
/// absent from the result (they are skipped by the optimizer).
fn collect_grads<S: Scalar>(
    gmap: &GradMap<S>,
    bindings: &[(String, Var)],
) -> Result<BTreeMap<String, Tensor<S>>> {
    let mut out: BTreeMap<String, Tensor<S>> = BTreeMap::new();
    for (name, var) in bindings {
        let Some(g) = gmap.get(*var) else { continue };
        match out.remove(name) {
            None => {
                out.insert(name.clone(), g.clone());
            }
            Some(prev) => {
                let sum: Vec<S> = prev
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&a, &b)| S::fr(a.fl() + b.fl()))
                    .collect();
                out.insert(name.clone(), Tensor::new(prev.shape(), sum)?);
            }
        }
    }
    Ok(out)
}


#[cfg(test)]
mod timing {
    use super::*;
    use crate::data::{training_provider, AugmentMode, ImageSet, SynthDataset, SynthKind};
    use crate::models::{
        Discriminator, DiscriminatorArch, Encoder, EncoderArch, EncoderMode, Generator,
        GeneratorArch, LatentSpec, PriorKind,
    };

    #[test]
    #[ignore = "manual step-time probe"]
    fn step_time_probe() {
        let mut rng = Prng::new(1, StreamId::Init);
        let latent = LatentSpec { kind: PriorKind::Gaussian, dim: 32, groups: 4 };
        let enc = Encoder::<f32>::init(
            EncoderArch {
                in_ch: 1, in_res: 16, width: 8, head_width: 96, head_blocks: 2,
                latent_dim: 32, mode: EncoderMode::Stochastic, bn_momentum: 0.9, bn_eps: 1e-5,
            },
            &mut rng,
        ).unwrap();
        let gen = Generator::init(
            GeneratorArch { out_ch: 1, out_res: 16, width: 6, latent, bn_momentum: 0.9, bn_eps: 1e-5, spectral: true },
            &mut rng,
        ).unwrap();
        let disc = Discriminator::init(
            DiscriminatorArch { in_ch: 1, in_res: 16, width: 8, mlp_width: 96, mlp_blocks: 2, latent_dim: 32, pair_heads: true, spectral: true },
            &mut rng,
        ).unwrap();
        let settings = TrainSettings { batch: 16, ..TrainSettings::default() };
        let mut tr = Trainer::new(Some(enc), gen, disc, AblationFlags::base(), settings, 1).unwrap();
        let ds = SynthDataset::new(SynthKind::Shapes, 16, 512, 1).unwrap();
        let mut provider = training_provider(ImageSet::Synth(ds), AugmentMode::Light, 16, 512);
        // warmup
        for _ in 0..3 { tr.train_step(&mut provider).unwrap(); }
        let t0 = std::time::Instant::now();
        let n = 20;
        for _ in 0..n { tr.train_step(&mut provider).unwrap(); }
        let dt = t0.elapsed().as_secs_f64() / n as f64;
        println!("step time: {:.4} s  ({:.1} min per 5k-step run)", dt, dt * 5000.0 / 60.0);
    }
}
