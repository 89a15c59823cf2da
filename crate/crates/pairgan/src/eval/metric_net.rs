//! Small supervised ConvNet trained on the labelled synthetic dataset.
//! Its penultimate (pooled) features feed the Fréchet distance and its
//! softmax probabilities feed the classifier score, giving generation
//! metrics that are independent of the adversarially trained networks.

use std::collections::BTreeMap;

use crate::data::ImageSet;
use crate::models::{linear, Binder, ParamTree};
use crate::rng::{Prng, StreamId};
use crate::tensor::{BnLayout, Result, Scalar, Tape, Tensor, TensorError, Var};
use crate::trainer::adam::{Adam, AdamConfig};

use super::{classifier_score, frechet_distance, generate_images, slice_batch, EVAL_CHUNK};
use crate::models::{sample_prior, Generator};

const BN_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;

/// Three stride-2 conv stages (widths w, 2w, 4w) with batch norm and ReLU,
/// global average pooling, then a linear classifier head.
pub struct MetricNet<S: Scalar = f32> {
    pub in_ch: usize,
    pub in_res: usize,
    pub width: usize,
    pub classes: usize,
    pub params: ParamTree<S>,
}

impl<S: Scalar> MetricNet<S> {
    pub fn init(
        in_ch: usize,
        in_res: usize,
        width: usize,
        classes: usize,
        rng: &mut Prng,
    ) -> Result<Self> {
        if in_ch == 0 || width == 0 || classes < 2 || in_res < 8 {
            return Err(TensorError::Domain {
                op: "metric_net",
                detail: format!(
                    "need positive channels/width, >= 2 classes, resolution >= 8; \
                     got ch {in_ch}, res {in_res}, width {width}, classes {classes}"
                ),
            });
        }
        let mut p = ParamTree::new();
        let widths = [width, 2 * width, 4 * width];
        let mut c_in = in_ch;
        for (i, &c_out) in widths.iter().enumerate() {
            let idx = i + 1;
            p.insert_trainable(
                &format!("m.conv{idx}.w"),
                crate::models::init_weight(&[c_out, c_in, 3, 3], c_in * 9, rng)?,
                false,
                false,
                rng,
            )?;
            p.insert_trainable(
                &format!("m.bn{idx}.gamma"),
                Tensor::full(&[c_out], S::fr(1.0)),
                false,
                false,
                rng,
            )?;
            p.insert_trainable(&format!("m.bn{idx}.beta"), Tensor::zeros(&[c_out]), false, false, rng)?;
            p.insert_state(&format!("m.bn{idx}.running_mean"), Tensor::zeros(&[c_out]))?;
            p.insert_state(&format!("m.bn{idx}.running_var"), Tensor::full(&[c_out], S::fr(1.0)))?;
            p.insert_state(&format!("m.bn{idx}.count"), Tensor::zeros(&[1]))?;
            c_in = c_out;
        }
        p.insert_trainable(
            "m.head.w",
            crate::models::init_weight(&[4 * width, classes], 4 * width, rng)?,
            false,
            false,
            rng,
        )?;
        p.insert_trainable("m.head.b", Tensor::zeros(&[classes]), false, false, rng)?;
        Ok(MetricNet { in_ch, in_res, width, classes, params: p })
    }

    pub fn feat_dim(&self) -> usize {
        4 * self.width
    }

    /// Returns (logits [B, K], pooled features [B, 4w], bindings).
    pub fn forward(
        &mut self,
        tape: &Tape<S>,
        x: Var,
        train: bool,
        learn: bool,
    ) -> Result<(Var, Var, Vec<(String, Var)>)> {
        let xs = tape.shape(x);
        if xs.len() != 4 || xs[1] != self.in_ch || xs[2] != self.in_res || xs[3] != self.in_res {
            return Err(TensorError::ShapeMismatch {
                op: "metric_net",
                detail: format!(
                    "expected [B, {}, {}, {}] images, got {xs:?}",
                    self.in_ch, self.in_res, self.in_res
                ),
            });
        }
        let mut binder = Binder::new(tape, &mut self.params, learn);
        let mut h = x;
        for idx in 1..=3 {
            let w = binder.bind(&format!("m.conv{idx}.w"))?;
            h = tape.conv2d(h, w, 2, 1)?;
            h = binder.batch_norm(h, &format!("m.bn{idx}"), BnLayout::Chan, train, BN_MOMENTUM, BN_EPS)?;
            h = tape.relu(h)?;
        }
        let feat = tape.global_avg_pool(h)?;
        let w = binder.bind("m.head.w")?;
        let b = binder.bind("m.head.b")?;
        let logits = linear(tape, feat, w, Some(b))?;
        Ok((logits, feat, binder.into_bindings()))
    }

    /// Eval-mode pooled features [N, 4w] and softmax probabilities [N, K]
    /// (rows sum to 1 within float round-off). Needs primed running
    /// moments, i.e. at least one training step.
    pub fn features_and_probs(&mut self, xs: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let shape = xs.shape();
        if shape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "metric_net",
                detail: format!("expected [N, C, H, W] images, got {shape:?}"),
            });
        }
        let n = shape[0];
        if n == 0 {
            return Err(TensorError::Domain { op: "metric_net", detail: "empty batch".into() });
        }
        let mut feats = Vec::with_capacity(n * self.feat_dim());
        let mut probs = Vec::with_capacity(n * self.classes);
        let mut start = 0usize;
        while start < n {
            let len = EVAL_CHUNK.min(n - start);
            let chunk = slice_batch(xs, start, len)?;
            let tape = Tape::new();
            let x = tape.leaf(chunk);
            let (logits, feat, _) = self.forward(&tape, x, false, false)?;
            feats.extend_from_slice(tape.value(feat).data());
            let lv = tape.value(logits);
            for i in 0..len {
                let row: Vec<f64> =
                    (0..self.classes).map(|j| lv.get(i * self.classes + j).fl()).collect();
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                probs.extend(exps.iter().map(|&e| S::fr(e / sum)));
            }
            start += len;
        }
        Ok((
            Tensor::new(&[n, self.feat_dim()], feats)?,
            Tensor::new(&[n, self.classes], probs)?,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct MetricTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub width: usize,
    /// Seed for init and minibatch draws (evaluation RNG stream).
    pub seed: u64,
}

impl Default for MetricTrainConfig {
    fn default() -> Self {
        MetricTrainConfig { steps: 1_200, batch: 64, lr: 1e-3, width: 8, seed: 77 }
    }
}

/// Train a metric net on the images at `train_idx` (unaugmented) with
/// standard Adam. Deterministic given the config and index list.
pub fn train_metric_net(
    ds: &ImageSet,
    train_idx: &[usize],
    cfg: &MetricTrainConfig,
) -> Result<MetricNet<f32>> {
    if train_idx.is_empty() || train_idx.iter().any(|&i| i >= ds.count()) {
        return Err(TensorError::Domain {
            op: "metric_net",
            detail: format!(
                "training indices must be non-empty and < {} images",
                ds.count()
            ),
        });
    }
    if cfg.steps == 0 || cfg.batch == 0 {
        return Err(TensorError::Domain {
            op: "metric_net",
            detail: "steps and batch must be positive".into(),
        });
    }
    let res = ds.res();
    let mut rng = Prng::with_stream(cfg.seed, StreamId::Eval as u64);
    let mut net = MetricNet::<f32>::init(1, res, cfg.width, ds.classes(), &mut rng)?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 })?;
    let per = res * res;
    for _ in 0..cfg.steps {
        let mut data = Vec::with_capacity(cfg.batch * per);
        let mut labels = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let idx = train_idx[rng.index(train_idx.len())];
            data.extend_from_slice(ds.image(idx).data());
            labels.push(ds.label(idx) as usize);
        }
        let x = Tensor::new(&[cfg.batch, 1, res, res], data)?;
        let tape = Tape::new();
        let xv = tape.leaf(x);
        let (logits, _, bindings) = net.forward(&tape, xv, true, true)?;
        let (loss, _) = tape.softmax_xent(logits, &labels)?;
        let gmap = tape.backward(loss)?;
        let mut grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for (name, var) in &bindings {
            if let Some(g) = gmap.get(*var) {
                grads.insert(name.clone(), g.clone());
            }
        }
        opt.apply(&mut net.params, &grads)?;
    }
    Ok(net)
}

/// Top-1 accuracy (percent) of the metric net on labelled images.
pub fn metric_net_accuracy<S: Scalar>(
    net: &mut MetricNet<S>,
    xs: &Tensor<S>,
    ys: &[u8],
) -> Result<f64> {
    let (_, probs) = net.features_and_probs(xs)?;
    if ys.len() != probs.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "metric_net",
            detail: format!("{} rows but {} labels", probs.shape()[0], ys.len()),
        });
    }
    let k = net.classes;
    let mut hits = 0usize;
    for (i, &y) in ys.iter().enumerate() {
        let mut best = 0usize;
        for j in 1..k {
            if probs.get(i * k + j).fl() > probs.get(i * k + best).fl() {
                best = j;
            }
        }
        if best == y as usize {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / ys.len() as f64)
}

/// Fréchet distance and classifier score of a generator against real
/// images, both measured through the metric net. Latents come from the
/// generator's own prior via `rng`; `real` must already be at the
/// generator's resolution.
pub fn generation_metrics<S: Scalar>(
    gen: &Generator<S>,
    net: &mut MetricNet<S>,
    real: &Tensor<S>,
    n_fake: usize,
    rng: &mut Prng,
) -> Result<(f64, f64)> {
    if n_fake < 2 {
        return Err(TensorError::Domain {
            op: "generation_metrics",
            detail: format!("need at least 2 generated samples, got {n_fake}"),
        });
    }
    let zs = sample_prior::<S>(&gen.arch.latent, n_fake, rng)?;
    let fake = generate_images(gen, &zs)?;
    let (feat_real, _) = net.features_and_probs(real)?;
    let (feat_fake, probs_fake) = net.features_and_probs(&fake)?;
    let fd = frechet_distance(&feat_real, &feat_fake)?;
    let score = classifier_score(&probs_fake)?;
    Ok((fd, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{eval_batch, SynthDataset, SynthKind};
    use crate::models::{GeneratorArch, LatentSpec, PriorKind};
    use crate::trainer::prime_generator_norm;

    #[test]
    fn separates_the_shape_classes() {
        let ds = SynthDataset::new(SynthKind::Shapes, 16, 900, 123).unwrap();
        let cfg = MetricTrainConfig { steps: 700, batch: 64, lr: 2e-3, width: 8, seed: 9 };
        let train_idx: Vec<usize> = (0..600).collect();
        let mut net = train_metric_net(&ImageSet::Synth(ds.clone()), &train_idx, &cfg).unwrap();
        // Held-out images 600..900.
        let per = ds.res * ds.res;
        let mut data = Vec::with_capacity(300 * per);
        let mut labels = Vec::with_capacity(300);
        for idx in 600..900 {
            data.extend_from_slice(ds.image(idx).data());
            labels.push(ds.label(idx));
        }
        let xs = Tensor::<f32>::new(&[300, 1, 16, 16], data).unwrap();
        let acc = metric_net_accuracy(&mut net, &xs, &labels).unwrap();
        assert!(acc >= 99.0, "metric net should separate shapes, got {acc}%");

        let (feats, probs) = net.features_and_probs(&xs).unwrap();
        assert_eq!(feats.shape(), &[300, net.feat_dim()]);
        assert_eq!(probs.shape(), &[300, 3]);
        for i in 0..300 {
            let s: f64 = (0..3).map(|j| probs.get(i * 3 + j) as f64).sum();
            assert!((s - 1.0).abs() < 1e-5, "row {i} sums to {s}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = SynthDataset::new(SynthKind::Blobs, 8, 64, 5).unwrap();
        let cfg = MetricTrainConfig { steps: 25, batch: 16, lr: 1e-3, width: 2, seed: 41 };
        let idx: Vec<usize> = (0..64).collect();
        let set = ImageSet::Synth(ds.clone());
        let mut a = train_metric_net(&set, &idx, &cfg).unwrap();
        let mut b = train_metric_net(&set, &idx, &cfg).unwrap();
        let (xs, _) = eval_batch(&ds, 12).unwrap();
        let (fa, pa) = a.features_and_probs(&xs).unwrap();
        let (fb, pb) = b.features_and_probs(&xs).unwrap();
        assert_eq!(fa.data(), fb.data());
        assert_eq!(pa.data(), pb.data());
    }

    #[test]
    fn generation_metrics_run_against_an_untrained_generator() {
        let ds = SynthDataset::new(SynthKind::Blobs, 8, 96, 6).unwrap();
        let cfg = MetricTrainConfig { steps: 40, batch: 16, lr: 1e-3, width: 2, seed: 42 };
        let idx: Vec<usize> = (0..96).collect();
        let mut net = train_metric_net(&ImageSet::Synth(ds.clone()), &idx, &cfg).unwrap();
        let mut rng = Prng::with_stream(43, StreamId::Init as u64);
        let mut gen = Generator::<f32>::init(
            GeneratorArch {
                out_ch: 1,
                out_res: 8,
                width: 2,
                latent: LatentSpec { kind: PriorKind::Gaussian, dim: 4, groups: 2 },
                bn_momentum: 0.9,
                bn_eps: 1e-5,
                spectral: true,
            },
            &mut rng,
        )
        .unwrap();
        let mut zr = Prng::with_stream(43, StreamId::Latent as u64);
        let zp = Tensor::<f32>::from_fn(&[8, 4], |_| zr.normal() as f32);
        prime_generator_norm(&mut gen, &[zp]).unwrap();

        let (real, _) = eval_batch(&ds, 48).unwrap();
        let mut er = Prng::with_stream(44, StreamId::Eval as u64);
        let (fd, score) = generation_metrics(&gen, &mut net, &real, 48, &mut er).unwrap();
        assert!(fd.is_finite() && fd > 0.0, "untrained generator FD {fd}");
        assert!(
            (1.0 - 1e-9..=10.0 + 1e-9).contains(&score),
            "classifier score {score} outside [1, K]"
        );
        // Real images against themselves through the same features: zero.
        let (fr, _) = net.features_and_probs(&real).unwrap();
        let self_fd = frechet_distance(&fr, &fr).unwrap();
        assert!(self_fd.abs() <= 1e-6);
    }
}
