//! Evaluation stack: encoder feature extraction, linear probing, k-NN
//! classification, reconstruction error, Fréchet distance and classifier
//! score on a small supervised metric network.

pub mod filters;
pub mod frechet;
pub mod knn;
pub mod metric_net;
pub mod probe;
pub mod recon;

use std::collections::BTreeMap;

use crate::data::{resize_batch, ImageSet};
use crate::models::{Encoder, EncoderMode, Generator};
use crate::rng::{Prng, StreamId};
use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError};

pub use filters::{export_first_layer_filters, first_layer_filter_grid};
pub use frechet::{classifier_score, frechet_distance, frechet_from_moments, mean_and_cov};
pub use knn::{knn_accuracy, knn_classify, knn_rankings, KnnNorm};
pub use metric_net::{
    generation_metrics, metric_net_accuracy, train_metric_net, MetricNet, MetricTrainConfig,
};
pub use probe::{
    sweep_linear_probe, train_linear_probe, ProbeConfig, ProbeResult, PROBE_SWEEP_LRS,
};
pub use recon::{iterated_reconstruction, reconstruct, relative_l1, relative_l1_from_pairs};

/// Default epsilon inside the parameter-free batch-norm of [`bn_crelu`].
pub const BN_CRELU_EPS: f64 = 1e-5;

/// Chunk size used when pushing large evaluation sets through a network.
pub const EVAL_CHUNK: usize = 64;

/// All headline numbers for one trained model. Representation metrics
/// (probe, k-NN, reconstruction) are absent for encoder-free models; k-NN
/// top-5 is additionally undefined for k < 5. Absent values serialize as
/// "-".
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Linear-probe validation accuracy, percent.
    pub probe_top1: Option<f64>,
    pub probe_top5: Option<f64>,
    /// Learning rate the probe trained with (the winner when swept).
    pub probe_lr: Option<f64>,
    /// k -> (top-1 %, top-5 %) for the k-NN classifier on probe features.
    pub knn: BTreeMap<usize, (Option<f64>, Option<f64>)>,
    /// Relative L1 reconstruction error (ratio form; 1.0 = no better than
    /// predicting a neighbouring image).
    pub rel_l1: Option<f64>,
    /// Squared Fréchet distance between metric-net features of real and
    /// generated images.
    pub frechet: f64,
    /// Exponentiated-KL classifier score of generated images, in [1, K].
    pub classifier_score: f64,
}

fn metric_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.9e}"),
        None => "-".to_string(),
    }
}

impl EvalReport {
    /// Ordered (key, value) pairs; missing metrics render as "-". The k-NN
    /// columns follow the map's ascending k order.
    pub fn kv_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("probe_top1".to_string(), metric_cell(self.probe_top1)),
            ("probe_top5".to_string(), metric_cell(self.probe_top5)),
            ("probe_lr".to_string(), metric_cell(self.probe_lr)),
        ];
        for (&k, &(top1, top5)) in &self.knn {
            out.push((format!("knn_top1_k{k}"), metric_cell(top1)));
            out.push((format!("knn_top5_k{k}"), metric_cell(top5)));
        }
        out.push(("rel_l1".to_string(), metric_cell(self.rel_l1)));
        out.push(("frechet".to_string(), metric_cell(Some(self.frechet))));
        out.push(("classifier_score".to_string(), metric_cell(Some(self.classifier_score))));
        out
    }

    /// Flat `key=value` text, one metric per line.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.kv_pairs() {
            s.push_str(&k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// CSV header matching [`EvalReport::csv_row`].
    pub fn csv_header(&self) -> String {
        self.kv_pairs().iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        self.kv_pairs().into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
    }
}

/// Settings for [`run_full_eval`].
#[derive(Debug, Clone)]
pub struct FullEvalConfig {
    /// Neighbour counts for the k-NN classifier.
    pub knn_ks: Vec<usize>,
    pub knn_norm: KnnNorm,
    pub probe: ProbeConfig,
    /// Sweep the probe learning rate over [`PROBE_SWEEP_LRS`] and report
    /// the best validation top-1 instead of a single run.
    pub probe_sweep: bool,
    pub metric: MetricTrainConfig,
    /// Generated-sample count for the generation metrics; `None` matches
    /// the evaluation-set size.
    pub n_fake: Option<usize>,
    /// Seed for the latent draws behind the generation metrics.
    pub seed: u64,
}

impl Default for FullEvalConfig {
    fn default() -> Self {
        FullEvalConfig {
            knn_ks: vec![1, 5, 25, 50],
            knn_norm: KnnNorm::L2,
            probe: ProbeConfig::default(),
            probe_sweep: false,
            metric: MetricTrainConfig::default(),
            n_fake: None,
            seed: 1,
        }
    }
}

/// Materialize a dataset view at the given resolution (center-crop-resize;
/// cheap clone when the resolution already matches).
fn dataset_at_res(ds: &ImageSet, res: usize) -> Result<ImageSet> {
    if ds.res() == res {
        return Ok(ds.clone());
    }
    let indices: Vec<usize> = (0..ds.count()).collect();
    let (images, labels) = ds.batch(&indices)?;
    Ok(ImageSet::Mem { images: resize_batch(&images, res)?, labels, classes: ds.classes() })
}

/// The complete evaluation protocol for one trained model.
///
/// `train_idx` rows fit the probe, the k-NN reference set and the metric
/// net; `eval_idx` rows carry every reported number. The probe consumes
/// BN+CReLU-expanded features (each feature matrix normalized with its own
/// moments); k-NN consumes the raw pooled features. Generation metrics
/// compare metric-net statistics of the evaluation images against freshly
/// sampled generations at the generator's resolution; with an encoder
/// present, reconstruction error and the representation metrics appear too.
pub fn run_full_eval(
    enc: Option<&Encoder<f32>>,
    gen: &Generator<f32>,
    ds: &ImageSet,
    train_idx: &[usize],
    eval_idx: &[usize],
    cfg: &FullEvalConfig,
) -> Result<EvalReport> {
    if train_idx.is_empty() || eval_idx.is_empty() {
        return Err(TensorError::Domain {
            op: "run_full_eval",
            detail: "need non-empty train and eval index sets".into(),
        });
    }
    let (train_raw, train_y) = ds.batch(train_idx)?;
    let (eval_raw, eval_y) = ds.batch(eval_idx)?;
    let g_res = gen.arch.out_res;
    let eval_g = resize_batch(&eval_raw, g_res)?;
    let classes = ds.classes();

    let mut probe_top1 = None;
    let mut probe_top5 = None;
    let mut probe_lr = None;
    let mut rel_l1 = None;
    let mut knn = BTreeMap::new();
    if let Some(e) = enc {
        let e_res = e.arch.in_res;
        let train_e = resize_batch(&train_raw, e_res)?;
        let eval_e = resize_batch(&eval_raw, e_res)?;
        let f_train = extract_features(e, &train_e)?;
        let f_eval = extract_features(e, &eval_e)?;

        let p_train = bn_crelu(&f_train, BN_CRELU_EPS)?;
        let p_eval = bn_crelu(&f_eval, BN_CRELU_EPS)?;
        let (lr, probe) = if cfg.probe_sweep {
            sweep_linear_probe(&p_train, &train_y, &p_eval, &eval_y, classes, &cfg.probe)?
        } else {
            let r =
                train_linear_probe(&p_train, &train_y, &p_eval, &eval_y, classes, &cfg.probe)?;
            (cfg.probe.lr, r)
        };
        probe_top1 = Some(probe.top1);
        probe_top5 = Some(probe.top5);
        probe_lr = Some(lr);

        for &k in &cfg.knn_ks {
            let (t1, t5) = knn_accuracy(&f_train, &train_y, &f_eval, &eval_y, k, cfg.knn_norm)?;
            knn.insert(k, (Some(t1), t5));
        }

        let xhat = reconstruct(e, gen, &eval_e)?;
        rel_l1 = Some(relative_l1_from_pairs(&eval_g, &xhat)?);
    } else {
        for &k in &cfg.knn_ks {
            knn.insert(k, (None, None));
        }
    }

    let metric_ds = dataset_at_res(ds, g_res)?;
    let mut net = train_metric_net(&metric_ds, train_idx, &cfg.metric)?;
    let n_fake = cfg.n_fake.unwrap_or(eval_idx.len());
    let mut rng = Prng::with_stream(cfg.seed, StreamId::Eval as u64);
    let (frechet, score) = generation_metrics(gen, &mut net, &eval_g, n_fake, &mut rng)?;

    Ok(EvalReport {
        probe_top1,
        probe_top5,
        probe_lr,
        knn,
        rel_l1,
        frechet,
        classifier_score: score,
    })
}

/// Run images through the encoder (EMA weights, eval-mode normalization)
/// and return the globally pooled trunk features [N, feat_dim].
///
/// Requires the encoder's running batch-norm moments to be primed (any
/// training step or an explicit priming pass does this); eval-mode
/// normalization fails loudly otherwise. In stochastic mode the latent
/// noise is fixed to zero, so the pass is deterministic in every mode.
pub fn extract_features<S: Scalar>(enc: &Encoder<S>, xs: &Tensor<S>) -> Result<Tensor<S>> {
    forward_encoder_eval(enc, xs, EncOutput::Features)
}

/// Deterministic latents from the eval-mode EMA encoder: z = mu in
/// stochastic/deterministic modes, z = tanh(mu) in tanh mode. [N, latent].
pub fn deterministic_latents<S: Scalar>(enc: &Encoder<S>, xs: &Tensor<S>) -> Result<Tensor<S>> {
    forward_encoder_eval(enc, xs, EncOutput::Latents)
}

enum EncOutput {
    Features,
    Latents,
}

fn forward_encoder_eval<S: Scalar>(
    enc: &Encoder<S>,
    xs: &Tensor<S>,
    which: EncOutput,
) -> Result<Tensor<S>> {
    let shape = xs.shape();
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "extract_features",
            detail: format!("expected [N, C, H, W] images, got {shape:?}"),
        });
    }
    let n = shape[0];
    if n == 0 {
        return Err(TensorError::Domain {
            op: "extract_features",
            detail: "empty image batch".into(),
        });
    }
    let mut eval_enc = Encoder { arch: enc.arch.clone(), params: enc.params.ema_snapshot() };
    let out_dim = match which {
        EncOutput::Features => eval_enc.arch.feat_dim(),
        EncOutput::Latents => eval_enc.arch.latent_dim,
    };
    let mut out = Vec::with_capacity(n * out_dim);
    let mut start = 0usize;
    while start < n {
        let len = EVAL_CHUNK.min(n - start);
        let chunk = slice_batch(xs, start, len)?;
        let tape = Tape::new();
        let x = tape.leaf(chunk);
        let eps = match eval_enc.arch.mode {
            EncoderMode::Stochastic => {
                Some(tape.leaf(Tensor::zeros(&[len, eval_enc.arch.latent_dim])))
            }
            _ => None,
        };
        let (vars, _) = eval_enc.forward(&tape, x, eps, false, false)?;
        let picked = match which {
            EncOutput::Features => vars.feat,
            EncOutput::Latents => vars.z,
        };
        out.extend_from_slice(tape.value(picked).data());
        start += len;
    }
    Tensor::new(&[n, out_dim], out)
}

/// Decode latents [N, latent] through the generator's EMA weights in eval
/// mode, returning images [N, C, R, R]. Requires primed running moments.
pub fn generate_images<S: Scalar>(gen: &Generator<S>, zs: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = zs.shape();
    if shape.len() != 2 || shape[1] != gen.arch.latent.dim {
        return Err(TensorError::ShapeMismatch {
            op: "generate_images",
            detail: format!("expected [N, {}] latents, got {shape:?}", gen.arch.latent.dim),
        });
    }
    let n = shape[0];
    if n == 0 {
        return Err(TensorError::Domain { op: "generate_images", detail: "empty batch".into() });
    }
    let mut eval_gen = Generator { arch: gen.arch.clone(), params: gen.params.ema_snapshot() };
    let (c, r) = (eval_gen.arch.out_ch, eval_gen.arch.out_res);
    let mut out = Vec::with_capacity(n * c * r * r);
    let mut start = 0usize;
    while start < n {
        let len = EVAL_CHUNK.min(n - start);
        let chunk = slice_batch(zs, start, len)?;
        let tape = Tape::new();
        let z = tape.leaf(chunk);
        let (img, _) = eval_gen.forward(&tape, z, false, false)?;
        out.extend_from_slice(tape.value(img).data());
        start += len;
    }
    Tensor::new(&[n, c, r, r], out)
}

/// Copy rows [start, start+len) of a tensor along axis 0.
pub(crate) fn slice_batch<S: Scalar>(
    x: &Tensor<S>,
    start: usize,
    len: usize,
) -> Result<Tensor<S>> {
    let shape = x.shape();
    let per: usize = shape[1..].iter().product();
    if start + len > shape[0] {
        return Err(TensorError::Domain {
            op: "slice_batch",
            detail: format!("rows {start}..{} out of {}", start + len, shape[0]),
        });
    }
    let mut new_shape = shape.to_vec();
    new_shape[0] = len;
    let data = x.data()[start * per..(start + len) * per].to_vec();
    Tensor::new(&new_shape, data)
}

/// Parameter-free batch normalization followed by a CReLU expansion.
///
/// Per column j over the N rows: h = (a - mean_j) / sqrt(var_j + eps) with
/// the biased (1/N) variance, then out = [relu(h), relu(-h)] giving [N, 2F]
/// with h recoverable exactly as out\[:, :F\] - out\[:, F:\]. Needs N >= 2.
pub fn bn_crelu<S: Scalar>(feats: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
    let shape = feats.shape();
    if shape.len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "bn_crelu",
            detail: format!("expected [N, F] features, got {shape:?}"),
        });
    }
    let (n, f) = (shape[0], shape[1]);
    if n < 2 {
        return Err(TensorError::Domain {
            op: "bn_crelu",
            detail: format!("need at least 2 rows to estimate moments, got {n}"),
        });
    }
    if !(eps > 0.0) {
        return Err(TensorError::Domain {
            op: "bn_crelu",
            detail: format!("epsilon must be positive, got {eps}"),
        });
    }
    let data = feats.data();
    let mut mean = vec![0.0f64; f];
    for i in 0..n {
        for j in 0..f {
            mean[j] += data[i * f + j].fl();
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; f];
    for i in 0..n {
        for j in 0..f {
            let d = data[i * f + j].fl() - mean[j];
            var[j] += d * d;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / n as f64 + eps).sqrt()).collect();
    let mut out = vec![S::fr(0.0); n * 2 * f];
    for i in 0..n {
        for j in 0..f {
            let h = (data[i * f + j].fl() - mean[j]) * inv_std[j];
            out[i * 2 * f + j] = S::fr(h.max(0.0));
            out[i * 2 * f + f + j] = S::fr((-h).max(0.0));
        }
    }
    Tensor::new(&[n, 2 * f], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SynthDataset, SynthKind};
    use crate::models::{EncoderArch, GeneratorArch, LatentSpec, PriorKind};
    use crate::rng::{Prng, StreamId};
    use crate::trainer::{prime_encoder_norm, prime_generator_norm};

    fn tiny_encoder(mode: EncoderMode) -> Encoder<f32> {
        let mut rng = Prng::with_stream(7, StreamId::Init as u64);
        Encoder::init(
            EncoderArch {
                in_ch: 1,
                in_res: 8,
                width: 2,
                head_width: 8,
                head_blocks: 1,
                latent_dim: 4,
                mode,
                bn_momentum: 0.9,
                bn_eps: 1e-5,
            },
            &mut rng,
        )
        .unwrap()
    }

    fn random_images(n: usize, res: usize, seed: u64) -> Tensor<f32> {
        let mut rng = Prng::with_stream(seed, StreamId::Eval as u64);
        Tensor::from_fn(&[n, 1, res, res], |_| (rng.uniform_signed_open() * 0.9) as f32)
    }

    #[test]
    fn bn_crelu_normalizes_and_reconstructs() {
        let mut rng = Prng::with_stream(3, StreamId::Eval as u64);
        let n = 64usize;
        let f = 5usize;
        let x = Tensor::<f32>::from_fn(&[n, f], |i| {
            (rng.normal() * (1.0 + (i % f) as f64) + (i % f) as f64) as f32
        });
        let out = bn_crelu(&x, BN_CRELU_EPS).unwrap();
        assert_eq!(out.shape(), &[n, 2 * f]);
        // Non-negativity and the exact reconstruction h = pos - neg.
        let mut h = vec![0.0f64; n * f];
        for i in 0..n {
            for j in 0..f {
                let pos = out.get(i * 2 * f + j);
                let neg = out.get(i * 2 * f + f + j);
                assert!(pos >= 0.0 && neg >= 0.0);
                assert!(pos == 0.0 || neg == 0.0, "both halves active at ({i},{j})");
                h[i * f + j] = (pos - neg) as f64;
            }
        }
        // h has (near) zero mean and unit variance per column.
        for j in 0..f {
            let mean: f64 = (0..n).map(|i| h[i * f + j]).sum::<f64>() / n as f64;
            let var: f64 = (0..n).map(|i| (h[i * f + j] - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-5, "column {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-2, "column {j} var {var}");
        }
        // Constant columns collapse to zero rather than dividing by zero.
        let constant = Tensor::<f32>::full(&[4, 2], 3.5);
        let out = bn_crelu(&constant, BN_CRELU_EPS).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        // Degenerate inputs error.
        assert!(bn_crelu(&Tensor::<f32>::zeros(&[1, 3]), BN_CRELU_EPS).is_err());
        assert!(bn_crelu(&x, 0.0).is_err());
    }

    #[test]
    fn features_are_deterministic_and_use_ema_weights() {
        let mut enc = tiny_encoder(EncoderMode::Stochastic);
        let xs = random_images(10, 8, 40);
        prime_encoder_norm(&mut enc, &[xs.clone()]).unwrap();
        let a = extract_features(&enc, &xs).unwrap();
        let b = extract_features(&enc, &xs).unwrap();
        assert_eq!(a.shape(), &[10, enc.arch.feat_dim()]);
        assert_eq!(a.data(), b.data(), "stochastic-mode features must be deterministic");

        // Features follow the EMA shadows, not the raw weights: zero the
        // shadows of the first conv and the features must change.
        let mut zeroed = Encoder { arch: enc.arch.clone(), params: enc.params.clone() };
        let entry = zeroed.params.get_mut("e.conv1.w").unwrap();
        if let Some(sh) = entry.ema.as_mut() {
            for v in sh.iter_mut() {
                *v = 0.0;
            }
        } else {
            panic!("conv weight should carry an EMA shadow");
        }
        let c = extract_features(&zeroed, &xs).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn unprimed_eval_mode_fails_loudly() {
        let enc = tiny_encoder(EncoderMode::Deterministic);
        let xs = random_images(4, 8, 41);
        let err = extract_features(&enc, &xs).unwrap_err();
        assert!(format!("{err}").contains("running-moment"), "got: {err}");
    }

    #[test]
    fn latents_match_mode_semantics() {
        let xs = random_images(6, 8, 42);
        // Deterministic and stochastic modes both yield z = mu; tanh mode
        // squashes. Verify tanh-mode latents are inside (-1, 1).
        let mut enc = tiny_encoder(EncoderMode::TanhDeterministic);
        prime_encoder_norm(&mut enc, &[xs.clone()]).unwrap();
        let z = deterministic_latents(&enc, &xs).unwrap();
        assert_eq!(z.shape(), &[6, 4]);
        assert!(z.data().iter().all(|&v| v > -1.0 && v < 1.0));

        let mut enc = tiny_encoder(EncoderMode::Stochastic);
        prime_encoder_norm(&mut enc, &[xs.clone()]).unwrap();
        let z = deterministic_latents(&enc, &xs).unwrap();
        let z2 = deterministic_latents(&enc, &xs).unwrap();
        assert_eq!(z.data(), z2.data());
    }

    #[test]
    fn report_serialization_is_ordered_and_marks_missing_cells() {
        let mut knn = BTreeMap::new();
        knn.insert(5, (Some(80.0), Some(97.5)));
        knn.insert(1, (Some(75.0), None));
        let r = EvalReport {
            probe_top1: Some(50.0),
            probe_top5: Some(90.0),
            probe_lr: Some(0.01),
            knn,
            rel_l1: Some(0.85),
            frechet: 1.25,
            classifier_score: 2.0,
        };
        assert_eq!(
            r.csv_header(),
            "probe_top1,probe_top5,probe_lr,knn_top1_k1,knn_top5_k1,\
             knn_top1_k5,knn_top5_k5,rel_l1,frechet,classifier_score"
        );
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), 10);
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[4], "-", "k=1 top-5 must be undefined");
        assert_eq!(cells[0], format!("{:.9e}", 50.0));
        // kv text pairs off against the CSV exactly.
        let kv = r.to_kv();
        for ((key, val), line) in r.kv_pairs().iter().zip(kv.lines()) {
            assert_eq!(line, format!("{key}={val}"));
        }
        assert!(kv.lines().any(|l| l == "knn_top5_k1=-"));
    }

    #[test]
    fn full_eval_covers_every_metric_and_is_deterministic() {
        // Dataset at 16px, encoder at 16px, generator at 8px: exercises the
        // resolution-asymmetric path (reconstruction compared at 8px).
        let ds = ImageSet::Synth(SynthDataset::new(SynthKind::Shapes, 16, 60, 3).unwrap());
        let mut rng = Prng::with_stream(11, StreamId::Init as u64);
        let mut enc = Encoder::<f32>::init(
            EncoderArch {
                in_ch: 1,
                in_res: 16,
                width: 2,
                head_width: 8,
                head_blocks: 1,
                latent_dim: 4,
                mode: EncoderMode::Stochastic,
                bn_momentum: 0.9,
                bn_eps: 1e-5,
            },
            &mut rng,
        )
        .unwrap();
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
        let train_idx: Vec<usize> = (0..40).collect();
        let eval_idx: Vec<usize> = (40..60).collect();
        let (prime_x, _) = ds.batch(&train_idx[..16]).unwrap();
        prime_encoder_norm(&mut enc, &[prime_x]).unwrap();
        let mut zr = Prng::with_stream(11, StreamId::Latent as u64);
        let zp = Tensor::<f32>::from_fn(&[8, 4], |_| zr.normal() as f32);
        prime_generator_norm(&mut gen, &[zp]).unwrap();

        let cfg = FullEvalConfig {
            knn_ks: vec![1, 5],
            probe: ProbeConfig { steps: 40, ..ProbeConfig::default() },
            metric: MetricTrainConfig { steps: 15, batch: 8, lr: 1e-3, width: 2, seed: 5 },
            n_fake: Some(16),
            seed: 3,
            ..FullEvalConfig::default()
        };
        let r = run_full_eval(Some(&enc), &gen, &ds, &train_idx, &eval_idx, &cfg).unwrap();
        assert!(r.probe_top1.is_some() && r.probe_top5.is_some());
        assert_eq!(r.probe_lr, Some(cfg.probe.lr));
        assert_eq!(r.knn.len(), 2);
        assert_eq!(r.knn[&1].1, None, "k=1 top-5 undefined");
        assert!(r.knn[&5].0.is_some() && r.knn[&5].1.is_some());
        let rel = r.rel_l1.expect("encoder present, reconstruction defined");
        assert!(rel.is_finite() && rel > 0.0);
        assert!(r.frechet.is_finite() && r.frechet >= 0.0);
        assert!((1.0 - 1e-9..=3.0 + 1e-9).contains(&r.classifier_score));
        // Deterministic end to end.
        let r2 = run_full_eval(Some(&enc), &gen, &ds, &train_idx, &eval_idx, &cfg).unwrap();
        assert_eq!(r, r2);

        // Without an encoder only the generation metrics remain, and the
        // CSV keeps the same column set.
        let r3 = run_full_eval(None, &gen, &ds, &train_idx, &eval_idx, &cfg).unwrap();
        assert_eq!(r3.probe_top1, None);
        assert_eq!(r3.rel_l1, None);
        assert_eq!(r3.knn[&5], (None, None));
        assert_eq!(r3.csv_header(), r.csv_header());
        assert_eq!(r3.frechet, r.frechet, "generation metrics ignore the encoder");
    }

    #[test]
    fn generated_images_chunk_consistently() {
        let mut rng = Prng::with_stream(9, StreamId::Init as u64);
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
        let mut zr = Prng::with_stream(9, StreamId::Latent as u64);
        let z_prime = Tensor::<f32>::from_fn(&[8, 4], |_| zr.normal() as f32);
        prime_generator_norm(&mut gen, &[z_prime]).unwrap();
        // More rows than one chunk, so the loop takes at least two passes.
        let n = EVAL_CHUNK + 3;
        let zs = Tensor::<f32>::from_fn(&[n, 4], |_| zr.normal() as f32);
        let imgs = generate_images(&gen, &zs).unwrap();
        assert_eq!(imgs.shape(), &[n, 1, 8, 8]);
        assert!(imgs.data().iter().all(|&v| v > -1.0 && v < 1.0));
        // Chunking must not change values: compare against a direct pass on
        // the tail rows alone.
        let tail = slice_batch(&zs, n - 2, 2).unwrap();
        let tail_imgs = generate_images(&gen, &tail).unwrap();
        let per = 64usize;
        assert_eq!(&imgs.data()[(n - 2) * per..], tail_imgs.data());
    }
}
