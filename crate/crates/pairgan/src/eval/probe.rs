//! Linear probe: a single softmax layer trained on frozen features with
//! Adam and an exponential moving average of its weights; validation
//! accuracy is always measured with the averaged weights.

use std::collections::BTreeMap;

use crate::models::{linear, ParamTree};
use crate::rng::{Prng, StreamId};
use crate::tensor::{GradMap, Result, Scalar, Tape, Tensor, TensorError};
use crate::trainer::adam::{Adam, AdamConfig};

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Full-batch Adam steps.
    pub steps: usize,
    pub lr: f64,
    /// Standard Adam beta1 (the probe is a plain supervised problem, unlike
    /// the adversarial updates which run beta1 = 0).
    pub beta1: f64,
    /// Decay of the weight average used for the final accuracy.
    pub ema_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { steps: 5_000, lr: 0.01, beta1: 0.9, ema_decay: 0.9999 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    /// Validation accuracy in percent.
    pub top1: f64,
    pub top5: f64,
    /// Mean training cross-entropy at the last step (NaN when steps = 0).
    pub final_loss: f64,
}

fn check_features<S: Scalar>(x: &Tensor<S>, y: &[u8], classes: usize, what: &str) -> Result<usize> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "linear_probe",
            detail: format!("{what}: expected non-empty [N, F] features, got {shape:?}"),
        });
    }
    if y.len() != shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "linear_probe",
            detail: format!("{what}: {} rows but {} labels", shape[0], y.len()),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l as usize >= classes) {
        return Err(TensorError::Domain {
            op: "linear_probe",
            detail: format!("{what}: label {bad} outside 0..{classes}"),
        });
    }
    Ok(shape[1])
}

/// Fraction (percent) of rows whose true label has the highest logit /
/// is among the 5 highest logits. Ties break toward the lower index, so an
/// all-zero classifier deterministically predicts class 0.
fn topk_accuracy<S: Scalar>(logits: &Tensor<S>, y: &[u8]) -> (f64, f64) {
    let k = logits.shape()[1];
    let n = y.len();
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for (i, &label) in y.iter().enumerate() {
        let row: Vec<f64> = (0..k).map(|j| logits.get(i * k + j).fl()).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        if order[0] == label as usize {
            top1 += 1;
        }
        if order.iter().take(5).any(|&j| j == label as usize) {
            top5 += 1;
        }
    }
    (100.0 * top1 as f64 / n as f64, 100.0 * top5 as f64 / n as f64)
}

/// Train a zero-initialized linear classifier on `train` features and score
/// it on `val` with the EMA weights. Features are used as-is; apply
/// [`super::bn_crelu`] beforehand when the expanded representation is wanted.
pub fn train_linear_probe<S: Scalar>(
    train_x: &Tensor<S>,
    train_y: &[u8],
    val_x: &Tensor<S>,
    val_y: &[u8],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if classes < 2 {
        return Err(TensorError::Domain {
            op: "linear_probe",
            detail: format!("need at least 2 classes, got {classes}"),
        });
    }
    let f = check_features(train_x, train_y, classes, "training set")?;
    let f_val = check_features(val_x, val_y, classes, "validation set")?;
    if f != f_val {
        return Err(TensorError::ShapeMismatch {
            op: "linear_probe",
            detail: format!("feature width mismatch: train {f} vs val {f_val}"),
        });
    }
    let labels: Vec<usize> = train_y.iter().map(|&l| l as usize).collect();

    // Zero-initialized parameters with EMA shadows; the init RNG is unused
    // for zeros but the parameter store requires one for spectral setup.
    let mut rng = Prng::with_stream(0, StreamId::Eval as u64);
    let mut params = ParamTree::<S>::new();
    params.insert_trainable("probe.w", Tensor::zeros(&[f, classes]), false, true, &mut rng)?;
    params.insert_trainable("probe.b", Tensor::zeros(&[classes]), false, true, &mut rng)?;
    let mut opt =
        Adam::new(AdamConfig { lr: cfg.lr, beta1: cfg.beta1, beta2: 0.999, eps: 1e-8 })?;

    let mut final_loss = f64::NAN;
    for _ in 0..cfg.steps {
        let tape = Tape::new();
        let x = tape.leaf(train_x.clone());
        let w = tape.trainable_leaf(params.get("probe.w")?.value.clone());
        let b = tape.trainable_leaf(params.get("probe.b")?.value.clone());
        let logits = linear(&tape, x, w, Some(b))?;
        let (loss, _probs) = tape.softmax_xent(logits, &labels)?;
        final_loss = tape.value(loss).get(0).fl();
        let gmap: GradMap<S> = tape.backward(loss)?;
        let mut grads: BTreeMap<String, Tensor<S>> = BTreeMap::new();
        for (name, var) in [("probe.w", w), ("probe.b", b)] {
            if let Some(g) = gmap.get(var) {
                grads.insert(name.to_string(), g.clone());
            }
        }
        opt.apply(&mut params, &grads)?;
        params.ema_step(cfg.ema_decay);
    }

    // Validation logits from the averaged weights.
    let averaged = params.ema_snapshot();
    let tape = Tape::new();
    let x = tape.leaf(val_x.clone());
    let w = tape.leaf(averaged.get("probe.w")?.value.clone());
    let b = tape.leaf(averaged.get("probe.b")?.value.clone());
    let logits = linear(&tape, x, w, Some(b))?;
    let (top1, top5) = topk_accuracy(&tape.value(logits), val_y);
    Ok(ProbeResult { top1, top5, final_loss })
}

/// Learning rates tried by [`sweep_linear_probe`].
pub const PROBE_SWEEP_LRS: [f64; 5] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];

/// Train one probe per sweep learning rate and keep the best validation
/// top-1 (ties go to the smaller rate). Returns the winning rate and its
/// result.
pub fn sweep_linear_probe<S: Scalar>(
    train_x: &Tensor<S>,
    train_y: &[u8],
    val_x: &Tensor<S>,
    val_y: &[u8],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<(f64, ProbeResult)> {
    let mut best: Option<(f64, ProbeResult)> = None;
    for lr in PROBE_SWEEP_LRS {
        let r = train_linear_probe(
            train_x,
            train_y,
            val_x,
            val_y,
            classes,
            &ProbeConfig { lr, ..cfg.clone() },
        )?;
        if best.as_ref().is_none_or(|(_, b)| r.top1 > b.top1) {
            best = Some((lr, r));
        }
    }
    Ok(best.expect("sweep set is non-empty"))
}
