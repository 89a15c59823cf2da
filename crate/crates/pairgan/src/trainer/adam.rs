//! Adam with moment estimates kept per named parameter.
//!
//! The first-moment coefficient defaults to 0 (pure RMS-style scaling of the
//! raw gradient), the standard setting for adversarial training here. All
//! moment arithmetic runs in f64; the stored moments use the model scalar
//! type. A parameter with no gradient this step is skipped entirely (its
//! moments do not decay), which with beta1 = 0 is indistinguishable from a
//! zero-gradient update except that stale second moments are preserved.

use std::collections::BTreeMap;

use crate::models::ParamTree;
use crate::tensor::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.0, beta2: 0.999, eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::Domain {
                op: "adam",
                detail: format!("bad hyperparameters {self:?}"),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<S: Scalar = f32> {
    pub cfg: AdamConfig,
    /// Number of `apply` calls so far (drives bias correction).
    pub t: u64,
    m: BTreeMap<String, Vec<S>>,
    v: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam { cfg, t: 0, m: BTreeMap::new(), v: BTreeMap::new() })
    }

    /// One optimization step over every (name -> gradient) pair. Names must
    /// exist in the tree as trainable entries of matching element count.
    pub fn apply(
        &mut self,
        tree: &mut ParamTree<S>,
        grads: &BTreeMap<String, Tensor<S>>,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let entry = tree.get_mut(name)?;
            if !entry.trainable {
                return Err(TensorError::Domain {
                    op: "adam",
                    detail: format!("gradient for non-trainable entry {name}"),
                });
            }
            let n = entry.value.numel();
            if g.numel() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    detail: format!("{name}: gradient has {} elements, parameter {n}", g.numel()),
                });
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
            if m.len() != n || v.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    detail: format!("{name}: stale moment buffers"),
                });
            }
            let gd = g.data();
            if gd.iter().any(|v| !v.fl().is_finite()) {
                // The step is aborted rather than clipped; see the trainer's
                // divergence policy.
                return Err(TensorError::Domain {
                    op: "adam",
                    detail: format!("non-finite gradient for {name}"),
                });
            }
            let mut new_vals = Vec::with_capacity(n);
            for i in 0..n {
                let gi = gd[i].fl();
                let mi = self.cfg.beta1 * m[i].fl() + (1.0 - self.cfg.beta1) * gi;
                let vi = self.cfg.beta2 * v[i].fl() + (1.0 - self.cfg.beta2) * gi * gi;
                m[i] = S::fr(mi);
                v[i] = S::fr(vi);
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let upd = self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                new_vals.push(S::fr(entry.value.get(i).fl() - upd));
            }
            entry.value = Tensor::new(entry.value.shape(), new_vals)?;
        }
        Ok(())
    }

    pub fn moment_names(&self) -> impl Iterator<Item = &String> {
        self.m.keys()
    }

    pub fn moments(&self, name: &str) -> Option<(&[S], &[S])> {
        match (self.m.get(name), self.v.get(name)) {
            (Some(m), Some(v)) => Some((m.as_slice(), v.as_slice())),
            _ => None,
        }
    }

    /// Install serialized moment buffers (checkpoint restore).
    pub fn set_moments(&mut self, name: &str, m: Vec<S>, v: Vec<S>) -> Result<()> {
        if m.len() != v.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam",
                detail: format!("{name}: m/v length mismatch"),
            });
        }
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
        Ok(())
    }
}
