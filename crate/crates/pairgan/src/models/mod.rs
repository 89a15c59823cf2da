//! The three networks: encoder E, generator G, and joint discriminator D.
//!
//! Parameters live in [`ParamTree`]s — named tensor maps with per-entry
//! flags for spectral normalization and EMA shadowing. A [`Binder`] places a
//! tree's parameters onto a [`Tape`] for one forward pass, applying spectral
//! normalization on the tape (so its gradient contribution is exact) and
//! committing batch-norm running-moment updates back into the tree only when
//! the owning network is the one being trained. That gives the strict state
//! rule: a network's state (weights, normalizer vectors, running moments)
//! changes only during its own optimization step.

pub mod discriminator;
pub mod encoder;
pub mod generator;

use std::collections::BTreeMap;

use crate::rng::Prng;
use crate::tensor::{
    sn_matrix_dims, spectral_sigma, BnLayout, BnMode, Result, Scalar, SnState, Tape, Tensor,
    TensorError, Var,
};

pub use discriminator::{Discriminator, DiscriminatorArch, ScoreVars};
pub use encoder::{EncVars, Encoder, EncoderArch, EncoderMode};
pub use generator::{Generator, GeneratorArch};

/// Latent prior family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Gaussian,
    Uniform,
}

/// Latent space description: prior family, dimension, and the number of
/// equal groups the latent is split into for stage-wise generator injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentSpec {
    pub kind: PriorKind,
    pub dim: usize,
    pub groups: usize,
}

impl LatentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.groups == 0 || self.dim % self.groups != 0 {
            return Err(TensorError::Domain {
                op: "latent_spec",
                detail: format!(
                    "dim {} must be a positive multiple of groups {}",
                    self.dim, self.groups
                ),
            });
        }
        Ok(())
    }

    pub fn group_dim(&self) -> usize {
        self.dim / self.groups
    }
}

/// Draw a [batch, dim] block of latent samples. Gaussian: N(0, I).
/// Uniform: independent coordinates strictly inside (-1, 1).
/// Draw order is row-major (sample by sample, coordinate by coordinate).
pub fn sample_prior<S: Scalar>(spec: &LatentSpec, batch: usize, rng: &mut Prng) -> Result<Tensor<S>> {
    spec.validate()?;
    if batch == 0 {
        return Err(TensorError::Domain { op: "sample_prior", detail: "empty batch".into() });
    }
    let mut data = Vec::with_capacity(batch * spec.dim);
    for _ in 0..batch * spec.dim {
        let v = match spec.kind {
            PriorKind::Gaussian => rng.normal(),
            PriorKind::Uniform => rng.uniform_signed_open(),
        };
        data.push(S::fr(v));
    }
    Tensor::new(&[batch, spec.dim], data)
}

/// One named parameter: its value plus normalization/averaging state.
#[derive(Debug, Clone)]
pub struct ParamEntry<S: Scalar = f32> {
    pub value: Tensor<S>,
    pub trainable: bool,
    /// Power-iteration vectors when this tensor is spectrally normalized.
    pub spectral: Option<SnState<S>>,
    /// Exponential-moving-average shadow (kept in f64 for exact long-run
    /// decay arithmetic), same element count as `value`.
    pub ema: Option<Vec<f64>>,
}

/// Named parameter map for one network.
#[derive(Debug, Clone, Default)]
pub struct ParamTree<S: Scalar = f32> {
    entries: BTreeMap<String, ParamEntry<S>>,
}

impl<S: Scalar> ParamTree<S> {
    pub fn new() -> Self {
        ParamTree { entries: BTreeMap::new() }
    }

    /// Register a trainable tensor. `spectral` attaches power-iteration
    /// state (initialized from `rng`); `ema` starts a shadow at the initial
    /// value.
    pub fn insert_trainable(
        &mut self,
        name: &str,
        value: Tensor<S>,
        spectral: bool,
        ema: bool,
        rng: &mut Prng,
    ) -> Result<()> {
        let sn = if spectral {
            let (rows, cols) = sn_matrix_dims(value.shape());
            let mut state = SnState::init(rows, cols, rng);
            // Warm-start with one power-iteration step so the very first
            // frozen use already sees a sensible non-negative estimate
            // (a raw random u^T W v is a near-zero projection and would
            // blow the 1/sigma scale up). Draws nothing from `rng`.
            spectral_sigma(value.data(), rows, cols, &mut state, true)?;
            Some(state)
        } else {
            None
        };
        let shadow = ema.then(|| value.data().iter().map(|v| v.fl()).collect());
        self.insert_entry(name, ParamEntry { value, trainable: true, spectral: sn, ema: shadow })
    }

    /// Register non-trainable state (e.g. batch-norm running moments).
    pub fn insert_state(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        self.insert_entry(name, ParamEntry { value, trainable: false, spectral: None, ema: None })
    }

    fn insert_entry(&mut self, name: &str, entry: ParamEntry<S>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(TensorError::Domain {
                op: "param_tree",
                detail: format!("duplicate parameter name {name}"),
            });
        }
        self.entries.insert(name.to_string(), entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry<S>> {
        self.entries.get(name).ok_or_else(|| TensorError::Domain {
            op: "param_tree",
            detail: format!("unknown parameter {name}"),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry<S>> {
        self.entries.get_mut(name).ok_or_else(|| TensorError::Domain {
            op: "param_tree",
            detail: format!("unknown parameter {name}"),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let e = self.get_mut(name)?;
        if e.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "param_tree",
                detail: format!("assigning wrong shape to {name}"),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<S>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<S>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over trainable entries.
    pub fn trainable_param_count(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Total element count over trainable entries whose name contains `infix`.
    pub fn param_count_matching(&self, infix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, e)| e.trainable && n.contains(infix))
            .map(|(_, e)| e.value.numel())
            .sum()
    }

    /// One EMA step: shadow <- decay*shadow + (1-decay)*value, in f64.
    pub fn ema_step(&mut self, decay: f64) {
        for e in self.entries.values_mut() {
            if let Some(shadow) = e.ema.as_mut() {
                for (s, v) in shadow.iter_mut().zip(e.value.data()) {
                    *s = decay * *s + (1.0 - decay) * v.fl();
                }
            }
        }
    }

    /// Copy of the tree with every EMA-shadowed value replaced by its shadow
    /// (rounded to S). Non-shadowed entries (including running moments and
    /// normalizer vectors) are copied as-is; shadows are dropped from the
    /// copy so it can't be EMA-stepped by mistake.
    pub fn ema_snapshot(&self) -> ParamTree<S> {
        let mut out = ParamTree::new();
        for (name, e) in &self.entries {
            let value = match &e.ema {
                Some(shadow) => Tensor::from_fn(e.value.shape(), |i| S::fr(shadow[i])),
                None => e.value.clone(),
            };
            out.entries.insert(
                name.clone(),
                ParamEntry {
                    value,
                    trainable: e.trainable,
                    spectral: e.spectral.clone(),
                    ema: None,
                },
            );
        }
        out
    }
}

/// Fan-in-scaled truncated-normal initializer: std = 1/sqrt(fan_in),
/// truncated at two standard deviations.
pub fn init_weight<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Prng) -> Result<Tensor<S>> {
    if fan_in == 0 {
        return Err(TensorError::Domain { op: "init_weight", detail: "zero fan-in".into() });
    }
    let std = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::fr(rng.truncated_normal(2.0) * std)).collect();
    Tensor::new(shape, data)
}

/// Places one ParamTree's entries onto a tape.
///
/// `learn=true` means the owning network is being optimized on this tape:
/// its weights are bound as trainable leaves, spectral power iteration
/// advances one step per flagged tensor, and batch-norm running moments
/// commit. With `learn=false` the network is a frozen function: constant
/// leaves, stored normalizer vectors, no state writes.
pub struct Binder<'a, S: Scalar> {
    tape: &'a Tape<S>,
    tree: &'a mut ParamTree<S>,
    learn: bool,
    cache: BTreeMap<String, Var>,
    bound: Vec<(String, Var)>,
}

impl<'a, S: Scalar> Binder<'a, S> {
    pub fn new(tape: &'a Tape<S>, tree: &'a mut ParamTree<S>, learn: bool) -> Self {
        Binder { tape, tree, learn, cache: BTreeMap::new(), bound: Vec::new() }
    }

    pub fn tape(&self) -> &'a Tape<S> {
        self.tape
    }

    pub fn learn(&self) -> bool {
        self.learn
    }

    /// Bind a parameter, applying spectral normalization on the tape when
    /// the entry is flagged. Repeated binds of one name share the node.
    pub fn bind(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.cache.get(name) {
            return Ok(v);
        }
        // Advance the power iteration first (outside the tape, in f64).
        if self.learn {
            let e = self.tree.get_mut(name)?;
            if e.spectral.is_some() {
                let (rows, cols) = sn_matrix_dims(e.value.shape());
                let value = e.value.clone();
                let sn = e.spectral.as_mut().expect("checked above");
                spectral_sigma(value.data(), rows, cols, sn, true)?;
            }
        }
        let e = self.tree.get(name)?;
        let leaf = if self.learn && e.trainable {
            let v = self.tape.trainable_leaf(e.value.clone());
            self.bound.push((name.to_string(), v));
            v
        } else {
            self.tape.leaf(e.value.clone())
        };
        let out = match &e.spectral {
            None => leaf,
            Some(sn) => {
                // sigma = u' W v with the stored vectors held constant;
                // normalized weight = W / (sigma + floor). Dividing on the
                // tape keeps the sigma-dependence in the gradient.
                let (rows, cols) = sn_matrix_dims(e.value.shape());
                let u = self.tape.leaf(Tensor::new(&[1, rows], sn.u.clone())?);
                let v = self.tape.leaf(Tensor::new(&[cols, 1], sn.v.clone())?);
                let shape = e.value.shape().to_vec();
                let w_mat = self.tape.reshape(leaf, &[rows, cols])?;
                let uw = self.tape.matmul(u, w_mat)?;
                let sig = self.tape.reshape(self.tape.matmul(uw, v)?, &[1])?;
                let sig = self.tape.add_scalar(sig, crate::tensor::SN_NORM_FLOOR)?;
                let inv = self.tape.recip(sig)?;
                let wn = self.tape.scale_by(w_mat, inv)?;
                self.tape.reshape(wn, &shape)?
            }
        };
        self.cache.insert(name.to_string(), out);
        Ok(out)
    }

    /// Batch normalization wired to tree state at `{prefix}.gamma`,
    /// `{prefix}.beta`, `{prefix}.running_mean`, `{prefix}.running_var`,
    /// `{prefix}.count`. Train mode uses batch statistics; running moments
    /// are committed only on learning tapes. Eval mode uses the stored
    /// moments and fails loudly if they were never primed.
    pub fn batch_norm(
        &mut self,
        x: Var,
        prefix: &str,
        layout: BnLayout,
        train: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let gamma = self.bind(&format!("{prefix}.gamma"))?;
        let beta = self.bind(&format!("{prefix}.beta"))?;
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let count_name = format!("{prefix}.count");
        let run_mean = self.tree.get(&mean_name)?.value.clone();
        let run_var = self.tree.get(&var_name)?.value.clone();
        let count = self.tree.get(&count_name)?.value.get(0).fl() as u64;
        let mode = if train { BnMode::Train } else { BnMode::Eval };
        let out = self.tape.batch_norm(
            x,
            Some(gamma),
            Some(beta),
            &run_mean,
            &run_var,
            count,
            layout,
            mode,
            eps,
            momentum,
        )?;
        if let Some((new_mean, new_var)) = out.updated {
            if self.learn {
                self.tree.set_value(&mean_name, new_mean)?;
                self.tree.set_value(&var_name, new_var)?;
                self.tree.set_value(&count_name, Tensor::scalar(S::fr((count + 1) as f64)))?;
            }
        }
        Ok(out.y)
    }

    /// Trainable leaves bound so far, for routing gradients back by name.
    pub fn into_bindings(self) -> Vec<(String, Var)> {
        self.bound
    }
}

/// y = x W (+ b): [B, in] x [in, out].
pub fn linear<S: Scalar>(tape: &Tape<S>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

/// Register an input layer plus `blocks` residual blocks:
///   y0 = relu(x W_in + b_in)
///   y  = y + W2 relu(W1 y + b1) + b2    (per block)
/// Names: `{prefix}.in.w/.b`, `{prefix}.block{i}.fc{1,2}.w/.b`.
pub fn init_res_mlp<S: Scalar>(
    tree: &mut ParamTree<S>,
    prefix: &str,
    in_dim: usize,
    width: usize,
    blocks: usize,
    spectral: bool,
    ema: bool,
    rng: &mut Prng,
) -> Result<()> {
    tree.insert_trainable(
        &format!("{prefix}.in.w"),
        init_weight(&[in_dim, width], in_dim, rng)?,
        spectral,
        ema,
        rng,
    )?;
    tree.insert_trainable(&format!("{prefix}.in.b"), Tensor::zeros(&[width]), false, ema, rng)?;
    for i in 1..=blocks {
        for fc in ["fc1", "fc2"] {
            tree.insert_trainable(
                &format!("{prefix}.block{i}.{fc}.w"),
                init_weight(&[width, width], width, rng)?,
                spectral,
                ema,
                rng,
            )?;
            tree.insert_trainable(
                &format!("{prefix}.block{i}.{fc}.b"),
                Tensor::zeros(&[width]),
                false,
                ema,
                rng,
            )?;
        }
    }
    Ok(())
}

/// Forward pass matching [`init_res_mlp`]'s registration.
pub fn run_res_mlp<S: Scalar>(
    binder: &mut Binder<'_, S>,
    prefix: &str,
    x: Var,
    blocks: usize,
) -> Result<Var> {
    let tape = binder.tape();
    let w_in = binder.bind(&format!("{prefix}.in.w"))?;
    let b_in = binder.bind(&format!("{prefix}.in.b"))?;
    let mut y = tape.relu(linear(tape, x, w_in, Some(b_in))?)?;
    for i in 1..=blocks {
        let w1 = binder.bind(&format!("{prefix}.block{i}.fc1.w"))?;
        let b1 = binder.bind(&format!("{prefix}.block{i}.fc1.b"))?;
        let w2 = binder.bind(&format!("{prefix}.block{i}.fc2.w"))?;
        let b2 = binder.bind(&format!("{prefix}.block{i}.fc2.b"))?;
        let h = tape.relu(linear(tape, y, w1, Some(b1))?)?;
        let r = linear(tape, h, w2, Some(b2))?;
        y = tape.add(y, r)?;
    }
    Ok(y)
}

/// Split `groups` contiguous latent slices over `sites` injection points,
/// front-loaded so early stages get the extra slices and `groups=1` puts
/// everything at the first stage. Returns per-site (start_group, end_group).
pub fn group_site_split(groups: usize, sites: usize) -> Vec<(usize, usize)> {
    (0..sites)
        .map(|i| (i * groups).div_ceil(sites).min(groups))
        .chain(std::iter::once(groups))
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| (w[0], w[1]))
        .collect()
}
