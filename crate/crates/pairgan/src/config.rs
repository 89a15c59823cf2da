//! Run configuration: UTF-8 `key=value` files, the named ablation presets,
//! and builders that turn a config into a dataset and a trainer.
//!
//! A config file holds one `key=value` pair per line; blank lines and lines
//! starting with `#` are ignored. Every key has a default, unknown or
//! duplicated keys are errors, and parse -> serialize -> parse is a fixed
//! point. Applying a preset first resets every preset-controlled field
//! (objective terms, prior, encoder mode/resolution, generator width,
//! learning-rate multiplier) to the base row, then applies that row's
//! changes, so a preset means the same thing regardless of the underlying
//! file.

use std::fmt::Write as _;

use crate::data::{load_idx_dataset, AugmentMode, ImageSet, SynthDataset, SynthKind};
use crate::models::{
    Discriminator, DiscriminatorArch, Encoder, EncoderArch, EncoderMode, Generator, GeneratorArch,
    LatentSpec, PriorKind,
};
use crate::objective::{AblationFlags, HingeMode};
use crate::rng::{Prng, StreamId};
use crate::tensor::{Result, TensorError};
use crate::trainer::{TrainSettings, Trainer};

/// Depth of the residual MLP stacks (encoder head and discriminator
/// latent/joint towers).
const MLP_BLOCKS: usize = 2;
const BN_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;

/// Source corpus for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Rendered squares / circles / triangles; class = shape.
    Shapes,
    /// Class-dependent Gaussian blobs.
    Blobs,
    /// IDX image/label files on disk.
    Idx,
}

/// The full description of one training run. See the module docs for the
/// file format; [`RunConfig::serialize`] lists every key.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Named ablation preset this config realizes (bookkeeping only; the
    /// concrete fields below are authoritative).
    pub preset: String,
    /// Directory for checkpoints, CSV logs, and image exports.
    pub out_dir: String,

    pub dataset: DatasetKind,
    /// Source resolution: synthetic render size, or the load target for IDX
    /// files (28 is the native size of the common IDX corpora).
    pub dataset_res: usize,
    /// Image count for synthetic datasets (IDX files carry their own).
    pub dataset_count: usize,
    pub idx_images: String,
    pub idx_labels: String,
    pub augment: AugmentMode,

    pub lr_d: f64,
    pub lr_g: f64,
    /// Encoder learning-rate multiplier on top of `lr_g`.
    pub eta_e: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub d_steps_per_eg: u32,
    pub ema_decay: f64,
    pub batch: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub eval_every: u64,

    pub unary_x: bool,
    pub unary_z: bool,
    pub joint: bool,
    /// False = plain image GAN: no encoder, latents never scored.
    pub pairing: bool,
    pub hinge: HingeMode,

    /// Latent head: `stochastic` (predicted variance, sampled z),
    /// `deterministic` (z = mu), or `tanh` (z = tanh(mu), for the uniform
    /// prior's support). Ignored when `pairing` is off.
    pub e_mode: EncoderMode,
    pub e_res: usize,
    pub e_width: usize,
    pub g_res: usize,
    pub g_width: usize,
    pub prior: PriorKind,
    pub latent_dim: usize,
    pub latent_groups: usize,
    pub d_width: usize,
    /// Width of the residual MLP stacks (encoder head, discriminator
    /// latent/joint towers).
    pub mlp_width: usize,

    /// Strict determinism: forces `workers = 1` so the metrics CSV is a
    /// pure function of the config.
    pub strict: bool,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "base".to_string(),
            out_dir: "runs".to_string(),
            dataset: DatasetKind::Shapes,
            dataset_res: 32,
            dataset_count: 2048,
            idx_images: String::new(),
            idx_labels: String::new(),
            augment: AugmentMode::Light,
            lr_d: 4e-4,
            lr_g: 1e-4,
            eta_e: 1.0,
            beta1: 0.0,
            beta2: 0.999,
            adam_eps: 1e-8,
            d_steps_per_eg: 2,
            ema_decay: 0.9999,
            batch: 16,
            total_steps: 5_000,
            seed: 1,
            eval_every: 500,
            unary_x: true,
            unary_z: true,
            joint: true,
            pairing: true,
            hinge: HingeMode::PerTerm,
            e_mode: EncoderMode::Stochastic,
            e_res: 16,
            e_width: 8,
            g_res: 16,
            g_width: 6,
            prior: PriorKind::Gaussian,
            latent_dim: 32,
            latent_groups: 4,
            d_width: 8,
            mlp_width: 96,
            strict: true,
            workers: 1,
        }
    }
}

/// The named ablation presets, in the canonical table order.
pub const PRESETS: [&str; 11] = [
    "base",
    "deterministic-e",
    "uniform-pz",
    "x-unary-only",
    "z-unary-only",
    "no-unaries",
    "small-g-1/3",
    "small-g-2/3",
    "no-e-gan",
    "high-res-e",
    "eta10",
];

fn bad(detail: String) -> TensorError {
    TensorError::Format { what: "run config", detail }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(format!("{key} must be true or false, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(format!("bad numeric value for {key}: {v:?}")))
}

impl RunConfig {
    /// Parse a config file: defaults overridden by `key=value` lines.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => self.preset = v.to_string(),
            "out_dir" => self.out_dir = v.to_string(),
            "dataset" => {
                self.dataset = match v {
                    "shapes" => DatasetKind::Shapes,
                    "blobs" => DatasetKind::Blobs,
                    "idx" => DatasetKind::Idx,
                    _ => return Err(bad(format!("dataset must be shapes|blobs|idx, got {v:?}"))),
                }
            }
            "dataset_res" => self.dataset_res = parse_num(key, v)?,
            "dataset_count" => self.dataset_count = parse_num(key, v)?,
            "idx_images" => self.idx_images = v.to_string(),
            "idx_labels" => self.idx_labels = v.to_string(),
            "augment" => {
                self.augment = match v {
                    "base" => AugmentMode::Base,
                    "light" => AugmentMode::Light,
                    "none" => AugmentMode::None,
                    _ => return Err(bad(format!("augment must be base|light|none, got {v:?}"))),
                }
            }
            "lr_d" => self.lr_d = parse_num(key, v)?,
            "lr_g" => self.lr_g = parse_num(key, v)?,
            "eta_e" => self.eta_e = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "d_steps_per_eg" => self.d_steps_per_eg = parse_num(key, v)?,
            "ema_decay" => self.ema_decay = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "total_steps" => self.total_steps = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "unary_x" => self.unary_x = parse_bool(key, v)?,
            "unary_z" => self.unary_z = parse_bool(key, v)?,
            "joint" => self.joint = parse_bool(key, v)?,
            "pairing" => self.pairing = parse_bool(key, v)?,
            "hinge" => {
                self.hinge = match v {
                    "per-term" => HingeMode::PerTerm,
                    "joint" => HingeMode::Joint,
                    _ => return Err(bad(format!("hinge must be per-term|joint, got {v:?}"))),
                }
            }
            "e_mode" => {
                self.e_mode = match v {
                    "stochastic" => EncoderMode::Stochastic,
                    "deterministic" => EncoderMode::Deterministic,
                    "tanh" => EncoderMode::TanhDeterministic,
                    _ => {
                        return Err(bad(format!(
                            "e_mode must be stochastic|deterministic|tanh, got {v:?}"
                        )))
                    }
                }
            }
            "e_res" => self.e_res = parse_num(key, v)?,
            "e_width" => self.e_width = parse_num(key, v)?,
            "g_res" => self.g_res = parse_num(key, v)?,
            "g_width" => self.g_width = parse_num(key, v)?,
            "prior" => {
                self.prior = match v {
                    "gaussian" => PriorKind::Gaussian,
                    "uniform" => PriorKind::Uniform,
                    _ => return Err(bad(format!("prior must be gaussian|uniform, got {v:?}"))),
                }
            }
            "latent_dim" => self.latent_dim = parse_num(key, v)?,
            "latent_groups" => self.latent_groups = parse_num(key, v)?,
            "d_width" => self.d_width = parse_num(key, v)?,
            "mlp_width" => self.mlp_width = parse_num(key, v)?,
            "strict" => self.strict = parse_bool(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            _ => return Err(bad(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order. Parsing the output
    /// reproduces this config exactly.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv(&mut s, "preset", self.preset.clone());
        kv(&mut s, "out_dir", self.out_dir.clone());
        let ds = match self.dataset {
            DatasetKind::Shapes => "shapes",
            DatasetKind::Blobs => "blobs",
            DatasetKind::Idx => "idx",
        };
        kv(&mut s, "dataset", ds.to_string());
        kv(&mut s, "dataset_res", self.dataset_res.to_string());
        kv(&mut s, "dataset_count", self.dataset_count.to_string());
        kv(&mut s, "idx_images", self.idx_images.clone());
        kv(&mut s, "idx_labels", self.idx_labels.clone());
        let aug = match self.augment {
            AugmentMode::Base => "base",
            AugmentMode::Light => "light",
            AugmentMode::None => "none",
        };
        kv(&mut s, "augment", aug.to_string());
        kv(&mut s, "lr_d", self.lr_d.to_string());
        kv(&mut s, "lr_g", self.lr_g.to_string());
        kv(&mut s, "eta_e", self.eta_e.to_string());
        kv(&mut s, "beta1", self.beta1.to_string());
        kv(&mut s, "beta2", self.beta2.to_string());
        kv(&mut s, "adam_eps", self.adam_eps.to_string());
        kv(&mut s, "d_steps_per_eg", self.d_steps_per_eg.to_string());
        kv(&mut s, "ema_decay", self.ema_decay.to_string());
        kv(&mut s, "batch", self.batch.to_string());
        kv(&mut s, "total_steps", self.total_steps.to_string());
        kv(&mut s, "seed", self.seed.to_string());
        kv(&mut s, "eval_every", self.eval_every.to_string());
        kv(&mut s, "unary_x", self.unary_x.to_string());
        kv(&mut s, "unary_z", self.unary_z.to_string());
        kv(&mut s, "joint", self.joint.to_string());
        kv(&mut s, "pairing", self.pairing.to_string());
        let hinge = match self.hinge {
            HingeMode::PerTerm => "per-term",
            HingeMode::Joint => "joint",
        };
        kv(&mut s, "hinge", hinge.to_string());
        let mode = match self.e_mode {
            EncoderMode::Stochastic => "stochastic",
            EncoderMode::Deterministic => "deterministic",
            EncoderMode::TanhDeterministic => "tanh",
        };
        kv(&mut s, "e_mode", mode.to_string());
        kv(&mut s, "e_res", self.e_res.to_string());
        kv(&mut s, "e_width", self.e_width.to_string());
        kv(&mut s, "g_res", self.g_res.to_string());
        kv(&mut s, "g_width", self.g_width.to_string());
        let prior = match self.prior {
            PriorKind::Gaussian => "gaussian",
            PriorKind::Uniform => "uniform",
        };
        kv(&mut s, "prior", prior.to_string());
        kv(&mut s, "latent_dim", self.latent_dim.to_string());
        kv(&mut s, "latent_groups", self.latent_groups.to_string());
        kv(&mut s, "d_width", self.d_width.to_string());
        kv(&mut s, "mlp_width", self.mlp_width.to_string());
        kv(&mut s, "strict", self.strict.to_string());
        kv(&mut s, "workers", self.workers.to_string());
        s
    }

    /// Overwrite the preset-controlled fields with the named ablation row.
    ///
    /// Controlled fields: the three score-term switches, `pairing`, prior,
    /// encoder mode/presence and input resolution, generator width, and the
    /// encoder learning-rate multiplier. Everything else (dataset, learning
    /// rates, steps, seed, ...) is left as configured.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        // Base row first, then the row's changes.
        let base = RunConfig::default();
        self.unary_x = base.unary_x;
        self.unary_z = base.unary_z;
        self.joint = base.joint;
        self.pairing = base.pairing;
        self.prior = base.prior;
        self.e_mode = base.e_mode;
        self.e_res = base.e_res;
        self.g_width = base.g_width;
        self.eta_e = base.eta_e;
        match name {
            "base" => {}
            "deterministic-e" => self.e_mode = EncoderMode::Deterministic,
            "uniform-pz" => {
                self.prior = PriorKind::Uniform;
                self.e_mode = EncoderMode::TanhDeterministic;
            }
            "x-unary-only" => self.unary_z = false,
            "z-unary-only" => self.unary_x = false,
            "no-unaries" => {
                self.unary_x = false;
                self.unary_z = false;
            }
            "small-g-1/3" => self.g_width = base.g_width / 3,
            "small-g-2/3" => self.g_width = base.g_width * 2 / 3,
            "no-e-gan" => {
                self.pairing = false;
                self.unary_z = false;
                self.joint = false;
            }
            "high-res-e" => self.e_res = 2 * base.e_res,
            "eta10" => {
                self.e_res = 2 * base.e_res;
                self.eta_e = 10.0;
            }
            _ => {
                return Err(bad(format!(
                    "unknown preset {name:?}; known presets: {}",
                    PRESETS.join(", ")
                )))
            }
        }
        self.preset = name.to_string();
        Ok(())
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            unary_x: self.unary_x,
            unary_z: self.unary_z,
            joint: self.joint,
            pairing: self.pairing,
            hinge: self.hinge,
        }
    }

    pub fn latent(&self) -> LatentSpec {
        LatentSpec { kind: self.prior, dim: self.latent_dim, groups: self.latent_groups }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            batch: self.batch,
            d_substeps: self.d_steps_per_eg,
            lr_d: self.lr_d,
            lr_eg: self.lr_g,
            eta_e: self.eta_e,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            ema_decay: self.ema_decay,
        }
    }

    /// Augmentation crop/output size: what the encoder consumes, or the
    /// discriminator resolution in plain-GAN mode.
    pub fn crop_res(&self) -> usize {
        if self.pairing {
            self.e_res
        } else {
            self.g_res
        }
    }

    /// Effective worker count (strict mode pins it to one).
    pub fn effective_workers(&self) -> usize {
        if self.strict {
            1
        } else {
            self.workers.max(1)
        }
    }

    pub fn build_dataset(&self) -> Result<ImageSet> {
        match self.dataset {
            DatasetKind::Shapes => Ok(ImageSet::Synth(SynthDataset::new(
                SynthKind::Shapes,
                self.dataset_res,
                self.dataset_count,
                self.seed,
            )?)),
            DatasetKind::Blobs => Ok(ImageSet::Synth(SynthDataset::new(
                SynthKind::Blobs,
                self.dataset_res,
                self.dataset_count,
                self.seed,
            )?)),
            DatasetKind::Idx => {
                if self.idx_images.is_empty() || self.idx_labels.is_empty() {
                    return Err(bad("dataset=idx needs idx_images and idx_labels paths".into()));
                }
                load_idx_dataset(
                    std::path::Path::new(&self.idx_images),
                    std::path::Path::new(&self.idx_labels),
                    self.dataset_res,
                )
            }
        }
    }

    /// Initialize the three networks from this config's seed and wrap them
    /// in a trainer whose checkpoints echo this config verbatim.
    pub fn build_trainer(&self) -> Result<Trainer<f32>> {
        let mut rng = Prng::new(self.seed, StreamId::Init);
        let latent = self.latent();
        let enc = if self.pairing {
            Some(Encoder::init(
                EncoderArch {
                    in_ch: 1,
                    in_res: self.e_res,
                    width: self.e_width,
                    head_width: self.mlp_width,
                    head_blocks: MLP_BLOCKS,
                    latent_dim: self.latent_dim,
                    mode: self.e_mode,
                    bn_momentum: BN_MOMENTUM,
                    bn_eps: BN_EPS,
                },
                &mut rng,
            )?)
        } else {
            None
        };
        let gen = Generator::init(
            GeneratorArch {
                out_ch: 1,
                out_res: self.g_res,
                width: self.g_width,
                latent,
                bn_momentum: BN_MOMENTUM,
                bn_eps: BN_EPS,
                spectral: true,
            },
            &mut rng,
        )?;
        let disc = Discriminator::init(
            DiscriminatorArch {
                in_ch: 1,
                in_res: self.g_res,
                width: self.d_width,
                mlp_width: self.mlp_width,
                mlp_blocks: MLP_BLOCKS,
                latent_dim: self.latent_dim,
                pair_heads: self.pairing,
                spectral: true,
            },
            &mut rng,
        )?;
        let mut tr =
            Trainer::new(enc, gen, disc, self.flags(), self.train_settings(), self.seed)?;
        tr.config_echo = self.serialize().into_bytes();
        Ok(tr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_serialize_parse_is_a_fixed_point() {
        let text = "# experiment\n\npreset = no-unaries\nseed=9\nlr_d = 0.0002\n\
                    augment=none\ndataset=blobs\nunary_x=false\nunary_z=false\n\
                    idx_images=\nhinge=joint\n";
        let a = RunConfig::parse(text).unwrap();
        assert_eq!(a.seed, 9);
        assert_eq!(a.lr_d, 2e-4);
        assert_eq!(a.dataset, DatasetKind::Blobs);
        assert_eq!(a.hinge, HingeMode::Joint);
        assert!(!a.unary_x);
        let s1 = a.serialize();
        let b = RunConfig::parse(&s1).unwrap();
        assert_eq!(a, b);
        assert_eq!(s1, b.serialize());
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_are_errors() {
        assert!(RunConfig::parse("lr_q=3\n").is_err());
        assert!(RunConfig::parse("seed=1\nseed=2\n").is_err());
        assert!(RunConfig::parse("just a line\n").is_err());
        assert!(RunConfig::parse("batch=many\n").is_err());
        assert!(RunConfig::parse("augment=heavy\n").is_err());
        assert!(RunConfig::parse("pairing=yes\n").is_err());
    }

    #[test]
    fn presets_reproduce_the_ablation_grid_rows() {
        use EncoderMode::*;
        use PriorKind::*;
        // Per row: encoder mode (None = no encoder), eta_e, E input res,
        // G width, (joint, unary x, unary z), prior. The base generator
        // width is 6, so the small-G rows (paper widths 32 and 64 vs 96)
        // land on exact thirds: 2 and 4.
        #[allow(clippy::type_complexity)]
        let rows: [(&str, Option<EncoderMode>, f64, usize, usize, (bool, bool, bool), PriorKind);
            11] = [
            ("base", Some(Stochastic), 1.0, 16, 6, (true, true, true), Gaussian),
            ("deterministic-e", Some(Deterministic), 1.0, 16, 6, (true, true, true), Gaussian),
            ("uniform-pz", Some(TanhDeterministic), 1.0, 16, 6, (true, true, true), Uniform),
            ("x-unary-only", Some(Stochastic), 1.0, 16, 6, (true, true, false), Gaussian),
            ("z-unary-only", Some(Stochastic), 1.0, 16, 6, (true, false, true), Gaussian),
            ("no-unaries", Some(Stochastic), 1.0, 16, 6, (true, false, false), Gaussian),
            ("small-g-1/3", Some(Stochastic), 1.0, 16, 2, (true, true, true), Gaussian),
            ("small-g-2/3", Some(Stochastic), 1.0, 16, 4, (true, true, true), Gaussian),
            ("no-e-gan", None, 1.0, 16, 6, (false, true, false), Gaussian),
            ("high-res-e", Some(Stochastic), 1.0, 32, 6, (true, true, true), Gaussian),
            ("eta10", Some(Stochastic), 10.0, 32, 6, (true, true, true), Gaussian),
        ];
        assert_eq!(rows.len(), PRESETS.len());
        for (name, e_mode, eta, e_res, g_width, (joint, ux, uz), prior) in rows {
            assert!(PRESETS.contains(&name));
            let mut cfg = RunConfig::default();
            cfg.apply_preset(name).unwrap();
            assert_eq!(cfg.preset, name);
            assert_eq!(cfg.pairing, e_mode.is_some(), "{name}");
            if let Some(m) = e_mode {
                assert_eq!(cfg.e_mode, m, "{name}");
                assert_eq!(cfg.e_res, e_res, "{name}");
            }
            assert_eq!(cfg.eta_e, eta, "{name}");
            assert_eq!(cfg.g_width, g_width, "{name}");
            assert_eq!(cfg.g_res, 16, "{name}");
            assert_eq!((cfg.joint, cfg.unary_x, cfg.unary_z), (joint, ux, uz), "{name}");
            assert_eq!(cfg.prior, prior, "{name}");
            cfg.flags().validate().unwrap();
        }
        assert!(RunConfig::default().apply_preset("resnet-101").is_err());
    }

    #[test]
    fn presets_reset_fields_a_previous_preset_changed() {
        let mut cfg = RunConfig::default();
        cfg.apply_preset("eta10").unwrap();
        cfg.apply_preset("no-unaries").unwrap();
        assert_eq!(cfg.eta_e, 1.0);
        assert_eq!(cfg.e_res, 16);
        assert!(!cfg.unary_x && !cfg.unary_z && cfg.joint);
    }

    #[test]
    fn builders_honor_the_config() {
        let mut cfg = RunConfig::default();
        cfg.dataset_count = 64;
        cfg.e_width = 4;
        cfg.g_width = 3;
        cfg.d_width = 4;
        cfg.mlp_width = 16;
        cfg.latent_dim = 8;
        cfg.latent_groups = 2;
        let ds = cfg.build_dataset().unwrap();
        assert_eq!(ds.count(), 64);
        assert_eq!(ds.res(), 32);
        assert_eq!(ds.classes(), 3);
        let tr = cfg.build_trainer().unwrap();
        assert!(tr.enc.is_some());
        assert_eq!(tr.gen.arch.out_res, 16);
        assert_eq!(tr.settings.eta_e, 1.0);
        assert_eq!(tr.config_echo, cfg.serialize().into_bytes());
        // The echo parses back to the exact config.
        let echoed = RunConfig::parse(std::str::from_utf8(&tr.config_echo).unwrap()).unwrap();
        assert_eq!(echoed, cfg);

        cfg.apply_preset("no-e-gan").unwrap();
        let plain = cfg.build_trainer().unwrap();
        assert!(plain.enc.is_none());
        assert_eq!(cfg.crop_res(), 16);
        cfg.apply_preset("high-res-e").unwrap();
        assert_eq!(cfg.crop_res(), 32);

        cfg.dataset = DatasetKind::Idx;
        assert!(cfg.build_dataset().is_err(), "idx without paths must fail");
    }
}
