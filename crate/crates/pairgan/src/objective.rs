//! Adversarial objectives over joint-discriminator scores.
//!
//! Each scored branch carries a label y: +1 for encoder pairs (x, E(x)) and
//! -1 for generator pairs (G(z), z). With h(t) = max(0, 1 - t):
//!
//! - discriminator loss per sample: sum of h(y * s) over the active score
//!   terms (`PerTerm`), or a single h(y * sum of active scores) (`Joint`);
//! - encoder/generator loss per sample: y * (sum of active scores).
//!
//! A batch loss is the mean over the branch; the total objective adds the
//! encoder-branch and generator-branch means. Score terms are switchable for
//! ablations: any subset of {unary x, unary z, joint xz} may be active, and
//! `pairing = false` drops the latent side entirely (plain GAN: only s_x).

use crate::models::ScoreVars;
use crate::tensor::{Result, Scalar, Tape, TensorError, Var};

/// How the discriminator hinge is applied across active score terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HingeMode {
    /// h(y s_x) + h(y s_z) + h(y s_xz): each term keeps its own margin.
    PerTerm,
    /// h(y (s_x + s_z + s_xz)): one margin on the summed score.
    Joint,
}

/// Which score terms participate in the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    pub unary_x: bool,
    pub unary_z: bool,
    pub joint: bool,
    /// False = plain GAN mode: no encoder, latents never scored.
    pub pairing: bool,
    pub hinge: HingeMode,
}

impl AblationFlags {
    /// Full objective: all three terms, per-term hinge.
    pub fn base() -> Self {
        AblationFlags {
            unary_x: true,
            unary_z: true,
            joint: true,
            pairing: true,
            hinge: HingeMode::PerTerm,
        }
    }

    /// Plain image GAN: only the unary image score exists.
    pub fn no_encoder() -> Self {
        AblationFlags {
            unary_x: true,
            unary_z: false,
            joint: false,
            pairing: false,
            hinge: HingeMode::PerTerm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pairing && (self.unary_z || self.joint) {
            return Err(TensorError::Domain {
                op: "ablation_flags",
                detail: "latent-side terms require pairing".into(),
            });
        }
        if !self.unary_x && !self.unary_z && !self.joint {
            return Err(TensorError::Domain {
                op: "ablation_flags",
                detail: "at least one score term must be active".into(),
            });
        }
        Ok(())
    }

    pub fn active_terms(&self) -> usize {
        self.unary_x as usize + self.unary_z as usize + self.joint as usize
    }
}

/// The active score variables for one branch, in (x, z, xz) order.
fn active_scores<S: Scalar>(
    _tape: &Tape<S>,
    scores: &ScoreVars,
    flags: &AblationFlags,
) -> Result<Vec<Var>> {
    flags.validate()?;
    let mut out = Vec::with_capacity(3);
    if flags.unary_x {
        out.push(scores.s_x);
    }
    if flags.unary_z {
        out.push(scores.s_z.ok_or_else(|| TensorError::Domain {
            op: "objective",
            detail: "unary z term active but no s_z was scored".into(),
        })?);
    }
    if flags.joint {
        out.push(scores.s_xz.ok_or_else(|| TensorError::Domain {
            op: "objective",
            detail: "joint term active but no s_xz was scored".into(),
        })?);
    }
    Ok(out)
}

fn check_label(label: f64) -> Result<()> {
    if label == 1.0 || label == -1.0 {
        Ok(())
    } else {
        Err(TensorError::Domain {
            op: "objective",
            detail: format!("branch label must be +1 or -1, got {label}"),
        })
    }
}

fn sum_vars<S: Scalar>(tape: &Tape<S>, vars: &[Var]) -> Result<Var> {
    let mut it = vars.iter();
    let mut acc = *it.next().expect("at least one active term");
    for &v in it {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// y * s elementwise, for y in {+1, -1}.
fn signed<S: Scalar>(tape: &Tape<S>, s: Var, label: f64) -> Result<Var> {
    if label > 0.0 {
        Ok(s)
    } else {
        tape.neg(s)
    }
}

/// h(t) = max(0, 1 - t), elementwise on the tape.
pub fn hinge<S: Scalar>(tape: &Tape<S>, t: Var) -> Result<Var> {
    tape.relu(tape.affine(t, -1.0, 1.0)?)
}

/// Mean over one branch of the encoder/generator loss y * (sum of active
/// scores). Encoder and generator minimize this.
pub fn eg_branch_loss<S: Scalar>(
    tape: &Tape<S>,
    scores: &ScoreVars,
    label: f64,
    flags: &AblationFlags,
) -> Result<Var> {
    check_label(label)?;
    let terms = active_scores(tape, scores, flags)?;
    let total = sum_vars(tape, &terms)?;
    tape.mean(signed(tape, total, label)?)
}

/// Mean over one branch of the discriminator hinge loss.
pub fn d_branch_loss<S: Scalar>(
    tape: &Tape<S>,
    scores: &ScoreVars,
    label: f64,
    flags: &AblationFlags,
) -> Result<Var> {
    check_label(label)?;
    let terms = active_scores(tape, scores, flags)?;
    match flags.hinge {
        HingeMode::PerTerm => {
            let mut hinged = Vec::with_capacity(terms.len());
            for &t in &terms {
                hinged.push(hinge(tape, signed(tape, t, label)?)?);
            }
            tape.mean(sum_vars(tape, &hinged)?)
        }
        HingeMode::Joint => {
            let total = sum_vars(tape, &terms)?;
            tape.mean(hinge(tape, signed(tape, total, label)?)?)
        }
    }
}

/// Total discriminator objective: encoder-branch mean + generator-branch mean.
pub fn d_loss<S: Scalar>(
    tape: &Tape<S>,
    enc: &ScoreVars,
    gen: &ScoreVars,
    flags: &AblationFlags,
) -> Result<Var> {
    let a = d_branch_loss(tape, enc, 1.0, flags)?;
    let b = d_branch_loss(tape, gen, -1.0, flags)?;
    tape.add(a, b)
}

/// Total encoder/generator objective: encoder-branch mean + generator-branch
/// mean of y * (sum of active scores).
pub fn eg_loss<S: Scalar>(
    tape: &Tape<S>,
    enc: &ScoreVars,
    gen: &ScoreVars,
    flags: &AblationFlags,
) -> Result<Var> {
    let a = eg_branch_loss(tape, enc, 1.0, flags)?;
    let b = eg_branch_loss(tape, gen, -1.0, flags)?;
    tape.add(a, b)
}

/// Per-term raw score means of one branch, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermMeans {
    pub s_x: f64,
    pub s_z: Option<f64>,
    pub s_xz: Option<f64>,
}

pub fn score_means<S: Scalar>(tape: &Tape<S>, scores: &ScoreVars) -> TermMeans {
    let mean = |v: Var| {
        let t = tape.value(v);
        let n = t.numel().max(1) as f64;
        t.data().iter().map(|x| x.fl()).sum::<f64>() / n
    };
    TermMeans {
        s_x: mean(scores.s_x),
        s_z: scores.s_z.map(mean),
        s_xz: scores.s_xz.map(mean),
    }
}
