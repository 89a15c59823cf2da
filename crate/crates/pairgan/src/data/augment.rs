//! Training-time augmentation with a fixed, documented draw budget.
//!
//! Every mode emits a square image at the requested target resolution
//! (which must not exceed the source side). Per image:
//! - `None`: deterministic center crop + resize, 0 draws;
//! - `Base`: random resized crop with area fraction U(0.08, 1.0) and aspect
//!   ratio U(3/4, 4/3), anchored uniformly — 10 candidate tuples of 4
//!   uniforms each (all 40 always drawn), first feasible candidate wins,
//!   bilinear resize to the target size, then a coin for a horizontal
//!   flip. Exactly 41 u64 draws.
//! - `Light`: same scheme but area fraction U(0.67, 1.0) and center-biased
//!   anchors (offsets halved toward the center), so crops retain larger
//!   portions of the image. Exactly 41 u64 draws.
//!
//! Fixed budgets keep the data stream aligned across refactors: a change in
//! crop acceptance logic cannot silently shift every later draw.

use crate::rng::Prng;
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    None,
    Light,
    Base,
}

impl AugmentMode {
    /// Config-file spelling.
    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::None => "none",
            AugmentMode::Light => "light",
            AugmentMode::Base => "base",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentMode::None),
            "light" => Ok(AugmentMode::Light),
            "base" => Ok(AugmentMode::Base),
            other => Err(TensorError::Format {
                what: "augment mode",
                detail: format!("unknown mode {other:?} (expected none|light|base)"),
            }),
        }
    }
}

/// Exact number of u64 draws consumed per image.
pub fn draws_per_image(mode: AugmentMode) -> usize {
    match mode {
        AugmentMode::None => 0,
        AugmentMode::Light | AugmentMode::Base => 41,
    }
}

const CROP_CANDIDATES: usize = 10;
const ASPECT_LO: f64 = 0.75;
const ASPECT_HI: f64 = 4.0 / 3.0;
/// Area-fraction ranges: aggressive for base, conservative for light.
const BASE_AREA_LO: f64 = 0.08;
const LIGHT_AREA_LO: f64 = 0.67;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Crop {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

/// Select a crop window for a size x size image. Always consumes exactly
/// 40 draws regardless of which candidate is accepted. Falls back to the
/// full frame if no candidate fits.
pub(crate) fn choose_crop(size: usize, mode: AugmentMode, rng: &mut Prng) -> Crop {
    let area_lo = match mode {
        AugmentMode::Light => LIGHT_AREA_LO,
        _ => BASE_AREA_LO,
    };
    let mut chosen: Option<Crop> = None;
    for _ in 0..CROP_CANDIDATES {
        let area = rng.uniform_in(area_lo, 1.0);
        let aspect = rng.uniform_in(ASPECT_LO, ASPECT_HI);
        let mut fx = rng.uniform();
        let mut fy = rng.uniform();
        if mode == AugmentMode::Light {
            // Halve the anchor offset toward the center.
            fx = 0.5 + (fx - 0.5) * 0.5;
            fy = 0.5 + (fy - 0.5) * 0.5;
        }
        if chosen.is_some() {
            continue; // keep draining the fixed budget
        }
        let s = size as f64;
        let w = ((area * aspect).sqrt() * s).round() as usize;
        let h = ((area / aspect).sqrt() * s).round() as usize;
        if w == 0 || h == 0 || w > size || h > size {
            continue;
        }
        let x0 = (fx * (size - w + 1) as f64).floor() as usize;
        let y0 = (fy * (size - h + 1) as f64).floor() as usize;
        chosen = Some(Crop { x0: x0.min(size - w), y0: y0.min(size - h), w, h });
    }
    chosen.unwrap_or(Crop { x0: 0, y0: 0, w: size, h: size })
}

fn check_chw(img: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "augment",
            detail: format!("expected [C,H,W], got {s:?}"),
        });
    }
    Ok((s[0], s[1], s[2]))
}

/// Horizontal mirror of a [C,H,W] image.
pub fn hflip(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = check_chw(img)?;
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        for row in 0..h {
            let base = (ch * h + row) * w;
            for col in 0..w {
                out[base + col] = src[base + (w - 1 - col)];
            }
        }
    }
    Tensor::new(img.shape(), out)
}

/// Bilinear resample of a [C,H,W] image to (oh, ow) with half-pixel centers.
pub fn bilinear_resize(img: &Tensor<f32>, oh: usize, ow: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = check_chw(img)?;
    if oh == 0 || ow == 0 {
        return Err(TensorError::Domain {
            op: "bilinear_resize",
            detail: "empty output".into(),
        });
    }
    let src = img.data();
    let scale_y = h as f64 / oh as f64;
    let scale_x = w as f64 / ow as f64;
    let mut out = vec![0.0f32; c * oh * ow];
    for oy in 0..oh {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..ow {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(ch * h + y) * w + x] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(ch * oh + oy) * ow + ox] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

fn crop_tensor(img: &Tensor<f32>, crop: Crop) -> Result<Tensor<f32>> {
    let (c, h, w) = check_chw(img)?;
    debug_assert!(crop.x0 + crop.w <= w && crop.y0 + crop.h <= h);
    let src = img.data();
    let mut out = Vec::with_capacity(c * crop.h * crop.w);
    for ch in 0..c {
        for row in 0..crop.h {
            let base = (ch * h + crop.y0 + row) * w + crop.x0;
            out.extend_from_slice(&src[base..base + crop.w]);
        }
    }
    Tensor::new(&[c, crop.h, crop.w], out)
}

/// Deterministic center crop to a square side, then resize to target.
pub fn center_crop_resize(img: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = check_chw(img)?;
    let side = h.min(w);
    let crop = Crop { x0: (w - side) / 2, y0: (h - side) / 2, w: side, h: side };
    let cropped = crop_tensor(img, crop)?;
    if side == target {
        Ok(cropped)
    } else {
        bilinear_resize(&cropped, target, target)
    }
}

/// Apply one augmentation pass to a square [C,S,S] image, producing
/// [C,target,target]. The target must not exceed the source side.
pub fn augment(
    img: &Tensor<f32>,
    mode: AugmentMode,
    target: usize,
    rng: &mut Prng,
) -> Result<Tensor<f32>> {
    let (_, h, w) = check_chw(img)?;
    if h != w {
        return Err(TensorError::ShapeMismatch {
            op: "augment",
            detail: format!("expected a square image, got {h}x{w}"),
        });
    }
    if target == 0 || target > h {
        return Err(TensorError::Domain {
            op: "augment",
            detail: format!("target size {target} outside 1..={h} (source side)"),
        });
    }
    match mode {
        AugmentMode::None => center_crop_resize(img, target),
        AugmentMode::Light | AugmentMode::Base => {
            let crop = choose_crop(h, mode, rng);
            let resized = if crop.w == target && crop.h == target {
                crop_tensor(img, crop)?
            } else {
                bilinear_resize(&crop_tensor(img, crop)?, target, target)?
            };
            if rng.coin(0.5) {
                hflip(&resized)
            } else {
                Ok(resized)
            }
        }
    }
}
