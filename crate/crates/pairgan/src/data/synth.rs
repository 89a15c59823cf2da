//! Deterministic synthetic image datasets.
//!
//! Every image is generated on demand from its own RNG stream
//! (`with_stream(seed, IMAGE_STREAM_BASE + index)`), so random access,
//! regeneration, and cross-process determinism are free. Labels cycle
//! round-robin, so every prefix of the dataset is nearly class-balanced.
//!
//! Two families:
//! - `Shapes`, 3 classes (disk / square / cross) with jittered position,
//!   size, and intensity plus per-pixel noise — hard enough that a linear
//!   probe on good features stays below the ceiling;
//! - `Blobs`, 10 classes of soft Gaussian bumps placed on a ring, one angle
//!   per class.
//!
//! Pixel values are synthesized in [-1, 1], quantized to u8 for storage, and
//! mapped back with v/127.5 - 1 (an exact u8 round-trip).

use super::idx::IdxImages;
use crate::rng::Prng;
use crate::tensor::{Result, Tensor, TensorError};

/// First per-image RNG stream (streams 0..=4 are the named global ones).
pub const IMAGE_STREAM_BASE: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Shapes,
    Blobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthDataset {
    pub kind: SynthKind,
    pub res: usize,
    pub count: usize,
    pub seed: u64,
}

pub fn u8_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

fn cov(edge: f64) -> f64 {
    // Soft one-pixel edge: fraction of the pixel inside the boundary.
    (edge + 0.5).clamp(0.0, 1.0)
}

impl SynthDataset {
    pub fn new(kind: SynthKind, res: usize, count: usize, seed: u64) -> Result<Self> {
        if res < 8 || count == 0 {
            return Err(TensorError::Domain {
                op: "synth_dataset",
                detail: "resolution must be >= 8 and count positive".into(),
            });
        }
        Ok(SynthDataset { kind, res, count, seed })
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            SynthKind::Shapes => 3,
            SynthKind::Blobs => 10,
        }
    }

    pub fn label(&self, idx: usize) -> u8 {
        (idx % self.classes()) as u8
    }

    /// Quantized pixels of image `idx`, row-major, res*res bytes.
    pub fn image_u8(&self, idx: usize) -> Vec<u8> {
        assert!(idx < self.count, "image index {idx} out of range {}", self.count);
        let mut rng = Prng::with_stream(self.seed, IMAGE_STREAM_BASE + idx as u64);
        let s = self.res as f64;
        let class = self.label(idx) as usize;
        let field: Box<dyn Fn(f64, f64) -> f64> = match self.kind {
            SynthKind::Shapes => {
                let cx = s / 2.0 + rng.uniform_in(-s / 10.0, s / 10.0);
                let cy = s / 2.0 + rng.uniform_in(-s / 10.0, s / 10.0);
                let r = s * 0.28 * (1.0 + rng.uniform_in(-0.2, 0.2));
                let fg = 0.8 + rng.uniform_in(-0.15, 0.15);
                let bg = -0.8 + rng.uniform_in(-0.1, 0.1);
                Box::new(move |x: f64, y: f64| {
                    let (dx, dy) = (x - cx, y - cy);
                    let coverage = match class {
                        0 => cov(r - (dx * dx + dy * dy).sqrt()),
                        1 => cov(r * 0.89 - dx.abs().max(dy.abs())),
                        _ => {
                            let t = r * 0.45;
                            let horiz = cov(t - dy.abs()).min(cov(r - dx.abs()));
                            let vert = cov(t - dx.abs()).min(cov(r - dy.abs()));
                            horiz.max(vert)
                        }
                    };
                    bg + (fg - bg) * coverage
                })
            }
            SynthKind::Blobs => {
                let base_angle =
                    std::f64::consts::TAU * class as f64 / 10.0 + rng.uniform_in(-0.1, 0.1);
                let ring = s * 0.30;
                let cx = s / 2.0 + ring * base_angle.cos() + rng.uniform_in(-s / 16.0, s / 16.0);
                let cy = s / 2.0 + ring * base_angle.sin() + rng.uniform_in(-s / 16.0, s / 16.0);
                let sigma = s * 0.10 * (1.0 + rng.uniform_in(-0.15, 0.15));
                let peak = 0.9 + rng.uniform_in(-0.1, 0.1);
                let bg = -0.85;
                Box::new(move |x: f64, y: f64| {
                    let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    bg + (peak - bg) * (-d2 / (2.0 * sigma * sigma)).exp()
                })
            }
        };
        let noise_std = match self.kind {
            SynthKind::Shapes => 0.08,
            SynthKind::Blobs => 0.05,
        };
        let mut out = Vec::with_capacity(self.res * self.res);
        for row in 0..self.res {
            for col in 0..self.res {
                // Pixel centers.
                let v = field(col as f64 + 0.5, row as f64 + 0.5)
                    + noise_std * rng.normal();
                out.push(unit_to_u8(v.clamp(-1.0, 1.0) as f32));
            }
        }
        out
    }

    /// Image `idx` as a [1, res, res] tensor in [-1, 1].
    pub fn image(&self, idx: usize) -> Tensor<f32> {
        let px = self.image_u8(idx);
        Tensor::new(&[1, self.res, self.res], px.into_iter().map(u8_to_unit).collect())
            .expect("pixel count matches shape")
    }

    /// Materialize the whole dataset in IDX form.
    pub fn to_idx(&self) -> (IdxImages, Vec<u8>) {
        let mut pixels = Vec::with_capacity(self.count * self.res * self.res);
        let mut labels = Vec::with_capacity(self.count);
        for i in 0..self.count {
            pixels.extend_from_slice(&self.image_u8(i));
            labels.push(self.label(i));
        }
        (IdxImages { rows: self.res, cols: self.res, pixels }, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes() -> SynthDataset {
        SynthDataset::new(SynthKind::Shapes, 32, 30, 7).unwrap()
    }

    #[test]
    fn quantization_round_trips_every_byte() {
        for b in 0..=255u8 {
            assert_eq!(unit_to_u8(u8_to_unit(b)), b);
        }
    }

    #[test]
    fn generation_is_deterministic_and_index_dependent() {
        let ds = shapes();
        assert_eq!(ds.image_u8(5), ds.image_u8(5));
        assert_ne!(ds.image_u8(5), ds.image_u8(8), "same class, different jitter/noise");
        let other_seed = SynthDataset::new(SynthKind::Shapes, 32, 30, 8).unwrap();
        assert_ne!(ds.image_u8(5), other_seed.image_u8(5));
    }

    #[test]
    fn labels_cycle_and_balance() {
        let ds = shapes();
        assert_eq!(ds.label(0), 0);
        assert_eq!(ds.label(4), 1);
        let (_, labels) = ds.to_idx();
        for c in 0..3u8 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 10);
        }
    }

    #[test]
    fn shapes_classes_are_distinct_in_pixel_space() {
        // Same index modulo class => same jitter stream structure; average
        // within-class distance should be well below cross-class distance.
        let ds = SynthDataset::new(SynthKind::Shapes, 32, 300, 3).unwrap();
        let mean_img = |class: usize| -> Vec<f64> {
            let mut acc = vec![0.0f64; 32 * 32];
            let mut n = 0.0;
            for i in (class..300).step_by(3) {
                for (a, b) in acc.iter_mut().zip(ds.image_u8(i)) {
                    *a += b as f64;
                }
                n += 1.0;
            }
            acc.into_iter().map(|v| v / n).collect()
        };
        let m: Vec<Vec<f64>> = (0..3).map(mean_img).collect();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
        };
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(
                    dist(&m[i], &m[j]) > 4.0,
                    "class templates {i} and {j} are too similar ({})",
                    dist(&m[i], &m[j])
                );
            }
        }
    }

    #[test]
    fn blob_peak_sits_near_its_class_angle() {
        let ds = SynthDataset::new(SynthKind::Blobs, 32, 40, 11).unwrap();
        for idx in [0usize, 3, 17] {
            let class = ds.label(idx) as usize;
            let img = ds.image_u8(idx);
            let arg = img.iter().enumerate().max_by_key(|(_, &v)| v).unwrap().0;
            let (py, px) = ((arg / 32) as f64 + 0.5, (arg % 32) as f64 + 0.5);
            let angle = std::f64::consts::TAU * class as f64 / 10.0;
            let (ex, ey) = (16.0 + 9.6 * angle.cos(), 16.0 + 9.6 * angle.sin());
            let d = ((px - ex).powi(2) + (py - ey).powi(2)).sqrt();
            assert!(d < 6.0, "image {idx}: peak at ({px},{py}), expected near ({ex:.1},{ey:.1})");
        }
    }

    #[test]
    fn tensor_view_is_in_unit_range() {
        let ds = shapes();
        let t = ds.image(0);
        assert_eq!(t.shape(), &[1, 32, 32]);
        assert!(t.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(SynthDataset::new(SynthKind::Shapes, 4, 10, 0).is_err());
        assert!(SynthDataset::new(SynthKind::Blobs, 32, 0, 0).is_err());
    }
}
