//! Data pipeline: synthetic datasets, IDX storage, augmentation, splits.
//!
//! The training provider draws, per batch of size B: B dataset indices from
//! the data stream, then the per-image augmentation draws (see
//! [`augment::draws_per_image`]) — a fixed budget of
//! B * (1 + draws_per_image(mode)) u64 values per call.

pub mod augment;
pub mod idx;
pub mod ppm;
pub mod synth;

use std::path::Path;

use crate::rng::{Prng, StreamId};
use crate::tensor::{Result, Tensor, TensorError};

pub use augment::{
    augment, bilinear_resize, center_crop_resize, draws_per_image, hflip, AugmentMode,
};
pub use synth::{u8_to_unit, unit_to_u8, SynthDataset, SynthKind};

/// A labelled image collection: procedurally generated or loaded into memory.
#[derive(Debug, Clone)]
pub enum ImageSet {
    Synth(SynthDataset),
    Mem {
        /// [N, 1, R, R] pixels in [-1, 1].
        images: Tensor<f32>,
        labels: Vec<u8>,
        classes: usize,
    },
}

impl ImageSet {
    pub fn count(&self) -> usize {
        match self {
            ImageSet::Synth(ds) => ds.count,
            ImageSet::Mem { labels, .. } => labels.len(),
        }
    }

    pub fn res(&self) -> usize {
        match self {
            ImageSet::Synth(ds) => ds.res,
            ImageSet::Mem { images, .. } => images.shape()[2],
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ImageSet::Synth(ds) => ds.classes(),
            ImageSet::Mem { classes, .. } => *classes,
        }
    }

    pub fn label(&self, idx: usize) -> u8 {
        match self {
            ImageSet::Synth(ds) => ds.label(idx),
            ImageSet::Mem { labels, .. } => labels[idx],
        }
    }

    /// One image as [1, R, R].
    pub fn image(&self, idx: usize) -> Tensor<f32> {
        match self {
            ImageSet::Synth(ds) => ds.image(idx),
            ImageSet::Mem { images, .. } => {
                let res = images.shape()[2];
                let per = res * res;
                let data = images.data()[idx * per..(idx + 1) * per].to_vec();
                Tensor::new(&[1, res, res], data).expect("in-memory image slice")
            }
        }
    }

    /// Rows [lo, hi) as one [n, 1, R, R] batch plus labels, unaugmented.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<u8>)> {
        if indices.is_empty() {
            return Err(TensorError::Domain { op: "dataset_batch", detail: "empty index list".into() });
        }
        let res = self.res();
        let mut data = Vec::with_capacity(indices.len() * res * res);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.count() {
                return Err(TensorError::Domain {
                    op: "dataset_batch",
                    detail: format!("index {i} out of {}", self.count()),
                });
            }
            data.extend_from_slice(self.image(i).data());
            labels.push(self.label(i));
        }
        Ok((Tensor::new(&[indices.len(), 1, res, res], data)?, labels))
    }
}

/// Load an IDX image/label pair into memory, rescaling pixels from [0, 255]
/// to [-1, 1] and (when needed) center-crop-resizing to `target_res`.
pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    target_res: usize,
) -> Result<ImageSet> {
    let open = |p: &Path| {
        std::fs::File::open(p).map_err(|e| TensorError::Io { op: "open idx file", source: e })
    };
    let imgs = idx::read_images(&mut open(images_path)?)?;
    let labels = idx::read_labels(&mut open(labels_path)?)?;
    if imgs.count() != labels.len() {
        return Err(TensorError::Format {
            what: "idx dataset",
            detail: format!("{} images but {} labels", imgs.count(), labels.len()),
        });
    }
    if imgs.count() == 0 {
        return Err(TensorError::Format { what: "idx dataset", detail: "empty dataset".into() });
    }
    let classes = labels.iter().copied().max().unwrap() as usize + 1;
    let n = imgs.count();
    let mut data = Vec::with_capacity(n * target_res * target_res);
    for i in 0..n {
        let raw = imgs.image(i);
        let float: Vec<f32> = raw.iter().map(|&b| u8_to_unit(b)).collect();
        let img = Tensor::new(&[1, imgs.rows, imgs.cols], float)?;
        let sized = center_crop_resize(&img, target_res)?;
        data.extend_from_slice(sized.data());
    }
    Ok(ImageSet::Mem {
        images: Tensor::new(&[n, 1, target_res, target_res], data)?,
        labels,
        classes,
    })
}

/// Deterministic dataset split. The adversarial networks train on the
/// first `n_train` images (80%); the probe trains on `probe_train`; the
/// `train_val` holdout (a fixed-seed random 10% of the train portion,
/// disjoint from `probe_train`) carries the reported accuracies; the final
/// 20% tail `val` stays untouched by any training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub n_train: usize,
    pub probe_train: Vec<usize>,
    pub train_val: Vec<usize>,
    pub val: Vec<usize>,
}

pub fn make_splits(count: usize, seed: u64) -> Result<Splits> {
    if count < 10 {
        return Err(TensorError::Domain {
            op: "make_splits",
            detail: format!("need at least 10 images to split, got {count}"),
        });
    }
    let n_train = count - count / 5;
    let holdout = (n_train / 10).max(1);
    // Seeded shuffle of the train indices; the first `holdout` become the
    // train_val set. The evaluation stream keeps this independent of the
    // training draws.
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut rng = Prng::with_stream(seed, StreamId::Eval as u64);
    for i in (1..order.len()).rev() {
        let j = rng.index(i + 1);
        order.swap(i, j);
    }
    let mut train_val: Vec<usize> = order[..holdout].to_vec();
    let mut probe_train: Vec<usize> = order[holdout..].to_vec();
    train_val.sort_unstable();
    probe_train.sort_unstable();
    Ok(Splits { n_train, probe_train, train_val, val: (n_train..count).collect() })
}

/// Training batch provider: random indices (with replacement) over the
/// first `limit` images, then augmentation down to `target_res`. Returns
/// [B, 1, target_res, target_res].
pub fn training_provider(
    ds: ImageSet,
    mode: AugmentMode,
    target_res: usize,
    limit: usize,
) -> impl FnMut(usize, &mut Prng) -> Result<Tensor<f32>> {
    move |batch, rng| {
        let limit = limit.min(ds.count());
        let mut data = Vec::with_capacity(batch * target_res * target_res);
        for _ in 0..batch {
            let idx = rng.index(limit);
            let img = ds.image(idx);
            let out = augment(&img, mode, target_res, rng)?;
            data.extend_from_slice(out.data());
        }
        Tensor::new(&[batch, 1, target_res, target_res], data)
    }
}

/// Center-crop-resize every image of an [N, C, H, W] batch to
/// [N, C, target, target]; identity when already square at the target.
pub fn resize_batch(x: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "resize_batch",
            detail: format!("expected [N, C, H, W], got {shape:?}"),
        });
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if h == target && w == target {
        return Ok(x.clone());
    }
    let per = c * h * w;
    let mut out = Vec::with_capacity(n * c * target * target);
    for i in 0..n {
        let img = Tensor::new(&[c, h, w], x.data()[i * per..(i + 1) * per].to_vec())?;
        out.extend_from_slice(center_crop_resize(&img, target)?.data());
    }
    Tensor::new(&[n, c, target, target], out)
}

/// The first `n` images, unaugmented, as one [n, 1, res, res] batch with
/// labels — the deterministic evaluation view of a dataset.
pub fn eval_batch(ds: &SynthDataset, n: usize) -> Result<(Tensor<f32>, Vec<u8>)> {
    let n = n.min(ds.count);
    let indices: Vec<usize> = (0..n).collect();
    ImageSet::Synth(ds.clone()).batch(&indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provider_has_a_fixed_draw_budget() {
        let ds = SynthDataset::new(SynthKind::Shapes, 16, 12, 3).unwrap();
        for (mode, per_image) in [
            (AugmentMode::None, 0u128),
            (AugmentMode::Light, 41),
            (AugmentMode::Base, 41),
        ] {
            let mut provider = training_provider(ImageSet::Synth(ds.clone()), mode, 16, 12);
            let mut rng = Prng::new(1, StreamId::Data);
            let before = rng.state().word_pos;
            let batch = provider(5, &mut rng).unwrap();
            assert_eq!(batch.shape(), &[5, 1, 16, 16]);
            let consumed = rng.state().word_pos - before;
            assert_eq!(consumed, 2 * 5 * (1 + per_image), "{mode:?}");
        }
    }

    #[test]
    fn provider_is_deterministic_given_the_stream() {
        let ds = SynthDataset::new(SynthKind::Blobs, 16, 40, 9).unwrap();
        let mut p1 = training_provider(ImageSet::Synth(ds.clone()), AugmentMode::Light, 16, 40);
        let mut p2 = training_provider(ImageSet::Synth(ds), AugmentMode::Light, 16, 40);
        let mut r1 = Prng::new(4, StreamId::Data);
        let mut r2 = Prng::new(4, StreamId::Data);
        assert_eq!(p1(3, &mut r1).unwrap(), p2(3, &mut r2).unwrap());
        // Continued use diverges from a fresh stream (no hidden reseeding).
        assert_ne!(p1(3, &mut r1).unwrap(), p2(3, &mut Prng::new(4, StreamId::Data)).unwrap());
    }

    #[test]
    fn provider_respects_the_train_limit() {
        // With limit 1 every drawn image is image 0 (no augmentation).
        let ds = SynthDataset::new(SynthKind::Shapes, 16, 30, 3).unwrap();
        let mut provider = training_provider(ImageSet::Synth(ds.clone()), AugmentMode::None, 16, 1);
        let mut rng = Prng::new(8, StreamId::Data);
        let batch = provider(4, &mut rng).unwrap();
        let img0 = ds.image(0);
        for b in 0..4 {
            assert_eq!(&batch.data()[b * 256..(b + 1) * 256], img0.data());
        }
    }

    #[test]
    fn provider_downsamples_to_the_target_resolution() {
        // A 32px dataset feeding a 16px model: every emitted image is 16px,
        // and with no augmentation it equals the per-image center-crop-resize.
        let ds = SynthDataset::new(SynthKind::Shapes, 32, 10, 5).unwrap();
        let mut provider = training_provider(ImageSet::Synth(ds.clone()), AugmentMode::None, 16, 1);
        let mut rng = Prng::new(2, StreamId::Data);
        let batch = provider(2, &mut rng).unwrap();
        assert_eq!(batch.shape(), &[2, 1, 16, 16]);
        let want = center_crop_resize(&ds.image(0), 16).unwrap();
        assert_eq!(&batch.data()[..256], want.data());
        // resize_batch agrees with the same per-image operation.
        let (full, _) = ImageSet::Synth(ds.clone()).batch(&[0, 1]).unwrap();
        let resized = resize_batch(&full, 16).unwrap();
        assert_eq!(resized.shape(), &[2, 1, 16, 16]);
        assert_eq!(&resized.data()[..256], want.data());
        assert_eq!(resize_batch(&full, 32).unwrap().data(), full.data());
    }

    #[test]
    fn eval_batch_is_unaugmented_and_labeled() {
        let ds = SynthDataset::new(SynthKind::Shapes, 16, 9, 5).unwrap();
        let (x, labels) = eval_batch(&ds, 100).unwrap();
        assert_eq!(x.shape(), &[9, 1, 16, 16]);
        assert_eq!(labels, vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
        let first = ds.image(0);
        assert_eq!(&x.data()[..256], first.data());
    }

    #[test]
    fn splits_are_disjoint_stable_and_cover_the_train_range() {
        let s1 = make_splits(1000, 7).unwrap();
        let s2 = make_splits(1000, 7).unwrap();
        assert_eq!(s1, s2, "splits must be reproducible");
        assert_eq!(s1.n_train, 800);
        assert_eq!(s1.train_val.len(), 80);
        assert_eq!(s1.probe_train.len(), 720);
        assert_eq!(s1.val, (800..1000).collect::<Vec<_>>());
        // Disjoint and jointly covering 0..n_train.
        let mut all: Vec<usize> =
            s1.train_val.iter().chain(&s1.probe_train).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..800).collect::<Vec<_>>());
        // A different seed reshuffles the holdout.
        let s3 = make_splits(1000, 8).unwrap();
        assert_ne!(s1.train_val, s3.train_val);
        assert!(make_splits(5, 1).is_err());
    }

    #[test]
    fn idx_round_trip_through_the_loader() {
        let dir = tempfile::tempdir().unwrap();
        let ds = SynthDataset::new(SynthKind::Shapes, 16, 6, 11).unwrap();
        let (imgs, labels) = ds.to_idx();
        let ip = dir.path().join("t-images-idx3-ubyte");
        let lp = dir.path().join("t-labels-idx1-ubyte");
        idx::write_images(&mut std::fs::File::create(&ip).unwrap(), &imgs).unwrap();
        idx::write_labels(&mut std::fs::File::create(&lp).unwrap(), &labels).unwrap();
        let loaded = load_idx_dataset(&ip, &lp, 16).unwrap();
        assert_eq!(loaded.count(), 6);
        assert_eq!(loaded.res(), 16);
        assert_eq!(loaded.classes(), 3);
        // Pixel values match the quantized originals exactly (u8 -> f32 is
        // the same affine map on both paths).
        for i in 0..6 {
            assert_eq!(loaded.image(i).data(), ds.image(i).data(), "image {i}");
            assert_eq!(loaded.label(i), ds.label(i));
        }
        // Loader refuses mismatched counts.
        let (_, mut bad_labels) = ds.to_idx();
        bad_labels.pop();
        let bp = dir.path().join("bad-labels-idx1-ubyte");
        idx::write_labels(&mut std::fs::File::create(&bp).unwrap(), &bad_labels).unwrap();
        assert!(load_idx_dataset(&ip, &bp, 16).is_err());
    }
}
