//! First-layer convolution filter export: a quick visual diagnostic for
//! undertrained encoders (noisy filters) vs. trained ones (edge/color
//! detectors).

use std::io::Write;

use crate::data::ppm::{tile_grid, unit01_to_u8, write_ppm, Rgb};
use crate::models::ParamTree;
use crate::tensor::{Result, Scalar, TensorError};

/// Background color for the one-pixel gutters between filter tiles.
const GUTTER: [u8; 3] = [0, 0, 0];

/// Render the encoder's first convolution kernels as a square tile grid.
///
/// The weight tensor `e.conv1.w` has shape `[c_out, c_in, kh, kw]`. Each of
/// the `c_out` filters is min-max normalized to [0, 1] independently (over
/// all of its channels jointly, so relative channel intensity survives); a
/// constant filter degenerates to uniform mid-gray (0.5). Tiles keep the raw
/// kernel resolution and are laid out row-major in a
/// `ceil(sqrt(c_out))`-per-side square grid, missing cells filled with the
/// gutter color.
pub fn first_layer_filter_grid<S: Scalar>(params: &ParamTree<S>) -> Result<Rgb> {
    let w = &params.get("e.conv1.w")?.value;
    let shape = w.shape();
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "filter_grid",
            detail: format!("first layer weight must be [c_out,c_in,kh,kw], got {shape:?}"),
        });
    }
    let (c_out, c_in, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
    let data = w.data();
    let block = c_in * kh * kw;
    let mut tiles = Vec::with_capacity(c_out);
    for f in 0..c_out {
        let vals: Vec<f64> = data[f * block..(f + 1) * block].iter().map(|v| v.fl()).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unit = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let mut pixels = Vec::with_capacity(3 * kh * kw);
        for y in 0..kh {
            for x in 0..kw {
                let sample = |ch: usize| unit(vals[(ch * kh + y) * kw + x]);
                let rgb: [f64; 3] = match c_in {
                    1 => [sample(0); 3],
                    3 => [sample(0), sample(1), sample(2)],
                    _ => {
                        let mean = (0..c_in).map(sample).sum::<f64>() / c_in as f64;
                        [mean; 3]
                    }
                };
                pixels.extend(rgb.iter().map(|&v| unit01_to_u8(v)));
            }
        }
        tiles.push(Rgb::new(kw, kh, pixels)?);
    }
    // Square layout: pad the tile list so rows == cols == ceil(sqrt(n)).
    let cols = (1..).find(|c| c * c >= c_out).unwrap();
    let blank = Rgb::new(kw, kh, GUTTER.repeat(kw * kh))?;
    tiles.resize(cols * cols, blank);
    tile_grid(&tiles, cols, 1, GUTTER)
}

/// Write the first-layer filter grid of an encoder parameter tree as a
/// binary PPM.
pub fn export_first_layer_filters<S: Scalar>(
    params: &ParamTree<S>,
    out: &mut impl Write,
) -> Result<()> {
    let grid = first_layer_filter_grid(params)?;
    write_ppm(out, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ppm::read_ppm;
    use crate::rng::{Prng, StreamId};
    use crate::tensor::Tensor;

    fn tree_with(shape: &[usize], vals: Vec<f32>) -> ParamTree<f32> {
        let mut p = ParamTree::new();
        let mut rng = Prng::new(7, StreamId::Init);
        let t = Tensor::new(shape, vals).unwrap();
        p.insert_trainable("e.conv1.w", t, false, false, &mut rng).unwrap();
        p
    }

    #[test]
    fn constant_filter_renders_uniform_mid_gray() {
        let p = tree_with(&[1, 1, 3, 3], vec![0.25; 9]);
        let grid = first_layer_filter_grid(&p).unwrap();
        // One filter -> 1x1 grid of a 3x3 tile with 1px gutters -> 5x5.
        assert_eq!((grid.width, grid.height), (5, 5));
        for y in 1..4 {
            for x in 1..4 {
                assert_eq!(grid.get(x, y), [128, 128, 128]);
            }
        }
        assert_eq!(grid.get(0, 0), GUTTER);
    }

    #[test]
    fn normalization_spans_the_full_byte_range_per_filter() {
        // Filter 0 spans [-1, 3]; filter 1 spans [10, 11]. Each maps its own
        // extremes to 0 and 255.
        let p = tree_with(
            &[2, 1, 2, 2],
            vec![-1.0, 0.0, 1.0, 3.0, 10.0, 10.5, 11.0, 10.25],
        );
        let grid = first_layer_filter_grid(&p).unwrap();
        // Two filters -> ceil(sqrt(2)) = 2 cols, square 2x2 cells, tiles 2x2,
        // gutters 1 -> width = 2*2 + 3 = 7.
        assert_eq!((grid.width, grid.height), (7, 7));
        let tile0 = |x: usize, y: usize| grid.get(1 + x, 1 + y)[0];
        assert_eq!(tile0(0, 0), 0); // min
        assert_eq!(tile0(1, 0), 64); // 0.25 of range
        assert_eq!(tile0(0, 1), 128); // midpoint
        assert_eq!(tile0(1, 1), 255); // max
        let tile1 = |x: usize, y: usize| grid.get(4 + x, 1 + y)[0];
        assert_eq!(tile1(0, 0), 0);
        assert_eq!(tile1(1, 0), 128);
        assert_eq!(tile1(0, 1), 255);
        // Bottom-right cells beyond the filter count stay background.
        assert_eq!(grid.get(4, 4), GUTTER);
    }

    #[test]
    fn grid_is_square_with_ceil_sqrt_side() {
        // 5 filters -> 3x3 cells of 3x3 tiles with 1px gutters -> 13x13.
        let p = tree_with(&[5, 1, 3, 3], (0..45).map(|v| v as f32).collect());
        let grid = first_layer_filter_grid(&p).unwrap();
        assert_eq!((grid.width, grid.height), (13, 13));
    }

    #[test]
    fn ppm_round_trip_matches_within_quantization() {
        // Pseudo-random three-channel filters; the written PPM must decode
        // back to the normalized values within one quantization step.
        let n = 4;
        let (c, k) = (3, 3);
        let mut rng = Prng::new(11, StreamId::Eval);
        let vals: Vec<f32> = (0..n * c * k * k).map(|_| rng.normal() as f32).collect();
        let p = tree_with(&[n, c, k, k], vals.clone());
        let mut buf = Vec::new();
        export_first_layer_filters(&p, &mut buf).unwrap();
        let img = read_ppm(&mut buf.as_slice()).unwrap();
        assert_eq!((img.width, img.height), (9, 9));
        let block = c * k * k;
        for f in 0..n {
            let fv = &vals[f * block..(f + 1) * block];
            let lo = fv.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
            let hi = fv.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let (row, col) = (f / 2, f % 2);
            for y in 0..k {
                for x in 0..k {
                    let px = img.get(1 + col * (k + 1) + x, 1 + row * (k + 1) + y);
                    for ch in 0..3 {
                        let unit = (fv[(ch * k + y) * k + x] as f64 - lo) / (hi - lo);
                        let err = (px[ch] as f64 - unit * 255.0).abs();
                        assert!(err <= 1.0, "filter {f} ch {ch} off by {err}");
                    }
                }
            }
        }
    }

    #[test]
    fn missing_or_malformed_first_layer_is_rejected() {
        let empty = ParamTree::<f32>::new();
        assert!(first_layer_filter_grid(&empty).is_err());
        let p = tree_with(&[4, 9], (0..36).map(|v| v as f32).collect());
        assert!(first_layer_filter_grid(&p).is_err());
    }
}
