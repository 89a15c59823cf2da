//! Convolution, transposed convolution, and pooling kernels.
//!
//! Images are small (<= 64x64) so everything is computed by direct loops with
//! precomputed valid ranges; iteration orders are fixed, so results are
//! bit-reproducible. Weight-gradient accumulation uses an f64 scratch buffer
//! (it reduces over the whole batch and all spatial positions).
//!
//! Layouts: activations [B, C, H, W]; conv weights [O, C, kh, kw]; transposed
//! conv weights [C_in, O, kh, kw]. All row-major.

use super::{fmt_shape, Result, Scalar, Tensor, TensorError};

/// Half-open output range [lo, hi) such that `o*stride + k_off - pad` lands in
/// [0, limit) for every o in the range (also clipped to [0, out_len)).
#[inline]
fn valid_range(limit: usize, k_off: usize, pad: usize, stride: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k_off { (pad - k_off).div_ceil(stride) } else { 0 };
    if limit + pad <= k_off {
        return (0, 0);
    }
    let hi_inc = (limit - 1 + pad - k_off) / stride;
    let hi = (hi_inc + 1).min(out_len);
    (lo.min(hi), hi)
}

pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv2d_dims(
    x_shape: &[usize],
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    if x_shape.len() != 4 || w_shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "expected x [B,C,H,W] and w [O,C,kh,kw], got {} and {}",
                fmt_shape(x_shape),
                fmt_shape(w_shape)
            ),
        });
    }
    let (batch, c_in, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (c_out, wc, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    if wc != c_in {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input has {c_in} channels but kernel expects {wc}"),
        });
    }
    if stride == 0 {
        return Err(TensorError::Domain { op: "conv2d", detail: "stride must be >= 1".into() });
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
        });
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvDims { batch, c_in, h, w, c_out, kh, kw, oh, ow })
}

pub fn conv2d_fwd<S: Scalar>(x: &[S], w: &[S], d: &ConvDims, stride: usize, pad: usize) -> Vec<S> {
    let mut out = vec![S::zero(); d.batch * d.c_out * d.oh * d.ow];
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let out_plane =
                &mut out[(b * d.c_out + o) * d.oh * d.ow..(b * d.c_out + o + 1) * d.oh * d.ow];
            for c in 0..d.c_in {
                let x_plane = &x[(b * d.c_in + c) * d.h * d.w..(b * d.c_in + c + 1) * d.h * d.w];
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_range(d.h, ky, pad, stride, d.oh);
                    for kx in 0..d.kw {
                        let wv = w[((o * d.c_in + c) * d.kh + ky) * d.kw + kx];
                        let (ox_lo, ox_hi) = valid_range(d.w, kx, pad, stride, d.ow);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let xrow = &x_plane[iy * d.w..(iy + 1) * d.w];
                            let orow = &mut out_plane[oy * d.ow..(oy + 1) * d.ow];
                            for ox in ox_lo..ox_hi {
                                orow[ox] = orow[ox] + wv * xrow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates dL/dx into `dx` (if present) and dL/dw into `dw` (if present).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd<S: Scalar>(
    x: &[S],
    w: &[S],
    g: &[S],
    d: &ConvDims,
    stride: usize,
    pad: usize,
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
) {
    let want_dw = dw.is_some();
    let mut dw64 = if want_dw { vec![0.0f64; d.c_out * d.c_in * d.kh * d.kw] } else { Vec::new() };
    let mut dx_buf = dx;
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let g_plane = &g[(b * d.c_out + o) * d.oh * d.ow..(b * d.c_out + o + 1) * d.oh * d.ow];
            for c in 0..d.c_in {
                let x_off = (b * d.c_in + c) * d.h * d.w;
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_range(d.h, ky, pad, stride, d.oh);
                    for kx in 0..d.kw {
                        let widx = ((o * d.c_in + c) * d.kh + ky) * d.kw + kx;
                        let wv = w[widx];
                        let (ox_lo, ox_hi) = valid_range(d.w, kx, pad, stride, d.ow);
                        let mut acc = 0.0f64;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let grow = &g_plane[oy * d.ow..(oy + 1) * d.ow];
                            if let Some(dxb) = dx_buf.as_deref_mut() {
                                let dxrow = &mut dxb[x_off + iy * d.w..x_off + (iy + 1) * d.w];
                                if want_dw {
                                    let xrow = &x[x_off + iy * d.w..x_off + (iy + 1) * d.w];
                                    for ox in ox_lo..ox_hi {
                                        let ix = ox * stride + kx - pad;
                                        dxrow[ix] = dxrow[ix] + grow[ox] * wv;
                                        acc += grow[ox].fl() * xrow[ix].fl();
                                    }
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        let ix = ox * stride + kx - pad;
                                        dxrow[ix] = dxrow[ix] + grow[ox] * wv;
                                    }
                                }
                            } else if want_dw {
                                let xrow = &x[x_off + iy * d.w..x_off + (iy + 1) * d.w];
                                for ox in ox_lo..ox_hi {
                                    acc += grow[ox].fl() * xrow[ox * stride + kx - pad].fl();
                                }
                            }
                        }
                        if want_dw {
                            dw64[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for (out, &acc) in dw.iter_mut().zip(dw64.iter()) {
            *out = *out + S::fr(acc);
        }
    }
}

pub struct ConvTDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_t2d_dims(
    x_shape: &[usize],
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<ConvTDims> {
    if x_shape.len() != 4 || w_shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv_t2d",
            detail: format!(
                "expected x [B,C,H,W] and w [C,O,kh,kw], got {} and {}",
                fmt_shape(x_shape),
                fmt_shape(w_shape)
            ),
        });
    }
    let (batch, c_in, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (wc, c_out, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
    if wc != c_in {
        return Err(TensorError::ShapeMismatch {
            op: "conv_t2d",
            detail: format!("input has {c_in} channels but kernel expects {wc}"),
        });
    }
    if stride == 0 {
        return Err(TensorError::Domain { op: "conv_t2d", detail: "stride must be >= 1".into() });
    }
    let oh_full = (h - 1) * stride + kh;
    let ow_full = (w - 1) * stride + kw;
    if oh_full <= 2 * pad || ow_full <= 2 * pad {
        return Err(TensorError::ShapeMismatch {
            op: "conv_t2d",
            detail: format!("padding {pad} consumes the whole {oh_full}x{ow_full} output"),
        });
    }
    Ok(ConvTDims { batch, c_in, h, w, c_out, kh, kw, oh: oh_full - 2 * pad, ow: ow_full - 2 * pad })
}

pub fn conv_t2d_fwd<S: Scalar>(x: &[S], w: &[S], d: &ConvTDims, stride: usize, pad: usize) -> Vec<S> {
    let mut out = vec![S::zero(); d.batch * d.c_out * d.oh * d.ow];
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let out_plane =
                &mut out[(b * d.c_out + o) * d.oh * d.ow..(b * d.c_out + o + 1) * d.oh * d.ow];
            for c in 0..d.c_in {
                let x_plane = &x[(b * d.c_in + c) * d.h * d.w..(b * d.c_in + c + 1) * d.h * d.w];
                for ky in 0..d.kh {
                    // Input rows iy map to output rows oy = iy*stride + ky - pad.
                    let (iy_lo, iy_hi) = valid_range(d.oh, ky, pad, stride, d.h);
                    for kx in 0..d.kw {
                        let wv = w[((c * d.c_out + o) * d.kh + ky) * d.kw + kx];
                        let (ix_lo, ix_hi) = valid_range(d.ow, kx, pad, stride, d.w);
                        for iy in iy_lo..iy_hi {
                            let oy = iy * stride + ky - pad;
                            let xrow = &x_plane[iy * d.w..(iy + 1) * d.w];
                            let orow = &mut out_plane[oy * d.ow..(oy + 1) * d.ow];
                            for ix in ix_lo..ix_hi {
                                let ox = ix * stride + kx - pad;
                                orow[ox] = orow[ox] + wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_t2d_bwd<S: Scalar>(
    x: &[S],
    w: &[S],
    g: &[S],
    d: &ConvTDims,
    stride: usize,
    pad: usize,
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
) {
    let want_dw = dw.is_some();
    let mut dw64 = if want_dw { vec![0.0f64; d.c_in * d.c_out * d.kh * d.kw] } else { Vec::new() };
    let mut dx_buf = dx;
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let g_plane = &g[(b * d.c_out + o) * d.oh * d.ow..(b * d.c_out + o + 1) * d.oh * d.ow];
            for c in 0..d.c_in {
                let x_off = (b * d.c_in + c) * d.h * d.w;
                for ky in 0..d.kh {
                    let (iy_lo, iy_hi) = valid_range(d.oh, ky, pad, stride, d.h);
                    for kx in 0..d.kw {
                        let widx = ((c * d.c_out + o) * d.kh + ky) * d.kw + kx;
                        let wv = w[widx];
                        let (ix_lo, ix_hi) = valid_range(d.ow, kx, pad, stride, d.w);
                        let mut acc = 0.0f64;
                        for iy in iy_lo..iy_hi {
                            let oy = iy * stride + ky - pad;
                            let grow = &g_plane[oy * d.ow..(oy + 1) * d.ow];
                            if let Some(dxb) = dx_buf.as_deref_mut() {
                                let dxrow = &mut dxb[x_off + iy * d.w..x_off + (iy + 1) * d.w];
                                if want_dw {
                                    let xrow = &x[x_off + iy * d.w..x_off + (iy + 1) * d.w];
                                    for ix in ix_lo..ix_hi {
                                        let ox = ix * stride + kx - pad;
                                        dxrow[ix] = dxrow[ix] + grow[ox] * wv;
                                        acc += grow[ox].fl() * xrow[ix].fl();
                                    }
                                } else {
                                    for ix in ix_lo..ix_hi {
                                        let ox = ix * stride + kx - pad;
                                        dxrow[ix] = dxrow[ix] + grow[ox] * wv;
                                    }
                                }
                            } else if want_dw {
                                let xrow = &x[x_off + iy * d.w..x_off + (iy + 1) * d.w];
                                for ix in ix_lo..ix_hi {
                                    let ox = ix * stride + kx - pad;
                                    acc += grow[ox].fl() * xrow[ix].fl();
                                }
                            }
                        }
                        if want_dw {
                            dw64[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for (out, &acc) in dw.iter_mut().zip(dw64.iter()) {
            *out = *out + S::fr(acc);
        }
    }
}

/// Mean over non-overlapping k x k windows; accumulates in f64.
pub fn avg_pool2d_fwd<S: Scalar>(
    x: &[S],
    shape: &[usize],
    k: usize,
) -> Result<(Vec<S>, Vec<usize>)> {
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "avg_pool2d",
            detail: format!("expected [B,C,H,W], got {}", fmt_shape(shape)),
        });
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(TensorError::ShapeMismatch {
            op: "avg_pool2d",
            detail: format!("window {k} must evenly divide {h}x{w}"),
        });
    }
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for bc in 0..b * c {
        let plane = &x[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for dy in 0..k {
                    let row = &plane[(oy * k + dy) * w..(oy * k + dy + 1) * w];
                    for dx in 0..k {
                        acc += row[ox * k + dx].fl();
                    }
                }
                out.push(S::fr(acc * inv));
            }
        }
    }
    Ok((out, vec![b, c, oh, ow]))
}

pub fn avg_pool2d_bwd<S: Scalar>(g: &[S], shape: &[usize], k: usize, dx: &mut [S]) {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / k, w / k);
    let inv = S::fr(1.0 / (k * k) as f64);
    for bc in 0..b * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(bc * oh + oy) * ow + ox] * inv;
                for dy in 0..k {
                    let base = bc * h * w + (oy * k + dy) * w + ox * k;
                    for dxi in 0..k {
                        dx[base + dxi] = dx[base + dxi] + gv;
                    }
                }
            }
        }
    }
}

/// [B,C,H,W] -> [B,C]: mean over all spatial positions, f64 accumulation.
pub fn global_avg_pool_fwd<S: Scalar>(x: &[S], shape: &[usize]) -> Result<(Vec<S>, Vec<usize>)> {
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "global_avg_pool",
            detail: format!("expected [B,C,H,W], got {}", fmt_shape(shape)),
        });
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let inv = 1.0 / (h * w) as f64;
    let mut out = Vec::with_capacity(b * c);
    for bc in 0..b * c {
        let mut acc = 0.0f64;
        for &v in &x[bc * h * w..(bc + 1) * h * w] {
            acc += v.fl();
        }
        out.push(S::fr(acc * inv));
    }
    Ok((out, vec![b, c]))
}

pub fn global_avg_pool_bwd<S: Scalar>(g: &[S], shape: &[usize], dx: &mut [S]) {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let inv = S::fr(1.0 / (h * w) as f64);
    for bc in 0..b * c {
        let gv = g[bc] * inv;
        for v in &mut dx[bc * h * w..(bc + 1) * h * w] {
            *v = *v + gv;
        }
    }
}

/// [B,F] -> [B,F,h,w]: replicate each feature across a spatial grid.
pub fn broadcast_channels_fwd<S: Scalar>(x: &[S], bf: &[usize], h: usize, w: usize) -> Vec<S> {
    let (b, f) = (bf[0], bf[1]);
    let mut out = Vec::with_capacity(b * f * h * w);
    for i in 0..b * f {
        for _ in 0..h * w {
            out.push(x[i]);
        }
    }
    out
}

pub fn broadcast_channels_bwd<S: Scalar>(g: &[S], bf: &[usize], h: usize, w: usize, dx: &mut [S]) {
    let (b, f) = (bf[0], bf[1]);
    for i in 0..b * f {
        let mut acc = 0.0f64;
        for &v in &g[i * h * w..(i + 1) * h * w] {
            acc += v.fl();
        }
        dx[i] = dx[i] + S::fr(acc);
    }
}

/// [B,C,H,W] + per-channel bias [C].
pub fn add_channel_bias_fwd<S: Scalar>(x: &[S], shape: &[usize], bias: &[S]) -> Vec<S> {
    let (b, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let mut out = Vec::with_capacity(x.len());
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * inner;
            let bv = bias[ci];
            for i in 0..inner {
                out.push(x[base + i] + bv);
            }
        }
    }
    out
}

/// Accumulate the per-channel bias gradient (f64 accumulation).
pub fn add_channel_bias_bwd_bias<S: Scalar>(g: &[S], shape: &[usize], dbias: &mut [S]) {
    let (b, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    for ci in 0..c {
        let mut acc = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * inner;
            for i in 0..inner {
                acc += g[base + i].fl();
            }
        }
        dbias[ci] = dbias[ci] + S::fr(acc);
    }
}

/// Area downsampling by an integer factor outside the autodiff tape
/// (used for real images headed to a lower-resolution discriminator).
pub fn area_downsample<S: Scalar>(x: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (data, shape) = avg_pool2d_fwd(x.data(), x.shape(), factor)?;
    Tensor::new(&shape, data)
}
