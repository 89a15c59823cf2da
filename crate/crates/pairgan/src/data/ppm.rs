//! Binary PPM (P6) image I/O and tile-grid assembly for image exports.

use std::io::{Read, Write};

use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// An 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples, length = 3 * width * height.
    pub pixels: Vec<u8>,
}

impl Rgb {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != 3 * width * height {
            return Err(TensorError::Format {
                what: "rgb raster",
                detail: format!(
                    "{}x{} needs {} bytes, got {}",
                    width,
                    height,
                    3 * width * height,
                    pixels.len()
                ),
            });
        }
        Ok(Rgb { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let at = 3 * (y * self.width + x);
        [self.pixels[at], self.pixels[at + 1], self.pixels[at + 2]]
    }
}

/// Write a P6 with maxval 255.
pub fn write_ppm(w: &mut impl Write, img: &Rgb) -> Result<()> {
    let io = |e: std::io::Error| TensorError::Io { op: "write ppm", source: e };
    w.write_all(format!("P6\n{} {}\n255\n", img.width, img.height).as_bytes()).map_err(io)?;
    w.write_all(&img.pixels).map_err(io)
}

/// Read a P6 with maxval 255. Handles whitespace and `#` comment lines in
/// the header; rejects other magics, maxvals, and short payloads.
pub fn read_ppm(r: &mut impl Read) -> Result<Rgb> {
    let io = |e: std::io::Error| TensorError::Io { op: "read ppm", source: e };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    let bad = |detail: String| TensorError::Format { what: "ppm", detail };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("missing P6 magic".into()));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(bad("truncated header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| bad(format!("bad header field {text:?}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing header terminator".into()));
    }
    pos += 1; // single whitespace byte after maxval
    let need = 3 * width * height;
    if bytes.len() - pos < need {
        return Err(bad(format!("payload has {} bytes, need {need}", bytes.len() - pos)));
    }
    Rgb::new(width, height, bytes[pos..pos + need].to_vec())
}

/// Map a value in [0, 1] to a byte with round-half-up.
pub fn unit01_to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Convert an image tensor [C, H, W] with values in [-1, 1] to RGB bytes.
/// C = 1 replicates the channel; C = 3 maps directly; other channel counts
/// are averaged to gray.
pub fn image_to_rgb<S: Scalar>(img: &Tensor<S>) -> Result<Rgb> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "image_to_rgb",
            detail: format!("expected [C,H,W], got {s:?}"),
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let data = img.data();
    let mut pixels = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            let sample = |ch: usize| (data[(ch * h + y) * w + x].fl() + 1.0) / 2.0;
            let rgb: [f64; 3] = match c {
                1 => [sample(0); 3],
                3 => [sample(0), sample(1), sample(2)],
                _ => {
                    let mean = (0..c).map(sample).sum::<f64>() / c as f64;
                    [mean; 3]
                }
            };
            pixels.extend(rgb.iter().map(|&v| unit01_to_u8(v)));
        }
    }
    Rgb::new(w, h, pixels)
}

/// Tile equal-sized RGB images into a `cols`-wide grid (row-major order)
/// with `pad` background pixels between and around tiles.
pub fn tile_grid(tiles: &[Rgb], cols: usize, pad: usize, background: [u8; 3]) -> Result<Rgb> {
    if tiles.is_empty() || cols == 0 {
        return Err(TensorError::Domain {
            op: "tile_grid",
            detail: "need at least one tile and one column".into(),
        });
    }
    let (tw, th) = (tiles[0].width, tiles[0].height);
    if tiles.iter().any(|t| t.width != tw || t.height != th) {
        return Err(TensorError::ShapeMismatch {
            op: "tile_grid",
            detail: "tiles must share one size".into(),
        });
    }
    let rows = tiles.len().div_ceil(cols);
    let width = cols * tw + (cols + 1) * pad;
    let height = rows * th + (rows + 1) * pad;
    let mut pixels = Vec::with_capacity(3 * width * height);
    for _ in 0..width * height {
        pixels.extend_from_slice(&background);
    }
    for (i, tile) in tiles.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let oy = pad + r * (th + pad);
        let ox = pad + c * (tw + pad);
        for y in 0..th {
            for x in 0..tw {
                let dst = 3 * ((oy + y) * width + (ox + x));
                let src = 3 * (y * tw + x);
                pixels[dst..dst + 3].copy_from_slice(&tile.pixels[src..src + 3]);
            }
        }
    }
    Rgb::new(width, height, pixels)
}
