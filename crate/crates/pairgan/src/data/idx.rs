//! IDX image/label container (the classic big-endian format used by
//! handwritten-digit archives): u8 payloads, 3-D for image stacks
//! ([n, rows, cols]) and 1-D for label vectors.

use std::io::{Read, Write};

use crate::tensor::{Result, TensorError};

const IMAGE_MAGIC: u32 = 0x0000_0803; // u8 elements, 3 dimensions
const LABEL_MAGIC: u32 = 0x0000_0801; // u8 elements, 1 dimension

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Io { op: "idx", source: e }
}

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_be_bytes(b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// n * rows * cols bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        if self.rows * self.cols == 0 {
            0
        } else {
            self.pixels.len() / (self.rows * self.cols)
        }
    }

    pub fn image(&self, idx: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[idx * n..(idx + 1) * n]
    }
}

pub fn write_images(w: &mut impl Write, imgs: &IdxImages) -> Result<()> {
    let n = imgs.count();
    if n * imgs.rows * imgs.cols != imgs.pixels.len() {
        return Err(TensorError::Format {
            what: "idx images",
            detail: format!(
                "{} pixels is not a whole number of {}x{} images",
                imgs.pixels.len(),
                imgs.rows,
                imgs.cols
            ),
        });
    }
    w.write_all(&IMAGE_MAGIC.to_be_bytes()).map_err(io_err)?;
    w.write_all(&(n as u32).to_be_bytes()).map_err(io_err)?;
    w.write_all(&(imgs.rows as u32).to_be_bytes()).map_err(io_err)?;
    w.write_all(&(imgs.cols as u32).to_be_bytes()).map_err(io_err)?;
    w.write_all(&imgs.pixels).map_err(io_err)
}

pub fn read_images(r: &mut impl Read) -> Result<IdxImages> {
    let magic = read_u32_be(r)?;
    if magic != IMAGE_MAGIC {
        return Err(TensorError::Format {
            what: "idx images",
            detail: format!("magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(r)? as usize;
    let rows = read_u32_be(r)? as usize;
    let cols = read_u32_be(r)? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    r.read_exact(&mut pixels).map_err(io_err)?;
    Ok(IdxImages { rows, cols, pixels })
}

pub fn write_labels(w: &mut impl Write, labels: &[u8]) -> Result<()> {
    w.write_all(&LABEL_MAGIC.to_be_bytes()).map_err(io_err)?;
    w.write_all(&(labels.len() as u32).to_be_bytes()).map_err(io_err)?;
    w.write_all(labels).map_err(io_err)
}

pub fn read_labels(r: &mut impl Read) -> Result<Vec<u8>> {
    let magic = read_u32_be(r)?;
    if magic != LABEL_MAGIC {
        return Err(TensorError::Format {
            what: "idx labels",
            detail: format!("magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(r)? as usize;
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels).map_err(io_err)?;
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_round_trip_with_exact_header() {
        let imgs = IdxImages { rows: 2, cols: 3, pixels: vec![0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255] };
        assert_eq!(imgs.count(), 2);
        let mut buf = Vec::new();
        write_images(&mut buf, &imgs).unwrap();
        // 0x803 magic, n=2, rows=2, cols=3, big-endian.
        assert_eq!(
            &buf[..16],
            &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3]
        );
        let back = read_images(&mut buf.as_slice()).unwrap();
        assert_eq!(back, imgs);
        assert_eq!(back.image(1), &[250, 251, 252, 253, 254, 255]);
    }

    #[test]
    fn labels_round_trip() {
        let labels = vec![0u8, 1, 2, 1, 0, 9];
        let mut buf = Vec::new();
        write_labels(&mut buf, &labels).unwrap();
        assert_eq!(&buf[..8], &[0, 0, 8, 1, 0, 0, 0, 6]);
        assert_eq!(read_labels(&mut buf.as_slice()).unwrap(), labels);
    }

    #[test]
    fn wrong_magic_and_truncation_are_rejected() {
        let labels = vec![1u8, 2];
        let mut buf = Vec::new();
        write_labels(&mut buf, &labels).unwrap();
        assert!(read_images(&mut buf.as_slice()).is_err(), "label magic is not an image magic");
        let mut short = buf.clone();
        short.pop();
        assert!(read_labels(&mut short.as_slice()).is_err());
    }
}
