//! Checkpoint container: a flat list of named, typed, shaped records.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "BBGN"
//! version u32      currently 1
//! count   u32      number of records
//! record  repeated:
//!   name_len u32, name bytes (UTF-8)
//!   dtype    u8   1 = f64, 2 = u64, 3 = raw bytes
//!   rank     u32
//!   extents  rank x u64
//!   payload  numel elements (f64/u64: 8 bytes each, LE; bytes: 1 each)
//! ```
//!
//! All floating data is stored as f64. f32 model tensors round-trip exactly
//! since every f32 is representable, so save -> load -> save is
//! byte-identical regardless of the model scalar type.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::models::ParamTree;
use crate::tensor::{Result, Scalar, Tensor, TensorError};

pub const MAGIC: [u8; 4] = *b"BBGN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Payload {
    fn dtype(&self) -> u8 {
        match self {
            Payload::F64(_) => 1,
            Payload::U64(_) => 2,
            Payload::Bytes(_) => 3,
        }
    }

    fn numel(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::U64(v) => v.len(),
            Payload::Bytes(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Record {
    pub fn f64(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        Record { name: name.into(), shape: shape.to_vec(), payload: Payload::F64(data) }
    }

    pub fn scalar_u64(name: impl Into<String>, v: u64) -> Self {
        Record { name: name.into(), shape: vec![1], payload: Payload::U64(vec![v]) }
    }

    pub fn bytes(name: impl Into<String>, data: Vec<u8>) -> Self {
        Record { name: name.into(), shape: vec![data.len()], payload: Payload::Bytes(data) }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.payload {
            Payload::F64(v) => Ok(v),
            _ => Err(TensorError::Format {
                what: "checkpoint record",
                detail: format!("{}: expected floating payload", self.name),
            }),
        }
    }

    pub fn as_u64_scalar(&self) -> Result<u64> {
        match &self.payload {
            Payload::U64(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(TensorError::Format {
                what: "checkpoint record",
                detail: format!("{}: expected one u64", self.name),
            }),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8]> {
        match &self.payload {
            Payload::Bytes(v) => Ok(v),
            _ => Err(TensorError::Format {
                what: "checkpoint record",
                detail: format!("{}: expected raw bytes", self.name),
            }),
        }
    }
}

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Io { op: "checkpoint", source: e }
}

pub fn write_records(w: &mut impl Write, records: &[Record]) -> Result<()> {
    w.write_all(&MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(records.len() as u32).to_le_bytes()).map_err(io_err)?;
    for r in records {
        let numel: usize = r.shape.iter().product();
        if numel != r.payload.numel() {
            return Err(TensorError::Format {
                what: "checkpoint record",
                detail: format!(
                    "{}: shape {:?} does not cover {} payload elements",
                    r.name,
                    r.shape,
                    r.payload.numel()
                ),
            });
        }
        let name = r.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        w.write_all(&[r.payload.dtype()]).map_err(io_err)?;
        w.write_all(&(r.shape.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in &r.shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        match &r.payload {
            Payload::F64(v) => {
                for &x in v {
                    w.write_all(&x.to_le_bytes()).map_err(io_err)?;
                }
            }
            Payload::U64(v) => {
                for &x in v {
                    w.write_all(&x.to_le_bytes()).map_err(io_err)?;
                }
            }
            Payload::Bytes(v) => w.write_all(v).map_err(io_err)?,
        }
    }
    Ok(())
}

fn read_exact_n(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let b = read_exact_n(r, 4)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

pub fn read_records(r: &mut impl Read) -> Result<Vec<Record>> {
    let magic = read_exact_n(r, 4)?;
    if magic != MAGIC {
        return Err(TensorError::Format {
            what: "checkpoint",
            detail: "bad magic (not a checkpoint file)".into(),
        });
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(TensorError::Format {
            what: "checkpoint",
            detail: format!("unsupported version {version}"),
        });
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let name = String::from_utf8(read_exact_n(r, name_len)?).map_err(|e| {
            TensorError::Format { what: "checkpoint", detail: format!("record name: {e}") }
        })?;
        let dtype = read_exact_n(r, 1)?[0];
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let b = read_exact_n(r, 8)?;
            shape.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = match dtype {
            1 => {
                let raw = read_exact_n(r, numel * 8)?;
                Payload::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            2 => {
                let raw = read_exact_n(r, numel * 8)?;
                Payload::U64(
                    raw.chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            3 => Payload::Bytes(read_exact_n(r, numel)?),
            other => {
                return Err(TensorError::Format {
                    what: "checkpoint",
                    detail: format!("{name}: unknown dtype {other}"),
                })
            }
        };
        out.push(Record { name, shape, payload });
    }
    // Anything after the last record is corruption.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(out),
        Ok(_) => Err(TensorError::Format {
            what: "checkpoint",
            detail: "trailing bytes after final record".into(),
        }),
        Err(e) => Err(io_err(e)),
    }
}

fn tensor_f64<S: Scalar>(t: &Tensor<S>) -> Vec<f64> {
    t.data().iter().map(|&x| x.fl()).collect()
}

/// Serialize one parameter tree under `prefix` ("e/", "g/", "d/"):
/// values, EMA shadows, and spectral vectors.
pub fn tree_records<S: Scalar>(prefix: &str, tree: &ParamTree<S>) -> Vec<Record> {
    let mut out = Vec::new();
    for (name, e) in tree.iter() {
        out.push(Record::f64(
            format!("{prefix}param/{name}"),
            e.value.shape(),
            tensor_f64(&e.value),
        ));
        if let Some(ema) = &e.ema {
            out.push(Record::f64(format!("{prefix}ema/{name}"), e.value.shape(), ema.clone()));
        }
        if let Some(sn) = &e.spectral {
            out.push(Record::f64(
                format!("{prefix}snu/{name}"),
                &[sn.u.len()],
                sn.u.iter().map(|&x| x.fl()).collect(),
            ));
            out.push(Record::f64(
                format!("{prefix}snv/{name}"),
                &[sn.v.len()],
                sn.v.iter().map(|&x| x.fl()).collect(),
            ));
        }
    }
    out
}

/// Restore a tree serialized by [`tree_records`]. The tree must already be
/// built (same architecture); every entry must find its records and shapes
/// must match exactly.
pub fn restore_tree<S: Scalar>(
    prefix: &str,
    tree: &mut ParamTree<S>,
    map: &BTreeMap<String, Record>,
) -> Result<()> {
    let names: Vec<String> = tree.names().cloned().collect();
    for name in names {
        let rec = map.get(&format!("{prefix}param/{name}")).ok_or_else(|| {
            TensorError::Format {
                what: "checkpoint",
                detail: format!("missing parameter record {prefix}param/{name}"),
            }
        })?;
        let entry = tree.get_mut(&name).expect("iterating existing names");
        if rec.shape != entry.value.shape() {
            return Err(TensorError::Format {
                what: "checkpoint",
                detail: format!(
                    "{prefix}param/{name}: shape {:?} does not match model {:?}",
                    rec.shape,
                    entry.value.shape()
                ),
            });
        }
        let vals = rec.as_f64()?;
        entry.value = Tensor::new(&rec.shape, vals.iter().map(|&v| S::fr(v)).collect())?;
        match (&mut entry.ema, map.get(&format!("{prefix}ema/{name}"))) {
            (Some(shadow), Some(r)) => {
                let vals = r.as_f64()?;
                if vals.len() != shadow.len() {
                    return Err(TensorError::Format {
                        what: "checkpoint",
                        detail: format!("{prefix}ema/{name}: wrong element count"),
                    });
                }
                shadow.copy_from_slice(vals);
            }
            (None, None) => {}
            (have, _) => {
                return Err(TensorError::Format {
                    what: "checkpoint",
                    detail: format!(
                        "{prefix}ema/{name}: averaging state mismatch (model {}, file {})",
                        have.is_some(),
                        map.contains_key(&format!("{prefix}ema/{name}"))
                    ),
                })
            }
        }
        match (
            &mut entry.spectral,
            map.get(&format!("{prefix}snu/{name}")),
            map.get(&format!("{prefix}snv/{name}")),
        ) {
            (Some(sn), Some(ru), Some(rv)) => {
                let u = ru.as_f64()?;
                let v = rv.as_f64()?;
                if u.len() != sn.u.len() || v.len() != sn.v.len() {
                    return Err(TensorError::Format {
                        what: "checkpoint",
                        detail: format!("{prefix}snu/{name}: wrong vector lengths"),
                    });
                }
                sn.u = u.iter().map(|&x| S::fr(x)).collect();
                sn.v = v.iter().map(|&x| S::fr(x)).collect();
            }
            (None, None, None) => {}
            _ => {
                return Err(TensorError::Format {
                    what: "checkpoint",
                    detail: format!("{prefix}snu/{name}: spectral state mismatch"),
                })
            }
        }
    }
    Ok(())
}

pub fn record_map(records: Vec<Record>) -> Result<BTreeMap<String, Record>> {
    let mut map = BTreeMap::new();
    for r in records {
        let name = r.name.clone();
        if map.insert(name.clone(), r).is_some() {
            return Err(TensorError::Format {
                what: "checkpoint",
                detail: format!("duplicate record {name}"),
            });
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Prng, StreamId};

    #[test]
    fn records_round_trip_byte_identically() {
        let records = vec![
            Record::f64("a/param/w", &[2, 3], vec![1.0, -2.5, 0.0, f64::MIN_POSITIVE, 3.25, 9e99]),
            Record::scalar_u64("meta/step", 12345),
            Record::bytes("rng/data", vec![0, 255, 7, 42]),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let back = read_records(&mut buf.as_slice()).unwrap();
        assert_eq!(back, records);
        let mut buf2 = Vec::new();
        write_records(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2, "save -> load -> save must be byte-identical");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let records = vec![Record::scalar_u64("s", 1)];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_records(&mut bad_magic.as_slice()).is_err());

        let mut truncated = buf.clone();
        truncated.pop();
        assert!(read_records(&mut truncated.as_slice()).is_err());

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_records(&mut trailing.as_slice()).is_err());

        let mut bad_version = buf;
        bad_version[4] = 99;
        assert!(read_records(&mut bad_version.as_slice()).is_err());
    }

    #[test]
    fn tree_round_trip_preserves_all_state() {
        let mut rng = Prng::new(7, StreamId::Init);
        let mut tree = ParamTree::<f32>::new();
        tree.insert_trainable(
            "w",
            Tensor::from_fn(&[3, 2], |i| (i as f32) * 0.37 - 1.0),
            true,
            true,
            &mut rng,
        )
        .unwrap();
        tree.insert_trainable("b", Tensor::zeros(&[2]), false, false, &mut rng).unwrap();
        tree.insert_state("count", Tensor::new(&[1], vec![5.0f32]).unwrap()).unwrap();
        tree.ema_step(0.5);

        let recs = tree_records("t/", &tree);
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let map = record_map(read_records(&mut buf.as_slice()).unwrap()).unwrap();

        // Restore into a freshly built tree with different values.
        let mut rng2 = Prng::new(8, StreamId::Init);
        let mut fresh = ParamTree::<f32>::new();
        fresh
            .insert_trainable("w", Tensor::zeros(&[3, 2]), true, true, &mut rng2)
            .unwrap();
        fresh.insert_trainable("b", Tensor::zeros(&[2]), false, false, &mut rng2).unwrap();
        fresh.insert_state("count", Tensor::zeros(&[1])).unwrap();
        restore_tree("t/", &mut fresh, &map).unwrap();

        for (name, e) in tree.iter() {
            let f = fresh.get(name).unwrap();
            assert_eq!(e.value, f.value, "{name} value");
            assert_eq!(e.ema, f.ema, "{name} shadow");
            match (&e.spectral, &f.spectral) {
                (Some(a), Some(b)) => {
                    assert_eq!(a.u, b.u);
                    assert_eq!(a.v, b.v);
                }
                (None, None) => {}
                _ => panic!("{name} spectral mismatch"),
            }
        }
    }

    #[test]
    fn restore_rejects_shape_and_state_mismatches() {
        let mut rng = Prng::new(9, StreamId::Init);
        let mut tree = ParamTree::<f32>::new();
        tree.insert_trainable("w", Tensor::zeros(&[2, 2]), false, false, &mut rng).unwrap();
        let recs = tree_records("t/", &tree);
        let map = record_map(recs).unwrap();

        let mut wrong_shape = ParamTree::<f32>::new();
        wrong_shape
            .insert_trainable("w", Tensor::zeros(&[4]), false, false, &mut rng)
            .unwrap();
        assert!(restore_tree("t/", &mut wrong_shape, &map).is_err());

        let mut wants_ema = ParamTree::<f32>::new();
        wants_ema
            .insert_trainable("w", Tensor::zeros(&[2, 2]), false, true, &mut rng)
            .unwrap();
        assert!(restore_tree("t/", &mut wants_ema, &map).is_err());

        let mut missing = ParamTree::<f32>::new();
        missing
            .insert_trainable("other", Tensor::zeros(&[1]), false, false, &mut rng)
            .unwrap();
        assert!(restore_tree("t/", &mut missing, &map).is_err());
    }
}
