//! Binary model checkpoints.
//!
//! Layout: an 8-byte magic (`CROPCKP1`), a little-endian u32 header length,
//! a JSON header describing the graph, then the raw parameters of every
//! convolution-kind layer in graph order — weight tensor then bias vector,
//! little-endian f32 each. Parameters are stored at 32-bit precision;
//! loading widens exactly, so save → load → save is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

use super::{Chw, ConvParams, Layer, LayerKind, ModelGraph};

const MAGIC: &[u8; 8] = b"CROPCKP1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    num_classes: usize,
    input_shape: Chw,
    layers: Vec<LayerKind>,
    /// Which layers carry a parameter block in the body, in graph order.
    has_params: Vec<bool>,
}

/// Writes `model` to `path`. Shape-only layers (no allocated parameters)
/// are recorded in the header and round-trip as shape-only.
pub fn save_checkpoint(model: &ModelGraph, path: &Path) -> Result<()> {
    model.validate()?;
    let header = Header {
        format_version: FORMAT_VERSION,
        num_classes: model.num_classes,
        input_shape: model.input_shape,
        layers: model.layers.iter().map(|l| l.kind.clone()).collect(),
        has_params: model.layers.iter().map(|l| l.params.is_some()).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for layer in &model.layers {
        if let Some(p) = &layer.params {
            for &v in p.weight.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
            for &v in &p.bias {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`] and validates the
/// resulting graph.
pub fn load_checkpoint(path: &Path) -> Result<ModelGraph> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}; not a checkpoint file",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    if header.layers.len() != header.has_params.len() {
        return Err(Error::Checkpoint("header layer lists disagree".into()));
    }

    let mut layers = Vec::with_capacity(header.layers.len());
    for (kind, has_params) in header.layers.into_iter().zip(header.has_params) {
        let params = if has_params {
            let (ic, oc, kh, kw) = kind.conv_dims().ok_or_else(|| {
                Error::Checkpoint("parameter block on a parameter-free layer".into())
            })?;
            let mut weight = Tensor4::zeros([oc, ic, kh, kw]);
            for v in weight.data_mut() {
                *v = read_f32(&mut r)? as f64;
            }
            let mut bias = vec![0.0; oc];
            for v in &mut bias {
                *v = read_f32(&mut r)? as f64;
            }
            Some(ConvParams { weight, bias })
        } else {
            None
        };
        layers.push(Layer { kind, params });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let model = ModelGraph {
        layers,
        num_classes: header.num_classes,
        input_shape: header.input_shape,
    };
    model.validate()?;
    Ok(model)
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated parameter data".into()))?;
    Ok(f32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::super::reference_fcn;
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_lossless_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut m = reference_fcn();
        m.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        save_checkpoint(&m, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        // Values match after f32 rounding…
        for (a, b) in m.layers.iter().zip(&loaded.layers) {
            match (&a.params, &b.params) {
                (Some(pa), Some(pb)) => {
                    for (x, y) in pa.weight.data().iter().zip(pb.weight.data()) {
                        assert_eq!(*x as f32, *y as f32);
                        assert_eq!(*y, f64::from(*y as f32), "load must widen exactly");
                    }
                }
                (None, None) => {}
                _ => panic!("param presence changed in round trip"),
            }
        }

        // …and a second save is byte-identical.
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_ckpt");
        std::fs::write(&path, b"clearly not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut m = reference_fcn();
        m.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(4));
        save_checkpoint(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
