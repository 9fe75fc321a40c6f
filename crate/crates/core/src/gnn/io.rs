//! Versioned binary oracle files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "CBXORACL" | version u32 | task u8 | dropout f64 | layer count u32
//! per layer: kind u8 | cheb order u32 | d_in u32 | d_out u32 | has bias u8
//! head: d_in u32 | classes u32
//! blobs: every layer's matrices then bias, then head weight and bias (f64, row-major)
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Head, LayerKind, LayerParams, Oracle};
use crate::error::{Error, Result};
use crate::graph::Task;

const MAGIC: &[u8; 8] = b"CBXORACL";
pub const FORMAT_VERSION: u32 = 1;

fn task_tag(task: Task) -> u8 {
    match task {
        Task::Node => 0,
        Task::Graph => 1,
    }
}

pub fn encode_oracle(oracle: &Oracle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(task_tag(oracle.task));
    out.extend_from_slice(&oracle.dropout.to_le_bytes());
    out.extend_from_slice(&(oracle.layers.len() as u32).to_le_bytes());
    for layer in &oracle.layers {
        let (tag, k) = match layer.kind {
            LayerKind::Gcn => (0u8, 0u32),
            LayerKind::Cheb { k } => (1, k as u32),
            LayerKind::GraphConv => (2, 0),
        };
        out.push(tag);
        out.extend_from_slice(&k.to_le_bytes());
        out.extend_from_slice(&(layer.d_in() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.d_out() as u32).to_le_bytes());
        out.push(u8::from(layer.bias.is_some()));
    }
    out.extend_from_slice(&(oracle.head.weight.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(oracle.head.weight.ncols() as u32).to_le_bytes());
    let mut blob = |values: &mut dyn Iterator<Item = &f64>| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for layer in &oracle.layers {
        for w in &layer.weights {
            blob(&mut w.iter());
        }
        if let Some(b) = &layer.bias {
            blob(&mut b.iter());
        }
    }
    blob(&mut oracle.head.weight.iter());
    blob(&mut oracle.head.bias.iter());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "truncated oracle file: needed {len} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        };
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let values = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Array2::from_shape_vec((rows, cols), values).expect("shape matches length"))
    }

    fn vector(&mut self, len: usize) -> Result<Array1<f64>> {
        Ok(Array1::from((0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?))
    }
}

pub fn decode_oracle(bytes: &[u8]) -> Result<Oracle> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not an oracle file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "oracle format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let task = match r.u8()? {
        0 => Task::Node,
        1 => Task::Graph,
        t => return Err(Error::Format(format!("unknown task tag {t}"))),
    };
    let dropout = r.f64()?;
    let layer_count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let tag = r.u8()?;
        let k = r.u32()? as usize;
        let kind = match tag {
            0 => LayerKind::Gcn,
            1 if k >= 1 => LayerKind::Cheb { k },
            2 => LayerKind::GraphConv,
            t => return Err(Error::Format(format!("unknown layer tag {t} (order {k})"))),
        };
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        let has_bias = r.u8()? == 1;
        shapes.push((kind, d_in, d_out, has_bias));
    }
    let head_in = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for (kind, d_in, d_out, has_bias) in shapes {
        let weights = (0..kind.matrix_count())
            .map(|_| r.matrix(d_in, d_out))
            .collect::<Result<Vec<_>>>()?;
        let bias = has_bias.then(|| r.vector(d_out)).transpose()?;
        layers.push(LayerParams::new(kind, weights, bias).map_err(|e| Error::Format(e.to_string()))?);
    }
    let head = Head {
        weight: r.matrix(head_in, classes)?,
        bias: r.vector(classes)?,
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after oracle payload",
            bytes.len() - r.pos
        )));
    }
    let oracle = Oracle {
        layers,
        head,
        task,
        dropout,
    };
    oracle.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(oracle)
}

pub fn save_oracle(oracle: &Oracle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_oracle(oracle)).map_err(|e| Error::io(path, e))
}

pub fn load_oracle(path: impl AsRef<Path>) -> Result<Oracle> {
    let path = path.as_ref();
    decode_oracle(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads an oracle and checks that it was trained for `expected`.
pub fn load_oracle_for_task(path: impl AsRef<Path>, expected: Task) -> Result<Oracle> {
    let oracle = load_oracle(path)?;
    if oracle.task != expected {
        return Err(Error::Format(format!(
            "oracle file holds a {}-task model, expected {}-task",
            oracle.task.as_str(),
            expected.as_str()
        )));
    }
    Ok(oracle)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::synthetic;

    fn sample(kind: LayerKind, task: Task) -> Oracle {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Oracle::init(&mut rng, kind, 3, &[5, 4], 3, task, 0.5).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let g = synthetic::path(4, 3);
        for kind in [LayerKind::Gcn, LayerKind::Cheb { k: 3 }, LayerKind::GraphConv] {
            let oracle = sample(kind, Task::Node);
            let back = decode_oracle(&encode_oracle(&oracle)).unwrap();
            assert_eq!(back, oracle);
            let a = oracle.forward(g.features.view(), &g.edge_view(), None).unwrap();
            let b = back.forward(g.features.view(), &g.edge_view(), None).unwrap();
            assert_eq!(a.logits, b.logits);
        }
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = encode_oracle(&sample(LayerKind::Gcn, Task::Node));
        for cut in [0, 7, 20, bytes.len() - 1] {
            assert!(matches!(decode_oracle(&bytes[..cut]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let mut bytes = encode_oracle(&sample(LayerKind::Gcn, Task::Node));
        bytes[8] = 99;
        let err = decode_oracle(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn task_mismatch_reports_both_tags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.bin");
        save_oracle(&sample(LayerKind::GraphConv, Task::Graph), &path).unwrap();
        let err = load_oracle_for_task(&path, Task::Node).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("graph-task") && msg.contains("node-task"), "{msg}");
    }
}
