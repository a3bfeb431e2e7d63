//! Flat binary checkpoint format.
//!
//! Layout (all integers u32 little-endian, all reals f64 little-endian):
//!
//! ```text
//! magic   4 bytes  "FMT1"
//! version u32      1
//! n_tasks u32      T
//! trunk   u32      L (trunk layer count)
//!         per trunk layer: out u32, in u32
//! head_in u32      h (head input dimension; heads are [2 x h] + 2 biases)
//! weights f64 * T  task weights
//! trunk parameters, layer by layer: weights row-major, then bias
//! head parameters, task by task: weights row-major, then bias
//! ```
//!
//! Activations are fixed by the model family (ReLU trunk, two-way-softmax
//! heads for the student) and are not stored; `read_checkpoint` takes the
//! head activation to reconstruct.

use std::path::Path;

use ndarray::{Array1, Array2};

use fairmtl_core::nn::{Activation, DenseLayer, DenseParams, MtlNetwork, OptState};
use fairmtl_core::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMT1";
pub const VERSION: u32 = 1;

/// Serializes a network's parameters (task weights included, optimizer state
/// excluded) into the checkpoint layout.
pub fn checkpoint_bytes(net: &MtlNetwork) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, net.n_tasks() as u32);
    push_u32(&mut out, net.shared.layers.len() as u32);
    for layer in &net.shared.layers {
        push_u32(&mut out, layer.out_dim() as u32);
        push_u32(&mut out, layer.in_dim() as u32);
    }
    push_u32(&mut out, net.trunk_output_dim() as u32);
    for &w in &net.task_weights {
        push_f64(&mut out, w);
    }
    for layer in &net.shared.layers {
        push_layer(&mut out, layer);
    }
    for head in &net.heads {
        push_layer(&mut out, &head.layers[0]);
    }
    out
}

pub fn write_checkpoint(net: &MtlNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(net))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a checkpoint back into a network with a zeroed optimizer state.
pub fn read_checkpoint(path: &Path, head_activation: Activation) -> Result<MtlNetwork> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic bytes {magic:?}",
            path.display()
        )));
    }
    let version = cursor.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let n_tasks = cursor.u32()? as usize;
    let n_layers = cursor.u32()? as usize;
    let mut dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out_dim = cursor.u32()? as usize;
        let in_dim = cursor.u32()? as usize;
        dims.push((out_dim, in_dim));
    }
    let head_in = cursor.u32()? as usize;

    let mut task_weights = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        task_weights.push(cursor.f64()?);
    }

    let mut trunk_layers = Vec::with_capacity(n_layers);
    for &(out_dim, in_dim) in &dims {
        trunk_layers.push(cursor.layer(out_dim, in_dim, Activation::ReLU)?);
    }
    let mut heads = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        heads.push(DenseParams {
            layers: vec![cursor.layer(2, head_in, head_activation)?],
        });
    }
    cursor.expect_end()?;

    let shared = DenseParams {
        layers: trunk_layers,
    };
    let input_dim = shared.in_dim().unwrap_or(head_in);
    let opt_state = OptState {
        shared: fairmtl_core::nn::AdamWState::zeros_like(&shared),
        heads: heads
            .iter()
            .map(fairmtl_core::nn::AdamWState::zeros_like)
            .collect(),
    };
    let net = MtlNetwork::from_parts(shared, heads, task_weights, opt_state, input_dim)?;
    Ok(net)
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_layer(out: &mut Vec<u8>, layer: &DenseLayer) {
    for &w in layer.weights.iter() {
        push_f64(out, w);
    }
    for &b in layer.bias.iter() {
        push_f64(out, b);
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated checkpoint at offset {}",
                self.path.display(),
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(f64::from_le_bytes(arr))
    }

    fn layer(&mut self, out_dim: usize, in_dim: usize, activation: Activation) -> Result<DenseLayer> {
        let mut weights = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim * in_dim {
            weights.push(self.f64()?);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(self.f64()?);
        }
        Ok(DenseLayer {
            weights: Array2::from_shape_vec((out_dim, in_dim), weights).expect("shape matches"),
            bias: Array1::from_vec(bias),
            activation,
        })
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after checkpoint payload",
                self.path.display(),
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fairmtl_core::nn::mlp_init;

    #[test]
    fn round_trip_preserves_parameters() {
        let net = mlp_init(&[5, 7, 3], 2, 123).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        write_checkpoint(&net, &path).unwrap();
        let loaded = read_checkpoint(&path, Activation::Softmax2).unwrap();
        assert_eq!(loaded.shared, net.shared);
        assert_eq!(loaded.heads, net.heads);
        assert_eq!(loaded.task_weights, net.task_weights);
    }

    #[test]
    fn bytes_start_with_magic() {
        let net = mlp_init(&[3, 2], 1, 0).unwrap();
        let bytes = checkpoint_bytes(&net);
        assert_eq!(&bytes[..4], b"FMT1");
    }

    #[test]
    fn truncation_is_detected() {
        let net = mlp_init(&[3, 2], 1, 0).unwrap();
        let bytes = checkpoint_bytes(&net);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.bin");
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_checkpoint(&path, Activation::Softmax2),
            Err(Error::Format(_))
        ));
    }
}
