//! Parameter checkpoint files.
//!
//! Little-endian binary layout, bit-exact across save/load:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "COCLRBIN"
//! 8       4     format version (u32, currently 1)
//! 12      4     layer count L (u32)
//! 16      9*L   per layer: in_dim (u32), out_dim (u32), activation (u8: 0=linear, 1=relu)
//! ...           per layer: weights row-major then biases, raw f64 little-endian
//! ```

use std::path::Path;

use crate::encoder::{Activation, Layer, MlpParams};
use crate::error::{CoclrError, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 8] = b"COCLRBIN";
const VERSION: u32 = 1;

/// Serialize parameters to the checkpoint byte layout.
pub fn encode_params(params: &MlpParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        out.extend_from_slice(&(layer.weight.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.weight.cols() as u32).to_le_bytes());
        out.push(match layer.activation {
            Activation::Linear => 0,
            Activation::Relu => 1,
        });
    }
    for layer in &params.layers {
        for v in layer.weight.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &layer.bias {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<MlpParams, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(format!("implausible layer count {n_layers}"));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let act = match r.u8()? {
            0 => Activation::Linear,
            1 => Activation::Relu,
            t => return Err(format!("unknown activation tag {t}")),
        };
        shapes.push((rows, cols, act));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (rows, cols, act) in shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        let weight =
            Matrix::from_vec(rows, cols, data).map_err(|e| format!("bad weights: {e}"))?;
        let mut bias = Vec::with_capacity(cols);
        for _ in 0..cols {
            bias.push(r.f64()?);
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err("bad biases: non-finite value".into());
        }
        layers.push(Layer {
            weight,
            bias,
            activation: act,
        });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(MlpParams { layers })
}

/// Parse parameters from checkpoint bytes.
pub fn decode_params(bytes: &[u8]) -> Result<MlpParams> {
    decode_inner(bytes).map_err(|reason| CoclrError::CorruptFile {
        path: "<buffer>".into(),
        reason,
    })
}

/// Write parameters to `path` in the checkpoint layout.
pub fn save_params(path: &Path, params: &MlpParams) -> Result<()> {
    std::fs::write(path, encode_params(params))?;
    Ok(())
}

/// Read parameters back from `path`.
pub fn load_params(path: &Path) -> Result<MlpParams> {
    let bytes = std::fs::read(path)?;
    decode_inner(&bytes).map_err(|reason| CoclrError::CorruptFile {
        path: path.display().to_string(),
        reason,
    })
}
