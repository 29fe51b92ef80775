//! TTRW weight container.
//!
//! Layout (all integers little-endian):
//!   magic  "TTRW"
//!   version u32 = 1
//!   per conv layer, in declared backbone order (stem, stage convs, head):
//!     kind    u32   0 = 3x3 conv, 1 = 1x1 conv
//!     out_ch  u32
//!     in_ch   u32
//!     weights f32 x (out_ch * in_ch * k * k)
//!     bias    f32 x out_ch
//! Trailing bytes are an error; float bits are preserved exactly.

use std::fs;
use std::path::Path;

use crate::backbone::{BackboneDesc, BackboneSpec};
use crate::error::{Result, TtrError};
use crate::tensor::{ConvWeights, Kernel};

const MAGIC: &[u8; 4] = b"TTRW";
const VERSION: u32 = 1;

fn kind_tag(kernel: Kernel) -> u32 {
    match kernel {
        Kernel::Three => 0,
        Kernel::One => 1,
    }
}

pub fn save_weights(spec: &BackboneSpec, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for layer in spec.layers() {
        out.extend_from_slice(&kind_tag(layer.kernel).to_le_bytes());
        out.extend_from_slice(&(layer.out_channels as u32).to_le_bytes());
        out.extend_from_slice(&(layer.in_channels as u32).to_le_bytes());
        for &w in layer.weights() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for &b in layer.biases() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| TtrError::io(path, e))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, layer: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(TtrError::Truncated {
                layer,
                reason: format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.data.len()
                ),
            });
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, layer: usize, what: &str) -> Result<u32> {
        let b = self.take(4, layer, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_vec(&mut self, count: usize, layer: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(4 * count, layer, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Load weights for the declared backbone. Every record must match the
/// description's layer kinds and channel widths exactly.
pub fn load_weights(path: &Path, desc: &BackboneDesc) -> Result<BackboneSpec> {
    let data = fs::read(path).map_err(|e| TtrError::io(path, e))?;
    let path_str = path.display().to_string();
    let mut r = Reader {
        data: &data,
        pos: 0,
    };

    let magic = r.take(4, 0, "magic").map_err(|_| TtrError::BadMagic {
        path: path_str.clone(),
        expected: "TTRW".into(),
        found: String::from_utf8_lossy(&data[..data.len().min(4)]).into_owned(),
    })?;
    if magic != MAGIC {
        return Err(TtrError::BadMagic {
            path: path_str,
            expected: "TTRW".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32(0, "version")?;
    if version != VERSION {
        return Err(TtrError::Version {
            path: path_str,
            version,
        });
    }

    let expected = desc.layer_dims();
    let mut layers = Vec::with_capacity(expected.len());
    for (layer_idx, (kernel, out_c, in_c)) in expected.into_iter().enumerate() {
        let tag = r.u32(layer_idx, "kind tag")?;
        if tag != kind_tag(kernel) {
            return Err(TtrError::WeightGeometry {
                layer: layer_idx,
                reason: format!("kind tag {tag}, expected {}", kind_tag(kernel)),
            });
        }
        let out_got = r.u32(layer_idx, "out channels")? as usize;
        let in_got = r.u32(layer_idx, "in channels")? as usize;
        if out_got != out_c || in_got != in_c {
            return Err(TtrError::WeightGeometry {
                layer: layer_idx,
                reason: format!("{in_got}->{out_got} channels, expected {in_c}->{out_c}"),
            });
        }
        let k = kernel.size();
        let weights = r.f32_vec(out_c * in_c * k * k, layer_idx, "weights")?;
        let bias = r.f32_vec(out_c, layer_idx, "bias")?;
        layers.push(ConvWeights::new(out_c, in_c, kernel, weights, bias)?);
    }
    if r.pos != data.len() {
        return Err(TtrError::Parse {
            path: path_str,
            offset: r.pos,
            reason: format!("{} trailing bytes after last layer", data.len() - r.pos),
        });
    }
    BackboneSpec::from_layers(desc, layers)
}
