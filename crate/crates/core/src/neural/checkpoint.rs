//! Binary checkpoint container for named networks.
//!
//! Layout (little endian): magic `NGCK`, u32 version, u32 network count, then
//! per network: u32 name length, UTF-8 name, f64 dropout rate, u32 layer
//! count, u32 per layer size, u64 parameter count, f64 parameters.

use super::mlp::Mlp;
use super::NeuralError;

const MAGIC: &[u8; 4] = b"NGCK";
const VERSION: u32 = 1;
const MAX_NETWORKS: u32 = 64;
const MAX_NAME: u32 = 256;
const MAX_LAYERS: u32 = 64;
const MAX_WIDTH: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    pub dropout_rate: f64,
    pub mlp: Mlp,
}

pub fn encode_checkpoint(nets: &[NamedNetwork]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for n in nets {
        out.extend_from_slice(&(n.name.len() as u32).to_le_bytes());
        out.extend_from_slice(n.name.as_bytes());
        out.extend_from_slice(&n.dropout_rate.to_le_bytes());
        let sizes = n.mlp.sizes();
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(n.mlp.params().len() as u64).to_le_bytes());
        for p in n.mlp.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        if self.buf.len() < n {
            return Err(NeuralError::Checkpoint("truncated".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, NeuralError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn bad(msg: &str) -> NeuralError {
    NeuralError::Checkpoint(msg.to_string())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<NamedNetwork>, NeuralError> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NeuralError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    if count > MAX_NETWORKS {
        return Err(bad("too many networks"));
    }
    let mut nets = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32()?;
        if name_len > MAX_NAME {
            return Err(bad("name too long"));
        }
        let name = std::str::from_utf8(r.take(name_len as usize)?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        let dropout_rate = r.f64()?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(bad("dropout rate out of range"));
        }
        let layers = r.u32()?;
        if !(2..=MAX_LAYERS).contains(&layers) {
            return Err(bad("bad layer count"));
        }
        let mut sizes = Vec::with_capacity(layers as usize);
        for _ in 0..layers {
            let s = r.u32()?;
            if s == 0 || s > MAX_WIDTH {
                return Err(bad("bad layer width"));
            }
            sizes.push(s as usize);
        }
        let n_params = r.u64()?;
        if n_params > (r.buf.len() / 8) as u64 {
            return Err(bad("truncated parameters"));
        }
        let mut params = Vec::with_capacity(n_params as usize);
        for _ in 0..n_params {
            let p = r.f64()?;
            if !p.is_finite() {
                return Err(bad("non-finite parameter"));
            }
            params.push(p);
        }
        nets.push(NamedNetwork {
            name,
            dropout_rate,
            mlp: Mlp::from_parts(sizes, params)?,
        });
    }
    if !r.buf.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(nets)
}

/// Finds a network by name.
pub fn find<'a>(nets: &'a [NamedNetwork], name: &str) -> Result<&'a NamedNetwork, NeuralError> {
    nets.iter()
        .find(|n| n.name == name)
        .ok_or_else(|| NeuralError::Checkpoint(format!("missing network `{name}`")))
}
