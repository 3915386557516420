//! `CSNN` network container plus JSON metadata.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CSNN" | u32 version (= 1) | u32 net count
//! per net: u32 layer count K | K × u32 layer sizes | parameters as f64
//! ```
//!
//! Parameters follow [`DenseNet::param`] order: for each layer the weight
//! matrix row-major `(out, in)`, then the bias vector.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{DenseNet, Standardizer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CSNN";
const VERSION: u32 = 1;

/// Sidecar describing how a saved model was trained and how to feed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// `"fnn"` or `"vae"`.
    pub kind: String,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
    pub config: serde_json::Value,
    pub loss_curve: Vec<f64>,
}

pub fn write_nets<W: Write>(mut w: W, nets: &[&DenseNet]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for net in nets {
        buf.extend_from_slice(&(net.sizes().len() as u32).to_le_bytes());
        for &s in net.sizes() {
            let s = u32::try_from(s).map_err(|_| Error::invalid("layer size exceeds u32"))?;
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for i in 0..net.num_params() {
            buf.extend_from_slice(&net.param(i).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Format("truncated network file".into()))?;
        self.pos += N;
        Ok(s.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn read_nets<R: Read>(mut r: R) -> Result<Vec<DenseNet>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if &c.take::<4>()? != MAGIC {
        return Err(Error::Format("bad magic, expected CSNN".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = c.u32()?;
    let mut nets = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let k = c.u32()?;
        if k < 2 {
            return Err(Error::Format(format!("network with {k} layers")));
        }
        let sizes = (0..k).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let mut weights = Vec::with_capacity(k - 1);
        let mut biases = Vec::with_capacity(k - 1);
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let wv = (0..n_in * n_out).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
            let bv = (0..n_out).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
            weights.push(
                Array2::from_shape_vec((n_out, n_in), wv).map_err(|e| Error::Format(e.to_string()))?,
            );
            biases.push(Array1::from(bv));
        }
        nets.push(DenseNet::from_parts(weights, biases)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(nets)
}
