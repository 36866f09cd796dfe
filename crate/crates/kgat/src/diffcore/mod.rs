//! Minimal reverse-mode autodiff over named f64 parameter matrices.
//!
//! The engine keeps every trainable matrix in a [`ParameterStore`] keyed by
//! name. A [`Tape`] records the forward computation as a flat op list and
//! replays it backwards to accumulate gradients into the store. [`Adam`]
//! consumes those gradients, stepping only parameters that were touched since
//! the last `zero_grad`.

mod adam;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use std::io::{self, Read, Write};
use std::path::Path;

/// Stable handle into a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Raised when a gradient or update turns non-finite.
#[derive(Debug, thiserror::Error)]
#[error("non-finite value in parameter '{param}' during {stage}")]
pub struct NumericError {
    pub param: String,
    pub stage: String,
}

#[derive(Clone)]
struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    /// Adam first/second moment estimates, lazily sized with the value.
    m: Tensor,
    v: Tensor,
    /// Per-parameter step count for bias correction.
    step: u64,
    /// Set when any gradient was accumulated since the last `zero_grad`.
    touched: bool,
}

/// Named collection of trainable matrices plus their gradient buffers.
#[derive(Clone, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore { params: Vec::new() }
    }

    /// Registers a parameter; names must be unique.
    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            self.lookup(name).is_none(),
            "duplicate parameter name '{name}'"
        );
        let (rows, cols) = value.shape();
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Tensor::zeros(rows, cols),
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
            step: 0,
            touched: false,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn touched(&self, id: ParamId) -> bool {
        self.params[id.0].touched
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Clears all gradients and touched flags. Adam moments survive.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
            p.touched = false;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor) {
        let p = &mut self.params[id.0];
        p.grad.add_assign(delta);
        p.touched = true;
    }

    pub(crate) fn accumulate_grad_rows(&mut self, id: ParamId, indices: &[usize], delta: &Tensor) {
        let p = &mut self.params[id.0];
        let cols = p.grad.cols();
        assert_eq!(delta.cols(), cols, "gradient column mismatch");
        for (i, &row) in indices.iter().enumerate() {
            let dst = p.grad.row_mut(row);
            let src = delta.row(i);
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += *s;
            }
        }
        p.touched = true;
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> (&mut Tensor, &Tensor, &mut Tensor, &mut Tensor, &mut u64, &str) {
        let p = &mut self.params[id.0];
        (&mut p.value, &p.grad, &mut p.m, &mut p.v, &mut p.step, &p.name)
    }

    /// Serializes parameter values (not gradients or optimizer state).
    ///
    /// Layout: magic, format version, parameter count, then per parameter the
    /// name, shape, and row-major little-endian f64 payload.
    pub fn save<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
            w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
            for x in p.value.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_file(&self, path: &Path) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut buf = io::BufWriter::new(file);
        self.save(&mut buf)?;
        buf.flush()
    }

    /// Reads a checkpoint written by [`save`](Self::save). Gradients and Adam
    /// state start zeroed, as in a fresh store.
    pub fn load<R: Read>(mut r: R) -> io::Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "not a checkpoint file (bad magic)",
            ));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let count = read_u32(&mut r)? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf).map_err(|_| {
                io::Error::new(io::ErrorKind::InvalidData, "parameter name is not utf-8")
            })?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = vec![0.0f64; rows * cols];
            let mut byte = [0u8; 8];
            for x in data.iter_mut() {
                r.read_exact(&mut byte)?;
                *x = f64::from_le_bytes(byte);
            }
            store.register(&name, Tensor::from_vec(rows, cols, data));
        }
        Ok(store)
    }

    pub fn load_file(path: &Path) -> io::Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(io::BufReader::new(file))
    }
}

const CKPT_MAGIC: &[u8; 8] = b"KGATCKPT";
const CKPT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
