//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian, all floats IEEE-754 f64 LE):
//!
//! ```text
//! magic    8 bytes  "ABSPCKPT"
//! version  u32      1
//! layers   u32
//! per layer: fan_in u32, fan_out u32, activation u8 (0 = relu, 1 = identity)
//! per layer: weights f64[fan_out * fan_in] row-major, biases f64[fan_out]
//! has_store u8 (0 | 1)
//! if store:
//!   lambda f64, epsilon f64, reset_on_consolidate u8
//!   per layer: gamma f64[fan_out * fan_in]
//!   tasks u32
//!   per task, per layer: anchors f64[...], importance f64[...]
//! ```
//!
//! Floats are dumped bit-for-bit, so save/load round-trips exactly.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Layer};
use crate::plasticity::{ConsolidatedTask, ImportanceStore};

const MAGIC: &[u8; 8] = b"ABSPCKPT";
const VERSION: u32 = 1;

pub fn save(path: &Path, net: &DenseNet, store: Option<&ImportanceStore>) -> Result<()> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
        path,
    };
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(net.num_layers() as u32)?;
    for layer in net.layers() {
        w.u32(layer.fan_in() as u32)?;
        w.u32(layer.fan_out() as u32)?;
        w.u8(match layer.activation() {
            Activation::Relu => 0,
            Activation::Identity => 1,
        })?;
    }
    for layer in net.layers() {
        w.floats(layer.weights().as_slice().unwrap())?;
        w.floats(layer.biases().as_slice().unwrap())?;
    }
    match store {
        None => w.u8(0)?,
        Some(store) => {
            w.u8(1)?;
            w.f64(store.lambda())?;
            w.f64(store.epsilon())?;
            w.u8(store.reset_on_consolidate() as u8)?;
            for gamma in store.gamma() {
                w.floats(gamma.as_slice().unwrap())?;
            }
            w.u32(store.tasks().len() as u32)?;
            for task in store.tasks() {
                for anchor in &task.anchors {
                    w.floats(anchor.as_slice().unwrap())?;
                }
                for importance in &task.importance {
                    w.floats(importance.as_slice().unwrap())?;
                }
            }
        }
    }
    w.inner
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<(DenseNet, Option<ImportanceStore>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    let mut magic = [0u8; 8];
    r.bytes(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidCheckpoint(format!(
            "bad magic in {}",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::InvalidCheckpoint(format!(
            "unsupported version {version} in {}",
            path.display()
        )));
    }
    let num_layers = r.u32()? as usize;
    if num_layers == 0 || num_layers > 1024 {
        return Err(Error::InvalidCheckpoint(format!(
            "implausible layer count {num_layers}"
        )));
    }
    let mut shapes = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            other => {
                return Err(Error::InvalidCheckpoint(format!(
                    "unknown activation tag {other}"
                )))
            }
        };
        shapes.push((fan_in, fan_out, activation));
    }
    let mut layers = Vec::with_capacity(num_layers);
    for &(fan_in, fan_out, activation) in &shapes {
        let weights = Array2::from_shape_vec((fan_out, fan_in), r.floats(fan_out * fan_in)?)
            .expect("shape matches read length");
        let biases = Array1::from_vec(r.floats(fan_out)?);
        layers.push(Layer::new(weights, biases, activation)?);
    }
    let net = DenseNet::new(layers)?;
    let store = match r.u8()? {
        0 => None,
        1 => {
            let lambda = r.f64()?;
            let epsilon = r.f64()?;
            let reset = r.u8()? != 0;
            let mut gamma = Vec::with_capacity(num_layers);
            for &(fan_in, fan_out, _) in &shapes {
                gamma.push(
                    Array2::from_shape_vec((fan_out, fan_in), r.floats(fan_out * fan_in)?)
                        .expect("shape matches read length"),
                );
            }
            let task_count = r.u32()? as usize;
            let mut tasks = Vec::with_capacity(task_count);
            for _ in 0..task_count {
                let mut anchors = Vec::with_capacity(num_layers);
                for &(fan_in, fan_out, _) in &shapes {
                    anchors.push(
                        Array2::from_shape_vec((fan_out, fan_in), r.floats(fan_out * fan_in)?)
                            .expect("shape matches read length"),
                    );
                }
                let mut importance = Vec::with_capacity(num_layers);
                for &(fan_in, fan_out, _) in &shapes {
                    importance.push(
                        Array2::from_shape_vec((fan_out, fan_in), r.floats(fan_out * fan_in)?)
                            .expect("shape matches read length"),
                    );
                }
                tasks.push(ConsolidatedTask {
                    anchors,
                    importance,
                });
            }
            Some(ImportanceStore::from_parts(
                gamma, tasks, lambda, epsilon, reset,
            ))
        }
        other => {
            return Err(Error::InvalidCheckpoint(format!(
                "unknown store tag {other}"
            )))
        }
    };
    Ok((net, store))
}

struct Writer<'a, W: Write> {
    inner: W,
    path: &'a Path,
}

impl<W: Write> Writer<'_, W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::io(self.path.display().to_string(), e))
    }

    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn floats(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<'a, R: Read> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::InvalidCheckpoint(format!("truncated checkpoint {}", self.path.display()))
            } else {
                Error::io(self.path.display().to_string(), e)
            }
        })
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.bytes(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        let mut buf = vec![0u8; n * 8];
        self.bytes(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(8).enumerate() {
            out[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(out)
    }
}
