//! Binary checkpoint of a trained [`ModelState`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WGCR"  u32 version
//! u32 len, config text (`key = value` lines)
//! u32 count, then per sensor: u32 len, UTF-8 id
//! u32 count, then per tensor: u32 len, name, u32 rank, u64 dims[rank], f64 data
//! ```
//!
//! Tensors hold the parameters under their model names, the adjacency
//! matrices as `graph.stream.{s}` and `graph.decoder`, and the normalizer as
//! the two-element vector `normalizer`.

use std::path::Path;

use crate::config::{model_text, parse_pairs, set_model_key};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::graph_ops::AdjMatrix;
use crate::model::{ModelConfig, ModelGraphs, ModelParams, ModelState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WGCR";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).or_else(|_| bad(format!("length {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_str(out, name)?;
    put_u32(out, t.rank())?;
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return bad(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).or_else(|_| bad("string is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let rank = self.u32()?;
        if rank > MAX_RANK {
            return bad(format!("tensor '{name}' has rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(self.u64()?).or_else(|_| bad("dimension overflows"))?;
            numel = numel.checked_mul(d).ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
            shape.push(d);
        }
        let bytes = numel
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        let raw = self.take(bytes)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor '{name}': {e}")))?;
        Ok((name, t))
    }
}

impl ModelState {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &model_text(&self.config))?;
        put_u32(&mut out, self.sensor_ids.len())?;
        for id in &self.sensor_ids {
            put_str(&mut out, id)?;
        }
        let named = self.params.named();
        let graphs = self.graphs.streams.len() + 1;
        put_u32(&mut out, named.len() + graphs + 1)?;
        for (name, t) in named {
            put_tensor(&mut out, &name, t)?;
        }
        for (s, a) in self.graphs.streams.iter().enumerate() {
            put_tensor(&mut out, &format!("graph.stream.{s}"), a.weights())?;
        }
        put_tensor(&mut out, "graph.decoder", self.graphs.decoder.weights())?;
        put_tensor(
            &mut out,
            "normalizer",
            &Tensor::vector(vec![self.normalizer.mean, self.normalizer.std]),
        )?;
        Ok(out)
    }

    /// Decodes a checkpoint, rejecting any mismatch in magic, version,
    /// configuration, tensor names or shapes.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return bad("not a checkpoint (bad magic)");
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return bad(format!("unsupported version {version}, expected {VERSION}"));
        }
        let text = r.string()?;
        let mut config = ModelConfig::default();
        for (line, key, v) in parse_pairs(&text)? {
            if !set_model_key(&mut config, line, &key, &v)? {
                return bad(format!("unknown config key '{key}'"));
            }
        }
        config.validate()?;

        let n_sensors = r.u32()?;
        let mut sensor_ids = Vec::new();
        for _ in 0..n_sensors {
            sensor_ids.push(r.string()?);
        }
        let n = sensor_ids.len();
        if n == 0 {
            return bad("checkpoint lists no sensors");
        }

        let count = r.u32()?;
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            if tensors.iter().any(|(m, _)| *m == name) {
                return bad(format!("duplicate tensor '{name}'"));
            }
            tensors.push((name, t));
        }
        if r.pos != buf.len() {
            return bad(format!("{} trailing bytes", buf.len() - r.pos));
        }

        let floats: usize = tensors.iter().map(|(_, t)| t.numel()).sum();
        let gate = config.hidden_dim.saturating_mul(config.hidden_dim.saturating_add(config.input_dim));
        if gate > floats || config.hops > floats || config.history_len > floats {
            return bad("configuration does not match the stored tensors");
        }
        let mut params = ModelParams::zeros(&config)?;
        let expected = params.named().len() + config.streams() + 2;
        if tensors.len() != expected {
            return bad(format!("expected {expected} tensors, found {}", tensors.len()));
        }
        params.load_named(&tensors)?;

        let take = |name: &str| -> Result<&Tensor> {
            match tensors.iter().find(|(m, _)| m == name) {
                Some((_, t)) => Ok(t),
                None => bad(format!("missing tensor '{name}'")),
            }
        };
        let graph = |name: &str| -> Result<AdjMatrix> {
            let t = take(name)?;
            if t.shape() != [n, n] {
                return bad(format!("'{name}' has shape {:?}, expected [{n}, {n}]", t.shape()));
            }
            AdjMatrix::new(t.clone()).map_err(|e| Error::Checkpoint(format!("'{name}': {e}")))
        };
        let streams = (0..config.streams())
            .map(|s| graph(&format!("graph.stream.{s}")))
            .collect::<Result<Vec<_>>>()?;
        let decoder = graph("graph.decoder")?;
        let norm = take("normalizer")?;
        if norm.shape() != [2] {
            return bad("normalizer must hold two values");
        }
        let normalizer = Normalizer::new(norm.data()[0], norm.data()[1])?;
        if !params.to_flat().iter().all(|v| v.is_finite()) {
            return bad("non-finite parameter");
        }
        Ok(Self {
            config,
            params,
            graphs: ModelGraphs { streams, decoder },
            normalizer,
            sensor_ids,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
