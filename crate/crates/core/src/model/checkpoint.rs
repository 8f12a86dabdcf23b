//! Checkpoint files.
//!
//! ```text
//! cmamba-checkpoint 1
//! config_len <bytes>
//! <config text>
//! tensors <count>
//! tensor <name> <d0,d1,...> <byte offset> <value count>
//! ...
//! data
//! <little-endian f64 values, tensors back to back in the order listed>
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &str = "cmamba-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Every parameter of `store` in declaration order, followed by `extra`.
    pub fn from_store(config: String, store: &ParamStore, extra: Vec<(String, Tensor)>) -> Self {
        let mut tensors: Vec<(String, Tensor)> = store.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        tensors.extend(extra);
        Checkpoint { config, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies matching tensors into `store`; every parameter must be present
    /// with its exact shape.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter_mut() {
            let t = self.get(&p.name).ok_or_else(|| bad(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(bad(format!(
                    "parameter {} has shape {:?} in the file but {:?} in the model",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut head = format!("{MAGIC}\nconfig_len {}\n{}\ntensors {}\n", self.config.len(), self.config, self.tensors.len());
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(bad(format!("tensor name {name:?} must be non-empty without whitespace")));
            }
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let shape = if shape.is_empty() { "-".to_string() } else { shape.join(",") };
            head.push_str(&format!("tensor {name} {shape} {offset} {}\n", t.numel()));
            offset += t.numel() * 8;
        }
        head.push_str("data\n");
        let mut out = head.into_bytes();
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
        };
        if line()? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic line)"));
        }
        let config_len: usize = line()?
            .strip_prefix("config_len ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad config_len line"))?;
        let cfg_end = pos + config_len;
        if cfg_end + 1 > bytes.len() || bytes[cfg_end] != b'\n' {
            return Err(bad("config section length does not match"));
        }
        let config = std::str::from_utf8(&bytes[pos..cfg_end])
            .map_err(|_| bad("config is not UTF-8"))?
            .to_string();
        pos = cfg_end + 1;
        let mut line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
        };
        let count: usize = line()?
            .strip_prefix("tensors ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad tensors line"))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let l = line()?;
            let parts: Vec<&str> = l.split(' ').collect();
            let [tag, name, shape, offset, len] = parts[..] else {
                return Err(bad(format!("bad tensor line {l:?}")));
            };
            let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number {s:?} in {l:?}")));
            if tag != "tensor" {
                return Err(bad(format!("bad tensor line {l:?}")));
            }
            let shape: Vec<usize> = if shape == "-" {
                vec![]
            } else {
                shape.split(',').map(parse).collect::<Result<_>>()?
            };
            entries.push((name.to_string(), shape, parse(offset)?, parse(len)?));
        }
        if line()? != "data" {
            return Err(bad("missing data line"));
        }
        let data = &bytes[pos..];
        let mut tensors = Vec::with_capacity(count);
        for (name, shape, offset, len) in entries {
            let end = offset + len * 8;
            if end > data.len() {
                return Err(bad(format!("tensor {name} runs past the end of the file")));
            }
            let values = data[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = if shape.is_empty() {
                Tensor::new(Vec::<usize>::new(), values)
            } else {
                Tensor::new(shape, values)
            }
            .map_err(|e| bad(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}
