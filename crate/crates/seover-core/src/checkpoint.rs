//! Parameter checkpoints: a plain-text header (metadata plus tensor
//! names and shapes) followed by all values as little-endian 64-bit
//! reals in header order.
//!
//! ```text
//! SEOVER-CKPT v1
//! meta <key> <value>
//! tensor <name> <extent> [<extent> ...]
//! end
//! <binary payload>
//! ```
//!
//! Writes are atomic (write to a sibling temp file, then rename).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &str = "SEOVER-CKPT v1";

/// Metadata plus parameters, as stored on disk.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: IndexMap<String, String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(params: ParamSet) -> Self {
        Checkpoint {
            meta: IndexMap::new(),
            params,
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::CheckpointFormat {
                msg: format!("missing meta key {key:?}"),
            })
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta(key)?
            .parse()
            .map_err(|_| Error::CheckpointFormat {
                msg: format!("meta key {key:?} is not an integer"),
            })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        for (key, value) in &self.meta {
            if key.contains(char::is_whitespace) || value.contains('\n') {
                return Err(Error::CheckpointFormat {
                    msg: format!("meta entry {key:?} has unencodable whitespace"),
                });
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(fs::File::create(&tmp)?);
            writeln!(out, "{MAGIC}")?;
            for (key, value) in &self.meta {
                writeln!(out, "meta {key} {value}")?;
            }
            for (name, tensor) in self.params.iter() {
                let dims: Vec<String> = tensor.shape().iter().map(usize::to_string).collect();
                writeln!(out, "tensor {name} {}", dims.join(" "))?;
            }
            writeln!(out, "end")?;
            for (_, tensor) in self.params.iter() {
                for v in tensor.values() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
            out.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(fs::File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::CheckpointFormat {
                msg: format!("bad magic line {:?}", line.trim_end()),
            });
        }
        let mut meta = IndexMap::new();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::CheckpointFormat {
                    msg: "header ended before 'end'".into(),
                });
            }
            let trimmed = line.trim_end();
            if trimmed == "end" {
                break;
            }
            if let Some(rest) = trimmed.strip_prefix("meta ") {
                let (key, value) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::CheckpointFormat {
                        msg: format!("malformed meta line {trimmed:?}"),
                    })?;
                meta.insert(key.to_string(), value.to_string());
            } else if let Some(rest) = trimmed.strip_prefix("tensor ") {
                let mut parts = rest.split(' ');
                let name = parts.next().unwrap_or_default().to_string();
                let dims: std::result::Result<Vec<usize>, _> =
                    parts.map(str::parse::<usize>).collect();
                let dims = dims.map_err(|_| Error::CheckpointFormat {
                    msg: format!("bad tensor shape in {trimmed:?}"),
                })?;
                if name.is_empty() || dims.is_empty() {
                    return Err(Error::CheckpointFormat {
                        msg: format!("malformed tensor line {trimmed:?}"),
                    });
                }
                shapes.push((name, dims));
            } else {
                return Err(Error::CheckpointFormat {
                    msg: format!("unrecognized header line {trimmed:?}"),
                });
            }
        }

        let mut params = ParamSet::new();
        for (name, dims) in shapes {
            let numel: usize = dims.iter().product();
            let mut buf = vec![0u8; numel * 8];
            reader
                .read_exact(&mut buf)
                .map_err(|_| Error::CheckpointFormat {
                    msg: format!("payload truncated while reading tensor {name:?}"),
                })?;
            let values: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(name, Tensor::new(dims, values)?);
        }
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing)? != 0 {
            return Err(Error::CheckpointFormat {
                msg: "trailing bytes after the declared tensors".into(),
            });
        }
        Ok(Checkpoint { meta, params })
    }
}
