//! Checkpoint format: magic "GAZM", u32 version, length-prefixed JSON header
//! (config, mode, class vocabulary, free-form metadata), then one record per
//! parameter and per running statistic: length-prefixed name, u32 rank, u32
//! extents, f32 payload. All integers and floats little-endian.

use crate::error::{Error, Result};
use crate::model::config::{Mode, NetworkConfig};
use crate::model::net::{build_network, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GAZM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: NetworkConfig,
    pub mode: Mode,
    pub classes: Vec<String>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_record<E: Scalar>(w: &mut impl Write, name: &str, t: &Tensor<E>) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_network<E: Scalar>(
    path: impl AsRef<Path>,
    net: &Network<E>,
    classes: &[String],
    metadata: serde_json::Value,
) -> Result<()> {
    let header = CheckpointHeader {
        config: net.config.clone(),
        mode: net.mode(),
        classes: classes.to_vec(),
        metadata,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for p in &net.params {
        write_record(&mut w, &p.name, &p.value)?;
    }
    for s in &net.stats {
        write_record(&mut w, &format!("{}.running_mean", s.name), &s.mean)?;
        write_record(&mut w, &format!("{}.running_var", s.name), &s.var)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| bad("truncated checkpoint"))?;
        Ok(u32::from_le_bytes(b))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| bad("truncated checkpoint"))?;
        Ok(b)
    }

    /// None at clean EOF, record otherwise.
    fn record<E: Scalar>(&mut self) -> Result<Option<(String, Tensor<E>)>> {
        let mut len_bytes = [0u8; 4];
        match self.inner.read(&mut len_bytes) {
            Ok(0) => return Ok(None),
            Ok(4) => {}
            Ok(k) => {
                self.inner
                    .read_exact(&mut len_bytes[k..])
                    .map_err(|_| bad("truncated checkpoint"))?;
            }
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len_bytes) as usize;
        if name_len > 4096 {
            return Err(bad("implausible name length"));
        }
        let name = String::from_utf8(self.bytes(name_len)?)
            .map_err(|_| bad("record name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(bad(format!("implausible rank {rank} for {name:?}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.bytes(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| E::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Ok(Some((name, Tensor::new(shape, data)?)))
    }
}

pub fn load_network<E: Scalar>(path: impl AsRef<Path>) -> Result<(Network<E>, CheckpointHeader)> {
    let f = std::fs::File::open(path)?;
    let mut r = Reader { inner: std::io::BufReader::new(f) };
    if &r.bytes(4)?[..] != MAGIC {
        return Err(bad("bad magic: not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(&r.bytes(header_len)?)
        .map_err(|e| bad(format!("header: {e}")))?;
    let mut net = build_network::<E>(&header.config)?;
    if header.mode == Mode::Attention {
        net.dilate_for_attention()?;
    }

    let mut param_slots: HashMap<String, usize> = net
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.clone(), i))
        .collect();
    let mut stat_slots: HashMap<String, (usize, bool)> = HashMap::new();
    for (i, s) in net.stats.iter().enumerate() {
        stat_slots.insert(format!("{}.running_mean", s.name), (i, true));
        stat_slots.insert(format!("{}.running_var", s.name), (i, false));
    }
    while let Some((name, tensor)) = r.record::<E>()? {
        if let Some(idx) = param_slots.remove(&name) {
            if net.params[idx].value.shape() != tensor.shape() {
                return Err(bad(format!(
                    "shape mismatch for {name:?}: checkpoint {:?} vs network {:?}",
                    tensor.shape(),
                    net.params[idx].value.shape()
                )));
            }
            net.params[idx].value = tensor;
        } else if let Some((idx, is_mean)) = stat_slots.remove(&name) {
            let slot = if is_mean { &mut net.stats[idx].mean } else { &mut net.stats[idx].var };
            if slot.shape() != tensor.shape() {
                return Err(bad(format!("shape mismatch for {name:?}")));
            }
            *slot = tensor;
        } else {
            return Err(bad(format!("unknown or duplicate record {name:?}")));
        }
    }
    if let Some(name) = param_slots.keys().chain(stat_slots.keys()).next() {
        return Err(bad(format!("checkpoint is missing {name:?}")));
    }
    Ok((net, header))
}
