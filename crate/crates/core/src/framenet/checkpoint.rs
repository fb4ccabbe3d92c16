//! FNW1 weight files: `"FNW1"`, a little-endian `u32` byte length, a JSON
//! descriptor, then every tensor as little-endian `f32` in layer order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{FrameletNet, NetConfig};
use super::tensor::Scalar;
use crate::error::{Error, Result};

pub const FNW1_MAGIC: &[u8; 4] = b"FNW1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    config: NetConfig,
    tensors: Vec<TensorEntry>,
}

/// Stored tensors: conv weight and bias, then BN gamma, beta, running
/// mean and running variance per block; head weight and bias last.
fn tensors<T: Scalar>(net: &FrameletNet<T>) -> Vec<(String, &Vec<T>)> {
    let mut out = Vec::new();
    for (i, b) in net.blocks.iter().enumerate() {
        out.push((format!("block{i}.weight"), &b.conv.weight));
        out.push((format!("block{i}.bias"), &b.conv.bias));
        if let Some(bn) = &b.bn {
            out.push((format!("block{i}.bn.gamma"), &bn.gamma));
            out.push((format!("block{i}.bn.beta"), &bn.beta));
            out.push((format!("block{i}.bn.mean"), &bn.running_mean));
            out.push((format!("block{i}.bn.var"), &bn.running_var));
        }
    }
    out.push(("head.weight".into(), &net.head.weight));
    out.push(("head.bias".into(), &net.head.bias));
    out
}

fn tensors_mut<T: Scalar>(net: &mut FrameletNet<T>) -> Vec<&mut Vec<T>> {
    let mut out = Vec::new();
    for b in &mut net.blocks {
        out.push(&mut b.conv.weight);
        out.push(&mut b.conv.bias);
        if let Some(bn) = &mut b.bn {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
    }
    out.push(&mut net.head.weight);
    out.push(&mut net.head.bias);
    out
}

pub fn write_checkpoint<T: Scalar, W: Write>(net: &FrameletNet<T>, mut w: W) -> Result<()> {
    let list = tensors(net);
    let desc = Descriptor {
        config: net.config.clone(),
        tensors: list
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                len: t.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&desc)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::config("descriptor too large"))?;
    w.write_all(FNW1_MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in list {
        let mut buf = Vec::with_capacity(4 * t.len());
        for v in t {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<FrameletNet<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != FNW1_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected FNW1".into(),
        });
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json_end = 8 + len;
    if bytes.len() < json_end {
        return Err(Error::Truncated {
            expected: json_end,
            actual: bytes.len(),
        });
    }
    let desc: Descriptor = serde_json::from_slice(&bytes[8..json_end]).map_err(|e| Error::Parse {
        offset: 8,
        message: format!("descriptor: {e}"),
    })?;
    let mut net = FrameletNet::<T>::build(&desc.config, 0)?;
    let expected: Vec<usize> = tensors(&net).iter().map(|(_, t)| t.len()).collect();
    let stored: Vec<usize> = desc.tensors.iter().map(|t| t.len).collect();
    if expected != stored {
        return Err(Error::Parse {
            offset: 8,
            message: "tensor list does not match the architecture".into(),
        });
    }
    let total = json_end + 4 * expected.iter().sum::<usize>();
    if bytes.len() != total {
        return Err(Error::Truncated {
            expected: total,
            actual: bytes.len(),
        });
    }
    let mut pos = json_end;
    for t in tensors_mut(&mut net) {
        for v in t.iter_mut() {
            let x = f32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
            *v = T::of(x as f64);
            pos += 4;
        }
    }
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &FrameletNet<T>, path: &Path) -> Result<()> {
    write_checkpoint(net, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<FrameletNet<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::MissingInput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    read_checkpoint(std::io::BufReader::new(file))
}
