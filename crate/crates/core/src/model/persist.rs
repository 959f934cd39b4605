//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PMSM"  u32 version  u64 config length  config (UTF-8 `key = value` lines)
//! then per tensor until end of file:
//!   u32 name length, name, u32 rank, rank × u64 dims, values as f64
//! ```
//!
//! The config block holds every hyperparameter plus one
//! `norm.<action> = min_x,min_y,min_z,max_x,max_y,max_z` line per action.
//! Tensors are the learnable parameters followed by the batch-norm running
//! statistics, one pair per branch and rollout step
//! (`<branch>.step<k>.bn.running_mean` / `.running_var`).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ModelConfig, PmsModel};
use crate::config::{fmt_list, parse_kv_text, parse_list};
use crate::dataio::NormStats;
use crate::error::{Error, Result};
use crate::numerics::{RunningStats, Tensor};

pub const MAGIC: &[u8; 4] = b"PMSM";
pub const FORMAT_VERSION: u32 = 1;

fn config_block(model: &PmsModel) -> String {
    let mut text = String::new();
    for (k, v) in model.config.to_kv() {
        text.push_str(&format!("{k} = {v}\n"));
    }
    for (action, n) in &model.norm {
        let vals: Vec<f64> = n.min.iter().chain(&n.max).copied().collect();
        text.push_str(&format!("norm.{action} = {}\n", fmt_list(&vals)));
    }
    text
}

fn write_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `model` into `sink`.
pub fn save_model<W: Write>(model: &PmsModel, mut sink: W) -> Result<()> {
    let config = config_block(model);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    for (name, t) in model.params.iter() {
        write_tensor(&mut out, name, t.dims(), t.values());
    }
    for (prefix, r) in &model.running {
        write_tensor(&mut out, &format!("{prefix}.bn.running_mean"), &[r.mean.len()], &r.mean);
        write_tensor(&mut out, &format!("{prefix}.bn.running_var"), &[r.var.len()], &r.var);
    }
    sink.write_all(&out)?;
    Ok(())
}

pub fn save_model_file(model: &PmsModel, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    save_model(model, &mut bytes)?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, record: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Load {
                record: record.to_string(),
                message: format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, record: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, record)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, record: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, record)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, record: &str) -> Result<usize> {
        usize::try_from(self.u64(record)?).map_err(|_| Error::Load {
            record: record.to_string(),
            message: "length does not fit in memory".into(),
        })
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn load_err(record: &str, message: impl Into<String>) -> Error {
    Error::Load {
        record: record.to_string(),
        message: message.into(),
    }
}

/// Reads a model written by [`save_model`].
pub fn load_model(bytes: &[u8]) -> Result<PmsModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(load_err("magic", "not a PMS model file"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = r.len("config length")?;
    let text = std::str::from_utf8(r.take(n, "config")?).map_err(|e| load_err("config", e.to_string()))?;
    let kv = parse_kv_text(text).map_err(|e| load_err("config", e.to_string()))?;
    let mut model_kv = BTreeMap::new();
    let mut norm = BTreeMap::new();
    for (k, v) in kv {
        match k.strip_prefix("norm.") {
            Some(action) => {
                let vals: Vec<f64> = parse_list(&k, &v).map_err(|e| load_err("config", e.to_string()))?;
                if vals.len() != 6 {
                    return Err(load_err("config", format!("`{k}` needs 6 values")));
                }
                norm.insert(
                    action.to_string(),
                    NormStats {
                        min: [vals[0], vals[1], vals[2]],
                        max: [vals[3], vals[4], vals[5]],
                    },
                );
            }
            None => {
                model_kv.insert(k, v);
            }
        }
    }
    if !model_kv.contains_key("joints") {
        return Err(load_err("config", "missing `joints`"));
    }
    let config = ModelConfig::from_kv(&model_kv, 0).map_err(|e| load_err("config", e.to_string()))?;
    let mut model = PmsModel::zeros(config)?;
    model.norm = norm;

    let mut seen = BTreeMap::new();
    let mut index = 0;
    while !r.done() {
        let record = format!("tensor #{index}");
        let name_len = r.u32(&record)? as usize;
        let name = std::str::from_utf8(r.take(name_len, &record)?)
            .map_err(|e| load_err(&record, e.to_string()))?
            .to_string();
        let rank = r.u32(&name)? as usize;
        let dims = (0..rank).map(|_| r.len(&name)).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| load_err(&name, "dims overflow"))?;
        let raw = r.take(count.checked_mul(8).ok_or_else(|| load_err(&name, "dims overflow"))?, &name)?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if seen.insert(name.clone(), ()).is_some() {
            return Err(load_err(&name, "duplicate tensor"));
        }
        store(&mut model, &name, dims, values)?;
        index += 1;
    }
    let expected = model.params.len() + 2 * model.running.len();
    if seen.len() != expected {
        let missing = model
            .params
            .names()
            .map(str::to_string)
            .chain(model.running.keys().flat_map(|p| [format!("{p}.bn.running_mean"), format!("{p}.bn.running_var")]))
            .find(|n| !seen.contains_key(n))
            .unwrap_or_default();
        return Err(load_err(&missing, "tensor missing from file"));
    }
    Ok(model)
}

fn store(model: &mut PmsModel, name: &str, dims: Vec<usize>, values: Vec<f64>) -> Result<()> {
    let stat = name
        .strip_suffix(".bn.running_mean")
        .map(|p| (p, true))
        .or_else(|| name.strip_suffix(".bn.running_var").map(|p| (p, false)));
    if let Some((prefix, is_mean)) = stat {
        let hidden = model.config.hidden;
        let r: &mut RunningStats = model.running.get_mut(prefix).ok_or_else(|| load_err(name, "unknown tensor"))?;
        if dims != [hidden] {
            return Err(load_err(name, format!("dims {dims:?}, expected [{hidden}]")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(load_err(name, "non-finite value"));
        }
        if is_mean {
            r.mean = values;
        } else {
            r.var = values;
        }
        return Ok(());
    }
    let expected = model.params.get(name).ok_or_else(|| load_err(name, "unknown tensor"))?.dims().to_vec();
    if dims != expected {
        return Err(load_err(name, format!("dims {dims:?}, expected {expected:?}")));
    }
    let t = Tensor::new(dims, values).map_err(|e| load_err(name, e.to_string()))?;
    model.params.set(name, t)
}

pub fn load_model_file(path: &Path) -> Result<PmsModel> {
    let bytes = fs::read(path)?;
    load_model(&bytes).map_err(|e| match e {
        Error::Load { record, message } => Error::Load {
            record: format!("{}: {record}", path.display()),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PmsModel {
        let mut c = ModelConfig::new(2);
        c.hidden = 4;
        c.lstm_layers = 1;
        let mut m = PmsModel::new(c, 9).unwrap();
        m.norm.insert(
            "walk".into(),
            NormStats {
                min: [0.1, -2.0, 1.0 / 3.0],
                max: [4.0, 2.5, 7.0],
            },
        );
        m.running.values_mut().next().unwrap().mean[0] = 0.123456789;
        m
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = tiny();
        let mut bytes = Vec::new();
        save_model(&m, &mut bytes).unwrap();
        let back = load_model(&bytes).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        save_model(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_headers_rejected() {
        let mut bytes = Vec::new();
        save_model(&tiny(), &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_model(&bad), Err(Error::Load { record, .. }) if record == "magic"));
        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(load_model(&bad), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn truncation_names_the_record() {
        let mut bytes = Vec::new();
        save_model(&tiny(), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        match load_model(&bytes) {
            Err(Error::Load { record, .. }) => assert!(record.contains("running_var"), "{record}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
