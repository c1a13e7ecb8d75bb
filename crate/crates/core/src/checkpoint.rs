//! Bit-exact model persistence: a diffable textual header (format version,
//! config snapshot, one line per tensor with shape and byte offset)
//! followed by a raw little-endian 32-bit-float payload.

use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig};
use crate::params::ParamStore;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "IQA-CHECKPOINT";

/// Everything stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Min-max statistics of the training-split MOS labels, kept for
    /// inference-time denormalization.
    pub mos_range: Option<(f64, f64)>,
}

/// Writes the parameter store and metadata to `path`, bit-exactly.
pub fn save(path: &Path, store: &ParamStore<f32>, meta: &CheckpointMeta) -> Result<()> {
    let mut header = String::new();
    header.push_str(&format!("{MAGIC} {FORMAT_VERSION}\n"));
    let config_json = serde_json::to_string(meta)
        .map_err(|e| Error::CheckpointFormat(format!("config serialization: {e}")))?;
    header.push_str(&format!("config {config_json}\n"));

    let mut payload: Vec<u8> = Vec::new();
    for (name, entry) in store.iter() {
        let offset = payload.len();
        for &v in entry.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let dims: Vec<String> = entry.tensor.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!(
            "tensor {name} {} {} {offset} {}\n",
            entry.tensor.shape().len(),
            dims.join(" "),
            entry.tensor.numel()
        ));
    }
    header.push_str(&format!("payload {}\n", payload.len()));

    let mut file = std::fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn parse_header(text: &str) -> Result<(CheckpointMeta, Vec<TensorRecord>, usize)> {
    let mut lines = text.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::CheckpointFormat("empty header".into()))?;
    let mut parts = first.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::CheckpointFormat("bad magic".into()));
    }
    let found: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::CheckpointFormat("missing version".into()))?;
    if found != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found, expected: FORMAT_VERSION });
    }

    let config_line = lines
        .next()
        .ok_or_else(|| Error::CheckpointFormat("missing config line".into()))?;
    let json = config_line
        .strip_prefix("config ")
        .ok_or_else(|| Error::CheckpointFormat("expected config line".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(json)
        .map_err(|e| Error::CheckpointFormat(format!("config parse: {e}")))?;

    let mut records = Vec::new();
    let mut payload_bytes = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix("tensor ") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() < 4 {
                return Err(Error::CheckpointFormat(format!("bad tensor line: {line}")));
            }
            let name = fields[0].to_string();
            let rank: usize = fields[1]
                .parse()
                .map_err(|_| Error::CheckpointFormat(format!("bad rank in: {line}")))?;
            if fields.len() != 4 + rank {
                return Err(Error::CheckpointFormat(format!("bad tensor line: {line}")));
            }
            let shape: Vec<usize> = fields[2..2 + rank]
                .iter()
                .map(|v| v.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::CheckpointFormat(format!("bad shape in: {line}")))?;
            let offset: usize = fields[2 + rank]
                .parse()
                .map_err(|_| Error::CheckpointFormat(format!("bad offset in: {line}")))?;
            let len: usize = fields[3 + rank]
                .parse()
                .map_err(|_| Error::CheckpointFormat(format!("bad length in: {line}")))?;
            records.push(TensorRecord { name, shape, offset, len });
        } else if let Some(rest) = line.strip_prefix("payload ") {
            payload_bytes = Some(
                rest.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::CheckpointFormat(format!("bad payload line: {line}")))?,
            );
            break;
        } else {
            return Err(Error::CheckpointFormat(format!("unexpected line: {line}")));
        }
    }
    let payload_bytes =
        payload_bytes.ok_or_else(|| Error::CheckpointFormat("missing payload line".into()))?;
    Ok((meta, records, payload_bytes))
}

/// Loads parameters and metadata. The stored config rebuilds the expected
/// parameter template, so unknown or missing tensor names are rejected and
/// shapes are validated.
pub fn load(path: &Path) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;

    // header is everything up to and including the payload line
    let header_end = find_header_end(&bytes)?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::CheckpointFormat("header is not UTF-8".into()))?;
    let (meta, records, payload_bytes) = parse_header(header)?;
    let payload = &bytes[header_end..];
    if payload.len() < payload_bytes {
        return Err(Error::CheckpointTruncated { need: payload_bytes, have: payload.len() });
    }

    // template defines the legal names, shapes and flags
    let mut store = init_params::<f32>(&meta.config, 0)?;
    let mut seen = std::collections::BTreeSet::new();
    for rec in &records {
        let entry = store
            .get_mut(&rec.name)
            .ok_or_else(|| Error::CheckpointUnknownParam(rec.name.clone()))?;
        if entry.tensor.shape() != rec.shape.as_slice() {
            return Err(Error::CheckpointShape {
                name: rec.name.clone(),
                stored: rec.shape.clone(),
                expected: entry.tensor.shape().to_vec(),
            });
        }
        let need = rec.offset + 4 * rec.len;
        if need > payload.len() {
            return Err(Error::CheckpointTruncated { need, have: payload.len() });
        }
        if entry.tensor.numel() != rec.len {
            return Err(Error::CheckpointShape {
                name: rec.name.clone(),
                stored: rec.shape.clone(),
                expected: entry.tensor.shape().to_vec(),
            });
        }
        for (i, v) in entry.tensor.data_mut().iter_mut().enumerate() {
            let at = rec.offset + 4 * i;
            *v = f32::from_le_bytes([payload[at], payload[at + 1], payload[at + 2], payload[at + 3]]);
        }
        seen.insert(rec.name.clone());
    }
    if let Some(missing) = store.names().find(|n| !seen.contains(*n)) {
        return Err(Error::CheckpointMissingParam(missing.clone()));
    }
    Ok((store, meta))
}

fn find_header_end(bytes: &[u8]) -> Result<usize> {
    // scan line by line until the payload marker line ends
    let mut start = 0;
    while start < bytes.len() {
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p + 1)
            .ok_or_else(|| Error::CheckpointFormat("unterminated header".into()))?;
        if bytes[start..end].starts_with(b"payload ") {
            return Ok(end);
        }
        start = end;
    }
    Err(Error::CheckpointFormat("missing payload line".into()))
}

/// Loads a checkpoint and insists its architecture equals `expected`.
pub fn load_expecting(
    path: &Path,
    expected: &ModelConfig,
) -> Result<(ParamStore<f32>, CheckpointMeta)> {
    let (store, meta) = load(path)?;
    if &meta.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint was built for {:?} mode with {} levels, requested {:?} with {}",
            meta.config.mode,
            meta.config.levels(),
            expected.mode,
            expected.levels()
        )));
    }
    Ok((store, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toy_meta() -> CheckpointMeta {
        CheckpointMeta { config: ModelConfig::toy_fr(), mos_range: Some((1.0, 5.0)) }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let meta = toy_meta();
        let store = init_params::<f32>(&meta.config, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &store, &meta).unwrap();
        let (loaded, loaded_meta) = load(&path).unwrap();
        assert!(store.bitwise_eq(&loaded));
        assert_eq!(loaded_meta, meta);
    }

    #[test]
    fn truncation_is_detected() {
        let meta = toy_meta();
        let store = init_params::<f32>(&meta.config, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &store, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load(&path),
            Err(Error::CheckpointTruncated { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_detected() {
        let meta = toy_meta();
        let store = init_params::<f32>(&meta.config, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &store, &meta).unwrap();
        let text = std::fs::read(&path).unwrap();
        let mut patched = format!("{MAGIC} 999\n").into_bytes();
        let first_newline = text.iter().position(|&b| b == b'\n').unwrap();
        patched.extend_from_slice(&text[first_newline + 1..]);
        std::fs::write(&path, patched).unwrap();
        assert!(matches!(
            load(&path),
            Err(Error::CheckpointVersion { found: 999, .. })
        ));
    }

    #[test]
    fn config_mismatch_is_detected() {
        let meta = toy_meta();
        let store = init_params::<f32>(&meta.config, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &store, &meta).unwrap();
        let nr = ModelConfig::toy_nr();
        assert!(matches!(
            load_expecting(&path, &nr),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let meta = toy_meta();
        let store = init_params::<f32>(&meta.config, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &store, &meta).unwrap();
        // rename one tensor record (in the textual header; the payload
        // that follows is binary) to a name the template lacks
        let bytes = std::fs::read(&path).unwrap();
        let needle = b"tensor backbone.l1.down.b";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        let mut patched = bytes.clone();
        patched[at..at + needle.len()].copy_from_slice(b"tensor backbone.l9.down.b");
        std::fs::write(&path, patched).unwrap();
        assert!(matches!(
            load(&path),
            Err(Error::CheckpointUnknownParam(_)) | Err(Error::CheckpointMissingParam(_))
        ));
    }
}
