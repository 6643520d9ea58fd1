//! Checkpoint persistence: a text manifest (format version, model spec,
//! tensor table with byte offsets) followed by a little-endian f64 payload.
//! Round-trips are bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamEntry, Parameters};
use crate::report::write_atomic;

const MAGIC: &str = "sddrop-checkpoint";
const VERSION: u32 = 1;

/// Serialize the manifest and payload and write them atomically.
pub fn save_checkpoint(spec: &ModelSpec, params: &Parameters, path: &Path) -> Result<()> {
    let spec_json = serde_json::to_string(spec)
        .map_err(|e| Error::Checkpoint(format!("model spec does not serialize: {e}")))?;

    let mut header = String::new();
    header.push_str(&format!("{MAGIC} v{VERSION}\n"));
    header.push_str(&format!("spec {spec_json}\n"));
    header.push_str(&format!("tensors {}\n", params.entries.len()));

    let mut payload: Vec<u8> = Vec::with_capacity(params.total_len() * 8);
    for entry in &params.entries {
        if entry.shape.is_empty() || entry.name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has an unserializable name or empty shape",
                entry.name
            )));
        }
        let dims: Vec<String> = entry.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!(
            "tensor {} {} f64 {} {}\n",
            entry.name,
            dims.join("x"),
            payload.len(),
            entry.values.len() * 8,
        ));
        for v in &entry.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    header.push_str(&format!("payload {}\n", payload.len()));

    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&payload);
    write_atomic(path, &bytes)
}

/// Parse a checkpoint back into its model spec and parameters.
pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, Parameters)> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(&name, e))?;

    let mut cursor = 0usize;
    let mut next_line = || -> Result<String> {
        let rest = &bytes[cursor..];
        let nl = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Checkpoint(format!("{name}: unterminated manifest line")))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Checkpoint(format!("{name}: manifest is not UTF-8")))?
            .to_string();
        cursor += nl + 1;
        Ok(line)
    };

    let first = next_line()?;
    let mut parts = first.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!(
            "{name}: not a {MAGIC} file (got `{first}`)"
        )));
    }
    let version = parts.next().unwrap_or("");
    if version != format!("v{VERSION}") {
        return Err(Error::Checkpoint(format!(
            "{name}: format version mismatch: file has `{version}`, this build reads v{VERSION}"
        )));
    }

    let spec_line = next_line()?;
    let spec_json = spec_line.strip_prefix("spec ").ok_or_else(|| {
        Error::Checkpoint(format!("{name}: expected `spec ...`, got `{spec_line}`"))
    })?;
    let spec: ModelSpec = serde_json::from_str(spec_json)
        .map_err(|e| Error::Checkpoint(format!("{name}: bad model spec: {e}")))?;

    let count_line = next_line()?;
    let count: usize = count_line
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::Checkpoint(format!("{name}: expected `tensors N`, got `{count_line}`"))
        })?;

    struct Row {
        name: String,
        shape: Vec<usize>,
        offset: usize,
        len: usize,
    }
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line()?;
        let fields: Vec<&str> = line.split(' ').collect();
        let bad = || Error::Checkpoint(format!("{name}: bad tensor line `{line}`"));
        if fields.len() != 6 || fields[0] != "tensor" || fields[3] != "f64" {
            return Err(bad());
        }
        let shape: Vec<usize> = fields[2]
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        rows.push(Row {
            name: fields[1].to_string(),
            shape,
            offset: fields[4].parse().map_err(|_| bad())?,
            len: fields[5].parse().map_err(|_| bad())?,
        });
    }

    let payload_line = next_line()?;
    let payload_len: usize = payload_line
        .strip_prefix("payload ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::Checkpoint(format!(
                "{name}: expected `payload N`, got `{payload_line}`"
            ))
        })?;
    let payload = &bytes[cursor..];
    if payload.len() != payload_len {
        return Err(Error::Checkpoint(format!(
            "{name}: payload length mismatch: manifest says {payload_len} bytes, file carries {}",
            payload.len()
        )));
    }

    let mut entries = Vec::with_capacity(count);
    for row in rows {
        let numel: usize = row.shape.iter().product();
        if row.len != numel * 8 {
            return Err(Error::Checkpoint(format!(
                "{name}: tensor `{}` shape {:?} wants {} bytes, manifest says {}",
                row.name,
                row.shape,
                numel * 8,
                row.len
            )));
        }
        let end = row.offset + row.len;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "{name}: tensor `{}` extends to byte {end}, payload has {}",
                row.name,
                payload.len()
            )));
        }
        let values: Vec<f64> = payload[row.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        entries.push(ParamEntry {
            name: row.name,
            shape: row.shape,
            values,
        });
    }

    Ok((spec, Parameters { entries }))
}

/// Load and insist the stored spec matches the requested one; the error
/// prints both.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelSpec) -> Result<Parameters> {
    let (spec, params) = load_checkpoint(path)?;
    if &spec != expected {
        return Err(Error::Checkpoint(format!(
            "{}: model spec mismatch:\n  checkpoint: {:?}\n  requested:  {:?}",
            path.display(),
            spec,
            expected
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn spec() -> ModelSpec {
        ModelSpec {
            input_dim: 5,
            hidden_dims: vec![7, 3],
            head_dims: vec![4],
            activation: Default::default(),
            dropout_position: Some(1),
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sddrop_ckpt");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = spec();
        let mut params = init_model(&s, 99).unwrap();
        // Plant awkward values: subnormals, negative zero, extremes.
        params.entries[0].values[0] = -0.0;
        params.entries[0].values[1] = f64::MIN_POSITIVE / 2.0;
        params.entries[0].values[2] = 1.0e300;
        let path = tmp("roundtrip.ckpt");
        save_checkpoint(&s, &params, &path).unwrap();
        let (spec_back, params_back) = load_checkpoint(&path).unwrap();
        assert_eq!(spec_back, s);
        assert_eq!(params.entries.len(), params_back.entries.len());
        for (a, b) in params.entries.iter().zip(&params_back.entries) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{}", a.name);
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let s = spec();
        let params = init_model(&s, 1).unwrap();
        let path = tmp("trunc.ckpt");
        save_checkpoint(&s, &params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn version_mismatch_is_reported() {
        let path = tmp("version.ckpt");
        std::fs::write(&path, b"sddrop-checkpoint v999\n").unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version mismatch"), "{err}");
    }

    #[test]
    fn spec_mismatch_prints_both() {
        let s = spec();
        let params = init_model(&s, 3).unwrap();
        let path = tmp("mismatch.ckpt");
        save_checkpoint(&s, &params, &path).unwrap();
        let other = ModelSpec {
            input_dim: 6,
            ..spec()
        };
        let err = load_checkpoint_expecting(&path, &other)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("checkpoint:") && err.contains("requested:"),
            "{err}"
        );
        assert!(load_checkpoint_expecting(&path, &s).is_ok());
    }

    #[test]
    fn garbage_file_is_rejected() {
        let path = tmp("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint at all\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
