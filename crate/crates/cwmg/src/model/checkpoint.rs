//! Checkpoint file format.
//!
//! Layout: magic `CWMG`, a little-endian u32 format version, a u32 header
//! length, a UTF-8 `key = value` header (config, vocabulary version, epochs
//! trained), then every parameter array as raw little-endian f32 values in
//! the canonical flat order of `TransformerParams::flatten`. Loading
//! validates magic, version, header fields and total data length.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::params::{param_count, TransformerParams};
use super::TransformerConfig;
use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::vocab::{TokenType, Vocabulary, VOCAB_VERSION};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CWMG";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A loaded checkpoint: parameters plus the metadata needed to resume.
#[derive(Debug)]
pub struct Checkpoint {
    pub params: TransformerParams<f32>,
    pub config: TransformerConfig,
    pub epochs_trained: u64,
}

/// Serialize parameters to checkpoint bytes.
pub fn checkpoint_bytes(
    params: &TransformerParams<f32>,
    cfg: &TransformerConfig,
    epochs_trained: u64,
) -> Vec<u8> {
    let mut header = String::new();
    let dims: Vec<String> = cfg.type_dims.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(header, "vocab_version = {VOCAB_VERSION}");
    let _ = writeln!(header, "epochs_trained = {epochs_trained}");
    let _ = writeln!(header, "d_model = {}", cfg.d_model);
    let _ = writeln!(header, "n_layers = {}", cfg.n_layers);
    let _ = writeln!(header, "n_heads = {}", cfg.n_heads);
    let _ = writeln!(header, "type_dims = {}", dims.join(","));
    let _ = writeln!(header, "ff_hidden = {}", cfg.ff_hidden);
    let _ = writeln!(header, "head_hidden = {}", cfg.head_hidden);
    let _ = writeln!(header, "max_seq_len = {}", cfg.max_seq_len);

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for array in params.flatten() {
        for &v in array.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Write a checkpoint file.
pub fn save_checkpoint(
    params: &TransformerParams<f32>,
    cfg: &TransformerConfig,
    epochs_trained: u64,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params, cfg, epochs_trained))?;
    Ok(())
}

fn header_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Checkpoint { field: field.to_string(), msg: msg.into() }
}

/// Parse checkpoint bytes; every validation failure names the bad field.
pub fn parse_checkpoint(bytes: &[u8], vocab: &Vocabulary) -> Result<Checkpoint> {
    if bytes.len() < 12 {
        return Err(header_err("magic", "file shorter than the fixed header"));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(header_err("magic", format!("expected CWMG, got {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("fixed slice"));
    if version != CHECKPOINT_VERSION {
        return Err(header_err(
            "version",
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("fixed slice")) as usize;
    if 12 + header_len > bytes.len() {
        return Err(header_err("header", "declared header length exceeds file size"));
    }
    let header = std::str::from_utf8(&bytes[12..12 + header_len])
        .map_err(|_| header_err("header", "header is not UTF-8"))?;

    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for line in header.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| header_err("header", format!("malformed line {line:?}")))?;
        fields.insert(k.trim(), v.trim());
    }

    let get = |key: &str| -> Result<&str> {
        fields.get(key).copied().ok_or_else(|| header_err(key, "missing from header"))
    };
    let get_usize = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| header_err(key, format!("not an integer: {:?}", get(key).unwrap())))
    };

    let vocab_version = get("vocab_version")?;
    if vocab_version != VOCAB_VERSION {
        return Err(header_err(
            "vocab_version",
            format!("checkpoint has {vocab_version}, this build uses {VOCAB_VERSION}"),
        ));
    }
    let epochs_trained: u64 = get("epochs_trained")?
        .parse()
        .map_err(|_| header_err("epochs_trained", "not an integer"))?;

    let dims_text = get("type_dims")?;
    let dims: Vec<usize> = dims_text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| header_err("type_dims", format!("not a list of integers: {dims_text:?}")))?;
    if dims.len() != TokenType::COUNT {
        return Err(header_err("type_dims", format!("expected 8 entries, got {}", dims.len())));
    }
    let mut type_dims = [0usize; TokenType::COUNT];
    type_dims.copy_from_slice(&dims);

    let config = TransformerConfig {
        d_model: get_usize("d_model")?,
        n_layers: get_usize("n_layers")?,
        n_heads: get_usize("n_heads")?,
        type_dims,
        ff_hidden: get_usize("ff_hidden")?,
        head_hidden: get_usize("head_hidden")?,
        max_seq_len: get_usize("max_seq_len")?,
    };
    config.validate().map_err(|e| header_err("config", e.to_string()))?;

    let expected = param_count(&config, vocab);
    let data = &bytes[12 + header_len..];
    if data.len() != expected * 4 {
        return Err(header_err(
            "data",
            format!(
                "parameter payload is {} bytes, config implies {} ({} floats)",
                data.len(),
                expected * 4,
                expected
            ),
        ));
    }

    // materialize arrays in canonical order using the zero template's shapes
    let template = TransformerParams::<f32>::zeros(&config, vocab);
    let mut arrays = Vec::new();
    let mut offset = 0usize;
    for slot in template.flatten() {
        let n = slot.numel();
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let at = offset + i * 4;
            values.push(f32::from_le_bytes(data[at..at + 4].try_into().expect("length checked")));
        }
        offset += n * 4;
        arrays.push(Array::new(slot.shape().to_vec(), values).expect("template shape"));
    }
    let params = TransformerParams::from_flat(&config, vocab, arrays)
        .map_err(|e| header_err("data", e.to_string()))?;

    Ok(Checkpoint { params, config, epochs_trained })
}

/// Read and parse a checkpoint file.
pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    parse_checkpoint(&bytes, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::init(&cfg, &vocab, 77);
        let bytes = checkpoint_bytes(&params, &cfg, 42);
        let loaded = parse_checkpoint(&bytes, &vocab).unwrap();
        assert_eq!(loaded.epochs_trained, 42);
        assert_eq!(loaded.config, cfg);
        for (a, b) in params.flatten().iter().zip(loaded.params.flatten()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // saving the loaded params reproduces the bytes
        assert_eq!(bytes, checkpoint_bytes(&loaded.params, &loaded.config, 42));
    }

    #[test]
    fn truncated_file_names_data_field() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let mut bytes = checkpoint_bytes(&params, &cfg, 0);
        bytes.truncate(bytes.len() - 17);
        match parse_checkpoint(&bytes, &vocab).unwrap_err() {
            Error::Checkpoint { field, .. } => assert_eq!(field, "data"),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_are_named() {
        let vocab = Vocabulary::build();
        match parse_checkpoint(b"NOPE\0\0\0\0\0\0\0\0", &vocab).unwrap_err() {
            Error::Checkpoint { field, .. } => assert_eq!(field, "magic"),
            other => panic!("{other:?}"),
        }
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let mut bytes = checkpoint_bytes(&params, &cfg, 0);
        bytes[4] = 9;
        match parse_checkpoint(&bytes, &vocab).unwrap_err() {
            Error::Checkpoint { field, .. } => assert_eq!(field, "version"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vocab_version_mismatch_is_rejected() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let bytes = checkpoint_bytes(&params, &cfg, 0);
        let text = String::from_utf8_lossy(&bytes[12..12 + 30]).to_string();
        assert!(text.contains("vocab_version"));
        // orchestrate a mismatch by editing the header byte-for-byte
        let mut tampered = bytes.clone();
        let pos = 12 + text.find("= 1").unwrap() + 2;
        tampered[pos] = b'9';
        match parse_checkpoint(&tampered, &vocab).unwrap_err() {
            Error::Checkpoint { field, .. } => assert_eq!(field, "vocab_version"),
            other => panic!("{other:?}"),
        }
    }
}
