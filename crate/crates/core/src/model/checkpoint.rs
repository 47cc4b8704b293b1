//! Binary checkpoints.
//!
//! Layout: one text manifest line
//!
//! ```text
//! TKD1 num_layers=2 num_heads=2 ... layernorm_eps=0.00001 params=embed.weight:50x32,embed.bias:32,...
//! ```
//!
//! followed by every parameter's data as little-endian `f64`, in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "TKD1";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn to_bytes(model: &EncoderModel) -> Vec<u8> {
    let c = model.config();
    let layout: Vec<String> = model
        .param_names()
        .into_iter()
        .zip(model.params())
        .map(|(name, t)| {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            format!("{name}:{}", dims.join("x"))
        })
        .collect();
    let header = format!(
        "{MAGIC} num_layers={} num_heads={} d_model={} d_ff={} vocab_size={} max_seq_len={} num_classes={} layernorm_eps={:?} params={}\n",
        c.num_layers,
        c.num_heads,
        c.d_model,
        c.d_ff,
        c.vocab_size,
        c.max_seq_len,
        c.num_classes,
        c.layernorm_eps,
        layout.join(",")
    );
    let mut out = header.into_bytes();
    for t in model.params() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<EncoderModel> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err("checkpoint has no manifest line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| format_err("manifest is not UTF-8"))?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some(MAGIC) {
        return Err(format_err(format!("missing {MAGIC} magic")));
    }
    let fields: BTreeMap<&str, &str> = tokens
        .map(|kv| kv.split_once('=').ok_or_else(|| format_err(format!("bad field `{kv}`"))))
        .collect::<Result<_>>()?;
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| format_err(format!("manifest lacks `{k}`")))
    };
    let int = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| format_err(format!("`{k}` is not an integer")))
    };
    let config = ModelConfig {
        num_layers: int("num_layers")?,
        num_heads: int("num_heads")?,
        d_model: int("d_model")?,
        d_ff: int("d_ff")?,
        vocab_size: int("vocab_size")?,
        max_seq_len: int("max_seq_len")?,
        num_classes: int("num_classes")?,
        layernorm_eps: get("layernorm_eps")?
            .parse()
            .map_err(|_| format_err("`layernorm_eps` is not a number"))?,
    };
    config.validate()?;

    let listed: Vec<&str> = get("params")?.split(',').collect();
    let expected = config.param_layout();
    if listed.len() != expected.len() {
        return Err(format_err(format!(
            "manifest lists {} parameters, config implies {}",
            listed.len(),
            expected.len()
        )));
    }
    for (entry, (name, shape)) in listed.iter().zip(&expected) {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        let want = format!("{name}:{}", dims.join("x"));
        if *entry != want {
            return Err(format_err(format!("manifest entry `{entry}`, expected `{want}`")));
        }
    }

    let body = &bytes[nl + 1..];
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if body.len() != total * 8 {
        return Err(format_err(format!(
            "checkpoint body has {} bytes, expected {}",
            body.len(),
            total * 8
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let params = expected
        .iter()
        .map(|(_, shape)| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, values.by_ref().take(n).collect())
        })
        .collect();
    EncoderModel::from_params(config, params)
}

pub fn save(model: &EncoderModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<EncoderModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// Identity of a model: the short hash of its checkpoint encoding.
pub fn checksum(model: &EncoderModel) -> String {
    short_hash(&to_bytes(model))
}
