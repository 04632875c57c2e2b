//! NIST CAVP GCM response-file parsing and the bundled self-test.
//!
//! The format is line oriented: `[Name = value]` section headers set
//! parameters for the entries that follow, and each entry is a run of
//! `Field = hex` lines starting with `Count`.

use std::path::Path;

use super::{GcmCipher, MacTag, Nonce, SymmetricKey};

/// AES-256-GCM encrypt vectors with 96-bit IVs and 128-bit tags.
pub const BUNDLED_VECTORS: &str = include_str!("../../data/gcmEncryptExtIV256_96.rsp");

#[derive(Debug, thiserror::Error)]
pub enum VectorError {
    #[error("cannot read vector file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("vector file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcmVector {
    pub name: String,
    pub key: Vec<u8>,
    pub iv: Vec<u8>,
    pub pt: Vec<u8>,
    pub aad: Vec<u8>,
    pub ct: Vec<u8>,
    pub tag: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorFailure {
    pub name: String,
    pub expected_tag: String,
    pub actual_tag: String,
    pub ciphertext_matches: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelfTestReport {
    pub passed: Vec<String>,
    pub failed: Vec<VectorFailure>,
    /// Entries outside the supported profile (key size, IV or tag length).
    pub skipped: Vec<String>,
}

impl SelfTestReport {
    pub fn all_passed(&self) -> bool {
        self.failed.is_empty()
    }

    pub fn total(&self) -> usize {
        self.passed.len() + self.failed.len()
    }
}

pub fn parse_vectors(text: &str) -> Result<Vec<GcmVector>, VectorError> {
    let mut params: Vec<(String, String)> = Vec::new();
    let mut in_header = false;
    let mut out = Vec::new();
    let mut current: Option<(usize, Vec<(String, String)>)> = None;

    let flush = |current: &mut Option<(usize, Vec<(String, String)>)>,
                 params: &[(String, String)],
                 out: &mut Vec<GcmVector>|
     -> Result<(), VectorError> {
        if let Some((line, fields)) = current.take() {
            out.push(build_vector(line, params, &fields)?);
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            flush(&mut current, &params, &mut out)?;
            if !in_header {
                params.clear();
                in_header = true;
            }
            let (k, v) = split_field(inner)
                .ok_or_else(|| parse_err(line_no, format!("bad section header `{line}`")))?;
            params.push((k.to_string(), v.to_string()));
            continue;
        }
        in_header = false;
        let (k, v) = split_field(line)
            .ok_or_else(|| parse_err(line_no, format!("expected `Field = value`, got `{line}`")))?;
        if k == "Count" {
            flush(&mut current, &params, &mut out)?;
            current = Some((line_no, vec![(k.to_string(), v.to_string())]));
        } else {
            match current.as_mut() {
                Some((_, fields)) => fields.push((k.to_string(), v.to_string())),
                None => return Err(parse_err(line_no, format!("field `{k}` before any Count"))),
            }
        }
    }
    flush(&mut current, &params, &mut out)?;
    Ok(out)
}

fn split_field(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn parse_err(line: usize, msg: String) -> VectorError {
    VectorError::Parse { line, msg }
}

fn build_vector(
    line: usize,
    params: &[(String, String)],
    fields: &[(String, String)],
) -> Result<GcmVector, VectorError> {
    let get = |name: &str| -> Result<Vec<u8>, VectorError> {
        let v = fields
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| parse_err(line, format!("missing field `{name}`")))?;
        hex::decode(v).map_err(|e| parse_err(line, format!("field `{name}`: {e}")))
    };
    let mut name: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let count = fields.iter().find(|(k, _)| k == "Count").map(|(_, v)| v.clone()).unwrap_or_default();
    name.push(format!("Count={count}"));
    Ok(GcmVector {
        name: name.join("/"),
        key: get("Key")?,
        iv: get("IV")?,
        pt: get("PT")?,
        aad: get("AAD")?,
        ct: get("CT")?,
        tag: get("Tag")?,
    })
}

/// Runs every vector in `text`: encrypts `PT` under `Key/IV/AAD` and compares
/// both ciphertext and tag.
pub fn run_vectors(text: &str) -> Result<SelfTestReport, VectorError> {
    let mut report = SelfTestReport::default();
    for v in parse_vectors(text)? {
        let (key, iv) = match (SymmetricKey::from_bytes(&v.key), <[u8; 12]>::try_from(v.iv.as_slice())) {
            (Ok(k), Ok(iv)) if v.tag.len() == 16 => (k, iv),
            _ => {
                report.skipped.push(v.name);
                continue;
            }
        };
        let cipher = GcmCipher::new(&key);
        let nonce = Nonce::from_iv(iv);
        let (ct, tag) = match cipher.encrypt_standard(nonce, &v.aad, &v.pt) {
            Ok(r) => r,
            Err(_) => {
                report.skipped.push(v.name);
                continue;
            }
        };
        let expected = MacTag(v.tag.as_slice().try_into().expect("16-byte tag"));
        let ct_ok = ct == v.ct;
        if ct_ok && tag.ct_eq(&expected) {
            report.passed.push(v.name);
        } else {
            report.failed.push(VectorFailure {
                name: v.name,
                expected_tag: hex::encode(v.tag),
                actual_tag: hex::encode(tag.0),
                ciphertext_matches: ct_ok,
            });
        }
    }
    Ok(report)
}

/// Runs the vectors from `path`, or the bundled set when `path` is `None`.
pub fn crypto_self_test(path: Option<&Path>) -> Result<SelfTestReport, VectorError> {
    match path {
        None => run_vectors(BUNDLED_VECTORS),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| VectorError::Io {
                path: p.display().to_string(),
                source,
            })?;
            run_vectors(&text)
        }
    }
}
