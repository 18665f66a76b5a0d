//! Versioned binary checkpoints with a JSON sidecar.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "PACERCK\0" | version u32 | kind u8
//! vocab u32 | layers u32 | d_model u32 | heads u32 | context u32 | order u32 | seed u64
//! max_positions u32 | encoding u8
//! alphabet_len u32 | alphabet bytes
//! tensor_count u32 | per tensor: name_len u16, name, ndim u8, dims u32.., f32 data
//! ```
//!
//! The sidecar `<name>.json` repeats the header fields in readable form
//! together with the tensor shapes and the SHA-256 of the binary file.

use std::fs;
use std::path::{Path, PathBuf};

use pacer_core::lm::ByteTokenizer;
use pacer_core::pacer::{PositionEncoding, PreVerifier};
use pacer_core::params::{ParamStore, Tensor};
use pacer_core::{ModelKind, ModelSpec, Transformer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"PACERCK\0";
pub const FORMAT_VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    /// Position-table rows; 0 for language models.
    pub max_positions: usize,
    pub encoding: Option<PositionEncoding>,
    /// Tokenizer alphabet; empty for pre-verifiers.
    pub alphabet: Vec<u8>,
    pub params: ParamStore,
}

/// Readable mirror of the binary header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub kind: String,
    pub vocab_size: usize,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub context_len: usize,
    pub order: usize,
    pub seed: u64,
    pub max_positions: usize,
    pub encoding: Option<String>,
    pub alphabet: String,
    pub num_params: usize,
    pub tensors: Vec<(String, Vec<usize>)>,
    pub sha256: String,
}

fn kind_code(k: ModelKind) -> u8 {
    match k {
        ModelKind::Transformer => 0,
        ModelKind::Tabular => 1,
        ModelKind::PreVerifier => 2,
    }
}

fn kind_from(c: u8) -> CliResult<ModelKind> {
    match c {
        0 => Ok(ModelKind::Transformer),
        1 => Ok(ModelKind::Tabular),
        2 => Ok(ModelKind::PreVerifier),
        _ => Err(CliError::runtime(format!("unknown model kind {c}"))),
    }
}

fn u32_of(n: usize) -> CliResult<u32> {
    u32::try_from(n).map_err(|_| CliError::runtime(format!("{n} does not fit in 32 bits")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(64 + 4 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(kind_code(s.kind));
        for n in [s.vocab_size, s.layers, s.d_model, s.heads, s.context_len, s.order] {
            out.extend_from_slice(&u32_of(n)?.to_le_bytes());
        }
        out.extend_from_slice(&s.seed.to_le_bytes());
        out.extend_from_slice(&u32_of(self.max_positions)?.to_le_bytes());
        out.push(match self.encoding {
            None => 0,
            Some(PositionEncoding::Learned) => 1,
            Some(PositionEncoding::Sinusoidal) => 2,
        });
        out.extend_from_slice(&u32_of(self.alphabet.len())?.to_le_bytes());
        out.extend_from_slice(&self.alphabet);
        out.extend_from_slice(&u32_of(self.params.tensors.len())?.to_le_bytes());
        for t in &self.params.tensors {
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| CliError::runtime("tensor name too long"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(u8::try_from(t.shape.len()).map_err(|_| CliError::runtime("tensor rank too large"))?);
            for &d in &t.shape {
                out.extend_from_slice(&u32_of(d)?.to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(CliError::runtime("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CliError::runtime(format!("unsupported checkpoint version {version}")));
        }
        let kind = kind_from(r.u8()?)?;
        let mut f = [0usize; 6];
        for x in &mut f {
            *x = r.u32()? as usize;
        }
        let seed = r.u64()?;
        let spec = ModelSpec {
            kind,
            vocab_size: f[0],
            layers: f[1],
            d_model: f[2],
            heads: f[3],
            context_len: f[4],
            order: f[5],
            seed,
        };
        let max_positions = r.u32()? as usize;
        let encoding = match r.u8()? {
            0 => None,
            1 => Some(PositionEncoding::Learned),
            2 => Some(PositionEncoding::Sinusoidal),
            c => return Err(CliError::runtime(format!("unknown position encoding {c}"))),
        };
        let alen = r.u32()? as usize;
        let alphabet = r.take(alen)?.to_vec();
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| CliError::runtime("tensor name is not UTF-8"))?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<CliResult<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| CliError::runtime("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params.tensors.push(Tensor { name, shape, data });
        }
        if r.at != bytes.len() {
            return Err(CliError::runtime("trailing bytes after the last tensor"));
        }
        Ok(Self { spec, max_positions, encoding, alphabet, params })
    }

    pub fn sidecar(&self, sha256: String) -> Sidecar {
        let s = &self.spec;
        Sidecar {
            format_version: FORMAT_VERSION,
            kind: s.kind.as_str().to_string(),
            vocab_size: s.vocab_size,
            layers: s.layers,
            d_model: s.d_model,
            heads: s.heads,
            context_len: s.context_len,
            order: s.order,
            seed: s.seed,
            max_positions: self.max_positions,
            encoding: self.encoding.map(|e| e.as_str().to_string()),
            alphabet: String::from_utf8_lossy(&self.alphabet).into_owned(),
            num_params: self.params.num_params(),
            tensors: self.params.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect(),
            sha256,
        }
    }

    /// Writes the binary file and its sidecar; returns the binary's SHA-256.
    pub fn save(&self, path: &Path) -> CliResult<String> {
        let bytes = self.to_bytes()?;
        let digest = sha256_hex(&bytes);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, &bytes).map_err(|e| CliError::io(path, e))?;
        let side = serde_json::to_string_pretty(&self.sidecar(digest.clone())).map_err(|e| CliError::runtime(e.to_string()))?;
        let sp = sidecar_path(path);
        fs::write(&sp, side + "\n").map_err(|e| CliError::io(&sp, e))?;
        Ok(digest)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::missing("checkpoint", path));
        }
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    }

    pub fn from_lm(model: &Transformer, tok: &ByteTokenizer) -> Self {
        Self {
            spec: *model.spec(),
            max_positions: 0,
            encoding: None,
            alphabet: tok.alphabet().to_vec(),
            params: model.params().clone(),
        }
    }

    pub fn from_pv(pv: &PreVerifier) -> Self {
        Self {
            spec: *pv.spec(),
            max_positions: pv.max_positions(),
            encoding: Some(pv.encoding()),
            alphabet: Vec::new(),
            params: pv.params().clone(),
        }
    }

    pub fn into_lm(self) -> CliResult<(Transformer, ByteTokenizer)> {
        if self.spec.kind != ModelKind::Transformer {
            return Err(CliError::config(format!("expected a transformer checkpoint, found {}", self.spec.kind.as_str())));
        }
        let tok = ByteTokenizer::from_alphabet(self.alphabet)?;
        Ok((Transformer::from_params(self.spec, self.params)?, tok))
    }

    pub fn into_pv(self) -> CliResult<PreVerifier> {
        if self.spec.kind != ModelKind::PreVerifier {
            return Err(CliError::config(format!("expected a preverifier checkpoint, found {}", self.spec.kind.as_str())));
        }
        let enc = self.encoding.ok_or_else(|| CliError::runtime("preverifier checkpoint without an encoding"))?;
        Ok(PreVerifier::from_params(self.spec, self.max_positions, enc, self.params)?)
    }
}

/// `target.ckpt` → `target.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn load_lm(path: &Path) -> CliResult<(Transformer, ByteTokenizer)> {
    Checkpoint::load(path)?.into_lm()
}

pub fn load_pv(path: &Path) -> CliResult<PreVerifier> {
    Checkpoint::load(path)?.into_pv()
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) at: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| CliError::runtime("truncated file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> CliResult<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> CliResult<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self) -> CliResult<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    pub(crate) fn f32(&mut self) -> CliResult<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
