//! Labeled pre-verifier training data on disk.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic "PACERDS\0" | version u32 | hidden width u32 | gamma_train u32 | trace count u32
//! per trace:
//!   prompt: len u32, tokens u32..
//!   response: len u32, tokens u32..
//!   context hidden: rows u32, rows × width f32
//!   steps: count u32; per step: prefix_len u32, n u32, tokens u32 × n,
//!          labels u8 × n, hidden f32 × n × width
//! ```
//!
//! A JSON manifest next to it records counts, model checksums, `γ_train` and
//! the seed.

use std::fs;
use std::path::Path;

use pacer_core::train::{LabeledDraftStep, PromptTrace};
use pacer_core::{HiddenVec, TokenId};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{sha256_hex, Reader};
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"PACERDS\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub hidden_size: usize,
    pub gamma_train: usize,
    pub traces: Vec<PromptTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub traces: usize,
    pub steps: usize,
    pub positions: usize,
    pub accepted_positions: usize,
    pub hidden_size: usize,
    pub gamma_train: usize,
    pub seed: u64,
    pub target_sha256: String,
    pub draft_sha256: String,
    pub sha256: String,
}

impl Dataset {
    pub fn positions(&self) -> usize {
        self.traces.iter().flat_map(|t| &t.steps).map(|s| s.drafts.len()).sum()
    }

    pub fn accepted_positions(&self) -> usize {
        self.traces.iter().flat_map(|t| &t.steps).map(|s| s.accepted()).sum()
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let d = self.hidden_size;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION as usize)?;
        w.u32(d)?;
        w.u32(self.gamma_train)?;
        w.u32(self.traces.len())?;
        for t in &self.traces {
            w.tokens(&t.prompt)?;
            w.tokens(&t.response)?;
            w.u32(t.context_hidden.len())?;
            for h in &t.context_hidden {
                w.hidden(h, d)?;
            }
            w.u32(t.steps.len())?;
            for s in &t.steps {
                if s.labels.len() != s.drafts.len() || s.hidden.len() != s.drafts.len() {
                    return Err(CliError::runtime("step with mismatched drafts, labels and hidden states"));
                }
                w.u32(s.prefix_len)?;
                w.tokens(&s.drafts)?;
                w.0.extend_from_slice(&s.labels);
                for h in &s.hidden {
                    w.hidden(h, d)?;
                }
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(CliError::runtime("not a dataset (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CliError::runtime(format!("unsupported dataset version {version}")));
        }
        let d = r.u32()? as usize;
        let gamma_train = r.u32()? as usize;
        let n = r.u32()? as usize;
        let tokens = |r: &mut Reader<'_>| -> CliResult<Vec<TokenId>> {
            let len = r.u32()? as usize;
            (0..len).map(|_| r.u32().map(TokenId)).collect()
        };
        let hidden = |r: &mut Reader<'_>| -> CliResult<HiddenVec> { Ok(HiddenVec((0..d).map(|_| r.f32()).collect::<CliResult<_>>()?)) };
        let mut traces = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let prompt = tokens(&mut r)?;
            let response = tokens(&mut r)?;
            let rows = r.u32()? as usize;
            let context_hidden = (0..rows).map(|_| hidden(&mut r)).collect::<CliResult<_>>()?;
            let count = r.u32()? as usize;
            let mut steps = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                let prefix_len = r.u32()? as usize;
                let drafts = tokens(&mut r)?;
                let labels = r.take(drafts.len())?.to_vec();
                if labels.iter().any(|l| *l > 1) {
                    return Err(CliError::runtime("labels must be 0 or 1"));
                }
                let hs = (0..drafts.len()).map(|_| hidden(&mut r)).collect::<CliResult<_>>()?;
                steps.push(LabeledDraftStep { prefix_len, drafts, labels, hidden: hs });
            }
            traces.push(PromptTrace { prompt, response, steps, context_hidden });
        }
        if r.at != bytes.len() {
            return Err(CliError::runtime("trailing bytes after the last trace"));
        }
        Ok(Self { hidden_size: d, gamma_train, traces })
    }

    /// Writes `path` and `<path>.json`; returns the manifest.
    pub fn save(&self, path: &Path, seed: u64, target_sha256: &str, draft_sha256: &str) -> CliResult<DatasetManifest> {
        let bytes = self.to_bytes()?;
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            traces: self.traces.len(),
            steps: self.traces.iter().map(|t| t.steps.len()).sum(),
            positions: self.positions(),
            accepted_positions: self.accepted_positions(),
            hidden_size: self.hidden_size,
            gamma_train: self.gamma_train,
            seed,
            target_sha256: target_sha256.to_string(),
            draft_sha256: draft_sha256.to_string(),
            sha256: sha256_hex(&bytes),
        };
        fs::write(path, &bytes).map_err(|e| CliError::io(path, e))?;
        let mp = path.with_extension("json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::runtime(e.to_string()))?;
        fs::write(&mp, text + "\n").map_err(|e| CliError::io(&mp, e))?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::missing("dataset", path));
        }
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, n: usize) -> CliResult<()> {
        let v = u32::try_from(n).map_err(|_| CliError::runtime(format!("{n} does not fit in 32 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn tokens(&mut self, t: &[TokenId]) -> CliResult<()> {
        self.u32(t.len())?;
        for x in t {
            self.0.extend_from_slice(&x.0.to_le_bytes());
        }
        Ok(())
    }

    fn hidden(&mut self, h: &HiddenVec, d: usize) -> CliResult<()> {
        if h.len() != d {
            return Err(CliError::runtime(format!("hidden width {} differs from dataset width {d}", h.len())));
        }
        for x in h.as_slice() {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
        Ok(())
    }
}
