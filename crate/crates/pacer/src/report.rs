//! Report files: CSV tables, the long-format table, text summaries, decode
//! traces and run manifests.
//!
//! Everything except `timing.json` is a pure function of the inputs, so a
//! rerun with the same configuration writes byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pacer_core::lm::ByteTokenizer;
use pacer_core::{BenchReport, Generation};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// One configuration row of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// Row label, e.g. the policy or the swept value.
    pub config: String,
    pub policy: String,
    pub gamma: String,
    pub block: String,
    pub threshold: String,
    pub growth: String,
    pub criterion: String,
    pub scope: String,
    pub steps: usize,
    pub tokens: usize,
    pub accepted: usize,
    pub tau: f64,
    pub mean_gamma: f64,
    pub draft_forwards: usize,
    pub target_forwards: usize,
    pub preverify_forwards: usize,
    pub sim_ms: f64,
    pub tokens_per_s: f64,
    pub speedup: f64,
    pub share_draft: f64,
    pub share_target: f64,
    pub share_preverify: f64,
}

impl BenchRow {
    /// Row for `cfg`'s policy; knobs that do not apply are left empty.
    pub fn new(config: impl Into<String>, cfg: &RunConfig, policy: &str, gamma: Option<usize>, r: &BenchReport) -> Self {
        let pacer = policy == "pacer";
        let opt = |b: bool, s: String| if b { s } else { String::new() };
        Self {
            config: config.into(),
            policy: policy.to_string(),
            gamma: gamma.map(|g| g.to_string()).unwrap_or_default(),
            block: opt(pacer, cfg.block_size.to_string()),
            threshold: opt(pacer, cfg.threshold.to_string()),
            growth: opt(pacer, cfg.growth.to_string()),
            criterion: opt(pacer, cfg.halt().criterion.as_str().to_string()),
            scope: opt(pacer, cfg.scope_kind().as_str().to_string()),
            steps: r.steps,
            tokens: r.tokens,
            accepted: r.accepted,
            tau: r.tau,
            mean_gamma: r.mean_gamma,
            draft_forwards: r.draft_forwards,
            target_forwards: r.target_forwards,
            preverify_forwards: r.preverify_forwards,
            sim_ms: r.time_ms,
            tokens_per_s: r.tokens_per_s,
            speedup: r.speedup,
            share_draft: r.share_draft,
            share_target: r.share_target,
            share_preverify: r.share_preverify,
        }
    }
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `(table, row, column, value)` for every cell of every CSV table.
pub fn long_format(tables: &[(String, PathBuf)]) -> CliResult<Vec<[String; 4]>> {
    let mut out = Vec::new();
    for (name, path) in tables {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let headers = r.headers().map_err(|e| CliError::runtime(e.to_string()))?.clone();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
            for (h, v) in headers.iter().zip(rec.iter()) {
                if !v.is_empty() {
                    out.push([name.clone(), i.to_string(), h.to_string(), v.to_string()]);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_long(path: &Path, tables: &[(String, PathBuf)]) -> CliResult<()> {
    let rows = long_format(tables)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    w.write_record(["table", "row", "column", "value"]).map_err(|e| CliError::runtime(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Structured `key: value` summary of a report.
pub fn summary_lines(label: &str, r: &BenchReport) -> String {
    format!(
        "[{label}]\n\
         tokens: {}\nsteps: {}\ntau: {:.4}\nmean_gamma: {:.4}\n\
         draft_forwards: {}\ntarget_forwards: {}\npreverify_forwards: {}\n\
         sim_ms: {:.2}\ntokens_per_s: {:.4}\nspeedup: {:.4}\n\
         share_draft: {:.4}\nshare_target: {:.4}\nshare_preverify: {:.4}\n",
        r.tokens,
        r.steps,
        r.tau,
        r.mean_gamma,
        r.draft_forwards,
        r.target_forwards,
        r.preverify_forwards,
        r.time_ms,
        r.tokens_per_s,
        r.speedup,
        r.share_draft,
        r.share_target,
        r.share_preverify,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TraceRecord {
    pub prompt: usize,
    pub step: usize,
    pub gamma: usize,
    pub rounds: usize,
    pub accepted: usize,
    pub emitted: Vec<u32>,
    pub text: String,
    pub draft_forwards: usize,
    pub target_forwards: usize,
    pub preverify_forwards: usize,
}

/// One JSON line per decode step.
pub fn trace_jsonl(gens: &[Generation], tok: &ByteTokenizer) -> CliResult<String> {
    let mut out = String::new();
    for (i, g) in gens.iter().enumerate() {
        for (r, toks) in g.records.iter().zip(&g.step_tokens) {
            let rec = TraceRecord {
                prompt: i,
                step: r.step,
                gamma: r.gamma,
                rounds: r.rounds,
                accepted: r.accepted,
                emitted: toks.iter().map(|t| t.0).collect(),
                text: tok.decode(toks),
                draft_forwards: r.draft_forwards,
                target_forwards: r.target_forwards,
                preverify_forwards: r.preverify_forwards,
            };
            out.push_str(&serde_json::to_string(&rec).map_err(|e| CliError::runtime(e.to_string()))?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn parse_trace(text: &str) -> CliResult<Vec<TraceRecord>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::runtime(format!("bad trace line: {e}"))))
        .collect()
}

/// Provenance written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name → SHA-256 of each model or dataset used or produced.
    pub checksums: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig) -> CliResult<Self> {
        let versions = [
            ("pacer", env!("CARGO_PKG_VERSION").to_string()),
            ("checkpoint_format", crate::checkpoint::FORMAT_VERSION.to_string()),
            ("dataset_format", crate::dataset::FORMAT_VERSION.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Ok(Self {
            command: cfg.command.clone(),
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            checksums: BTreeMap::new(),
            versions,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::runtime(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

/// Output directory of one command, tracking every file written.
#[derive(Debug)]
pub struct OutDir {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl OutDir {
    pub fn create(cfg: &RunConfig) -> CliResult<Self> {
        fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
        Ok(Self { dir: cfg.out.clone(), manifest: Manifest::new(cfg)? })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_csv(&p, rows)?;
        Ok(p)
    }

    pub fn checksum(&mut self, name: &str, sha256: String) {
        self.manifest.checksums.insert(name.to_string(), sha256);
    }

    pub fn finish(self) -> CliResult<()> {
        self.manifest.write(&self.dir)
    }
}

/// Wall-clock measurements; the one output that is allowed to vary.
pub fn write_timing(dir: &Path, entries: &[(&str, f64)]) -> CliResult<()> {
    let map: BTreeMap<&str, f64> = entries.iter().copied().collect();
    let path = dir.join("timing.json");
    let text = serde_json::to_string_pretty(&map).map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pacer_core::metrics::simulate_cost;
    use pacer_core::{CostModel, StepRecord};

    fn report() -> BenchReport {
        let r = StepRecord { gamma: 4, rounds: 1, accepted: 2, emitted: 3, draft_forwards: 4, target_forwards: 1, ..StepRecord::default() };
        simulate_cost(&[r, r], &CostModel::default()).unwrap()
    }

    #[test]
    fn csv_and_long_format_agree() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let rows = vec![BenchRow::new("g4", &cfg, "fixed", Some(4), &report())];
        let p = dir.path().join("bench.csv");
        write_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("config,policy,gamma,block,"));
        let long = long_format(&[("bench".into(), p)]).unwrap();
        assert!(long.iter().any(|r| r[2] == "tokens" && r[3] == "6"));
        assert!(long.iter().all(|r| r[2] != "block"));
    }

    #[test]
    fn trace_lines_parse() {
        let tok = ByteTokenizer::fit(b"ab");
        let rec = StepRecord { gamma: 2, rounds: 1, accepted: 1, emitted: 2, draft_forwards: 2, target_forwards: 1, ..StepRecord::default() };
        let g = Generation {
            tokens: vec![pacer_core::TokenId(0), pacer_core::TokenId(1)],
            records: vec![rec],
            step_tokens: vec![vec![pacer_core::TokenId(0), pacer_core::TokenId(1)]],
        };
        let t = parse_trace(&trace_jsonl(&[g], &tok).unwrap()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].gamma, t[0].text.as_str()), (2, "ab"));
    }

    #[test]
    fn summary_names_every_field() {
        let s = summary_lines("x", &report());
        for k in ["tau:", "tokens_per_s:", "speedup:", "share_preverify:"] {
            assert!(s.contains(k));
        }
    }
}
