//! Corpus and prompt loading.
//!
//! A corpus is UTF-8 text, either plain or one JSON object per line with a
//! `"text"` field. The bundled corpus is about 100 KiB of synthetic
//! Python-like source.

use std::fs;
use std::path::Path;

use pacer_core::rng::{stream, Stream};
use pacer_core::TokenId;
use rand::seq::SliceRandom;

use crate::error::{CliError, CliResult};

pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.txt");

/// Reads a corpus file, or the bundled corpus when `path` is `None`.
pub fn load_corpus(path: Option<&Path>) -> CliResult<String> {
    let Some(path) = path else {
        return Ok(BUNDLED_CORPUS.to_string());
    };
    let records = read_records(path, "corpus")?;
    let text = records.join("\n");
    if text.is_empty() {
        return Err(CliError::config(format!("corpus is empty: {}", path.display())));
    }
    Ok(text)
}

/// Reads prompts: JSONL with a `"text"` field, or one prompt per line.
pub fn load_prompts(path: &Path) -> CliResult<Vec<String>> {
    let prompts: Vec<String> = read_records(path, "prompt file")?.into_iter().filter(|p| !p.is_empty()).collect();
    if prompts.is_empty() {
        return Err(CliError::config(format!("no prompts in {}", path.display())));
    }
    Ok(prompts)
}

fn read_records(path: &Path, what: &str) -> CliResult<Vec<String>> {
    if !path.exists() {
        return Err(CliError::missing(what, path));
    }
    let raw = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl")
        || raw.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.trim_start().starts_with('{'));
    if !jsonl {
        return Ok(raw.lines().map(str::to_string).collect());
    }
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: serde_json::Value = serde_json::from_str(l)
                .map_err(|e| CliError::config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            v.get("text")
                .and_then(|t| t.as_str())
                .map(str::to_string)
                .ok_or_else(|| CliError::config(format!("{}:{}: missing \"text\" field", path.display(), i + 1)))
        })
        .collect()
}

/// Writes prompts as JSONL.
pub fn prompts_to_jsonl(prompts: &[String]) -> String {
    prompts.iter().map(|p| serde_json::json!({ "text": p }).to_string() + "\n").collect()
}

/// Boundary between the training part and the held-out tail, matching the
/// split used by language-model training.
pub fn heldout_start(len: usize, heldout_frac: f64) -> usize {
    len - (len as f64 * heldout_frac) as usize
}

/// Draws `count` prompts of `len` tokens that start at line beginnings
/// inside `tokens[lo..hi]`, leaving `room` tokens after each prompt.
///
/// Selection uses the `Data` sub-stream of `seed`; prompts are distinct
/// while enough starts exist.
pub fn sample_prompts(
    tokens: &[TokenId],
    newline: Option<TokenId>,
    lo: usize,
    hi: usize,
    count: usize,
    len: usize,
    room: usize,
    seed: u64,
) -> CliResult<Vec<Vec<TokenId>>> {
    let hi = hi.min(tokens.len());
    let mut starts: Vec<usize> = (lo..hi.saturating_sub(len + room))
        .filter(|&i| i == 0 || newline.is_none_or(|nl| tokens[i - 1] == nl))
        .collect();
    if starts.is_empty() || len == 0 {
        return Err(CliError::config(format!("no room for prompts of {len} tokens in [{lo}, {hi})")));
    }
    let mut rng = stream(seed, Stream::Data);
    starts.shuffle(&mut rng);
    Ok((0..count).map(|i| tokens[starts[i % starts.len()]..][..len].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_is_about_100_kib() {
        assert!((90_000..130_000).contains(&BUNDLED_CORPUS.len()));
        assert!(BUNDLED_CORPUS.is_ascii());
    }

    #[test]
    fn jsonl_and_plain_text() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("c.jsonl");
        fs::write(&j, "{\"text\": \"ab\"}\n\n{\"text\": \"c\\nd\"}\n").unwrap();
        assert_eq!(load_corpus(Some(&j)).unwrap(), "ab\nc\nd");
        let t = dir.path().join("c.txt");
        fs::write(&t, "x = 1\ny = 2\n").unwrap();
        assert_eq!(load_corpus(Some(&t)).unwrap(), "x = 1\ny = 2");
        assert_eq!(load_prompts(&t).unwrap(), vec!["x = 1", "y = 2"]);
        let bad = dir.path().join("b.jsonl");
        fs::write(&bad, "{\"body\": 1}\n").unwrap();
        assert!(matches!(load_corpus(Some(&bad)), Err(CliError::Config(_))));
    }

    #[test]
    fn missing_path_is_a_config_error_naming_it() {
        let p = Path::new("/nonexistent/corpus.txt");
        let e = load_corpus(Some(p)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("/nonexistent/corpus.txt"));
    }

    #[test]
    fn prompts_start_after_newlines_and_are_seeded() {
        let toks: Vec<TokenId> = b"ab\ncd\nef\ngh\nij\n".iter().map(|&b| TokenId(b as u32)).collect();
        let nl = Some(TokenId(b'\n' as u32));
        let a = sample_prompts(&toks, nl, 0, toks.len(), 3, 2, 1, 9).unwrap();
        assert_eq!(a, sample_prompts(&toks, nl, 0, toks.len(), 3, 2, 1, 9).unwrap());
        for p in &a {
            assert_ne!(p[0], TokenId(b'\n' as u32));
        }
        assert!(sample_prompts(&toks, nl, 0, 3, 1, 8, 0, 9).is_err());
    }

    #[test]
    fn jsonl_prompts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        let prompts = vec!["def f(x):\n    ".to_string(), "y = \"q\"".to_string()];
        fs::write(&p, prompts_to_jsonl(&prompts)).unwrap();
        assert_eq!(load_prompts(&p).unwrap(), prompts);
    }
}
