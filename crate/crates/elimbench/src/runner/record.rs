//! Run records and the completion cache.
//!
//! The cache is an append-only line-delimited file keyed by
//! `(backend id, prompt hash, params hash, attempt)`; interrupted runs
//! resume from it and completed runs replay without touching the backend.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, CompletionBackend, GenParams, ModelResponse, TokenUsage};
use crate::corpus::Question;
use crate::hashing::sha256_hex;
use crate::iterative::EliminationTrace;
use crate::parsing::{ParseStatus, Prediction};
use crate::prompting::{Mode, Strategy};
use crate::runner::RunnerError;

/// One prompt/completion exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub question_id: String,
    pub strategy: Strategy,
    pub mode: Mode,
    pub repeat: usize,
    /// Remaining-choice count for iterative cells; absent otherwise.
    pub width: Option<usize>,
    pub prompt_hash: String,
    pub raw_completion: String,
    pub prediction: Prediction,
}

impl Transcript {
    pub fn sort_key(&self) -> (String, Strategy, Mode, usize, usize) {
        (
            self.question_id.clone(),
            self.strategy,
            self.mode,
            self.repeat,
            self.width.unwrap_or(0),
        )
    }
}

/// Everything one experiment produced. `canonical_bytes` zeroes the wall
/// clock fields so identical experiments compare byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub dataset_name: String,
    pub backend_id: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub complete: bool,
    pub incomplete_reason: Option<String>,
    pub parse_failure_rate: f64,
    pub lint_warnings: Vec<String>,
    /// The exact (reduced) questions evaluated, for downstream scoring.
    pub eval_questions: Vec<Question>,
    pub transcripts: Vec<Transcript>,
    pub traces: Vec<EliminationTrace>,
}

impl RunRecord {
    pub fn parse_failure_rate_of(transcripts: &[Transcript]) -> f64 {
        if transcripts.is_empty() {
            return 0.0;
        }
        let failures = transcripts
            .iter()
            .filter(|t| t.prediction.parse_status != ParseStatus::Ok)
            .count();
        failures as f64 / transcripts.len() as f64
    }

    /// Serialization with volatile timestamp fields zeroed; two runs of the
    /// same config against a deterministic backend agree on these bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut clone = self.clone();
        clone.started_unix = 0;
        clone.finished_unix = 0;
        serde_json::to_vec_pretty(&clone).expect("record serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), RunnerError> {
        let bytes = serde_json::to_vec_pretty(self).expect("record serializes");
        std::fs::write(path, bytes).map_err(|source| RunnerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let bytes = std::fs::read(path).map_err(|source| RunnerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| RunnerError::Corrupt {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Transcripts of one cell at one repeat, excluding iterative widths.
    pub fn cell_predictions(
        &self,
        strategy: Strategy,
        mode: Mode,
        repeat: usize,
    ) -> Vec<&Prediction> {
        self.transcripts
            .iter()
            .filter(|t| {
                t.strategy == strategy && t.mode == mode && t.repeat == repeat && t.width.is_none()
            })
            .map(|t| &t.prediction)
            .collect()
    }

    pub fn max_repeat(&self, strategy: Strategy, mode: Mode) -> Option<usize> {
        self.transcripts
            .iter()
            .filter(|t| t.strategy == strategy && t.mode == mode && t.width.is_none())
            .map(|t| t.repeat)
            .max()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    text: String,
}

/// Append-only completion cache.
pub struct CompletionCache {
    entries: HashMap<String, String>,
    writer: Option<BufWriter<File>>,
    path: PathBuf,
}

pub fn cache_key(backend_id: &str, prompt_hash: &str, params_hash: &str, attempt: usize) -> String {
    sha256_hex(format!("{backend_id}\n{prompt_hash}\n{params_hash}\n{attempt}").as_bytes())
}

pub fn params_hash(params: &GenParams) -> String {
    sha256_hex(&serde_json::to_vec(params).expect("params serialize"))
}

impl CompletionCache {
    /// Opens (or creates) the cache file, loading any prior entries.
    /// A torn trailing line from an interrupted run is skipped.
    pub fn open(path: &Path) -> Result<Self, RunnerError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|source| RunnerError::Io {
                path: path.display().to_string(),
                source,
            })?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|source| RunnerError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.text);
                    }
                    Err(_) => {
                        eprintln!(
                            "warning: skipping malformed cache line in {}",
                            path.display()
                        );
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| RunnerError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(CompletionCache {
            entries,
            writer: Some(BufWriter::new(file)),
            path: path.to_path_buf(),
        })
    }

    /// An in-memory cache that never persists (for tests and examples).
    pub fn ephemeral() -> Self {
        CompletionCache {
            entries: HashMap::new(),
            writer: None,
            path: PathBuf::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn record(&mut self, key: String, text: String) -> Result<(), RunnerError> {
        if let Some(writer) = &mut self.writer {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                text: text.clone(),
            })
            .expect("cache line serializes");
            writeln!(writer, "{line}").and_then(|()| writer.flush()).map_err(|source| {
                RunnerError::Io {
                    path: self.path.display().to_string(),
                    source,
                }
            })?;
        }
        self.entries.insert(key, text);
        Ok(())
    }
}

/// A backend view that consults the shared cache before the network. The
/// attempt index separates repeated inferences of the same prompt.
pub struct CachedBackend<'a> {
    inner: &'a dyn CompletionBackend,
    cache: &'a Mutex<CompletionCache>,
    params_hash: String,
    attempt: usize,
}

impl<'a> CachedBackend<'a> {
    pub fn new(
        inner: &'a dyn CompletionBackend,
        cache: &'a Mutex<CompletionCache>,
        params: &GenParams,
        attempt: usize,
    ) -> Self {
        CachedBackend {
            inner,
            cache,
            params_hash: params_hash(params),
            attempt,
        }
    }
}

impl CompletionBackend for CachedBackend<'_> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn complete(&self, prompt: &str, params: &GenParams) -> Result<ModelResponse, BackendError> {
        let prompt_hash = sha256_hex(prompt.as_bytes());
        let key = cache_key(
            &self.inner.backend_id(),
            &prompt_hash,
            &self.params_hash,
            self.attempt,
        );
        if let Some(text) = self.cache.lock().unwrap().lookup(&key) {
            return Ok(ModelResponse {
                text: text.to_string(),
                label_probs: None,
                latency_ms: 0.0,
                token_usage: TokenUsage::default(),
                backend_id: self.inner.backend_id(),
            });
        }
        let resp = self.inner.complete(prompt, params)?;
        self.cache
            .lock()
            .unwrap()
            .record(key, resp.text.clone())
            .map_err(|e| BackendError::Permanent(format!("cache write failed: {e}")))?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockPolicy};

    #[test]
    fn cache_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cache.jsonl");
        {
            let mut cache = CompletionCache::open(&path).unwrap();
            cache.record("k1".into(), "hello".into()).unwrap();
            cache.record("k2".into(), "world".into()).unwrap();
        }
        let cache = CompletionCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.lookup("k1"), Some("hello"));
    }

    #[test]
    fn cache_skips_torn_trailing_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cache.jsonl");
        std::fs::write(
            &path,
            "{\"key\":\"k1\",\"text\":\"ok\"}\n{\"key\":\"k2\",\"tex",
        )
        .unwrap();
        let cache = CompletionCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.lookup("k1"), Some("ok"));
    }

    #[test]
    fn cached_backend_skips_the_network_on_hit() {
        let q = Question::new("q", "Binary item: which?", vec!["x".into(), "y".into()], 0)
            .unwrap();
        let mock = MockBackend::new("t", MockPolicy::oracle(), std::slice::from_ref(&q));
        let cache = Mutex::new(CompletionCache::ephemeral());
        let params = GenParams::default();
        let cached = CachedBackend::new(&mock, &cache, &params, 0);
        let prompt = crate::prompting::build_prompt(
            &crate::prompting::StrategyConfig::zero_shot(Strategy::DirectAnswer, Mode::Base),
            &q,
        )
        .unwrap();
        let a = cached.complete(&prompt, &params).unwrap();
        let b = cached.complete(&prompt, &params).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(mock.calls(), 1, "second call was served from cache");
        // a different attempt index is a different cache cell
        let cached1 = CachedBackend::new(&mock, &cache, &params, 1);
        cached1.complete(&prompt, &params).unwrap();
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn canonical_bytes_ignore_timestamps() {
        let record = RunRecord {
            config_hash: "h".into(),
            dataset_name: "d".into(),
            backend_id: "b".into(),
            started_unix: 100,
            finished_unix: 200,
            complete: true,
            incomplete_reason: None,
            parse_failure_rate: 0.0,
            lint_warnings: vec![],
            eval_questions: vec![],
            transcripts: vec![],
            traces: vec![],
        };
        let mut later = record.clone();
        later.started_unix = 999;
        later.finished_unix = 1999;
        assert_eq!(record.canonical_bytes(), later.canonical_bytes());
    }
}
