//! Run persistence and the command layer behind the `pamem` binary.
//!
//! Every command writes its artifacts atomically (temp file + rename) and a
//! [`RunManifest`] naming them. Result files contain no timestamps, so two
//! runs with the same inputs and seed produce byte-identical JSONL and CSV;
//! only the manifest differs in its start and finish times.

mod commands;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lm::{NGramModel, ScoringBackend, TokenId, Vocabulary};
use crate::remote::{EndpointConfig, RemoteBackend, RemoteClient};

pub use commands::{
    cmd_audit, cmd_calibrate, cmd_counterfactual, cmd_report, cmd_targets, cmd_train, AuditArgs, AuditOutcome,
    CalibrateArgs, CounterfactualArgs, ReportArgs, SummaryRow, TargetFailure, TargetsArgs, TargetsKind,
    ThresholdSource, TrainArgs,
};

/// Write `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::io(format!("creating a temporary file in {}", dir.display()), e))?;
    std::io::Write::write_all(&mut tmp, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    tmp.persist(path).map_err(|e| Error::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(())
}

/// Hex SHA-256 of the canonical JSON form of `config`.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    // Round-trip through Value so that map keys come out sorted.
    let value = serde_json::to_value(config).expect("configuration serializes");
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub model_id: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// `ok` or `failed`.
    pub status: String,
    pub artifacts: Vec<PathBuf>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunManifest {
    /// A manifest whose id is derived from the command, configuration and
    /// seed, so identical runs share an id.
    pub fn start<T: Serialize>(command: &str, config: &T, seed: u64) -> Self {
        let config_digest = config_digest(config);
        let run_id = hex::encode(&Sha256::digest(format!("{command}\n{config_digest}\n{seed}").as_bytes())[..6]);
        RunManifest {
            run_id,
            command: command.to_string(),
            config_digest,
            seed,
            model_id: String::new(),
            started_unix: unix_now(),
            finished_unix: 0,
            status: "running".into(),
            artifacts: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Write `bytes` atomically and record the path.
    pub fn write_artifact(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.artifacts.push(path.to_path_buf());
        Ok(())
    }

    /// Stamp the finish time and status, then write the manifest itself.
    pub fn finish(&mut self, path: &Path, ok: bool) -> Result<()> {
        self.finished_unix = unix_now();
        self.status = if ok { "ok" } else { "failed" }.into();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// JSONL rendering: one compact JSON document per line.
pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// The scoring backend a command runs against.
pub enum Backend {
    Local(NGramModel),
    Remote(RemoteBackend),
}

impl ScoringBackend for Backend {
    fn model_id(&self) -> &str {
        match self {
            Backend::Local(m) => m.model_id(),
            Backend::Remote(r) => r.model_id(),
        }
    }

    fn continuation_logprobs(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        match self {
            Backend::Local(m) => m.continuation_logprobs(context, continuation),
            Backend::Remote(r) => r.continuation_logprobs(context, continuation),
        }
    }

    fn continuation_logprobs_batch(&self, requests: &[(&[TokenId], &[TokenId])]) -> Result<Vec<Vec<f64>>> {
        match self {
            Backend::Local(m) => m.continuation_logprobs_batch(requests),
            Backend::Remote(r) => r.continuation_logprobs_batch(requests),
        }
    }
}

/// Where scores come from: a saved model, or an endpoint plus the
/// vocabulary that maps its token ids to surfaces.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BackendArgs {
    pub model: Option<PathBuf>,
    #[serde(skip)]
    pub endpoint: Option<EndpointConfig>,
    /// Vocabulary for endpoints: a model JSON file or one surface per line.
    pub vocab: Option<PathBuf>,
}

impl BackendArgs {
    pub fn model(path: impl Into<PathBuf>) -> Self {
        BackendArgs { model: Some(path.into()), ..Default::default() }
    }

    /// Text identifying the backend in configuration digests.
    pub fn describe(&self) -> String {
        match (&self.model, &self.endpoint) {
            (Some(m), _) => format!("model:{}", m.display()),
            (None, Some(e)) => format!("endpoint:{}:{:?}", e.base_url, e.mode),
            _ => "none".into(),
        }
    }

    pub fn open(&self) -> Result<(Backend, Vocabulary)> {
        match (&self.model, &self.endpoint) {
            (Some(_), Some(_)) => Err(Error::Config("give either a model or an endpoint, not both".into())),
            (Some(path), None) => {
                let model = NGramModel::load(path)?;
                let vocab = model.vocab().clone();
                Ok((Backend::Local(model), vocab))
            }
            (None, Some(cfg)) => {
                let path = self
                    .vocab
                    .as_ref()
                    .ok_or_else(|| Error::Config("an endpoint needs --vocab to tokenize corpora".into()))?;
                let vocab = load_vocabulary(path)?;
                let backend = RemoteBackend::new(RemoteClient::new(cfg.clone())?, Some(vocab.clone()))?;
                Ok((Backend::Remote(backend), vocab))
            }
            (None, None) => Err(Error::Config("no model or endpoint given".into())),
        }
    }
}

/// Vocabulary from a model JSON file or a file with one surface per line.
pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(NGramModel::load(path)?.vocab().clone());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Vocabulary::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn digest_ignores_field_order() {
        let a = serde_json::json!({"a": 1, "b": [1, 2]});
        let b: serde_json::Value = serde_json::from_str(r#"{"b":[1,2],"a":1}"#).unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        let m1 = RunManifest::start("audit", &a, 3);
        let m2 = RunManifest::start("audit", &b, 3);
        assert_eq!(m1.run_id, m2.run_id);
        assert_ne!(m1.run_id, RunManifest::start("audit", &a, 4).run_id);
    }
}
