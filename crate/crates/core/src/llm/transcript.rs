//! Record live exchanges to JSON lines and replay them offline.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmClient, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: ChatRequest,
    pub response: String,
}

/// Forwards to an inner client and appends every successful exchange to a
/// JSON-lines transcript.
pub struct RecordingClient<C> {
    inner: C,
    path: PathBuf,
    log: Mutex<Vec<Exchange>>,
}

impl<C: LlmClient> RecordingClient<C> {
    /// Truncates any existing transcript at `path`.
    pub fn create(inner: C, path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        File::create(&path)?;
        Ok(Self {
            inner,
            path,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().unwrap().clone()
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let response = self.inner.complete(request)?;
        let exchange = Exchange {
            request: request.clone(),
            response: response.clone(),
        };
        let mut log = self.log.lock().unwrap();
        let mut file = OpenOptions::new().append(true).open(&self.path)?;
        let line = serde_json::to_string(&exchange).expect("exchange serializes");
        writeln!(file, "{line}")?;
        log.push(exchange);
        Ok(response)
    }
}

/// Serves a recorded transcript in order, refusing requests that differ
/// from what was recorded.
pub struct ReplayClient {
    exchanges: Vec<Exchange>,
    cursor: Mutex<usize>,
}

impl ReplayClient {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        Self {
            exchanges,
            cursor: Mutex::new(0),
        }
    }

    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let reader = BufReader::new(File::open(path)?);
        let mut exchanges = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Exchange = serde_json::from_str(&line).map_err(|e| {
                LlmError::Config(format!(
                    "{}:{}: bad transcript line: {e}",
                    path.display(),
                    n + 1
                ))
            })?;
            exchanges.push(ex);
        }
        Ok(Self::new(exchanges))
    }
}

impl LlmClient for ReplayClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut cursor = self.cursor.lock().unwrap();
        let index = *cursor;
        let recorded = self
            .exchanges
            .get(index)
            .ok_or(LlmError::ScriptExhausted(self.exchanges.len()))?;
        if recorded.request.purpose != request.purpose {
            return Err(LlmError::ReplayMismatch {
                index,
                reason: format!(
                    "expected a {:?} request, got {:?}",
                    recorded.request.purpose, request.purpose
                ),
            });
        }
        if recorded.request.messages != request.messages {
            return Err(LlmError::ReplayMismatch {
                index,
                reason: "message content differs from the recording".into(),
            });
        }
        *cursor += 1;
        Ok(recorded.response.clone())
    }
}
