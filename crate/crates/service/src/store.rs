//! One directory per session:
//!
//! ```text
//! <session_dir>/<id>/events.jsonl   append-only log, the source of truth
//! <session_dir>/<id>/state.json     latest state, rewritten after each commit
//! <session_dir>/<id>/meta.json      id and timestamps
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use storygraph_core::pipeline::{export_json, recover_log, replay, Event, LogRecord, PipelineState, StorySpec, Verdict};
use storygraph_core::textgen::TemplateSet;

use crate::StoreError;

pub const LOG_FILE: &str = "events.jsonl";
pub const STATE_FILE: &str = "state.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Write `bytes` to `path` through a temporary file and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(bytes).map_err(io_err(&tmp))?;
    file.sync_data().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Append handle on one session's log.
#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl SessionLog {
    fn open(path: PathBuf, next_seq: u64) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self { path, file, next_seq })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of records written so far.
    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }

    /// Append one transaction, one line per record, and sync it to disk.
    pub fn append(&mut self, events: Vec<Event>) -> Result<Vec<LogRecord>, StoreError> {
        let mut records = Vec::with_capacity(events.len());
        for event in events {
            let record = LogRecord {
                seq: self.next_seq,
                event,
            };
            let mut line = serde_json::to_string(&record).expect("log records always serialize");
            line.push('\n');
            self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
            self.next_seq += 1;
            records.push(record);
        }
        self.file.flush().map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        Ok(records)
    }
}

/// A session rebuilt from disk.
#[derive(Debug)]
pub struct Recovered {
    pub meta: SessionMeta,
    pub spec: StorySpec,
    pub state: Option<PipelineState>,
    pub log: SessionLog,
    /// Records dropped because their transaction never committed, plus a torn line.
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    /// Open (creating if needed) a store and check that it is writable.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let not_writable = |e: std::io::Error| StoreError::NotWritable {
            path: dir.clone(),
            message: e.to_string(),
        };
        fs::create_dir_all(&dir).map_err(not_writable)?;
        let probe = dir.join(".write-probe");
        File::create(&probe)
            .and_then(|mut f| f.write_all(b"ok"))
            .map_err(not_writable)?;
        fs::remove_file(&probe).map_err(not_writable)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.dir.join(id)
    }

    /// Start a new session directory whose log opens with the spec.
    pub fn create(&self, id: &str, spec: &StorySpec) -> Result<(SessionMeta, SessionLog), StoreError> {
        let dir = self.session_dir(id);
        fs::create_dir(&dir).map_err(io_err(&dir))?;
        let now = Utc::now();
        let meta = SessionMeta {
            id: id.to_string(),
            created_at: now,
            updated_at: now,
        };
        self.write_meta(&meta)?;
        let mut log = SessionLog::open(dir.join(LOG_FILE), 0)?;
        log.append(vec![Event::SpecCreated { spec: spec.clone() }])?;
        Ok((meta, log))
    }

    pub fn write_meta(&self, meta: &SessionMeta) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(meta).expect("meta always serializes");
        write_atomic(&self.session_dir(&meta.id).join(META_FILE), &bytes)
    }

    pub fn write_state(&self, id: &str, state: &PipelineState) -> Result<(), StoreError> {
        write_atomic(&self.session_dir(id).join(STATE_FILE), export_json(state).as_bytes())
    }

    /// Rebuild one session by replaying its log. A transaction cut short by a crash is
    /// cut from the log so appends continue from the last commit.
    pub fn recover(&self, id: &str, templates: &TemplateSet) -> Result<Recovered, StoreError> {
        let dir = self.session_dir(id);
        let log_path = dir.join(LOG_FILE);
        let text = fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
        let corrupt = |reason: String| StoreError::Corrupt {
            id: id.to_string(),
            reason,
        };
        let (records, _) = recover_log(&text).map_err(|e| corrupt(e.to_string()))?;
        let report = replay(&records, templates).map_err(|e| corrupt(e.to_string()))?;
        if let Verdict::Mismatch { seq, reason } = &report.verdict {
            return Err(corrupt(format!("replay diverges at record {seq}: {reason}")));
        }
        let committed = records.len() - report.pending;
        let keep = byte_len_of_records(&text, committed);
        let dropped = text[keep..].lines().filter(|l| !l.trim().is_empty()).count();
        if keep < text.len() {
            let file = OpenOptions::new().write(true).open(&log_path).map_err(io_err(&log_path))?;
            file.set_len(keep as u64).map_err(io_err(&log_path))?;
            file.sync_data().map_err(io_err(&log_path))?;
            tracing::warn!(session = id, dropped, "dropped uncommitted log records");
        }
        let spec = match &records[0].event {
            Event::SpecCreated { spec } => spec.clone(),
            _ => unreachable!("replay checks the first record"),
        };
        if let Some(state) = &report.state {
            self.write_state(id, state)?;
        }
        let meta = match fs::read(dir.join(META_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("meta.json: {e}")))?,
            Err(_) => {
                let now = Utc::now();
                SessionMeta {
                    id: id.to_string(),
                    created_at: now,
                    updated_at: now,
                }
            }
        };
        Ok(Recovered {
            meta,
            spec,
            state: report.state,
            log: SessionLog::open(log_path, committed as u64)?,
            dropped,
        })
    }

    /// Every session that can be rebuilt. Broken ones are skipped with a warning.
    pub fn recover_all(&self, templates: &TemplateSet) -> Result<Vec<Recovered>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)
            .map_err(io_err(&self.dir))?
            .filter_map(Result::ok)
            .filter(|e| e.path().join(LOG_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            match self.recover(&id, templates) {
                Ok(r) => out.push(r),
                Err(e) => tracing::warn!(session = %id, error = %e, "skipping session"),
            }
        }
        Ok(out)
    }
}

/// Byte length of the first `n` nonblank lines of `text`, newlines included.
fn byte_len_of_records(text: &str, n: usize) -> usize {
    let mut seen = 0;
    let mut len = 0;
    for line in text.split_inclusive('\n') {
        if seen == n {
            break;
        }
        len += line.len();
        if !line.trim().is_empty() {
            seen += 1;
        }
    }
    len
}
