use serde::Serialize;
use thiserror::Error;

use super::engine::{Engine, Transition};
use super::events::{state_hash, CallOutcome, Event, GeneratorCall, LogRecord};
use super::{PipelineError, PipelineState, StorySpec};
use crate::textgen::{ScriptedBackend, ScriptedReply, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("corrupt log at record {index}: {reason}")]
    CorruptLog { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch { seq: u64, reason: String },
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    /// State after the last command that replayed cleanly, `None` if none did.
    pub state: Option<PipelineState>,
    pub verdict: Verdict,
    /// Command records re-executed successfully.
    pub applied: usize,
    /// Records after the last command: a transaction that never committed.
    pub pending: usize,
    pub final_hash: Option<String>,
}

/// Parse a JSON-lines log. Every nonblank line must be a record and sequence numbers
/// must run from 0 without gaps.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, ReplayError> {
    let (records, torn) = read_records(text)?;
    match torn {
        Some(index) => Err(ReplayError::CorruptLog {
            index,
            reason: "truncated record".to_string(),
        }),
        None => Ok(records),
    }
}

/// Like [`parse_log`], but an unparsable final line without a trailing newline is taken
/// as a torn write and dropped. Returns the records and the byte length of the intact
/// prefix.
pub fn recover_log(text: &str) -> Result<(Vec<LogRecord>, usize), ReplayError> {
    let (records, torn) = read_records(text)?;
    let intact = match torn {
        Some(_) => text.rfind('\n').map_or(0, |i| i + 1),
        None => text.len(),
    };
    Ok((records, intact))
}

fn read_records(text: &str) -> Result<(Vec<LogRecord>, Option<usize>), ReplayError> {
    let mut records = Vec::new();
    let mut torn = None;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (index, raw) in lines.iter().enumerate() {
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(line) {
            Ok(record) => records.push(record),
            Err(_) if index + 1 == lines.len() && !raw.ends_with('\n') => torn = Some(index),
            Err(e) => {
                return Err(ReplayError::CorruptLog {
                    index,
                    reason: e.to_string(),
                })
            }
        }
    }
    for (index, record) in records.iter().enumerate() {
        if record.seq != index as u64 {
            return Err(ReplayError::CorruptLog {
                index,
                reason: format!("expected seq {index}, found {}", record.seq),
            });
        }
    }
    Ok((records, torn))
}

fn scripted(calls: &[&GeneratorCall]) -> ScriptedBackend {
    ScriptedBackend::new(calls.iter().map(|c| match &c.outcome {
        CallOutcome::Ok { text } => ScriptedReply::Text(text.clone()),
        CallOutcome::Failed { error } => ScriptedReply::Fail(error.clone()),
    }))
}

/// What must match between the log and a re-execution. Usage is left out: it comes
/// from the backend, not the pipeline.
fn fingerprint(events: &[Event]) -> Vec<Event> {
    events
        .iter()
        .map(|e| match e {
            Event::GeneratorCall(call) => Event::GeneratorCall(GeneratorCall {
                usage: None,
                ..call.clone()
            }),
            other => other.clone(),
        })
        .collect()
}

fn describe_difference(logged: &[Event], replayed: &[Event]) -> String {
    let calls = |es: &[Event]| es.iter().filter(|e| matches!(e, Event::GeneratorCall(_))).count();
    if calls(logged) != calls(replayed) {
        return format!(
            "logged {} generator calls, re-execution made {}",
            calls(logged),
            calls(replayed)
        );
    }
    for (i, (a, b)) in logged.iter().zip(replayed).enumerate() {
        if a != b {
            return match (a, b) {
                (Event::GeneratorCall(a), Event::GeneratorCall(b)) if a.template_id != b.template_id => {
                    format!("call {i}: logged {}, re-execution rendered {}", a.template_id, b.template_id)
                }
                (Event::GeneratorCall(a), Event::GeneratorCall(_)) => {
                    format!("call {i}: prompt for {} differs", a.template_id)
                }
                _ if a.state_hash().is_some() && b.state_hash().is_some() => "state hash differs".to_string(),
                _ => format!("record {i} differs"),
            };
        }
    }
    format!("logged {} records, re-execution produced {}", logged.len(), replayed.len())
}

/// Re-execute a session log against scripted replies taken from the log itself and
/// check every transaction reproduces the same prompts and state.
pub fn replay(records: &[LogRecord], templates: &TemplateSet) -> Result<ReplayReport, ReplayError> {
    let spec: StorySpec = match records.first().map(|r| &r.event) {
        Some(Event::SpecCreated { spec }) => spec.clone(),
        _ => {
            return Err(ReplayError::CorruptLog {
                index: 0,
                reason: "log must start with SpecCreated".to_string(),
            })
        }
    };
    let mut report = ReplayReport {
        state: None,
        verdict: Verdict::Match,
        applied: 0,
        pending: 0,
        final_hash: None,
    };
    let mut start = 1;
    for (pos, record) in records.iter().enumerate().skip(1) {
        if matches!(record.event, Event::SpecCreated { .. }) {
            return Err(ReplayError::CorruptLog {
                index: pos,
                reason: "SpecCreated after the first record".to_string(),
            });
        }
        if !record.event.is_command() {
            continue;
        }
        let logged: Vec<Event> = records[start..=pos].iter().map(|r| r.event.clone()).collect();
        start = pos + 1;
        let calls: Vec<&GeneratorCall> = logged
            .iter()
            .filter_map(|e| match e {
                Event::GeneratorCall(c) => Some(c),
                _ => None,
            })
            .collect();
        let backend = scripted(&calls);
        let engine = Engine::new(&backend, templates);
        let outcome: Result<Transition, PipelineError> = match (&record.event, &report.state) {
            (Event::Initialized { .. }, None) => engine.initialize(spec.clone()),
            (Event::SceneGenerated { .. }, Some(s)) => engine.step(s),
            (Event::EditApplied { edits, .. }, Some(s)) => engine.submit_edits(s, edits),
            (Event::Regenerated { .. }, Some(s)) => engine.regenerate_current(s),
            (Event::Advanced { .. }, Some(s)) => engine.advance(s),
            (Event::Initialized { .. }, Some(_)) => {
                report.verdict = Verdict::Mismatch {
                    seq: record.seq,
                    reason: "initialized twice".to_string(),
                };
                return Ok(report);
            }
            (_, None) => {
                report.verdict = Verdict::Mismatch {
                    seq: record.seq,
                    reason: "command before initialization".to_string(),
                };
                return Ok(report);
            }
            _ => unreachable!("is_command covers exactly these events"),
        };
        let transition = match outcome {
            Ok(t) => t,
            Err(e) => {
                report.verdict = Verdict::Mismatch {
                    seq: record.seq,
                    reason: format!("re-execution failed: {e}"),
                };
                return Ok(report);
            }
        };
        if fingerprint(&logged) != fingerprint(&transition.events) {
            report.verdict = Verdict::Mismatch {
                seq: record.seq,
                reason: describe_difference(&fingerprint(&logged), &fingerprint(&transition.events)),
            };
            return Ok(report);
        }
        report.final_hash = Some(state_hash(&transition.state));
        report.state = Some(transition.state);
        report.applied += 1;
    }
    report.pending = records.len() - start;
    Ok(report)
}
