use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::error::{Error, Result};
use crate::form::FormModel;

use super::engine::{Answer, Question, ValidationBlock};

/// One line of a study's append-only log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    StudyCreated {
        study: String,
        config: StudyConfig,
        validation: ValidationBlock,
        at: f64,
    },
    SessionCreated {
        session: String,
        respondent: usize,
        at: f64,
    },
    QuestionIssued {
        session: String,
        question: Question,
        snapshot_version: usize,
        at: f64,
    },
    AnswerRecorded {
        session: String,
        seq: usize,
        answer: Answer,
        at: f64,
    },
    ModelSnapshot {
        session: String,
        round: usize,
        form_model: FormModel,
        w: Vec<f64>,
    },
    SessionFinished {
        session: String,
        snapshot_version: usize,
        at: f64,
    },
}

/// Append-only JSON-lines writer. Without a path the lines are kept in memory.
#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
    lines: Vec<String>,
}

impl EventLog {
    pub fn memory() -> Self {
        EventLog {
            path: None,
            file: None,
            lines: Vec::new(),
        }
    }

    /// Opens for appending, creating the file if needed.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog {
            path: Some(path.to_path_buf()),
            file: Some(file),
            lines: Vec::new(),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Writes and flushes one event. Returns only once the line has reached the OS.
    pub fn append(&mut self, event: &Event) -> Result<()> {
        let line = serde_json::to_string(event)?;
        match &mut self.file {
            Some(f) => {
                f.write_all(line.as_bytes())?;
                f.write_all(b"\n")?;
                f.flush()?;
            }
            None => self.lines.push(line),
        }
        Ok(())
    }

    /// In-memory lines; empty for file-backed logs.
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn read(path: &Path) -> Result<Vec<Event>> {
        let f = File::open(path)?;
        let mut out = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(parse_line(&line, n + 1)?);
        }
        Ok(out)
    }

    pub fn parse(lines: &[String]) -> Result<Vec<Event>> {
        lines.iter().enumerate().map(|(n, l)| parse_line(l, n + 1)).collect()
    }
}

fn parse_line(line: &str, n: usize) -> Result<Event> {
    serde_json::from_str(line).map_err(|e| Error::state(format!("event log line {n}: {e}")))
}
