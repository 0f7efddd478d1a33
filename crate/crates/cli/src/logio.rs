//! Line-delimited JSON event logs.
//!
//! Line 1 is `{"header": ...}`, then one `{"record": ...}` per heralded
//! attempt, then `{"end": {"attempts": N}}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use qudit_net::experiment::{EventLog, EventRecord, LogHeader};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Record(EventRecord),
    End { attempts: u64 },
}

pub fn write_log(path: &Path, log: &EventLog) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let mut emit = |line: &Line| -> Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    emit(&Line::Header(log.header.clone()))?;
    for r in &log.records {
        emit(&Line::Record(r.clone()))?;
    }
    emit(&Line::End { attempts: log.attempts })?;
    w.flush()?;
    Ok(())
}

/// Log plus the number of lines that failed to parse.
pub struct LoadedLog {
    pub log: EventLog,
    pub skipped: u64,
}

/// Reads a log. Unparseable record lines are skipped and counted unless
/// `strict`; a bad header or a missing end line is always an error.
pub fn read_log(path: &Path, strict: bool) -> Result<LoadedLog> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().with_context(|| format!("{}: empty log", path.display()))?;
    let header = match serde_json::from_str::<Line>(&first?) {
        Ok(Line::Header(h)) => h,
        Ok(_) => bail!("{}: first line is not a header", path.display()),
        Err(e) => bail!("{}:1: bad header: {e}", path.display()),
    };
    let mut records: Vec<EventRecord> = Vec::new();
    let mut attempts = None;
    let mut skipped = 0;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line) {
            Ok(Line::Record(r)) if attempts.is_none() => {
                if records.last().is_some_and(|p| p.attempt_index >= r.attempt_index) {
                    if strict {
                        bail!("{}:{}: attempt index not increasing", path.display(), i + 1);
                    }
                    skipped += 1;
                    continue;
                }
                records.push(r);
            }
            Ok(Line::End { attempts: n }) if attempts.is_none() => attempts = Some(n),
            Ok(_) => bail!("{}:{}: unexpected line after end or second header", path.display(), i + 1),
            Err(e) if strict => bail!("{}:{}: corrupt record: {e}", path.display(), i + 1),
            Err(_) => skipped += 1,
        }
    }
    let attempts = attempts.with_context(|| format!("{}: truncated log (no end line)", path.display()))?;
    if records.last().is_some_and(|r| r.attempt_index >= attempts) {
        bail!("{}: record beyond the attempt count {attempts}", path.display());
    }
    Ok(LoadedLog { log: EventLog { header, records, attempts }, skipped })
}
