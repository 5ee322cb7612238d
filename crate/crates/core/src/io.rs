//! Event file readers and writers.
//!
//! Two input layouts are accepted. The long CSV layout has header
//! `event_id,time,actor` and one row per participation; rows sharing an event
//! id are merged, and a row with an empty actor cell marks an event without
//! participants. The JSON-lines layout holds one event object per line:
//! `{"event_id": .., "time": .., "actors": [..]}`. Lines starting with `#` are
//! comments in both.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::stats::{EventRecord, PanelStats};

pub const CSV_HEADER: [&str; 3] = ["event_id", "time", "actor"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    JsonLines,
}

impl EventFormat {
    /// `.jsonl`, `.ndjson` and `.json` select JSON lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if matches!(e.to_ascii_lowercase().as_str(), "jsonl" | "ndjson" | "json") => {
                EventFormat::JsonLines
            }
            _ => EventFormat::Csv,
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

struct Grouper {
    events: Vec<EventRecord>,
    index: HashMap<String, usize>,
}

impl Grouper {
    fn new() -> Self {
        Self {
            events: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn push(&mut self, line: usize, id: &str, time: &str, actor: Option<&str>) -> Result<()> {
        let k = match self.index.get(id) {
            Some(&k) => {
                if self.events[k].time_label != time {
                    return Err(parse_err(
                        line,
                        format!(
                            "event {id} has time {time} here but {} earlier",
                            self.events[k].time_label
                        ),
                    ));
                }
                k
            }
            None => {
                self.index.insert(id.to_string(), self.events.len());
                self.events.push(EventRecord::new(id, time, Vec::<String>::new()));
                self.events.len() - 1
            }
        };
        if let Some(a) = actor {
            self.events[k].actors.push(a.to_string());
        }
        Ok(())
    }
}

/// Reads the long CSV layout, merging rows by event id in order of first appearance.
///
/// Fields may be quoted but a record must sit on one physical line, so that
/// reported line numbers are exact.
pub fn read_events_csv<R: Read>(reader: R) -> Result<Vec<EventRecord>> {
    let mut header_seen = false;
    let mut g = Grouper::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => parse_err(line_no, "invalid UTF-8"),
            _ => Error::Io(e),
        })?;
        let s = line.trim_start_matches('\u{feff}').trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let fields = split_csv_line(s, line_no)?;
        if !header_seen {
            if fields != CSV_HEADER {
                return Err(parse_err(
                    line_no,
                    format!("expected header event_id,time,actor, found {s}"),
                ));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(parse_err(line_no, "empty event_id"));
        }
        if fields[1].is_empty() {
            return Err(parse_err(line_no, "empty time"));
        }
        let actor = Some(fields[2].as_str()).filter(|a| !a.is_empty());
        g.push(line_no, &fields[0], &fields[1], actor)?;
    }
    if !header_seen {
        return Err(parse_err(0, "missing header event_id,time,actor"));
    }
    Ok(g.events)
}

fn split_csv_line(s: &str, line_no: usize) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(s.as_bytes());
    match rdr.records().next() {
        Some(Ok(rec)) => Ok(rec.iter().map(str::to_string).collect()),
        Some(Err(e)) => Err(parse_err(line_no, e.to_string())),
        None => Ok(Vec::new()),
    }
}

fn csv_to_parse(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => parse_err(
            line,
            format!("expected {expected_len} fields, found {len}"),
        ),
        csv::ErrorKind::Utf8 { .. } => parse_err(line, "invalid UTF-8"),
        _ => Error::Csv(e),
    }
}

#[derive(Deserialize)]
struct JsonEventIn {
    event_id: Value,
    time: Value,
    #[serde(default)]
    actors: Vec<Value>,
}

#[derive(Serialize)]
struct JsonEventOut<'a> {
    event_id: &'a str,
    time: &'a str,
    actors: &'a [String],
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Reads JSON lines. Numeric ids, times and actors are taken by their decimal text.
pub fn read_events_jsonl<R: BufRead>(reader: R) -> Result<Vec<EventRecord>> {
    let mut g = Grouper::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let ev: JsonEventIn =
            serde_json::from_str(s).map_err(|e| parse_err(line_no, e.to_string()))?;
        let id = scalar_to_string(&ev.event_id)
            .ok_or_else(|| parse_err(line_no, "event_id must be a string or number"))?;
        let time = scalar_to_string(&ev.time)
            .ok_or_else(|| parse_err(line_no, "time must be a string or number"))?;
        if g.index.contains_key(&id) {
            return Err(parse_err(line_no, format!("event {id} appears twice")));
        }
        g.push(line_no, &id, &time, None)?;
        let last = g.events.len() - 1;
        for a in &ev.actors {
            let a = scalar_to_string(a)
                .ok_or_else(|| parse_err(line_no, "actors must be strings or numbers"))?;
            g.events[last].actors.push(a);
        }
    }
    Ok(g.events)
}

pub fn read_events_path(path: &Path) -> Result<Vec<EventRecord>> {
    let f = File::open(path)?;
    match EventFormat::from_path(path) {
        EventFormat::Csv => read_events_csv(BufReader::new(f)),
        EventFormat::JsonLines => read_events_jsonl(BufReader::new(f)),
    }
}

/// Writes the long CSV layout. `comments` are emitted first as `# ` lines.
pub fn write_events_csv<W: Write>(
    mut out: W,
    events: &[EventRecord],
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for ev in events {
        if ev.actors.is_empty() {
            w.write_record([ev.event_id.as_str(), ev.time_label.as_str(), ""])?;
        }
        for a in &ev.actors {
            w.write_record([ev.event_id.as_str(), ev.time_label.as_str(), a.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_jsonl<W: Write>(mut out: W, events: &[EventRecord]) -> Result<()> {
    for ev in events {
        let rec = JsonEventOut {
            event_id: &ev.event_id,
            time: &ev.time_label,
            actors: &ev.actors,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_events_path(path: &Path, events: &[EventRecord], comments: &[String]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    match EventFormat::from_path(path) {
        EventFormat::Csv => write_events_csv(f, events, comments),
        EventFormat::JsonLines => write_events_jsonl(f, events),
    }
}

/// Actor dictionary as `actor,index` with 1-based indices.
pub fn write_actor_dictionary<W: Write>(out: W, stats: &PanelStats) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["actor", "index"])?;
    for (k, a) in stats.actor_ids().iter().enumerate() {
        w.write_record([a.as_str(), &(k + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_actor_dictionary<R: Read>(reader: R) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<(usize, String)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_to_parse)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let idx: usize = row[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad index {:?}", &row[1])))?;
        rows.push((idx, row[0].to_string()));
    }
    rows.sort();
    for (k, (idx, _)) in rows.iter().enumerate() {
        if *idx != k + 1 {
            return Err(Error::Validation(format!(
                "actor dictionary indices must be 1..{}, found {idx}",
                rows.len()
            )));
        }
    }
    Ok(rows.into_iter().map(|(_, a)| a).collect())
}
