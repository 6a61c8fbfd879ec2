use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeId {
    Source,
    Alice,
    Bob,
    Referee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    /// Source to station, carrying the hidden variable.
    Particle,
    /// A station's local coin toss (a self-event).
    SettingDrawLocal,
    /// A station telling another node its setting.
    SettingReport,
    /// Station to referee: setting label and outcome.
    OutcomeCommit,
    /// The referee's per-slot aggregation (a self-event).
    Record,
}

impl MessageKind {
    pub fn is_local(self) -> bool {
        matches!(self, MessageKind::SettingDrawLocal | MessageKind::Record)
    }
}

/// One logged event: `{slot, from, to, kind, t}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub slot: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MessageKind,
    /// Logical send time within the slot.
    pub t: u64,
}

/// Events of a run in the order they happened.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageLog {
    pub events: Vec<Message>,
}

impl MessageLog {
    pub fn new(events: Vec<Message>) -> Self {
        MessageLog { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Consecutive per-slot groups. Fails if a slot's events are not contiguous.
    pub fn slots(&self) -> Result<Vec<&[Message]>> {
        let mut out: Vec<&[Message]> = Vec::new();
        let mut start = 0;
        for i in 1..=self.events.len() {
            if i == self.events.len() || self.events[i].slot != self.events[start].slot {
                if i < self.events.len() && self.events[i].slot < self.events[start].slot {
                    return Err(Error::Structural(format!(
                        "event {i} goes back from slot {} to slot {}",
                        self.events[start].slot, self.events[i].slot
                    )));
                }
                out.push(&self.events[start..i]);
                start = i;
            }
        }
        Ok(out)
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for m in &self.events {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut events = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Structural(format!("reading event log: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let m: Message =
                serde_json::from_str(&line).map_err(|e| Error::Structural(format!("event log line {}: {e}", n + 1)))?;
            events.push(m);
        }
        Ok(MessageLog { events })
    }
}
