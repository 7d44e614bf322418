//! Line-delimited JSON traces of session events and actions.
//!
//! Each line is one record: `{"in":{"side":"sender","event":{...}}}` for an
//! event fed to a session, or `{"out":{...,"action":{...}}}` for an action it
//! produced. Byte payloads are hex strings. See `docs/trace-format.md`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::session::{Action, Event};

/// Serde adapter writing `Vec<u8>` as a lowercase hex string.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        hex::decode(s.as_ref()).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Sender,
    Receiver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Record {
    In { side: Side, event: Event },
    Out { side: Side, action: Action },
}

/// Collects records in memory; cheap enough to leave on in tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<Record>,
}

impl Trace {
    pub fn event(&mut self, side: Side, event: &Event) {
        self.records.push(Record::In {
            side,
            event: event.clone(),
        });
    }

    pub fn actions(&mut self, side: Side, actions: &[Action]) {
        self.records.extend(actions.iter().map(|a| Record::Out {
            side,
            action: a.clone(),
        }));
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> io::Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                parse_line(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            );
        }
        Ok(Self { records })
    }

    /// Events fed to `side`, in order.
    pub fn events(&self, side: Side) -> impl Iterator<Item = &Event> + '_ {
        self.records.iter().filter_map(move |r| match r {
            Record::In { side: s, event } if *s == side => Some(event),
            _ => None,
        })
    }

    /// Actions emitted by `side`, in order.
    pub fn outputs(&self, side: Side) -> impl Iterator<Item = &Action> + '_ {
        self.records.iter().filter_map(move |r| match r {
            Record::Out { side: s, action } if *s == side => Some(action),
            _ => None,
        })
    }
}

pub fn parse_line(line: &str) -> Result<Record, serde_json::Error> {
    serde_json::from_str(line)
}
