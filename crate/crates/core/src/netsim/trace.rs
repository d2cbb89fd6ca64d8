use std::io::{self, Write};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::hash::Hash256;

use super::{Endpoint, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceEvent {
    Arrived,
    DroppedQueue,
    DroppedPartition,
    DroppedCrash,
}

impl TraceEvent {
    fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Serialize)]
struct Line<'a> {
    time: Tick,
    src: String,
    dst: String,
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped: Option<TraceEvent>,
}

#[derive(Serialize)]
struct HostLine<'a> {
    time: Tick,
    src: String,
    kind: &'a str,
    value: u64,
}

/// Running digest over every network and host event, with an optional
/// JSON-lines copy.
pub struct TraceSink {
    hasher: Sha256,
    events: u64,
    writer: Option<Box<dyn Write + Send>>,
    error: Option<io::Error>,
}

impl Default for TraceSink {
    fn default() -> Self {
        Self::new()
    }
}

impl TraceSink {
    pub fn new() -> Self {
        TraceSink { hasher: Sha256::new(), events: 0, writer: None, error: None }
    }

    pub fn set_writer(&mut self, w: Box<dyn Write + Send>) {
        self.writer = Some(w);
    }

    fn absorb(&mut self, time: Tick, src: Endpoint, dst: Option<Endpoint>, kind: &str, code: u64) {
        self.events += 1;
        let enc = |e: Endpoint| -> [u8; 5] {
            let (tag, v) = match e {
                Endpoint::Node(n) => (0u8, n),
                Endpoint::Client(c) => (1u8, c),
            };
            let mut b = [tag, 0, 0, 0, 0];
            b[1..].copy_from_slice(&v.to_be_bytes());
            b
        };
        self.hasher.update(time.to_be_bytes());
        self.hasher.update(enc(src));
        self.hasher.update(dst.map_or([0xff; 5], enc));
        self.hasher.update((kind.len() as u32).to_be_bytes());
        self.hasher.update(kind.as_bytes());
        self.hasher.update(code.to_be_bytes());
    }

    pub fn record(&mut self, time: Tick, src: Endpoint, dst: Endpoint, kind: &str, ev: TraceEvent) {
        self.absorb(time, src, Some(dst), kind, ev.code() as u64);
        if let Some(w) = self.writer.as_mut() {
            let line = Line {
                time,
                src: src.to_string(),
                dst: dst.to_string(),
                kind,
                dropped: (ev != TraceEvent::Arrived).then_some(ev),
            };
            let r = serde_json::to_writer(&mut *w, &line).map_err(io::Error::from).and_then(|_| w.write_all(b"\n"));
            if let Err(e) = r {
                self.error.get_or_insert(e);
            }
        }
    }

    /// Events raised by hosts (commits, view changes, faults).
    pub fn record_host(&mut self, time: Tick, src: Endpoint, kind: &str, value: u64) {
        self.absorb(time, src, None, kind, value);
        if let Some(w) = self.writer.as_mut() {
            let line = HostLine { time, src: src.to_string(), kind, value };
            let r = serde_json::to_writer(&mut *w, &line).map_err(io::Error::from).and_then(|_| w.write_all(b"\n"));
            if let Err(e) = r {
                self.error.get_or_insert(e);
            }
        }
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn digest(&self) -> Hash256 {
        let mut h = self.hasher.clone();
        h.update(self.events.to_be_bytes());
        Hash256(h.finalize().into())
    }

    /// Flush the JSON-lines copy and surface any write error.
    pub fn finish(&mut self) -> io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}
