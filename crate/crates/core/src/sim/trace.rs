// SPDX-License-Identifier: Apache-2.0

//! Line-delimited JSON trace with a running digest.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest as _, Sha256};

use crate::types::{NodeId, Tick};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TraceLevel {
    /// No events are produced.
    Off,
    /// Events are hashed but not kept.
    #[default]
    Digest,
    /// Events are hashed and kept.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Send,
    Receive,
    DpowRequest,
    DpowDeliver,
    TtrbDeliver,
    Commit,
    Leader,
    CheckerVerdict,
}

#[derive(Serialize)]
struct Event<'a> {
    tick: Tick,
    node: NodeId,
    kind: EventKind,
    detail: &'a Value,
}

pub struct Trace {
    level: TraceLevel,
    lines: Vec<String>,
    hasher: Sha256,
    count: u64,
}

impl Trace {
    pub fn new(level: TraceLevel) -> Self {
        Self {
            level,
            lines: Vec::new(),
            hasher: Sha256::new(),
            count: 0,
        }
    }

    pub fn enabled(&self) -> bool {
        self.level != TraceLevel::Off
    }

    pub fn emit(&mut self, tick: Tick, node: NodeId, kind: EventKind, detail: Value) {
        if !self.enabled() {
            return;
        }
        let line = serde_json::to_string(&Event {
            tick,
            node,
            kind,
            detail: &detail,
        })
        .expect("events serialise");
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
        if self.level == TraceLevel::Full {
            self.lines.push(line);
        }
    }

    pub fn finish(self) -> TraceOutput {
        TraceOutput {
            digest: (self.level != TraceLevel::Off).then(|| hex::encode(self.hasher.finalize())),
            events: self.count,
            lines: self.lines,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TraceOutput {
    pub digest: Option<String>,
    pub events: u64,
    pub lines: Vec<String>,
}
