//! Message accounting, per-rendezvous trace and descriptor bookkeeping.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use serde::Serialize;

use super::SimError;
use crate::graph::RobotId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Heartbeat,
    Descriptor,
    VertexPayload,
    RegistrationResult,
    PoseGraph,
    Estimates,
}

/// One message. `bytes` is the content, `overhead` the per-message framing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub time: u64,
    pub sender: RobotId,
    pub receiver: RobotId,
    pub kind: MessageKind,
    pub bytes: u64,
    pub overhead: u64,
}

impl MessageRecord {
    pub fn total(&self) -> u64 {
        self.bytes + self.overhead
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageLedger {
    records: Vec<MessageRecord>,
}

impl MessageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; times must not go backwards.
    pub fn push(&mut self, record: MessageRecord) {
        assert!(
            self.records.last().is_none_or(|r| r.time <= record.time),
            "ledger time went backwards"
        );
        self.records.push(record);
    }

    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Content plus overhead over all records.
    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(MessageRecord::total).sum()
    }

    /// Content bytes of one kind.
    pub fn content_bytes(&self, kind: MessageKind) -> u64 {
        self.records.iter().filter(|r| r.kind == kind).map(|r| r.bytes).sum()
    }

    /// Content bytes of one kind from `sender` to `receiver`.
    pub fn content_bytes_between(&self, kind: MessageKind, sender: RobotId, receiver: RobotId) -> u64 {
        self.records
            .iter()
            .filter(|r| r.kind == kind && r.sender == sender && r.receiver == receiver)
            .map(|r| r.bytes)
            .sum()
    }

    /// Columns `time,sender,receiver,kind,bytes,overhead`; bytes are octets.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        if self.records.is_empty() {
            w.write_record(["time", "sender", "receiver", "kind", "bytes", "overhead"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What happened at one rendezvous.
#[derive(Debug, Clone, PartialEq)]
pub struct RendezvousRecord {
    pub time: u64,
    pub participants: Vec<RobotId>,
    pub broker: RobotId,
    /// Anchor robot of every optimized group of connected participants.
    pub anchors: Vec<RobotId>,
    pub generated: usize,
    pub selected: usize,
    /// Candidates whose registration produced a measurement.
    pub verified: usize,
    /// Verified loop closures kept by the robust back-end.
    pub inliers: usize,
    pub lambda2_before: f64,
    pub lambda2_after: f64,
    /// Summed over optimized groups; NaN if nothing was optimized.
    pub objective: f64,
    pub converged: bool,
    /// Per robot, after one rigid alignment of the whole group to ground truth.
    pub ate: BTreeMap<RobotId, f64>,
    /// Reference frame of every participant after the rendezvous.
    pub frames: BTreeMap<RobotId, RobotId>,
    /// Ledger total, overhead included, at the end of the rendezvous.
    pub cumulative_bytes: u64,
}

#[derive(Serialize)]
struct TraceRow {
    time: u64,
    participants: String,
    broker: RobotId,
    anchors: String,
    generated: usize,
    selected: usize,
    verified: usize,
    inliers: usize,
    lambda2_before: f64,
    lambda2_after: f64,
    objective: f64,
    converged: bool,
    ate: String,
    frames: String,
    cumulative_bytes: u64,
}

fn joined<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RendezvousTrace {
    pub records: Vec<RendezvousRecord>,
}

impl RendezvousTrace {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Columns `time,participants,broker,anchors,generated,selected,verified,
    /// inliers,lambda2_before,lambda2_after,objective,converged,ate,frames,
    /// cumulative_bytes`. List columns are `;`-separated; `ate` and `frames`
    /// hold `robot:value` entries, ATE in meters.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        if self.records.is_empty() {
            w.write_record([
                "time",
                "participants",
                "broker",
                "anchors",
                "generated",
                "selected",
                "verified",
                "inliers",
                "lambda2_before",
                "lambda2_after",
                "objective",
                "converged",
                "ate",
                "frames",
                "cumulative_bytes",
            ])?;
        }
        for r in &self.records {
            w.serialize(TraceRow {
                time: r.time,
                participants: joined(&r.participants),
                broker: r.broker,
                anchors: joined(&r.anchors),
                generated: r.generated,
                selected: r.selected,
                verified: r.verified,
                inliers: r.inliers,
                lambda2_before: r.lambda2_before,
                lambda2_after: r.lambda2_after,
                objective: r.objective,
                converged: r.converged,
                ate: joined(r.ate.iter().map(|(k, v)| format!("{k}:{v}"))),
                frames: joined(r.frames.iter().map(|(k, v)| format!("{k}:{v}"))),
                cumulative_bytes: r.cumulative_bytes,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-pair record of the last descriptor each receiver got from each sender.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptorBook {
    /// `(receiver, sender)` → number of the sender's frames already delivered.
    delivered: BTreeMap<(RobotId, RobotId), u64>,
}

impl DescriptorBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Frames delivered so far from `sender` to `receiver`; frames `0..n` are known.
    pub fn known(&self, sender: RobotId, receiver: RobotId) -> u64 {
        self.delivered.get(&(receiver, sender)).copied().unwrap_or(0)
    }

    /// Highest frame id `receiver` holds from `sender`.
    pub fn watermark(&self, sender: RobotId, receiver: RobotId) -> Option<u64> {
        self.known(sender, receiver).checked_sub(1)
    }
}

/// Frames `sender` must transmit so `receiver` knows its first `sender_frames`
/// descriptors; marks them delivered.
pub fn descriptor_bookkeeping(
    book: &mut DescriptorBook,
    sender: RobotId,
    receiver: RobotId,
    sender_frames: u64,
) -> Range<u64> {
    let known = book.known(sender, receiver);
    if sender_frames <= known {
        return known..known;
    }
    book.delivered.insert((receiver, sender), sender_frames);
    known..sender_frames
}
