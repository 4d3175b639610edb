//! Raw simulation traces: line-oriented records, CSV serialization and
//! a stable content hash for determinism checks.

use crate::alloc::{Channel, CommandClass, GtsKind, MsfSlot};
use crate::traffic::NodeId;

/// Symbols since the epoch (first beacon).
pub type Sym = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceRecord {
    /// A data packet entered the network at its source.
    Generated { t: Sym, node: NodeId, pkt: u32 },
    /// A data packet was dropped at a full GTS queue.
    Dropped { t: Sym, node: NodeId, pkt: u32 },
    /// A data packet crossed one hop inside a GTS.
    GtsTransfer {
        t: Sym,
        slot: MsfSlot,
        channel: Channel,
        tx: NodeId,
        rx: NodeId,
        pkt: u32,
    },
    /// A data packet reached the sink.
    Delivered { t: Sym, pkt: u32 },
    /// A GTS command frame was created and queued.
    CommandQueued {
        t: Sym,
        node: NodeId,
        class: CommandClass,
        seq: u32,
    },
    /// A GTS command frame was dropped at a full CAP queue.
    CommandDropped {
        t: Sym,
        node: NodeId,
        class: CommandClass,
        seq: u32,
    },
    /// The transmission that counts for a command frame went on air.
    CommandSent {
        t: Sym,
        node: NodeId,
        class: CommandClass,
        seq: u32,
        dwell: Sym,
        collided: bool,
    },
    /// A command frame gave up after its retry budget.
    CommandFailed {
        t: Sym,
        node: NodeId,
        class: CommandClass,
        seq: u32,
    },
    /// Handshake progress at one endpoint; `slot`/`channel` identify
    /// the first tuple of the transaction, `count` how many it carried.
    Handshake {
        t: Sym,
        node: NodeId,
        phase: &'static str,
        slot: MsfSlot,
        channel: Channel,
        kind: GtsKind,
        outcome: &'static str,
        count: u8,
    },
    /// A CAP slot was converted to a GTS (dynamic reduction).
    Converted {
        t: Sym,
        slot: MsfSlot,
        channel: Channel,
        tx: NodeId,
        rx: NodeId,
    },
    /// A converted slot was released back to the CAP.
    ConversionReleased { t: Sym, slot: MsfSlot },
    /// GTS queue length sampled at a schedule boundary.
    QueueSample { t: Sym, node: NodeId, gts_len: u16 },
    /// Usable valid GTS entries sampled at a schedule boundary.
    AllocSample { t: Sym, node: NodeId, usable: u16 },
    /// A slot/channel exclusivity or structure invariant was breached.
    Violation { t: Sym, what: &'static str },
    /// Simulation finished; packets still queued network-wide.
    RunEnd { t: Sym, residual: u32 },
}

impl TraceRecord {
    pub fn time(&self) -> Sym {
        match *self {
            TraceRecord::Generated { t, .. }
            | TraceRecord::Dropped { t, .. }
            | TraceRecord::GtsTransfer { t, .. }
            | TraceRecord::Delivered { t, .. }
            | TraceRecord::CommandQueued { t, .. }
            | TraceRecord::CommandDropped { t, .. }
            | TraceRecord::CommandSent { t, .. }
            | TraceRecord::CommandFailed { t, .. }
            | TraceRecord::Handshake { t, .. }
            | TraceRecord::Converted { t, .. }
            | TraceRecord::ConversionReleased { t, .. }
            | TraceRecord::QueueSample { t, .. }
            | TraceRecord::AllocSample { t, .. }
            | TraceRecord::Violation { t, .. }
            | TraceRecord::RunEnd { t, .. } => t,
        }
    }

    /// One CSV line: `time_symbols,event,node,detail...`.
    pub fn to_csv(&self) -> String {
        fn kind_str(k: GtsKind) -> &'static str {
            match k {
                GtsKind::CfpGts => "cfp",
                GtsKind::CapGts => "cap",
            }
        }
        match *self {
            TraceRecord::Generated { t, node, pkt } => format!("{t},gen,{node},{pkt}"),
            TraceRecord::Dropped { t, node, pkt } => format!("{t},drop,{node},{pkt}"),
            TraceRecord::GtsTransfer {
                t,
                slot,
                channel,
                tx,
                rx,
                pkt,
            } => format!("{t},gts_tx,{tx},{rx},{slot},{channel},{pkt}"),
            TraceRecord::Delivered { t, pkt } => format!("{t},deliver,0,{pkt}"),
            TraceRecord::CommandQueued { t, node, class, seq } => {
                format!("{t},cmd_q,{node},{},{seq}", class.as_str())
            }
            TraceRecord::CommandDropped { t, node, class, seq } => {
                format!("{t},cmd_drop,{node},{},{seq}", class.as_str())
            }
            TraceRecord::CommandSent {
                t,
                node,
                class,
                seq,
                dwell,
                collided,
            } => format!(
                "{t},cmd_sent,{node},{},{seq},{dwell},{}",
                class.as_str(),
                collided as u8
            ),
            TraceRecord::CommandFailed { t, node, class, seq } => {
                format!("{t},cmd_fail,{node},{},{seq}", class.as_str())
            }
            TraceRecord::Handshake {
                t,
                node,
                phase,
                slot,
                channel,
                kind,
                outcome,
                count,
            } => format!(
                "{t},hs,{node},{phase},{slot},{channel},{},{outcome},{count}",
                kind_str(kind)
            ),
            TraceRecord::Converted {
                t,
                slot,
                channel,
                tx,
                rx,
            } => format!("{t},convert,{tx},{rx},{slot},{channel}"),
            TraceRecord::ConversionReleased { t, slot } => {
                format!("{t},convert_release,0,{slot}")
            }
            TraceRecord::QueueSample { t, node, gts_len } => {
                format!("{t},queue,{node},{gts_len}")
            }
            TraceRecord::AllocSample { t, node, usable } => {
                format!("{t},alloc,{node},{usable}")
            }
            TraceRecord::Violation { t, what } => format!("{t},violation,0,{what}"),
            TraceRecord::RunEnd { t, residual } => format!("{t},run_end,0,{residual}"),
        }
    }
}

/// A complete run trace.
#[derive(Debug, Clone, Default)]
pub struct RawTrace {
    pub records: Vec<TraceRecord>,
}

impl RawTrace {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.records.last(), Some(TraceRecord::RunEnd { .. }))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 24);
        out.push_str("time_symbols,event,node,detail\n");
        for r in &self.records {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }

    /// FNV-1a over the serialized records; identical traces hash equal
    /// across invocations and thread counts.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for r in &self.records {
            for b in r.to_csv().as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            h ^= b'\n' as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_hash_are_stable() {
        let mut a = RawTrace::default();
        a.push(TraceRecord::Generated { t: 5, node: 3, pkt: 1 });
        a.push(TraceRecord::RunEnd { t: 10, residual: 0 });
        let mut b = RawTrace::default();
        b.push(TraceRecord::Generated { t: 5, node: 3, pkt: 1 });
        b.push(TraceRecord::RunEnd { t: 10, residual: 0 });
        assert_eq!(a.content_hash(), b.content_hash());
        assert!(a.to_csv().starts_with("time_symbols,event,node,detail\n5,gen,3,1\n"));
        assert!(a.is_complete());

        b.records.pop();
        assert!(!b.is_complete());
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
