//! Deterministic discrete-event simulation at symbol resolution:
//! beacon-synchronized frame structure, slotted CSMA/CA on the common
//! CAP channel, conflict-free GTS transfers, the distributed GTS
//! handshake, traffic-aware scheduling and the mode dynamics of
//! alternating and dynamic CAP reduction.

mod engine;
pub mod trace;

pub use trace::{RawTrace, Sym, TraceRecord};

use crate::alloc::Channel;
use crate::config::ProtocolConfig;
use crate::scheduler::SchedulerConfig;
use crate::traffic::{Topology, TrafficConfig};
use thiserror::Error;

/// PHY framing overhead in symbols (preamble, SFD, PHR).
pub const PHY_OVERHEAD_SYMBOLS: u64 = 12;
/// Symbols per payload byte at 62.5 ksymbol/s O-QPSK.
pub const SYMBOLS_PER_BYTE: u64 = 2;
/// RX/TX turnaround in symbols.
pub const TURNAROUND_SYMBOLS: u64 = 12;
/// Immediate acknowledgment MPDU size in bytes.
pub const ACK_BYTES: u64 = 5;
/// Wire bytes per slot/channel tuple inside a GTS command.
pub const COMMAND_TUPLE_BYTES: u64 = 3;

/// One simulation setup. `runs` and seeds are handled by the caller;
/// this describes a single run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub protocol: ProtocolConfig,
    pub traffic: TrafficConfig,
    pub topology: Topology,
    /// Simulated seconds.
    pub duration_s: u32,
    /// CAP (command) queue capacity per node.
    pub q_cap: usize,
    /// GTS (data) queue capacity per node.
    pub q_gts: usize,
    pub scheduler: SchedulerConfig,
    /// The common channel CSMA/CA traffic uses during CAPs.
    pub c_cap: Channel,
    /// Data packet MPDU size in bytes.
    pub data_bytes: u64,
    /// GTS command MPDU base size in bytes; each carried tuple adds
    /// [`COMMAND_TUPLE_BYTES`] more.
    pub command_bytes: u64,
    /// Minimum spacing between successive handshake starts at one node.
    /// Pacing keeps the instantaneous CAP contention near what a real
    /// deployment sees instead of synchronized bursts at schedule
    /// boundaries.
    pub hs_pacing_symbols: u64,
}

impl Scenario {
    pub fn new(protocol: ProtocolConfig, traffic: TrafficConfig, topology: Topology) -> Scenario {
        let pacing = crate::frame::TimingTable::from_config(&protocol).symbols_per_sf;
        Scenario {
            protocol,
            traffic,
            topology,
            duration_s: 60,
            q_cap: 8,
            q_gts: 22,
            scheduler: SchedulerConfig::default(),
            c_cap: 0,
            data_bytes: 127,
            command_bytes: 23,
            hs_pacing_symbols: pacing,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.protocol.validate().map_err(ScenarioError::Config)?;
        if self.duration_s == 0 {
            return Err(ScenarioError::ZeroDuration);
        }
        if self.topology.is_empty() {
            return Err(ScenarioError::EmptyTopology);
        }
        if self.traffic.delta == 0 {
            return Err(ScenarioError::ZeroDelta);
        }
        if self.data_bytes == 0 || self.data_bytes > 127 {
            return Err(ScenarioError::BadFrameSize(self.data_bytes));
        }
        if self.command_bytes == 0 || self.command_bytes > 127 {
            return Err(ScenarioError::BadFrameSize(self.command_bytes));
        }
        let slot_symbols = crate::frame::TimingTable::from_config(&self.protocol).symbols_per_slot;
        if self.data_frame_symbols() > slot_symbols {
            return Err(ScenarioError::FrameExceedsSlot {
                frame: self.data_frame_symbols(),
                slot: slot_symbols,
            });
        }
        Ok(())
    }

    pub fn data_frame_symbols(&self) -> u64 {
        PHY_OVERHEAD_SYMBOLS + SYMBOLS_PER_BYTE * self.data_bytes
    }

    pub fn command_frame_symbols(&self, tuples: usize) -> u64 {
        PHY_OVERHEAD_SYMBOLS
            + SYMBOLS_PER_BYTE * (self.command_bytes + COMMAND_TUPLE_BYTES * tuples as u64)
    }

    pub fn ack_symbols(&self) -> u64 {
        PHY_OVERHEAD_SYMBOLS + SYMBOLS_PER_BYTE * ACK_BYTES
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("topology has no nodes")]
    EmptyTopology,
    #[error("delta must be at least 1")]
    ZeroDelta,
    #[error("frame payload of {0} bytes does not fit a 127-byte MPDU")]
    BadFrameSize(u64),
    #[error("a {frame}-symbol data frame does not fit the {slot}-symbol slot")]
    FrameExceedsSlot { frame: u64, slot: u64 },
}

/// Outcome of one seeded run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: RawTrace,
    pub trace_hash: u64,
    /// Breaches of the slot/channel exclusivity and structure
    /// invariants; always zero unless the engine has a bug.
    pub violations: u64,
}

/// Execute one run. Identical `(scenario, seed)` pairs produce
/// identical traces.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunResult, ScenarioError> {
    scenario.validate()?;
    Ok(engine::Engine::new(scenario, seed).run())
}
