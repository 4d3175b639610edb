//! The event loop: slot clock, slotted CSMA/CA on the CAP channel,
//! GTS transfers, handshake transport, scheduler ticks and the mode
//! dynamics. One run is single-threaded and a pure function of
//! `(scenario, seed)`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;

use crate::alloc::{
    deallocation_order, propose_batch, ActEntry, AllocationCounterTable, Channel, CommandClass,
    ConversionTable, EntryState, GtsCommand, GtsDirection, GtsKind, Handshake, HandshakeId,
    HandshakePhase, HsAction, MsfSlot, ProposalContext, SlotAllocationBitmap, TupleList, MAX_BATCH,
};
use crate::config::{Mode, SLOTS_PER_SF, SYMBOL_DURATION_US, UNIT_BACKOFF_SYMBOLS};
use crate::frame::{bi_uses_cr_structure, classify_slot, TimingTable};
use crate::scheduler::{fallback_kind, plan_link, update_estimate, LinkEstimate, LinkPlan};
use crate::sim::trace::{RawTrace, Sym, TraceRecord};
use crate::sim::{RunResult, Scenario, TURNAROUND_SYMBOLS};
use crate::traffic::{generate, node_rng, NodeId};

const MAC_RNG_STREAM: u64 = 0x3A0C;
/// Symbols per simulated second.
const SYMBOLS_PER_SECOND: u64 = 1_000_000 / SYMBOL_DURATION_US;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Packet {
    id: u32,
    src: NodeId,
    created_at: Sym,
}

#[derive(Debug, Clone, Copy)]
struct CmdFrame {
    cmd: GtsCommand,
    created_at: Sym,
    frame_seq: u32,
}

impl CmdFrame {
    fn unicast_dest(&self) -> Option<NodeId> {
        match self.cmd.class {
            CommandClass::Request => Some(self.cmd.id.responder),
            CommandClass::Response | CommandClass::Notify => None,
        }
    }

    /// The peer that must decode this frame for the handshake to
    /// advance; broadcasts still have one addressed counterpart.
    fn addressed_peer(&self) -> NodeId {
        match self.cmd.class {
            CommandClass::Request | CommandClass::Notify => self.cmd.id.responder,
            CommandClass::Response => self.cmd.id.initiator,
        }
    }
}

#[derive(Debug, Default)]
struct CsmaState {
    current: Option<CmdFrame>,
    backoff_remaining: u64,
    nb: u8,
    be: u8,
    attempts: u8,
    transmitting: bool,
    /// Guards against stale scheduled events after state resets.
    gen: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct PendingIntents {
    alloc: u32,
    dealloc: u32,
    /// Expired links release slots regardless of per-slot idle age.
    dealloc_any_idle: bool,
    /// Alternate between cleanup and growth so neither starves.
    dealloc_turn: bool,
}

/// What a deallocation must restore per tuple if it rolls back.
#[derive(Debug, Clone, Copy)]
struct EntryRestore {
    had_entry: bool,
    state: EntryState,
}

const NO_RESTORE: EntryRestore = EntryRestore {
    had_entry: false,
    state: EntryState::Valid,
};

#[derive(Debug, Clone, Copy)]
struct InitiatorRecord {
    hs: Handshake,
    restore: [EntryRestore; MAX_BATCH],
}

#[derive(Debug, Clone, Copy)]
struct ResponderRecord {
    hs: Handshake,
    restore: [EntryRestore; MAX_BATCH],
}

#[derive(Debug, Default)]
struct HsManager {
    intents: BTreeMap<NodeId, PendingIntents>,
    /// Initiator-side transaction, one in flight per counterpart.
    active: BTreeMap<NodeId, InitiatorRecord>,
    /// Responder-side records keyed by (initiator, seq).
    responding: BTreeMap<(NodeId, u32), ResponderRecord>,
    /// Peers whose regular CFP capacity rejected a whole batch, with
    /// the schedule index the memo expires at.
    peer_cfp_exhausted: BTreeMap<NodeId, u64>,
    next_seq: u32,
    /// Earliest time the node may start its next transaction.
    next_start_at: Sym,
    /// Current pacing interval; success shrinks it, congestion doubles
    /// it (AIMD over the management traffic rate).
    pacing: Sym,
    kick_scheduled: bool,
}

struct Node {
    parent: Option<NodeId>,
    sab: SlotAllocationBitmap,
    act: AllocationCounterTable,
    gts_queue: VecDeque<Packet>,
    cap_queue: VecDeque<CmdFrame>,
    csma: CsmaState,
    hs: HsManager,
    est: Option<LinkEstimate>,
    arrivals_this_msf: u32,
    prev_queue_len: u32,
    /// CAP-reduction bit for the current beacon interval, refreshed by
    /// the (lossless) beacons and by the node's own interval count.
    current_mode_bit: bool,
    rng_mac: rand_chacha::ChaCha8Rng,
    arrivals: Vec<Sym>,
    next_arrival: usize,
}

#[derive(Debug, Clone, Copy)]
struct ActiveTx {
    sender: NodeId,
    start: Sym,
    end: Sym,
    collided: bool,
    frame: CmdFrame,
}

#[derive(Debug, Default)]
struct Medium {
    active: Vec<ActiveTx>,
    ack_busy_until: Sym,
}

impl Medium {
    fn busy_at(&self, t: Sym) -> bool {
        t < self.ack_busy_until || self.active.iter().any(|tx| tx.start <= t && t < tx.end)
    }

    fn add(&mut self, mut tx: ActiveTx) {
        let mut clobbered = false;
        for other in &mut self.active {
            if other.end > tx.start && tx.end > other.start {
                other.collided = true;
                clobbered = true;
            }
        }
        tx.collided = clobbered;
        self.active.push(tx);
    }

    fn finish(&mut self, sender: NodeId, end: Sym) -> ActiveTx {
        let idx = self
            .active
            .iter()
            .position(|tx| tx.sender == sender && tx.end == end)
            .expect("transmission end without record");
        self.active.swap_remove(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    SlotStart,
    PacketGen,
    GtsDeliver {
        rx: NodeId,
        pkt: Packet,
        slot: MsfSlot,
        channel: Channel,
    },
    TxEnd,
    CmdEnqueue {
        cmd: GtsCommand,
    },
    CsmaCca {
        gen: u64,
    },
    HsKick,
    HsTimeout {
        peer: NodeId,
        seq: u32,
        phase: HandshakePhase,
        initiator_side: bool,
    },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::SlotStart => 0,
            EventKind::GtsDeliver { .. } => 1,
            EventKind::TxEnd => 2,
            EventKind::PacketGen => 3,
            EventKind::CmdEnqueue { .. } => 4,
            EventKind::CsmaCca { .. } => 5,
            EventKind::HsKick => 6,
            EventKind::HsTimeout { .. } => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    t: Sym,
    rank: u8,
    node: NodeId,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.t, self.rank, self.node, self.seq).cmp(&(other.t, other.rank, other.node, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct LinkGts {
    tx: NodeId,
    rx: NodeId,
    kind: GtsKind,
    suspended: bool,
}

pub(super) struct Engine<'a> {
    sc: &'a Scenario,
    timing: TimingTable,
    n_sf: u64,
    n_sf_bi: u64,
    mode: Mode,
    end: Sym,
    now: Sym,
    events: BinaryHeap<Reverse<Event>>,
    event_seq: u64,
    nodes: Vec<Node>,
    hop_order: Vec<NodeId>,
    conversions: ConversionTable,
    /// Committed transfer links, the medium truth for GTS traffic.
    registry: BTreeMap<(MsfSlot, Channel), LinkGts>,
    medium: Medium,
    trace: RawTrace,
    violations: u64,
    msf_index: u64,
    bi_index: u64,
    next_pkt: u32,
    next_frame_seq: u32,
}

impl<'a> Engine<'a> {
    pub(super) fn new(sc: &'a Scenario, seed: u64) -> Engine<'a> {
        let timing = TimingTable::from_config(&sc.protocol);
        let first_bit = bi_uses_cr_structure(sc.protocol.mode, 0, sc.protocol.acr_cr_on_even);
        let nodes = (0..sc.topology.len() as NodeId)
            .map(|id| Node {
                parent: sc.topology.parent[id as usize],
                sab: SlotAllocationBitmap::new(sc.protocol.n_sf()),
                act: AllocationCounterTable::default(),
                gts_queue: VecDeque::new(),
                cap_queue: VecDeque::new(),
                csma: CsmaState::default(),
                hs: HsManager::default(),
                est: None,
                arrivals_this_msf: 0,
                prev_queue_len: 0,
                current_mode_bit: first_bit,
                rng_mac: node_rng(seed, id, MAC_RNG_STREAM),
                arrivals: generate(&sc.traffic, &sc.topology, id, sc.duration_s, seed)
                    .into_iter()
                    .map(|us| us / SYMBOL_DURATION_US)
                    .collect(),
                next_arrival: 0,
            })
            .collect();
        let mut engine = Engine {
            sc,
            timing,
            n_sf: sc.protocol.n_sf(),
            n_sf_bi: sc.protocol.n_sf_bi(),
            mode: sc.protocol.mode,
            end: sc.duration_s as u64 * SYMBOLS_PER_SECOND,
            now: 0,
            events: BinaryHeap::new(),
            event_seq: 0,
            nodes,
            hop_order: sc.topology.nodes_by_hop(),
            conversions: ConversionTable::new(sc.protocol.n_sf()),
            registry: BTreeMap::new(),
            medium: Medium::default(),
            trace: RawTrace::default(),
            violations: 0,
            msf_index: 0,
            bi_index: 0,
            next_pkt: 0,
            next_frame_seq: 0,
        };
        engine.schedule(0, 0, EventKind::SlotStart);
        for id in 0..engine.nodes.len() as NodeId {
            engine.schedule_next_arrival(id);
        }
        engine
    }

    pub(super) fn run(mut self) -> RunResult {
        let mut in_flight = 0u32;
        while let Some(Reverse(ev)) = self.events.pop() {
            if ev.t >= self.end {
                if matches!(ev.kind, EventKind::GtsDeliver { .. }) {
                    in_flight += 1;
                }
                continue;
            }
            self.now = ev.t;
            self.dispatch(ev);
        }
        let residual: u32 =
            in_flight + self.nodes.iter().map(|n| n.gts_queue.len() as u32).sum::<u32>();
        self.trace.push(TraceRecord::RunEnd {
            t: self.end,
            residual,
        });
        let trace_hash = self.trace.content_hash();
        RunResult {
            trace: self.trace,
            trace_hash,
            violations: self.violations,
        }
    }

    // -- plumbing ------------------------------------------------------

    fn schedule(&mut self, t: Sym, node: NodeId, kind: EventKind) {
        let seq = self.event_seq;
        self.event_seq += 1;
        self.events.push(Reverse(Event {
            t,
            rank: kind.rank(),
            node,
            seq,
            kind,
        }));
    }

    fn emit(&mut self, r: TraceRecord) {
        self.trace.push(r);
    }

    fn violation(&mut self, what: &'static str) {
        self.violations += 1;
        let t = self.now;
        self.trace.push(TraceRecord::Violation { t, what });
        debug_assert!(false, "invariant breach: {what}");
    }

    fn dispatch(&mut self, ev: Event) {
        match ev.kind {
            EventKind::SlotStart => self.on_slot_start(ev.t),
            EventKind::PacketGen => self.on_packet_gen(ev.node),
            EventKind::GtsDeliver {
                rx,
                pkt,
                slot,
                channel,
            } => self.on_gts_deliver(ev.node, rx, pkt, slot, channel),
            EventKind::TxEnd => self.on_tx_end(ev.node, ev.t),
            EventKind::CmdEnqueue { cmd } => {
                self.enqueue_command(ev.node, cmd, ev.t);
            }
            EventKind::HsKick => {
                self.nodes[ev.node as usize].hs.kick_scheduled = false;
                self.try_start_handshakes(ev.node);
            }
            EventKind::CsmaCca { gen } => {
                if self.nodes[ev.node as usize].csma.gen == gen {
                    self.on_cca(ev.node, ev.t);
                }
            }
            EventKind::HsTimeout {
                peer,
                seq,
                phase,
                initiator_side,
            } => self.on_hs_timeout(ev.node, peer, seq, phase, initiator_side),
        }
    }

    // -- frame geometry --------------------------------------------------

    fn global_slot(&self, t: Sym) -> u64 {
        t / self.timing.symbols_per_slot
    }

    fn msf_of_slot(&self, global_slot: u64) -> u64 {
        global_slot / (SLOTS_PER_SF * self.n_sf)
    }

    fn bi_of_slot(&self, global_slot: u64) -> u64 {
        global_slot / (SLOTS_PER_SF * self.n_sf_bi)
    }

    fn msf_slot_of(&self, global_slot: u64) -> MsfSlot {
        (global_slot % (SLOTS_PER_SF * self.n_sf)) as MsfSlot
    }

    fn in_cr_interval(&self, bi: u64) -> bool {
        bi_uses_cr_structure(self.mode, bi, self.sc.protocol.acr_cr_on_even)
    }

    /// Node-local CAP test for one slot: static classification by
    /// interval parity, minus any active converted slot the node itself
    /// is party to.
    fn is_cap_for(&self, node: NodeId, global_slot: u64) -> bool {
        let slot_in_sf = global_slot % SLOTS_PER_SF;
        let sf_in_msf = (global_slot / SLOTS_PER_SF) % self.n_sf;
        let cr = self.in_cr_interval(self.bi_of_slot(global_slot));
        let kind = classify_slot(self.mode, cr, sf_in_msf, slot_in_sf);
        if !kind.is_cap_like() {
            return false;
        }
        if self.mode == Mode::Dcr {
            let msf = self.msf_of_slot(global_slot);
            if self
                .conversions
                .active_for(self.msf_slot_of(global_slot), node, msf)
                .is_some()
            {
                return false;
            }
        }
        true
    }

    /// Whether the node listens on the CAP channel over the whole span.
    fn on_cap_channel(&self, node: NodeId, start: Sym, end: Sym) -> bool {
        let first = self.global_slot(start);
        let last = self.global_slot(end.saturating_sub(1));
        (first..=last).all(|g| self.is_cap_for(node, g))
    }

    /// The next maximal CAP interval for the node at or after `from`.
    fn next_cap_interval(&self, node: NodeId, from: Sym) -> (Sym, Sym) {
        let slot_sym = self.timing.symbols_per_slot;
        let mut g = self.global_slot(from);
        let limit = g + 4 * SLOTS_PER_SF * self.n_sf_bi;
        while !self.is_cap_for(node, g) {
            g += 1;
            assert!(g <= limit, "no CAP slot found within two beacon intervals");
        }
        let start = g * slot_sym;
        let mut end_slot = g + 1;
        while self.is_cap_for(node, end_slot) {
            end_slot += 1;
        }
        (start.max(from), end_slot * slot_sym)
    }

    fn command_symbols(&self, cmd: &GtsCommand) -> u64 {
        self.sc.command_frame_symbols(cmd.tuples.len())
    }

    // -- traffic ----------------------------------------------------------

    fn schedule_next_arrival(&mut self, node: NodeId) {
        let n = &self.nodes[node as usize];
        if let Some(&t) = n.arrivals.get(n.next_arrival) {
            self.schedule(t, node, EventKind::PacketGen);
        }
    }

    fn on_packet_gen(&mut self, node: NodeId) {
        let pkt = Packet {
            id: self.next_pkt,
            src: node,
            created_at: self.now,
        };
        self.next_pkt += 1;
        let t = self.now;
        self.emit(TraceRecord::Generated { t, node, pkt: pkt.id });
        let q_gts = self.sc.q_gts;
        let n = &mut self.nodes[node as usize];
        n.next_arrival += 1;
        n.arrivals_this_msf += 1;
        if n.gts_queue.len() < q_gts {
            n.gts_queue.push_back(pkt);
        } else {
            self.emit(TraceRecord::Dropped { t, node, pkt: pkt.id });
        }
        self.schedule_next_arrival(node);
    }

    fn on_gts_deliver(
        &mut self,
        tx: NodeId,
        rx: NodeId,
        pkt: Packet,
        slot: MsfSlot,
        channel: Channel,
    ) {
        let t = self.now;
        self.emit(TraceRecord::GtsTransfer {
            t,
            slot,
            channel,
            tx,
            rx,
            pkt: pkt.id,
        });
        if rx == self.sc.topology.sink {
            self.emit(TraceRecord::Delivered { t, pkt: pkt.id });
            return;
        }
        let q_gts = self.sc.q_gts;
        let n = &mut self.nodes[rx as usize];
        n.arrivals_this_msf += 1;
        if n.gts_queue.len() < q_gts {
            n.gts_queue.push_back(pkt);
        } else {
            self.emit(TraceRecord::Dropped { t, node: rx, pkt: pkt.id });
        }
    }

    // -- slot clock ---------------------------------------------------------

    fn on_slot_start(&mut self, t: Sym) {
        let g = self.global_slot(t);
        let slot_in_sf = g % SLOTS_PER_SF;
        let sf_in_msf = (g / SLOTS_PER_SF) % self.n_sf;
        if slot_in_sf == 0 {
            if (g / SLOTS_PER_SF).is_multiple_of(self.n_sf_bi) {
                self.on_bi_boundary(self.bi_of_slot(g));
            }
            if sf_in_msf == 0 {
                self.on_msf_boundary(self.msf_of_slot(g));
            }
        }
        self.run_gts_transfers(t, g);
        let next = t + self.timing.symbols_per_slot;
        if next < self.end {
            self.schedule(next, 0, EventKind::SlotStart);
        }
    }

    fn on_bi_boundary(&mut self, bi: u64) {
        self.bi_index = bi;
        // Beacons are lossless markers carrying the CAP-reduction bit;
        // nodes also track interval parity themselves and flip
        // identically when one is missed.
        let bit = self.in_cr_interval(bi);
        for n in &mut self.nodes {
            n.current_mode_bit = bit;
        }
    }

    fn on_msf_boundary(&mut self, msf: u64) {
        self.msf_index = msf;
        let released: Vec<MsfSlot> = self
            .conversions
            .iter()
            .filter(|(_, c)| c.released_from_msf.map(|m| m <= msf).unwrap_or(false))
            .map(|(s, _)| *s)
            .collect();
        let t = self.now;
        for slot in released {
            self.emit(TraceRecord::ConversionReleased { t, slot });
        }
        self.conversions.prune_released(msf);
        if msf == 0 {
            return;
        }
        for i in 0..self.hop_order.len() {
            self.scheduler_tick(self.hop_order[i]);
        }
        for i in 0..self.hop_order.len() {
            self.try_start_handshakes(self.hop_order[i]);
        }
    }

    fn usable_valid_count(&self, node: NodeId) -> u16 {
        let cr_now = self.nodes[node as usize].current_mode_bit;
        self.nodes[node as usize]
            .act
            .iter()
            .filter(|e| {
                e.state == EntryState::Valid
                    && match e.kind {
                        GtsKind::CfpGts => true,
                        GtsKind::CapGts => match self.mode {
                            Mode::Acr => cr_now,
                            Mode::Dcr => self
                                .conversions
                                .active_for(e.slot, node, self.msf_index)
                                .is_some(),
                            _ => false,
                        },
                    }
            })
            .count() as u16
    }

    fn scheduler_tick(&mut self, id: NodeId) {
        let t = self.now;
        let usable = self.usable_valid_count(id);
        let cfg = self.sc.scheduler;
        let expiration = cfg.expiration_msfs;

        // Demand this MSF: offered arrivals plus the backlog the link
        // carried in; each queued packet renews its claim to a slot.
        let node = &mut self.nodes[id as usize];
        let demand = node.arrivals_this_msf + node.prev_queue_len;
        node.arrivals_this_msf = 0;
        node.prev_queue_len = node.gts_queue.len() as u32;
        let gts_len = node.gts_queue.len() as u16;

        // Idle bookkeeping; collect cleanup demand toward each peer.
        let mut cleanup: BTreeMap<NodeId, u32> = BTreeMap::new();
        for e in node.act.iter_mut() {
            if e.used_this_msf {
                e.idle_msfs = 0;
                e.used_this_msf = false;
            } else if e.state == EntryState::Valid {
                e.idle_msfs = e.idle_msfs.saturating_add(1);
                if e.direction == GtsDirection::Rx && e.idle_msfs > expiration {
                    *cleanup.entry(e.peer).or_default() += 1;
                }
            } else if e.state == EntryState::Invalid {
                *cleanup.entry(e.peer).or_default() += 1;
            }
        }
        // Entries tied up in an in-flight handshake are not cleanup work.
        for (peer, count) in cleanup {
            if node.hs.active.contains_key(&peer) {
                continue;
            }
            let i = node.hs.intents.entry(peer).or_default();
            i.dealloc = i.dealloc.max(count);
        }

        if let Some(parent) = node.parent {
            let mut tx_cfp = 0u32;
            let mut tx_cap = 0u32;
            for e in node.act.iter() {
                if e.direction == GtsDirection::Tx
                    && e.peer == parent
                    && e.state == EntryState::Valid
                {
                    match e.kind {
                        GtsKind::CfpGts => tx_cfp += 1,
                        GtsKind::CapGts => tx_cap += 1,
                    }
                }
            }
            let mut est = match node.est {
                Some(prev) => update_estimate(&prev, demand, &cfg),
                None if demand > 0 => LinkEstimate::seeded(demand),
                None => return self.finish_tick(id, t, gts_len, usable),
            };
            est.allocated_cfp = tx_cfp;
            est.allocated_cap = tx_cap;
            node.est = Some(est);
            let plan = plan_link(&est, &cfg);
            let entry = node.hs.intents.entry(parent).or_default();
            match plan {
                LinkPlan::NoChange => {
                    entry.alloc = 0;
                }
                LinkPlan::Allocate(n) => {
                    entry.alloc = n;
                }
                LinkPlan::Deallocate(n) => {
                    entry.alloc = 0;
                    entry.dealloc = entry.dealloc.max(n);
                }
                LinkPlan::Expire => {
                    entry.alloc = 0;
                    entry.dealloc = entry.dealloc.max(tx_cfp + tx_cap);
                    entry.dealloc_any_idle = true;
                }
            }
        }
        self.finish_tick(id, t, gts_len, usable);
    }

    fn finish_tick(&mut self, id: NodeId, t: Sym, gts_len: u16, usable: u16) {
        self.emit(TraceRecord::QueueSample {
            t,
            node: id,
            gts_len,
        });
        self.emit(TraceRecord::AllocSample {
            t,
            node: id,
            usable,
        });
    }

    // -- GTS transfers -------------------------------------------------------

    fn run_gts_transfers(&mut self, t: Sym, g: u64) {
        let msf_slot = self.msf_slot_of(g);
        let msf = self.msf_of_slot(g);
        let cr_now = self.in_cr_interval(self.bi_of_slot(g));
        let candidates: Vec<(MsfSlot, Channel, LinkGts)> = self
            .registry
            .range((msf_slot, 0u8)..=(msf_slot, u8::MAX))
            .map(|(&(s, c), &l)| (s, c, l))
            .collect();
        if candidates.is_empty() {
            return;
        }
        let mut stale: Vec<(MsfSlot, Channel)> = Vec::new();
        let mut seen_nodes: Vec<NodeId> = Vec::new();
        for (slot, channel, link) in candidates {
            if link.suspended {
                continue;
            }
            let usable = match link.kind {
                GtsKind::CfpGts => true,
                GtsKind::CapGts => match self.mode {
                    Mode::Acr => cr_now,
                    Mode::Dcr => self.conversions.active_for(slot, link.tx, msf).is_some(),
                    _ => false,
                },
            };
            if !usable {
                continue;
            }
            // Both endpoints must still hold live entries; a one-sided
            // commit (lost notify) leaves a husk that idles out.
            let live = |n: NodeId| {
                self.nodes[n as usize]
                    .act
                    .find(slot, channel)
                    .map(|e| e.state == EntryState::Valid)
                    .unwrap_or(false)
            };
            if !live(link.tx) || !live(link.rx) {
                if !live(link.tx) && !live(link.rx) {
                    stale.push((slot, channel));
                }
                continue;
            }
            if seen_nodes.contains(&link.tx) || seen_nodes.contains(&link.rx) {
                self.violation("node scheduled twice in one slot");
                continue;
            }
            seen_nodes.push(link.tx);
            seen_nodes.push(link.rx);

            let popped = self.nodes[link.tx as usize].gts_queue.pop_front();
            if let Some(pkt) = popped {
                for n in [link.tx, link.rx] {
                    if let Some(e) = self.nodes[n as usize].act.find_mut(slot, channel) {
                        e.used_this_msf = true;
                    }
                }
                self.schedule(
                    t + self.sc.data_frame_symbols(),
                    link.tx,
                    EventKind::GtsDeliver {
                        rx: link.rx,
                        pkt,
                        slot,
                        channel,
                    },
                );
            }
        }
        for key in stale {
            self.registry.remove(&key);
        }
    }

    // -- CSMA/CA --------------------------------------------------------------

    /// Requests issued at a schedule boundary stagger over the first
    /// half of the schedule repetition; without this every station hits
    /// the first CAP in lockstep and the tie collisions shred the
    /// broadcast replies. The dwell clock starts when the frame is
    /// actually issued, after the stagger.
    fn enqueue_jittered(&mut self, node: NodeId, cmd: GtsCommand) {
        let span = (self.timing.symbols_per_msf / 2).max(2 * self.timing.symbols_per_slot);
        let jitter = self.nodes[node as usize].rng_mac.gen_range(0..span);
        self.schedule(self.now + jitter, node, EventKind::CmdEnqueue { cmd });
    }

    fn enqueue_command(&mut self, node: NodeId, cmd: GtsCommand, created_at: Sym) {
        let t = self.now;
        let frame = CmdFrame {
            cmd,
            created_at,
            frame_seq: self.next_frame_seq,
        };
        self.next_frame_seq += 1;
        let q_cap = self.sc.q_cap;
        let n = &mut self.nodes[node as usize];
        if n.cap_queue.len() < q_cap {
            n.cap_queue.push_back(frame);
            self.emit(TraceRecord::CommandQueued {
                t,
                node,
                class: cmd.class,
                seq: frame.frame_seq,
            });
            self.try_start_csma(node);
        } else {
            self.emit(TraceRecord::CommandDropped {
                t,
                node,
                class: cmd.class,
                seq: frame.frame_seq,
            });
        }
    }

    fn try_start_csma(&mut self, node: NodeId) {
        let now = self.now;
        let n = &mut self.nodes[node as usize];
        if n.csma.current.is_some() || n.csma.transmitting {
            return;
        }
        let Some(frame) = n.cap_queue.pop_front() else {
            return;
        };
        n.csma.current = Some(frame);
        n.csma.attempts = 0;
        self.begin_attempt(node, now);
    }

    fn begin_attempt(&mut self, node: NodeId, from: Sym) {
        let min_be = self.sc.protocol.csma.min_be;
        let n = &mut self.nodes[node as usize];
        n.csma.nb = 0;
        n.csma.be = min_be;
        n.csma.backoff_remaining = n.rng_mac.gen_range(0..(1u64 << min_be));
        self.csma_progress(node, from);
    }

    /// Walk CAP intervals counting the backoff down; the counter pauses
    /// outside the node's CAP slots. Schedules the CCA at expiry.
    fn csma_progress(&mut self, node: NodeId, from: Sym) {
        let mut from = from;
        loop {
            let (start, end) = self.next_cap_interval(node, from);
            let base = if from <= start {
                start
            } else {
                start + (from - start).div_ceil(UNIT_BACKOFF_SYMBOLS) * UNIT_BACKOFF_SYMBOLS
            };
            let avail = (end - base) / UNIT_BACKOFF_SYMBOLS;
            let remaining = self.nodes[node as usize].csma.backoff_remaining;
            if remaining < avail {
                let at = base + remaining * UNIT_BACKOFF_SYMBOLS;
                self.nodes[node as usize].csma.backoff_remaining = 0;
                let gen = self.bump_gen(node);
                self.schedule(at, node, EventKind::CsmaCca { gen });
                return;
            }
            self.nodes[node as usize].csma.backoff_remaining = remaining - avail;
            from = end;
        }
    }

    fn bump_gen(&mut self, node: NodeId) -> u64 {
        let n = &mut self.nodes[node as usize];
        n.csma.gen += 1;
        n.csma.gen
    }

    fn on_cca(&mut self, node: NodeId, t: Sym) {
        if !self.is_cap_for(node, self.global_slot(t)) {
            // The slot was reclassified (a conversion activated) after
            // this check was scheduled.
            self.csma_progress(node, t);
            return;
        }
        let Some(frame) = self.nodes[node as usize].csma.current else {
            return;
        };
        let frame_syms = self.command_symbols(&frame.cmd);
        let unicast = frame.unicast_dest();
        let ack_extra = if unicast.is_some() {
            TURNAROUND_SYMBOLS + self.sc.ack_symbols()
        } else {
            0
        };
        let need = UNIT_BACKOFF_SYMBOLS + frame_syms + ack_extra;
        let (_, interval_end) = self.next_cap_interval(node, t);
        if t + need > interval_end {
            // Does not fit before the CAP ends; defer to the next one.
            self.nodes[node as usize].csma.backoff_remaining = 0;
            self.csma_progress(node, interval_end);
            return;
        }
        let tx_start = t + UNIT_BACKOFF_SYMBOLS;
        let tx_end = tx_start + frame_syms;
        // Hold back frames whose addressed counterpart sits in a
        // converted GTS right now; it is listening on another channel
        // and the handshake cannot advance without it.
        let key_peer = frame.addressed_peer();
        if !self.on_cap_channel(key_peer, tx_start, tx_end) {
            self.nodes[node as usize].csma.backoff_remaining = 0;
            let next_slot = (self.global_slot(t) + 1) * self.timing.symbols_per_slot;
            self.csma_progress(node, next_slot);
            return;
        }
        if self.medium.busy_at(t) {
            let csma = self.sc.protocol.csma;
            let n = &mut self.nodes[node as usize];
            n.csma.nb += 1;
            if n.csma.nb > csma.max_csma_backoffs {
                self.attempt_failed(node, t);
                return;
            }
            n.csma.be = (n.csma.be + 1).min(csma.max_be);
            let be = n.csma.be;
            n.csma.backoff_remaining = n.rng_mac.gen_range(0..(1u64 << be));
            self.csma_progress(node, t);
            return;
        }
        self.medium.add(ActiveTx {
            sender: node,
            start: tx_start,
            end: tx_end,
            collided: false,
            frame,
        });
        self.nodes[node as usize].csma.transmitting = true;
        self.schedule(tx_end, node, EventKind::TxEnd);
    }

    fn attempt_failed(&mut self, node: NodeId, t: Sym) {
        let max_retries = self.sc.protocol.csma.max_retries;
        let n = &mut self.nodes[node as usize];
        n.csma.attempts += 1;
        if n.csma.attempts > max_retries {
            let frame = n.csma.current.take().unwrap();
            self.emit(TraceRecord::CommandFailed {
                t,
                node,
                class: frame.cmd.class,
                seq: frame.frame_seq,
            });
            self.sender_gave_up(node, &frame);
            self.try_start_csma(node);
        } else {
            self.begin_attempt(node, t);
        }
    }

    /// A request that definitively failed to reach the counterpart rolls
    /// its handshake back right away instead of waiting for the timeout.
    fn sender_gave_up(&mut self, node: NodeId, frame: &CmdFrame) {
        if frame.cmd.class == CommandClass::Request && frame.cmd.id.initiator == node {
            let matches = self.nodes[node as usize]
                .hs
                .active
                .get(&frame.cmd.id.responder)
                .map(|r| r.hs.id.seq == frame.cmd.id.seq)
                .unwrap_or(false);
            if matches {
                self.rollback_initiator(node, frame.cmd.id.responder, "send_failed");
            }
        }
    }

    fn on_tx_end(&mut self, node: NodeId, t: Sym) {
        let tx = self.medium.finish(node, t);
        self.nodes[node as usize].csma.transmitting = false;
        let frame = tx.frame;
        let listeners: Vec<NodeId> = (0..self.nodes.len() as NodeId)
            .filter(|&l| l != node && self.on_cap_channel(l, tx.start, tx.end))
            .collect();

        match frame.unicast_dest() {
            Some(dest) => {
                let success = !tx.collided && listeners.contains(&dest);
                if success {
                    self.medium.ack_busy_until = self
                        .medium
                        .ack_busy_until
                        .max(t + TURNAROUND_SYMBOLS + self.sc.ack_symbols());
                    self.emit(TraceRecord::CommandSent {
                        t,
                        node,
                        class: frame.cmd.class,
                        seq: frame.frame_seq,
                        dwell: tx.start - frame.created_at,
                        collided: false,
                    });
                    self.nodes[node as usize].csma.current = None;
                    self.on_request_received(dest, frame.cmd);
                    self.try_start_csma(node);
                } else {
                    self.attempt_failed(node, t);
                }
            }
            None => {
                self.emit(TraceRecord::CommandSent {
                    t,
                    node,
                    class: frame.cmd.class,
                    seq: frame.frame_seq,
                    dwell: tx.start - frame.created_at,
                    collided: tx.collided,
                });
                self.nodes[node as usize].csma.current = None;
                // A notify sender commits at transmission; a broadcast
                // collision is invisible to it.
                if frame.cmd.class == CommandClass::Notify {
                    self.on_notify_sent(node, frame.cmd);
                }
                if !tx.collided {
                    match frame.cmd.class {
                        CommandClass::Response => self.deliver_response(&listeners, frame.cmd),
                        CommandClass::Notify => self.deliver_notify(&listeners, frame.cmd),
                        CommandClass::Request => unreachable!("requests are unicast"),
                    }
                }
                self.try_start_csma(node);
            }
        }
    }

    // -- handshake: initiation -----------------------------------------------

    /// Spacing between CAP starts under the structure the node sees
    /// now: every superframe without reduction, once per MSF with it.
    fn pacing_base(&self, node: NodeId) -> Sym {
        let cr_now = self.nodes[node as usize].current_mode_bit;
        let scale = self.sc.hs_pacing_symbols;
        if cr_now {
            scale * self.n_sf
        } else {
            scale
        }
    }

    fn adapt_pacing(&mut self, node: NodeId, congested: bool) {
        let base = self.pacing_base(node);
        let floor = base / 8;
        let cap = (32 * self.sc.hs_pacing_symbols).max(base);
        let cur = self.nodes[node as usize].hs.pacing.clamp(floor, cap);
        self.nodes[node as usize].hs.pacing = if congested {
            (cur * 2).min(cap)
        } else {
            (cur / 2).max(floor)
        };
    }

    fn try_start_handshakes(&mut self, node: NodeId) {
        // Pace transaction starts: one at a time per node, spaced by the
        // adaptive cooldown.
        let wait_until = self.nodes[node as usize].hs.next_start_at;
        if self.now < wait_until {
            self.kick_later(node, wait_until);
            return;
        }
        let peers: Vec<NodeId> = self.nodes[node as usize]
            .hs
            .intents
            .iter()
            .filter(|(_, i)| i.alloc > 0 || i.dealloc > 0)
            .map(|(&p, _)| p)
            .collect();
        for peer in peers {
            if self.nodes[node as usize].hs.active.contains_key(&peer) {
                continue;
            }
            let intents = self.nodes[node as usize]
                .hs
                .intents
                .get(&peer)
                .copied()
                .unwrap_or_default();
            let dealloc_first = intents.dealloc > 0 && (intents.alloc == 0 || intents.dealloc_turn);
            let started = if dealloc_first {
                if let Some(i) = self.nodes[node as usize].hs.intents.get_mut(&peer) {
                    i.dealloc_turn = false;
                }
                self.start_dealloc(node, peer, intents.dealloc, intents.dealloc_any_idle)
                    || (intents.alloc > 0 && self.start_alloc(node, peer, intents.alloc))
            } else if intents.alloc > 0 {
                if let Some(i) = self.nodes[node as usize].hs.intents.get_mut(&peer) {
                    i.dealloc_turn = true;
                }
                self.start_alloc(node, peer, intents.alloc)
                    || (intents.dealloc > 0
                        && self.start_dealloc(node, peer, intents.dealloc, intents.dealloc_any_idle))
            } else if intents.dealloc > 0 {
                self.start_dealloc(node, peer, intents.dealloc, intents.dealloc_any_idle)
            } else {
                false
            };
            if started {
                let pacing = self.nodes[node as usize]
                    .hs
                    .pacing
                    .max(self.pacing_base(node) / 8);
                let at = self.now + pacing;
                self.nodes[node as usize].hs.next_start_at = at;
                self.kick_later(node, at);
                return;
            }
        }
    }

    fn kick_later(&mut self, node: NodeId, at: Sym) {
        if !self.nodes[node as usize].hs.kick_scheduled {
            self.nodes[node as usize].hs.kick_scheduled = true;
            self.schedule(at, node, EventKind::HsKick);
        }
    }

    fn start_alloc(&mut self, node: NodeId, peer: NodeId, want: u32) -> bool {
        let n_sf = self.n_sf;
        let mode = self.mode;
        let now_msf = self.msf_index;
        let c_cap = self.sc.c_cap;
        let in_cr = self.nodes[node as usize].current_mode_bit;
        let want = (want as usize).min(MAX_BATCH);

        let peer_cfp_full = self.nodes[node as usize]
            .hs
            .peer_cfp_exhausted
            .get(&peer)
            .map(|&until| until > now_msf)
            .unwrap_or(false);
        let mut rng = self.nodes[node as usize].rng_mac.clone();
        let (kind, tuples) = {
            let n = &self.nodes[node as usize];
            let ctx = ProposalContext {
                sab: &n.sab,
                act: &n.act,
                peer_busy_slots: &[],
                now_msf,
                c_cap,
            };
            let cfp = if peer_cfp_full && fallback_kind(mode, in_cr).is_some() {
                TupleList::new()
            } else {
                propose_batch(mode, n_sf, GtsKind::CfpGts, &ctx, None, &mut rng, want)
            };
            if cfp.len() == want {
                (GtsKind::CfpGts, cfp)
            } else {
                // Regular proposals cannot cover the demand: the CFP is
                // depleted for this link. Fall back to CAP slots when
                // the mode allows, keeping whichever batch reaches
                // further (one kind per transaction).
                match fallback_kind(mode, in_cr) {
                    Some(kind) => {
                        let cap = propose_batch(
                            mode,
                            n_sf,
                            kind,
                            &ctx,
                            Some(&self.conversions),
                            &mut rng,
                            want - cfp.len(),
                        );
                        if cap.len() > cfp.len() {
                            (kind, cap)
                        } else {
                            (GtsKind::CfpGts, cfp)
                        }
                    }
                    None => (GtsKind::CfpGts, cfp),
                }
            }
        };
        self.nodes[node as usize].rng_mac = rng;

        if tuples.is_empty() {
            // Position-starved: the sink-ward link cannot grow while
            // feeder links hold this node's regular slots. When spare
            // conversion positions exist for the feeders to land on,
            // displace a few of their slots; otherwise shed the intents
            // until the next planning tick.
            // Dynamic reduction can re-seat displaced feeders on
            // converted slots, so a position-starved relay reclaims a
            // few of its regular slots from them there; the static
            // modes keep the plain funnel behavior.
            if mode == Mode::Dcr {
                for (victim_peer, count) in self.pick_rx_cfp_victims(node, 8) {
                    let n = &mut self.nodes[node as usize];
                    let i = n.hs.intents.entry(victim_peer).or_default();
                    i.dealloc = i.dealloc.max(count);
                    i.dealloc_any_idle = true;
                }
            }
            if let Some(i) = self.nodes[node as usize].hs.intents.get_mut(&peer) {
                i.alloc = 0;
            }
            self.trace_hs(node, "clamp", &TupleList::new(), kind, "exhausted");
            return false;
        }

        let seq = {
            let n = &mut self.nodes[node as usize];
            let s = n.hs.next_seq;
            n.hs.next_seq += 1;
            s
        };
        let id = HandshakeId {
            initiator: node,
            responder: peer,
            seq,
        };
        let deadline = self.now + self.timing.symbols_per_msf;
        {
            let n = &mut self.nodes[node as usize];
            for (slot, channel) in tuples.iter() {
                n.act.add(ActEntry {
                    slot,
                    channel,
                    direction: GtsDirection::Tx,
                    peer,
                    kind,
                    state: EntryState::Pending,
                    idle_msfs: 0,
                    used_this_msf: false,
                });
                n.sab.mark_provisional(slot, channel, now_msf + 2);
            }
            n.hs.active.insert(
                peer,
                InitiatorRecord {
                    hs: Handshake {
                        id,
                        action: HsAction::Allocate,
                        kind,
                        tuples,
                        phase: HandshakePhase::RequestSent,
                        deadline,
                    },
                    restore: [NO_RESTORE; MAX_BATCH],
                },
            );
        }
        self.schedule(
            deadline,
            node,
            EventKind::HsTimeout {
                peer,
                seq,
                phase: HandshakePhase::RequestSent,
                initiator_side: true,
            },
        );
        self.trace_hs(node, "request", &tuples, kind, "start");
        self.enqueue_jittered(
            node,
            GtsCommand {
                class: CommandClass::Request,
                id,
                action: HsAction::Allocate,
                kind,
                tuples,
                grant: false,
            },
        );
        true
    }

    fn start_dealloc(&mut self, node: NodeId, peer: NodeId, want: u32, any_idle: bool) -> bool {
        let expiration = self.sc.scheduler.expiration_msfs;
        let want = (want as usize).min(MAX_BATCH);
        let (tuples, kind, restore) = {
            let n = &self.nodes[node as usize];
            let mut tuples = TupleList::new();
            let mut restore = [NO_RESTORE; MAX_BATCH];
            let mut kind = GtsKind::CfpGts;
            // Invalidated entries are dead weight and go first; live
            // entries only once their idle counter has expired, unless
            // the whole link expired.
            let mut invalid: Vec<(MsfSlot, Channel, GtsKind)> = n
                .act
                .iter()
                .filter(|e| e.peer == peer && e.state == EntryState::Invalid)
                .map(|e| (e.slot, e.channel, e.kind))
                .collect();
            invalid.sort_unstable_by_key(|&(s, c, _)| (s, c));
            let eligible: Vec<(MsfSlot, Channel, GtsKind)> =
                deallocation_order(&n.act, peer, Some(&self.conversions))
                    .into_iter()
                    .filter(|&(s, c, _)| {
                        any_idle
                            || n.act
                                .find(s, c)
                                .map(|e| e.idle_msfs > expiration)
                                .unwrap_or(false)
                    })
                    .collect();
            for (s, c, k) in invalid.into_iter().chain(eligible) {
                if tuples.len() >= want || tuples.contains(s, c) {
                    continue;
                }
                if tuples.is_empty() {
                    kind = k;
                } else if k != kind {
                    // One kind per transaction keeps release ordering
                    // clean (converted slots strictly before CFP ones).
                    continue;
                }
                let e = n.act.find(s, c).unwrap();
                restore[tuples.len()] = EntryRestore {
                    had_entry: true,
                    state: e.state,
                };
                tuples.push(s, c);
            }
            (tuples, kind, restore)
        };
        if tuples.is_empty() {
            if let Some(i) = self.nodes[node as usize].hs.intents.get_mut(&peer) {
                i.dealloc = 0;
                i.dealloc_any_idle = false;
            }
            return false;
        }
        let seq = {
            let n = &mut self.nodes[node as usize];
            let s = n.hs.next_seq;
            n.hs.next_seq += 1;
            s
        };
        let id = HandshakeId {
            initiator: node,
            responder: peer,
            seq,
        };
        let deadline = self.now + self.timing.symbols_per_msf;
        {
            let n = &mut self.nodes[node as usize];
            for (slot, channel) in tuples.iter() {
                if let Some(e) = n.act.find_mut(slot, channel) {
                    e.state = EntryState::Invalid;
                }
            }
            n.hs.active.insert(
                peer,
                InitiatorRecord {
                    hs: Handshake {
                        id,
                        action: HsAction::Deallocate,
                        kind,
                        tuples,
                        phase: HandshakePhase::RequestSent,
                        deadline,
                    },
                    restore,
                },
            );
        }
        for (slot, channel) in tuples.iter() {
            if let Some(l) = self.registry.get_mut(&(slot, channel)) {
                l.suspended = true;
            }
        }
        self.schedule(
            deadline,
            node,
            EventKind::HsTimeout {
                peer,
                seq,
                phase: HandshakePhase::RequestSent,
                initiator_side: true,
            },
        );
        self.trace_hs(node, "request", &tuples, kind, "dealloc_start");
        self.enqueue_jittered(
            node,
            GtsCommand {
                class: CommandClass::Request,
                id,
                action: HsAction::Deallocate,
                kind,
                tuples,
                grant: false,
            },
        );
        true
    }

    fn trace_hs(
        &mut self,
        node: NodeId,
        phase: &'static str,
        tuples: &TupleList,
        kind: GtsKind,
        outcome: &'static str,
    ) {
        let t = self.now;
        let (slot, channel) = tuples.first().unwrap_or((0, 0));
        self.emit(TraceRecord::Handshake {
            t,
            node,
            phase,
            slot,
            channel,
            kind,
            outcome,
            count: tuples.len() as u8,
        });
    }

    // -- handshake: responder ---------------------------------------------------

    fn on_request_received(&mut self, node: NodeId, cmd: GtsCommand) {
        debug_assert_eq!(cmd.id.responder, node);
        match cmd.action {
            HsAction::Allocate => self.on_alloc_request(node, cmd),
            HsAction::Deallocate => self.on_dealloc_request(node, cmd),
        }
    }

    fn tuple_kind_ok(&self, kind: GtsKind, slot: MsfSlot) -> bool {
        let sf = slot as u64 / SLOTS_PER_SF;
        let s = slot as u64 % SLOTS_PER_SF;
        match kind {
            GtsKind::CfpGts => s >= 9 || (self.mode == Mode::Cr && sf > 0 && (1..=8).contains(&s)),
            GtsKind::CapGts => sf > 0 && (1..=8).contains(&s),
        }
    }

    /// Feeder entries sitting on this node's regular slots, to displace
    /// toward conversions when the sink-ward link is position-starved.
    fn pick_rx_cfp_victims(&self, node: NodeId, want: u32) -> Vec<(NodeId, u32)> {
        let n = &self.nodes[node as usize];
        let mut per_peer: BTreeMap<NodeId, u32> = BTreeMap::new();
        for e in n.act.iter() {
            if e.direction == GtsDirection::Rx
                && e.state == EntryState::Valid
                && e.kind == GtsKind::CfpGts
                && !n.hs.active.contains_key(&e.peer)
            {
                *per_peer.entry(e.peer).or_default() += 1;
            }
        }
        let mut picked = Vec::new();
        let mut left = want;
        let mut peers: Vec<(NodeId, u32)> = per_peer.into_iter().collect();
        peers.sort_by_key(|&(p, c)| (std::cmp::Reverse(c), p));
        for (peer, have) in peers {
            if left == 0 {
                break;
            }
            let take = have.min(left);
            picked.push((peer, take));
            left -= take;
        }
        picked
    }

    /// CFP slots a responder keeps for its own sink-ward link before
    /// granting children; links closer to the sink are served first.
    /// Only dynamic reduction re-seats the displaced feeders (on
    /// converted slots), so the static modes skip the hold-back.
    fn cfp_reserve(&self, node: NodeId) -> usize {
        if self.mode != Mode::Dcr {
            return 0;
        }
        let n = &self.nodes[node as usize];
        let Some(parent) = n.parent else {
            return 0;
        };
        // Reserving is pointless once the sink-ward side stopped
        // accepting regular slots; everything further goes through
        // conversions anyway.
        let parent_full = n
            .hs
            .peer_cfp_exhausted
            .get(&parent)
            .map(|&until| until > self.msf_index)
            .unwrap_or(false);
        if parent_full {
            return 0;
        }
        n.est
            .map(|e| {
                let target = crate::scheduler::target_slots(&e);
                (target.saturating_sub(e.allocated())) as usize
            })
            .unwrap_or(0)
    }

    fn free_cfp_slots(&self, node: NodeId) -> usize {
        let n = &self.nodes[node as usize];
        crate::alloc::cfp_candidate_slots(self.mode, self.n_sf)
            .into_iter()
            .filter(|&s| !n.act.slot_in_use(s))
            .count()
    }

    fn on_alloc_request(&mut self, node: NodeId, cmd: GtsCommand) {
        let now_msf = self.msf_index;
        // Regular capacity this responder will hand out, after holding
        // back what its own sink-ward deficit still needs.
        let cfp_budget = if cmd.kind == GtsKind::CfpGts {
            self.free_cfp_slots(node)
                .saturating_sub(self.cfp_reserve(node))
        } else {
            usize::MAX
        };

        // Validate each proposed tuple against this side's view. The
        // request carries the initiator's occupancy sub-block, so
        // clashes can be replaced by tuples free at both ends (regular
        // GTSs only; conversions are pinned to the slots drawn).
        let mut granted = TupleList::new();
        {
            let n = &self.nodes[node as usize];
            for (slot, channel) in cmd.tuples.iter() {
                let structurally_ok = self.tuple_kind_ok(cmd.kind, slot)
                    && (cmd.kind != GtsKind::CapGts || channel != self.sc.c_cap);
                let conversion_ok = cmd.kind != GtsKind::CapGts
                    || self.mode != Mode::Dcr
                    || !self.conversions.position_blocked(slot, now_msf);
                if structurally_ok
                    && conversion_ok
                    && granted.len() < cfp_budget
                    && !n.act.slot_in_use(slot)
                    && !granted.contains_slot(slot)
                    && n.sab.is_free(slot, channel, now_msf)
                {
                    granted.push(slot, channel);
                }
            }
        }
        if granted.len() < cmd.tuples.len().min(cfp_budget) && cmd.kind == GtsKind::CfpGts {
            let missing = cmd.tuples.len().min(cfp_budget) - granted.len();
            let mut busy: Vec<MsfSlot> = self.nodes[cmd.id.initiator as usize]
                .act
                .iter()
                .map(|e| e.slot)
                .collect();
            busy.extend(granted.iter().map(|(s, _)| s));
            let mut rng = self.nodes[node as usize].rng_mac.clone();
            let replacements = {
                let n = &self.nodes[node as usize];
                let ctx = ProposalContext {
                    sab: &n.sab,
                    act: &n.act,
                    peer_busy_slots: &busy,
                    now_msf,
                    c_cap: self.sc.c_cap,
                };
                propose_batch(self.mode, self.n_sf, cmd.kind, &ctx, None, &mut rng, missing)
            };
            self.nodes[node as usize].rng_mac = rng;
            for (s, c) in replacements.iter() {
                granted.push(s, c);
            }
        }

        let mut kind = cmd.kind;
        if granted.is_empty() && cmd.kind == GtsKind::CfpGts {
            // This side's regular capacity is spent; offer converted
            // CAP slots instead when the mode allows it.
            let in_cr = self.nodes[node as usize].current_mode_bit;
            if let Some(fb) = fallback_kind(self.mode, in_cr) {
                let busy: Vec<MsfSlot> = self.nodes[cmd.id.initiator as usize]
                    .act
                    .iter()
                    .map(|e| e.slot)
                    .collect();
                let mut rng = self.nodes[node as usize].rng_mac.clone();
                let counter = {
                    let n = &self.nodes[node as usize];
                    let ctx = ProposalContext {
                        sab: &n.sab,
                        act: &n.act,
                        peer_busy_slots: &busy,
                        now_msf,
                        c_cap: self.sc.c_cap,
                    };
                    propose_batch(
                        self.mode,
                        self.n_sf,
                        fb,
                        &ctx,
                        Some(&self.conversions),
                        &mut rng,
                        cmd.tuples.len(),
                    )
                };
                self.nodes[node as usize].rng_mac = rng;
                if !counter.is_empty() {
                    kind = fb;
                    granted = counter;
                }
            }
        }
        let cmd = GtsCommand { kind, ..cmd };
        let grant = !granted.is_empty();
        if grant {
            let deadline = self.now + self.timing.symbols_per_msf;
            {
                let n = &mut self.nodes[node as usize];
                for (slot, channel) in granted.iter() {
                    n.act.add(ActEntry {
                        slot,
                        channel,
                        direction: GtsDirection::Rx,
                        peer: cmd.id.initiator,
                        kind: cmd.kind,
                        state: EntryState::Pending,
                        idle_msfs: 0,
                        used_this_msf: false,
                    });
                    n.sab.mark_provisional(slot, channel, now_msf + 2);
                }
                n.hs.responding.insert(
                    (cmd.id.initiator, cmd.id.seq),
                    ResponderRecord {
                        hs: Handshake {
                            id: cmd.id,
                            action: HsAction::Allocate,
                            kind: cmd.kind,
                            tuples: granted,
                            phase: HandshakePhase::ResponseSeen,
                            deadline,
                        },
                        restore: [NO_RESTORE; MAX_BATCH],
                    },
                );
            }
            if cmd.kind == GtsKind::CapGts && self.mode == Mode::Dcr {
                for (slot, _) in granted.iter() {
                    self.conversions.mark_pending(slot, now_msf + 2);
                }
            }
            self.schedule(
                deadline,
                node,
                EventKind::HsTimeout {
                    peer: cmd.id.initiator,
                    seq: cmd.id.seq,
                    phase: HandshakePhase::ResponseSeen,
                    initiator_side: false,
                },
            );
        }
        self.trace_hs(
            node,
            "response",
            &granted,
            cmd.kind,
            if grant { "grant" } else { "reject" },
        );
        let reply = GtsCommand {
            class: CommandClass::Response,
            grant,
            tuples: granted,
            ..cmd
        };
        let created = self.now;
        self.enqueue_command(node, reply, created);
    }

    fn on_dealloc_request(&mut self, node: NodeId, cmd: GtsCommand) {
        let deadline = self.now + self.timing.symbols_per_msf;
        {
            let n = &mut self.nodes[node as usize];
            let mut restore = [NO_RESTORE; MAX_BATCH];
            for (i, (slot, channel)) in cmd.tuples.iter().enumerate() {
                match n.act.find_mut(slot, channel) {
                    Some(e) => {
                        restore[i] = EntryRestore {
                            had_entry: true,
                            state: e.state,
                        };
                        e.state = EntryState::Invalid;
                    }
                    None => {
                        restore[i] = NO_RESTORE;
                    }
                }
            }
            n.hs.responding.insert(
                (cmd.id.initiator, cmd.id.seq),
                ResponderRecord {
                    hs: Handshake {
                        id: cmd.id,
                        action: HsAction::Deallocate,
                        kind: cmd.kind,
                        tuples: cmd.tuples,
                        phase: HandshakePhase::ResponseSeen,
                        deadline,
                    },
                    restore,
                },
            );
        }
        for (slot, channel) in cmd.tuples.iter() {
            if let Some(l) = self.registry.get_mut(&(slot, channel)) {
                l.suspended = true;
            }
        }
        self.schedule(
            deadline,
            node,
            EventKind::HsTimeout {
                peer: cmd.id.initiator,
                seq: cmd.id.seq,
                phase: HandshakePhase::ResponseSeen,
                initiator_side: false,
            },
        );
        self.trace_hs(node, "response", &cmd.tuples, cmd.kind, "dealloc_grant");
        let reply = GtsCommand {
            class: CommandClass::Response,
            grant: true,
            ..cmd
        };
        let created = self.now;
        self.enqueue_command(node, reply, created);
    }

    // -- handshake: broadcast delivery --------------------------------------------

    fn deliver_response(&mut self, listeners: &[NodeId], cmd: GtsCommand) {
        // Overhearers first, so losing claims back off before the
        // winning pair advances.
        for &l in listeners {
            if l != cmd.id.initiator {
                self.overhear_claim(l, cmd);
            }
        }
        if listeners.contains(&cmd.id.initiator) {
            self.on_response_at_initiator(cmd);
        }
    }

    fn on_response_at_initiator(&mut self, cmd: GtsCommand) {
        let node = cmd.id.initiator;
        let matches = self.nodes[node as usize]
            .hs
            .active
            .get(&cmd.id.responder)
            .map(|r| r.hs.id.seq == cmd.id.seq && r.hs.phase == HandshakePhase::RequestSent)
            .unwrap_or(false);
        if !matches {
            return;
        }
        if !cmd.grant {
            let (proposed, kind) = {
                let r = &self.nodes[node as usize].hs.active[&cmd.id.responder];
                (r.hs.tuples, r.hs.kind)
            };
            self.rollback_initiator(node, cmd.id.responder, "rejected");
            // The rejected tuples are taken somewhere this node cannot
            // see; steer later proposals elsewhere for a while, and
            // remember a spent counterpart so regular proposals stop
            // bouncing off it.
            let expires = self.msf_index + 2;
            let n = &mut self.nodes[node as usize];
            for (slot, channel) in proposed.iter() {
                n.sab.mark_provisional(slot, channel, expires);
            }
            if kind == GtsKind::CfpGts {
                n.hs
                    .peer_cfp_exhausted
                    .insert(cmd.id.responder, self.msf_index + 4);
            }
            return;
        }
        let now_msf = self.msf_index;
        let deadline = self.now + self.timing.symbols_per_msf;
        // Reconcile our pending claims with the granted set: drop what
        // was not granted, adopt replacements whose slot is still free
        // on this side.
        let (proposed, old_kind) = {
            let r = &self.nodes[node as usize].hs.active[&cmd.id.responder];
            (r.hs.tuples, r.hs.kind)
        };
        let kind_switch = old_kind != cmd.kind;
        let mut committed = TupleList::new();
        for (slot, channel) in proposed.iter() {
            if kind_switch || !cmd.tuples.contains(slot, channel) {
                let n = &mut self.nodes[node as usize];
                n.act.remove(slot, channel);
                n.sab.clear(slot, channel, false);
            }
        }
        for (slot, channel) in cmd.tuples.iter() {
            if !kind_switch && proposed.contains(slot, channel) {
                committed.push(slot, channel);
            } else if !self.nodes[node as usize].act.slot_in_use(slot)
                && !committed.contains_slot(slot)
            {
                let n = &mut self.nodes[node as usize];
                n.act.add(ActEntry {
                    slot,
                    channel,
                    direction: GtsDirection::Tx,
                    peer: cmd.id.responder,
                    kind: cmd.kind,
                    state: EntryState::Pending,
                    idle_msfs: 0,
                    used_this_msf: false,
                });
                n.sab.mark_provisional(slot, channel, now_msf + 2);
                if cmd.kind == GtsKind::CapGts && self.mode == Mode::Dcr {
                    self.conversions.mark_pending(slot, now_msf + 2);
                }
                committed.push(slot, channel);
            }
        }
        if committed.is_empty() {
            self.rollback_initiator(node, cmd.id.responder, "countered_busy");
            return;
        }
        {
            let n = &mut self.nodes[node as usize];
            let rec = n.hs.active.get_mut(&cmd.id.responder).unwrap();
            rec.hs.tuples = committed;
            rec.hs.kind = cmd.kind;
            rec.hs.phase = HandshakePhase::ResponseSeen;
            rec.hs.deadline = deadline;
        }
        self.schedule(
            deadline,
            node,
            EventKind::HsTimeout {
                peer: cmd.id.responder,
                seq: cmd.id.seq,
                phase: HandshakePhase::ResponseSeen,
                initiator_side: true,
            },
        );
        let notify = GtsCommand {
            class: CommandClass::Notify,
            tuples: committed,
            ..cmd
        };
        let created = self.now;
        self.enqueue_command(node, notify, created);
    }

    fn deliver_notify(&mut self, listeners: &[NodeId], cmd: GtsCommand) {
        for &l in listeners {
            if l != cmd.id.responder {
                self.overhear_commit(l, cmd);
            }
        }
        if listeners.contains(&cmd.id.responder) {
            self.on_notify_at_responder(cmd);
        }
    }

    fn on_notify_sent(&mut self, node: NodeId, cmd: GtsCommand) {
        if cmd.id.initiator != node {
            return;
        }
        let matches = self.nodes[node as usize]
            .hs
            .active
            .get(&cmd.id.responder)
            .map(|r| r.hs.id.seq == cmd.id.seq && r.hs.phase == HandshakePhase::ResponseSeen)
            .unwrap_or(false);
        if !matches {
            return;
        }
        match cmd.action {
            HsAction::Allocate => {
                let n = &mut self.nodes[node as usize];
                for (slot, channel) in cmd.tuples.iter() {
                    if let Some(e) = n.act.find_mut(slot, channel) {
                        e.state = EntryState::Valid;
                        e.idle_msfs = 0;
                    }
                    n.sab.mark_committed(slot, channel);
                }
            }
            HsAction::Deallocate => {
                let n = &mut self.nodes[node as usize];
                for (slot, channel) in cmd.tuples.iter() {
                    n.act.remove(slot, channel);
                    n.sab.clear(slot, channel, true);
                }
            }
        }
        self.nodes[node as usize].hs.active.remove(&cmd.id.responder);
        self.trace_hs(node, "commit", &cmd.tuples, cmd.kind, "initiator");
        self.handshake_finished(node, cmd.id.responder, cmd.action, cmd.tuples.len() as u32);
    }

    fn on_notify_at_responder(&mut self, cmd: GtsCommand) {
        let node = cmd.id.responder;
        let Some(rec) = self.nodes[node as usize]
            .hs
            .responding
            .remove(&(cmd.id.initiator, cmd.id.seq))
        else {
            // A notify that outlived this side's deadline is still a
            // commit the initiator acted on; taking the tuples that are
            // still free avoids a one-sided allocation that would only
            // heal through expiration.
            if cmd.action == HsAction::Allocate {
                self.accept_late_commit(node, cmd);
            }
            return;
        };
        let t = self.now;
        match cmd.action {
            HsAction::Allocate => {
                // Granted tuples the notify does not confirm are dropped.
                for (slot, channel) in rec.hs.tuples.iter() {
                    if !cmd.tuples.contains(slot, channel) {
                        let n = &mut self.nodes[node as usize];
                        n.act.remove(slot, channel);
                        n.sab.clear(slot, channel, false);
                        if cmd.kind == GtsKind::CapGts && self.mode == Mode::Dcr {
                            self.conversions.clear_pending(slot);
                        }
                    }
                }
                for (slot, channel) in cmd.tuples.iter() {
                    // A rival conversion this side was deaf to wins the
                    // position; drop the tuple instead of double-booking.
                    if cmd.kind == GtsKind::CapGts
                        && self.mode == Mode::Dcr
                        && self.conversions.get(slot).is_some()
                    {
                        let n = &mut self.nodes[node as usize];
                        n.act.remove(slot, channel);
                        n.sab.clear(slot, channel, false);
                        continue;
                    }
                    {
                        let n = &mut self.nodes[node as usize];
                        let Some(e) = n.act.find_mut(slot, channel) else {
                            continue;
                        };
                        e.state = EntryState::Valid;
                        e.idle_msfs = 0;
                        n.sab.mark_committed(slot, channel);
                    }
                    // An undetected stale owner loses the tuple here; its
                    // husk entries idle out through expiration.
                    self.registry.insert(
                        (slot, channel),
                        LinkGts {
                            tx: cmd.id.initiator,
                            rx: node,
                            kind: cmd.kind,
                            suspended: false,
                        },
                    );
                    if cmd.kind == GtsKind::CapGts && self.mode == Mode::Dcr {
                        self.conversions
                            .commit(slot, channel, cmd.id.initiator, node, self.msf_index);
                        self.emit(TraceRecord::Converted {
                            t,
                            slot,
                            channel,
                            tx: cmd.id.initiator,
                            rx: node,
                        });
                    }
                }
            }
            HsAction::Deallocate => {
                for (i, (slot, channel)) in cmd.tuples.iter().enumerate() {
                    let n = &mut self.nodes[node as usize];
                    if rec.restore[i].had_entry {
                        n.act.remove(slot, channel);
                    }
                    // The claim clears even without a local entry, or a
                    // one-sided release leaves a stale bit forever.
                    n.sab.clear(slot, channel, true);
                    self.registry.remove(&(slot, channel));
                    if cmd.kind == GtsKind::CapGts && self.mode == Mode::Dcr {
                        self.conversions.begin_release(slot, self.msf_index);
                    }
                }
            }
        }
        self.trace_hs(node, "commit", &cmd.tuples, cmd.kind, "responder");
    }

    fn accept_late_commit(&mut self, node: NodeId, cmd: GtsCommand) {
        let t = self.now;
        let mut taken = TupleList::new();
        for (slot, channel) in cmd.tuples.iter() {
            if cmd.kind == GtsKind::CapGts
                && self.mode == Mode::Dcr
                && self.conversions.get(slot).is_some()
            {
                continue;
            }
            {
                let n = &mut self.nodes[node as usize];
                if n.act.slot_in_use(slot) {
                    continue;
                }
                n.act.add(ActEntry {
                    slot,
                    channel,
                    direction: GtsDirection::Rx,
                    peer: cmd.id.initiator,
                    kind: cmd.kind,
                    state: EntryState::Valid,
                    idle_msfs: 0,
                    used_this_msf: false,
                });
                n.sab.mark_committed(slot, channel);
            }
            self.registry.insert(
                (slot, channel),
                LinkGts {
                    tx: cmd.id.initiator,
                    rx: node,
                    kind: cmd.kind,
                    suspended: false,
                },
            );
            if cmd.kind == GtsKind::CapGts && self.mode == Mode::Dcr {
                self.conversions
                    .commit(slot, channel, cmd.id.initiator, node, self.msf_index);
                self.emit(TraceRecord::Converted {
                    t,
                    slot,
                    channel,
                    tx: cmd.id.initiator,
                    rx: node,
                });
            }
            taken.push(slot, channel);
        }
        if !taken.is_empty() {
            self.trace_hs(node, "commit", &taken, cmd.kind, "late");
        }
    }

    /// Overheard grant: third parties mark the tuples claimed; any
    /// in-flight claims of their own on the same tuples (or the same
    /// conversion positions) lost the race and back off.
    fn overhear_claim(&mut self, node: NodeId, cmd: GtsCommand) {
        if !cmd.grant || cmd.action != HsAction::Allocate {
            return;
        }
        let now_msf = self.msf_index;
        for (slot, channel) in cmd.tuples.iter() {
            self.nodes[node as usize]
                .sab
                .mark_provisional(slot, channel, now_msf + 2);
            if cmd.kind == GtsKind::CapGts && self.mode == Mode::Dcr {
                self.conversions.mark_pending(slot, now_msf + 2);
            }
        }
        self.resolve_conflicts(node, cmd, false);
    }

    /// Overheard commit: mark the tuples committed; conflicting pending
    /// claims of our own roll back, a conflicting valid entry is either
    /// re-asserted (we committed first) or invalidated (they did).
    fn overhear_commit(&mut self, node: NodeId, cmd: GtsCommand) {
        match cmd.action {
            HsAction::Allocate => {
                for (slot, channel) in cmd.tuples.iter() {
                    self.nodes[node as usize].sab.mark_committed(slot, channel);
                }
                self.resolve_conflicts(node, cmd, true);
            }
            HsAction::Deallocate => {
                for (slot, channel) in cmd.tuples.iter() {
                    self.nodes[node as usize].sab.clear(slot, channel, true);
                }
            }
        }
    }

    fn tuples_clash(&self, ours: &Handshake, theirs: &GtsCommand) -> Vec<(MsfSlot, Channel)> {
        let dcr_position_clash = self.mode == Mode::Dcr
            && ours.kind == GtsKind::CapGts
            && theirs.kind == GtsKind::CapGts;
        ours.tuples
            .iter()
            .filter(|&(s, c)| {
                theirs.tuples.contains(s, c)
                    || (dcr_position_clash && theirs.tuples.contains_slot(s))
            })
            .collect()
    }

    fn resolve_conflicts(&mut self, node: NodeId, cmd: GtsCommand, committed: bool) {
        if cmd.id.initiator == node || cmd.id.responder == node {
            return;
        }
        // Initiator-side in-flight clashes: prune the lost tuples, and
        // roll the whole transaction back if nothing is left.
        let clashing: Vec<(NodeId, Vec<(MsfSlot, Channel)>)> = self.nodes[node as usize]
            .hs
            .active
            .iter()
            .filter(|(_, r)| r.hs.action == HsAction::Allocate)
            .map(|(&p, r)| (p, self.tuples_clash(&r.hs, &cmd)))
            .filter(|(_, c)| !c.is_empty())
            .collect();
        for (peer, clashed) in clashing {
            let left = {
                let n = &mut self.nodes[node as usize];
                let rec = n.hs.active.get_mut(&peer).unwrap();
                for &(s, c) in &clashed {
                    rec.hs.tuples.remove(s, c);
                }
                rec.hs.tuples.len()
            };
            for &(s, c) in &clashed {
                let n = &mut self.nodes[node as usize];
                n.act.remove(s, c);
                n.sab.clear(s, c, false);
            }
            if left == 0 {
                self.rollback_initiator(node, peer, "lost_race");
            }
        }
        // Responder-side pending grants for the same tuples.
        type RespClash = ((NodeId, u32), Vec<(MsfSlot, Channel)>);
        let clashing_resp: Vec<RespClash> = self.nodes[node as usize]
            .hs
            .responding
            .iter()
            .filter(|(_, r)| r.hs.action == HsAction::Allocate)
            .map(|(&k, r)| (k, self.tuples_clash(&r.hs, &cmd)))
            .filter(|(_, c)| !c.is_empty())
            .collect();
        for (key, clashed) in clashing_resp {
            let left = {
                let n = &mut self.nodes[node as usize];
                let rec = n.hs.responding.get_mut(&key).unwrap();
                for &(s, c) in &clashed {
                    rec.hs.tuples.remove(s, c);
                }
                rec.hs.tuples.len()
            };
            for &(s, c) in &clashed {
                let n = &mut self.nodes[node as usize];
                n.act.remove(s, c);
                n.sab.clear(s, c, false);
                if self.mode == Mode::Dcr {
                    self.conversions.clear_pending(s);
                }
            }
            if left == 0 {
                self.rollback_responder(node, key, "lost_race");
            }
        }
        // Claims over entries we hold: the older allocation wins.
        for (slot, channel) in cmd.tuples.iter() {
            let own = self.nodes[node as usize]
                .act
                .find(slot, channel)
                .map(|e| (e.state, e.peer, e.kind));
            let Some((state, peer, kind)) = own else {
                continue;
            };
            match (state, committed) {
                (EntryState::Valid, false) => {
                    // Re-assert our committed allocation with a duplicate
                    // notify; the newer pair hears it and backs off.
                    let seq = {
                        let n = &mut self.nodes[node as usize];
                        let s = n.hs.next_seq;
                        n.hs.next_seq += 1;
                        s
                    };
                    let mut tuples = TupleList::new();
                    tuples.push(slot, channel);
                    let reassert = GtsCommand {
                        class: CommandClass::Notify,
                        id: HandshakeId {
                            initiator: node,
                            responder: peer,
                            seq,
                        },
                        action: HsAction::Allocate,
                        kind,
                        tuples,
                        grant: true,
                    };
                    let created = self.now;
                    self.enqueue_command(node, reassert, created);
                }
                (EntryState::Valid, true) => {
                    // Somebody committed over us, so one of our notifies
                    // was lost; yield and clean up via deallocation.
                    {
                        let n = &mut self.nodes[node as usize];
                        if let Some(e) = n.act.find_mut(slot, channel) {
                            e.state = EntryState::Invalid;
                        }
                    }
                    let remove = self
                        .registry
                        .get(&(slot, channel))
                        .map(|l| l.tx == node || l.rx == node)
                        .unwrap_or(false);
                    if remove {
                        self.registry.remove(&(slot, channel));
                    }
                    let n = &mut self.nodes[node as usize];
                    if !n.hs.active.contains_key(&peer) {
                        n.hs.intents.entry(peer).or_default().dealloc += 1;
                    }
                }
                _ => {}
            }
        }
    }

    // -- handshake: rollback and completion -------------------------------------

    fn rollback_initiator(&mut self, node: NodeId, peer: NodeId, why: &'static str) {
        let Some(rec) = self.nodes[node as usize].hs.active.remove(&peer) else {
            return;
        };
        let hs = rec.hs;
        match hs.action {
            HsAction::Allocate => {
                let n = &mut self.nodes[node as usize];
                for (slot, channel) in hs.tuples.iter() {
                    n.act.remove(slot, channel);
                    n.sab.clear(slot, channel, false);
                }
            }
            HsAction::Deallocate => {
                for (i, (slot, channel)) in hs.tuples.iter().enumerate() {
                    let n = &mut self.nodes[node as usize];
                    if rec.restore[i].had_entry {
                        if let Some(e) = n.act.find_mut(slot, channel) {
                            e.state = rec.restore[i].state;
                        }
                    }
                    if let Some(l) = self.registry.get_mut(&(slot, channel)) {
                        l.suspended = false;
                    }
                }
            }
        }
        self.trace_hs(node, "rollback", &hs.tuples, hs.kind, why);
        // Congestion failures back the management rate off; every
        // rollback re-proposes through the pacing gate, which may open
        // mid-MSF and leave the fresh request waiting for the next CAP.
        if why == "send_failed" || why == "timeout" {
            self.adapt_pacing(node, true);
        }
        self.try_start_handshakes(node);
    }

    fn rollback_responder(&mut self, node: NodeId, key: (NodeId, u32), why: &'static str) {
        let Some(rec) = self.nodes[node as usize].hs.responding.remove(&key) else {
            return;
        };
        match rec.hs.action {
            HsAction::Allocate => {
                for (slot, channel) in rec.hs.tuples.iter() {
                    let n = &mut self.nodes[node as usize];
                    n.act.remove(slot, channel);
                    n.sab.clear(slot, channel, false);
                    if rec.hs.kind == GtsKind::CapGts && self.mode == Mode::Dcr {
                        self.conversions.clear_pending(slot);
                    }
                }
            }
            HsAction::Deallocate => {
                for (i, (slot, channel)) in rec.hs.tuples.iter().enumerate() {
                    let n = &mut self.nodes[node as usize];
                    if rec.restore[i].had_entry {
                        if let Some(e) = n.act.find_mut(slot, channel) {
                            e.state = rec.restore[i].state;
                        }
                    }
                    if let Some(l) = self.registry.get_mut(&(slot, channel)) {
                        l.suspended = false;
                    }
                }
            }
        }
        self.trace_hs(node, "rollback", &rec.hs.tuples, rec.hs.kind, why);
    }

    fn handshake_finished(&mut self, node: NodeId, peer: NodeId, action: HsAction, count: u32) {
        self.adapt_pacing(node, false);
        let n = &mut self.nodes[node as usize];
        if let Some(i) = n.hs.intents.get_mut(&peer) {
            match action {
                HsAction::Allocate => i.alloc = i.alloc.saturating_sub(count),
                HsAction::Deallocate => {
                    i.dealloc = i.dealloc.saturating_sub(count);
                    if i.dealloc == 0 {
                        i.dealloc_any_idle = false;
                    }
                }
            }
        }
        self.try_start_handshakes(node);
    }

    fn on_hs_timeout(
        &mut self,
        node: NodeId,
        peer: NodeId,
        seq: u32,
        phase: HandshakePhase,
        initiator_side: bool,
    ) {
        if initiator_side {
            let live = self.nodes[node as usize]
                .hs
                .active
                .get(&peer)
                .map(|r| r.hs.id.seq == seq && r.hs.phase == phase)
                .unwrap_or(false);
            if live {
                self.rollback_initiator(node, peer, "timeout");
            }
        } else {
            let key = (peer, seq);
            let live = self.nodes[node as usize]
                .hs
                .responding
                .get(&key)
                .map(|r| r.hs.phase == phase)
                .unwrap_or(false);
            if live {
                self.rollback_responder(node, key, "timeout");
            }
        }
    }
}
