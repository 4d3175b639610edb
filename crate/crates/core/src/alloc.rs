//! Slot-allocation bookkeeping: the slot allocation bitmap (SAB), the
//! allocation counter table (ACT), CAP-slot conversion tracking for
//! dynamic reduction, and the state machine of the distributed three-way
//! GTS handshake (unicast request, broadcast response and notify).
//!
//! The structures here are per-node and mutated only through delivered
//! events; the engine owns message transport, timeouts and the global
//! transfer registry.

use crate::config::{Mode, NUM_CHANNELS, SLOTS_PER_SF};
use crate::traffic::NodeId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Slot index within the multisuperframe schedule, `0..16 * n_sf`.
pub type MsfSlot = u16;
pub type Channel = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GtsKind {
    /// A regular contention-free-period GTS.
    CfpGts,
    /// A GTS carved out of a (reduced or converted) CAP slot.
    CapGts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtsDirection {
    Tx,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryState {
    Pending,
    Valid,
    Invalid,
}

/// One allocated-slot record in a node's ACT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActEntry {
    pub slot: MsfSlot,
    pub channel: Channel,
    pub direction: GtsDirection,
    pub peer: NodeId,
    pub kind: GtsKind,
    pub state: EntryState,
    /// Multisuperframes since the slot last carried a packet.
    pub idle_msfs: u32,
    pub used_this_msf: bool,
}

/// Per-node allocated-slot records.
#[derive(Debug, Clone, Default)]
pub struct AllocationCounterTable {
    entries: Vec<ActEntry>,
}

impl AllocationCounterTable {
    pub fn iter(&self) -> impl Iterator<Item = &ActEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ActEntry> {
        self.entries.iter_mut()
    }

    pub fn find(&self, slot: MsfSlot, channel: Channel) -> Option<&ActEntry> {
        self.entries
            .iter()
            .find(|e| e.slot == slot && e.channel == channel)
    }

    pub fn find_mut(&mut self, slot: MsfSlot, channel: Channel) -> Option<&mut ActEntry> {
        self.entries
            .iter_mut()
            .find(|e| e.slot == slot && e.channel == channel)
    }

    /// The radio can serve one GTS per time slot, so any entry blocks
    /// the whole slot index regardless of channel.
    pub fn slot_in_use(&self, slot: MsfSlot) -> bool {
        self.entries.iter().any(|e| e.slot == slot)
    }

    pub fn add(&mut self, entry: ActEntry) {
        debug_assert!(
            self.find(entry.slot, entry.channel).is_none(),
            "duplicate ACT tuple"
        );
        self.entries.push(entry);
    }

    pub fn remove(&mut self, slot: MsfSlot, channel: Channel) -> Option<ActEntry> {
        let idx = self
            .entries
            .iter()
            .position(|e| e.slot == slot && e.channel == channel)?;
        Some(self.entries.swap_remove(idx))
    }

    pub fn valid_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.state == EntryState::Valid)
            .count()
    }

    pub fn valid_tx_for(&self, peer: NodeId) -> Vec<(MsfSlot, Channel, GtsKind)> {
        self.entries
            .iter()
            .filter(|e| {
                e.state == EntryState::Valid && e.direction == GtsDirection::Tx && e.peer == peer
            })
            .map(|e| (e.slot, e.channel, e.kind))
            .collect()
    }
}

/// One bit of the SAB with claim provenance: a provisional claim comes
/// from an overheard grant and expires if no commit follows within a
/// schedule repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SabClaim {
    #[default]
    Free,
    Provisional {
        expires_msf: u64,
    },
    Committed,
}

/// Global slot/channel occupancy as seen by one node. Sized for the
/// CR-mode maximum at configuration time regardless of the active mode.
#[derive(Debug, Clone)]
pub struct SlotAllocationBitmap {
    slots: u16,
    claims: Vec<SabClaim>,
}

impl SlotAllocationBitmap {
    pub fn new(n_sf: u64) -> SlotAllocationBitmap {
        let slots = (SLOTS_PER_SF * n_sf) as u16;
        SlotAllocationBitmap {
            slots,
            claims: vec![SabClaim::Free; slots as usize * NUM_CHANNELS as usize],
        }
    }

    pub fn slot_count(&self) -> u16 {
        self.slots
    }

    fn idx(&self, slot: MsfSlot, channel: Channel) -> usize {
        debug_assert!(slot < self.slots && (channel as u16) < NUM_CHANNELS);
        slot as usize * NUM_CHANNELS as usize + channel as usize
    }

    pub fn claim(&self, slot: MsfSlot, channel: Channel, now_msf: u64) -> SabClaim {
        match self.claims[self.idx(slot, channel)] {
            SabClaim::Provisional { expires_msf } if expires_msf <= now_msf => SabClaim::Free,
            c => c,
        }
    }

    pub fn is_free(&self, slot: MsfSlot, channel: Channel, now_msf: u64) -> bool {
        self.claim(slot, channel, now_msf) == SabClaim::Free
    }

    pub fn mark_provisional(&mut self, slot: MsfSlot, channel: Channel, expires_msf: u64) {
        let i = self.idx(slot, channel);
        if self.claims[i] != SabClaim::Committed {
            self.claims[i] = SabClaim::Provisional { expires_msf };
        }
    }

    pub fn mark_committed(&mut self, slot: MsfSlot, channel: Channel) {
        let i = self.idx(slot, channel);
        self.claims[i] = SabClaim::Committed;
    }

    /// Clear a claim on rollback or deallocation. A committed bit is
    /// only cleared by an explicit deallocation (`force`), never by a
    /// losing handshake backing out.
    pub fn clear(&mut self, slot: MsfSlot, channel: Channel, force: bool) {
        let i = self.idx(slot, channel);
        if force || self.claims[i] != SabClaim::Committed {
            self.claims[i] = SabClaim::Free;
        }
    }

    pub fn committed_count(&self) -> usize {
        self.claims
            .iter()
            .filter(|c| **c == SabClaim::Committed)
            .count()
    }
}

// ---------------------------------------------------------------------------
// DCR conversion table
// ---------------------------------------------------------------------------

/// A CAP slot converted to a GTS by dynamic reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvertedGts {
    pub channel: Channel,
    pub tx: NodeId,
    pub rx: NodeId,
    /// Allocation order, for last-in-first-out release.
    pub seq: u64,
    /// The conversion takes effect at this schedule boundary.
    pub active_from_msf: u64,
    /// Set while a release handshake has committed; the slot rejoins the
    /// CAP at this boundary.
    pub released_from_msf: Option<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProposeError {
    #[error("no free slot/channel tuple for the requested kind")]
    Exhausted,
    #[error("single-superframe schedules have no convertible CAP slots")]
    NoEligibleSuperframe,
}

/// Network-wide record of converted CAP slots. A single broadcast
/// domain makes the conversions common knowledge, so one table serves
/// all nodes.
#[derive(Debug, Clone, Default)]
pub struct ConversionTable {
    n_sf: u64,
    converted: BTreeMap<MsfSlot, ConvertedGts>,
    /// Positions claimed by an in-flight conversion handshake.
    pending: BTreeMap<MsfSlot, u64>,
    next_seq: u64,
}

impl ConversionTable {
    pub fn new(n_sf: u64) -> ConversionTable {
        ConversionTable {
            n_sf,
            ..ConversionTable::default()
        }
    }

    pub fn capacity(&self) -> u64 {
        8 * (self.n_sf.saturating_sub(1))
    }

    pub fn converted_count(&self) -> usize {
        self.converted.len()
    }

    pub fn get(&self, slot: MsfSlot) -> Option<&ConvertedGts> {
        self.converted.get(&slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MsfSlot, &ConvertedGts)> {
        self.converted.iter()
    }

    /// Converted already, or claimed by an in-flight conversion.
    pub fn position_blocked(&self, slot: MsfSlot, now_msf: u64) -> bool {
        self.converted.contains_key(&slot)
            || self
                .pending
                .get(&slot)
                .map(|&exp| exp > now_msf)
                .unwrap_or(false)
    }

    /// Pick the CAP slot to convert: a uniformly random non-first
    /// superframe that still has unconverted CAP slots, and within it
    /// the highest-indexed one. The caller supplies the channel choice.
    pub fn select_cap_slot(
        &self,
        rng: &mut ChaCha8Rng,
        now_msf: u64,
    ) -> Result<MsfSlot, ProposeError> {
        if self.n_sf <= 1 {
            return Err(ProposeError::NoEligibleSuperframe);
        }
        let mut eligible: Vec<(u64, MsfSlot)> = Vec::new();
        for sf in 1..self.n_sf {
            // Highest CAP slot index (8) is converted first, then 7, ...
            let free = (1..=8u64)
                .rev()
                .map(|s| (sf * SLOTS_PER_SF + s) as MsfSlot)
                .find(|&slot| !self.position_blocked(slot, now_msf));
            if let Some(slot) = free {
                eligible.push((sf, slot));
            }
        }
        if eligible.is_empty() {
            return Err(ProposeError::Exhausted);
        }
        let pick = rng.gen_range(0..eligible.len());
        Ok(eligible[pick].1)
    }

    pub fn mark_pending(&mut self, slot: MsfSlot, expires_msf: u64) {
        self.pending.insert(slot, expires_msf);
    }

    pub fn clear_pending(&mut self, slot: MsfSlot) {
        self.pending.remove(&slot);
    }

    /// Record a committed conversion, effective from the next schedule
    /// boundary. Panics if the position is already converted or sits in
    /// the first superframe; the proposal path prevents both.
    pub fn commit(&mut self, slot: MsfSlot, channel: Channel, tx: NodeId, rx: NodeId, now_msf: u64) {
        assert!(
            slot as u64 / SLOTS_PER_SF > 0,
            "conversion in the first superframe of an MSF"
        );
        assert!(
            (self.converted.len() as u64) < self.capacity(),
            "conversion capacity exceeded"
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        let prev = self.converted.insert(
            slot,
            ConvertedGts {
                channel,
                tx,
                rx,
                seq,
                active_from_msf: now_msf + 1,
                released_from_msf: None,
            },
        );
        assert!(prev.is_none(), "double conversion of one position");
        self.pending.remove(&slot);
    }

    pub fn begin_release(&mut self, slot: MsfSlot, now_msf: u64) {
        if let Some(c) = self.converted.get_mut(&slot) {
            c.released_from_msf = Some(now_msf + 1);
        }
    }

    /// Drop conversions whose release boundary has passed.
    pub fn prune_released(&mut self, now_msf: u64) {
        self.converted
            .retain(|_, c| c.released_from_msf.map(|m| m > now_msf).unwrap_or(true));
    }

    /// Whether the pair owning a conversion treats the slot as a GTS in
    /// the given schedule repetition.
    pub fn active_for(&self, slot: MsfSlot, node: NodeId, msf: u64) -> Option<&ConvertedGts> {
        let c = self.converted.get(&slot)?;
        if (c.tx == node || c.rx == node)
            && msf >= c.active_from_msf
            && c.released_from_msf.map(|m| msf < m).unwrap_or(true)
        {
            Some(c)
        } else {
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Proposal
// ---------------------------------------------------------------------------

/// Slot indices allocatable as regular CFP GTSs, ascending.
pub fn cfp_candidate_slots(mode: Mode, n_sf: u64) -> Vec<MsfSlot> {
    let mut out = Vec::new();
    for sf in 0..n_sf {
        for s in 0..SLOTS_PER_SF {
            let in_cfp_range = s >= 9;
            let reduced_cap = mode == Mode::Cr && sf > 0 && (1..=8).contains(&s);
            if in_cfp_range || reduced_cap {
                out.push((sf * SLOTS_PER_SF + s) as MsfSlot);
            }
        }
    }
    out
}

/// CAP positions eligible for CAP-GTS use (alternating reduction):
/// the CAP range of every superframe except the first of the MSF.
pub fn cap_gts_candidate_slots(n_sf: u64) -> Vec<MsfSlot> {
    let mut out = Vec::new();
    for sf in 1..n_sf {
        for s in 1..=8u64 {
            out.push((sf * SLOTS_PER_SF + s) as MsfSlot);
        }
    }
    out
}

/// Context a proposal draws on: the proposer's own view plus what it
/// has learned about the counterpart's busy slots from rejections.
pub struct ProposalContext<'a> {
    pub sab: &'a SlotAllocationBitmap,
    pub act: &'a AllocationCounterTable,
    pub peer_busy_slots: &'a [MsfSlot],
    pub now_msf: u64,
    pub c_cap: Channel,
}

fn lowest_free_channel(
    sab: &SlotAllocationBitmap,
    slot: MsfSlot,
    now_msf: u64,
    skip: Option<Channel>,
) -> Option<Channel> {
    (0..NUM_CHANNELS as u8)
        .filter(|c| Some(*c) != skip)
        .find(|&c| sab.is_free(slot, c, now_msf))
}

/// Pick a free `(slot, channel)` for the requested kind: ascending slot
/// order, lowest free channel, skipping the CAP channel for CAP-GTSs.
pub fn propose_allocation(
    mode: Mode,
    n_sf: u64,
    kind: GtsKind,
    ctx: &ProposalContext<'_>,
    conversions: Option<&ConversionTable>,
    rng: &mut ChaCha8Rng,
) -> Result<(MsfSlot, Channel), ProposeError> {
    match kind {
        GtsKind::CfpGts => {
            for slot in cfp_candidate_slots(mode, n_sf) {
                if ctx.act.slot_in_use(slot) || ctx.peer_busy_slots.contains(&slot) {
                    continue;
                }
                if let Some(ch) = lowest_free_channel(ctx.sab, slot, ctx.now_msf, None) {
                    return Ok((slot, ch));
                }
            }
            Err(ProposeError::Exhausted)
        }
        GtsKind::CapGts => match mode {
            Mode::Dcr => {
                let table = conversions.expect("DCR proposals need the conversion table");
                let slot = dcr_select_cap_slot(table, ctx, rng)?;
                let ch = lowest_free_channel(ctx.sab, slot, ctx.now_msf, Some(ctx.c_cap))
                    .ok_or(ProposeError::Exhausted)?;
                Ok((slot, ch))
            }
            Mode::Acr => {
                for slot in cap_gts_candidate_slots(n_sf) {
                    if ctx.act.slot_in_use(slot) || ctx.peer_busy_slots.contains(&slot) {
                        continue;
                    }
                    if let Some(ch) =
                        lowest_free_channel(ctx.sab, slot, ctx.now_msf, Some(ctx.c_cap))
                    {
                        return Ok((slot, ch));
                    }
                }
                Err(ProposeError::Exhausted)
            }
            _ => Err(ProposeError::Exhausted),
        },
    }
}

/// Propose up to `want` distinct tuples of one kind, accumulating slot
/// exclusions so a batch never collides with itself.
#[allow(clippy::too_many_arguments)]
pub fn propose_batch(
    mode: Mode,
    n_sf: u64,
    kind: GtsKind,
    ctx: &ProposalContext<'_>,
    conversions: Option<&ConversionTable>,
    rng: &mut ChaCha8Rng,
    want: usize,
) -> TupleList {
    let mut out = TupleList::new();
    let mut excluded: Vec<MsfSlot> = ctx.peer_busy_slots.to_vec();
    for _ in 0..want.min(MAX_BATCH) {
        let inner = ProposalContext {
            sab: ctx.sab,
            act: ctx.act,
            peer_busy_slots: &excluded,
            now_msf: ctx.now_msf,
            c_cap: ctx.c_cap,
        };
        match propose_allocation(mode, n_sf, kind, &inner, conversions, rng) {
            Ok((slot, channel)) => {
                out.push(slot, channel);
                excluded.push(slot);
            }
            Err(_) => break,
        }
    }
    out
}

/// Conversion-slot selection for dynamic reduction, honoring occupancy
/// at the proposer and what it knows of the counterpart.
pub fn dcr_select_cap_slot(
    table: &ConversionTable,
    ctx: &ProposalContext<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<MsfSlot, ProposeError> {
    // Selection retries locally if the drawn slot clashes with the
    // proposer's own schedule; each drawn superframe is then excluded by
    // the pending mark the caller places on failure paths, so a handful
    // of draws always suffices at this scale.
    for _ in 0..16 {
        let slot = table.select_cap_slot(rng, ctx.now_msf)?;
        if !ctx.act.slot_in_use(slot) && !ctx.peer_busy_slots.contains(&slot) {
            return Ok(slot);
        }
    }
    Err(ProposeError::Exhausted)
}

/// Order a node's deallocation candidates: CAP-GTSs strictly before
/// CFP-GTSs; converted slots in reverse allocation order (newest
/// conversion first); CFP entries by longest idle first.
pub fn deallocation_order(
    act: &AllocationCounterTable,
    peer: NodeId,
    conversions: Option<&ConversionTable>,
) -> Vec<(MsfSlot, Channel, GtsKind)> {
    let mut cap: Vec<&ActEntry> = Vec::new();
    let mut cfp: Vec<&ActEntry> = Vec::new();
    for e in act.iter() {
        if e.peer == peer && e.state == EntryState::Valid {
            match e.kind {
                GtsKind::CapGts => cap.push(e),
                GtsKind::CfpGts => cfp.push(e),
            }
        }
    }
    cap.sort_by_key(|e| {
        let seq = conversions
            .and_then(|t| t.get(e.slot))
            .map(|c| c.seq)
            .unwrap_or(u64::MAX);
        (std::cmp::Reverse(seq), e.slot)
    });
    cfp.sort_by_key(|e| (std::cmp::Reverse(e.idle_msfs), e.slot));
    cap.iter()
        .chain(cfp.iter())
        .map(|e| (e.slot, e.channel, e.kind))
        .collect()
}

// ---------------------------------------------------------------------------
// Handshake
// ---------------------------------------------------------------------------

/// Most tuples one GTS transaction may carry (the request's slot-count
/// field); bounds the management frame size.
pub const MAX_BATCH: usize = 16;

/// Fixed-capacity tuple list carried inside command frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TupleList {
    items: [(MsfSlot, Channel); MAX_BATCH],
    len: u8,
}

impl TupleList {
    pub fn new() -> TupleList {
        TupleList {
            items: [(0, 0); MAX_BATCH],
            len: 0,
        }
    }

    pub fn push(&mut self, slot: MsfSlot, channel: Channel) {
        assert!((self.len as usize) < MAX_BATCH, "tuple batch overflow");
        self.items[self.len as usize] = (slot, channel);
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (MsfSlot, Channel)> + '_ {
        self.items[..self.len as usize].iter().copied()
    }

    pub fn contains(&self, slot: MsfSlot, channel: Channel) -> bool {
        self.iter().any(|(s, c)| s == slot && c == channel)
    }

    pub fn contains_slot(&self, slot: MsfSlot) -> bool {
        self.iter().any(|(s, _)| s == slot)
    }

    pub fn remove(&mut self, slot: MsfSlot, channel: Channel) -> bool {
        let Some(pos) = self
            .iter()
            .position(|(s, c)| s == slot && c == channel)
        else {
            return false;
        };
        for i in pos..self.len as usize - 1 {
            self.items[i] = self.items[i + 1];
        }
        self.len -= 1;
        true
    }

    pub fn first(&self) -> Option<(MsfSlot, Channel)> {
        self.iter().next()
    }
}

impl Default for TupleList {
    fn default() -> Self {
        TupleList::new()
    }
}

impl FromIterator<(MsfSlot, Channel)> for TupleList {
    fn from_iter<T: IntoIterator<Item = (MsfSlot, Channel)>>(iter: T) -> TupleList {
        let mut out = TupleList::new();
        for (s, c) in iter {
            out.push(s, c);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HandshakeId {
    pub initiator: NodeId,
    pub responder: NodeId,
    pub seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsAction {
    Allocate,
    Deallocate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakePhase {
    Idle,
    RequestSent,
    ResponseSeen,
    Committed,
    RolledBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandClass {
    Request,
    Response,
    Notify,
}

impl CommandClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandClass::Request => "request",
            CommandClass::Response => "response",
            CommandClass::Notify => "notify",
        }
    }
}

/// Wire content of one GTS management command. A transaction carries
/// up to [`MAX_BATCH`] tuples, like the slot-count field of the real
/// management frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtsCommand {
    pub class: CommandClass,
    pub id: HandshakeId,
    pub action: HsAction,
    pub kind: GtsKind,
    pub tuples: TupleList,
    /// Response verdict. A grant may carry replacement tuples picked by
    /// the responder from the occupancy both sides advertise.
    pub grant: bool,
}

/// One side's record of an in-flight handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handshake {
    pub id: HandshakeId,
    pub action: HsAction,
    pub kind: GtsKind,
    pub tuples: TupleList,
    pub phase: HandshakePhase,
    /// Event time (symbols) after which the side gives up.
    pub deadline: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::node_rng;

    fn ctx<'a>(
        sab: &'a SlotAllocationBitmap,
        act: &'a AllocationCounterTable,
        busy: &'a [MsfSlot],
    ) -> ProposalContext<'a> {
        ProposalContext {
            sab,
            act,
            peer_busy_slots: busy,
            now_msf: 0,
            c_cap: 0,
        }
    }

    fn entry(slot: MsfSlot, channel: Channel) -> ActEntry {
        ActEntry {
            slot,
            channel,
            direction: GtsDirection::Tx,
            peer: 1,
            kind: GtsKind::CfpGts,
            state: EntryState::Valid,
            idle_msfs: 0,
            used_this_msf: false,
        }
    }

    #[test]
    fn empty_sab_proposes_first_cfp_slot() {
        let sab = SlotAllocationBitmap::new(2);
        let act = AllocationCounterTable::default();
        let mut rng = node_rng(1, 0, 0);
        let got = propose_allocation(Mode::Ncr, 2, GtsKind::CfpGts, &ctx(&sab, &act, &[]), None, &mut rng)
            .unwrap();
        assert_eq!(got, (9, 0));
    }

    #[test]
    fn proposal_skips_busy_tuples_and_slots() {
        let mut sab = SlotAllocationBitmap::new(2);
        sab.mark_committed(9, 0);
        let mut act = AllocationCounterTable::default();
        act.add(entry(10, 3));
        let mut rng = node_rng(1, 0, 0);
        // Tuple (9,0) is claimed so channel 1 is next; slot 10 is busy at
        // the proposer regardless of channel.
        let got = propose_allocation(Mode::Ncr, 2, GtsKind::CfpGts, &ctx(&sab, &act, &[]), None, &mut rng)
            .unwrap();
        assert_eq!(got, (9, 1));
        act.add(entry(9, 1));
        let got = propose_allocation(Mode::Ncr, 2, GtsKind::CfpGts, &ctx(&sab, &act, &[11]), None, &mut rng)
            .unwrap();
        assert_eq!(got, (12, 0));
    }

    #[test]
    fn proposal_exhausts_when_all_slots_taken() {
        let sab = SlotAllocationBitmap::new(1);
        let mut act = AllocationCounterTable::default();
        for slot in cfp_candidate_slots(Mode::Ncr, 1) {
            act.add(entry(slot, 0));
        }
        let mut rng = node_rng(1, 0, 0);
        assert_eq!(
            propose_allocation(Mode::Ncr, 1, GtsKind::CfpGts, &ctx(&sab, &act, &[]), None, &mut rng),
            Err(ProposeError::Exhausted)
        );
    }

    #[test]
    fn cr_candidates_include_reduced_caps() {
        assert_eq!(cfp_candidate_slots(Mode::Ncr, 2).len(), 14);
        assert_eq!(cfp_candidate_slots(Mode::Cr, 2).len(), 22);
        assert_eq!(cap_gts_candidate_slots(2), vec![17, 18, 19, 20, 21, 22, 23, 24]);
    }

    #[test]
    fn dcr_selects_last_slot_of_random_nonfirst_sf() {
        let table = ConversionTable::new(2);
        let sab = SlotAllocationBitmap::new(2);
        let act = AllocationCounterTable::default();
        let mut rng = node_rng(7, 3, 1);
        // One eligible superframe: always its last CAP slot, index 24.
        let slot = dcr_select_cap_slot(&table, &ctx(&sab, &act, &[]), &mut rng).unwrap();
        assert_eq!(slot, 24);
        let (slot, ch) = propose_allocation(
            Mode::Dcr,
            2,
            GtsKind::CapGts,
            &ctx(&sab, &act, &[]),
            Some(&table),
            &mut rng,
        )
        .unwrap();
        assert_eq!(slot, 24);
        assert_ne!(ch, 0, "conversion must avoid the CAP channel");
    }

    #[test]
    fn dcr_conversion_descends_within_superframe() {
        let mut table = ConversionTable::new(2);
        let mut rng = node_rng(7, 3, 1);
        for expect in (17..=24).rev() {
            let slot = table.select_cap_slot(&mut rng, 0).unwrap();
            assert_eq!(slot, expect);
            table.commit(slot, 1, 1, 0, 0);
        }
        assert_eq!(
            table.select_cap_slot(&mut rng, 0),
            Err(ProposeError::Exhausted)
        );
        assert_eq!(table.converted_count() as u64, table.capacity());
    }

    #[test]
    fn dcr_single_sf_has_no_eligible_superframe() {
        let table = ConversionTable::new(1);
        let mut rng = node_rng(7, 3, 1);
        assert_eq!(
            table.select_cap_slot(&mut rng, 0),
            Err(ProposeError::NoEligibleSuperframe)
        );
    }

    #[test]
    fn dcr_random_sf_choice_is_roughly_uniform() {
        let table = ConversionTable::new(4);
        let sab = SlotAllocationBitmap::new(4);
        let act = AllocationCounterTable::default();
        let mut rng = node_rng(11, 5, 2);
        let mut counts = [0u32; 4];
        for _ in 0..3000 {
            let slot = dcr_select_cap_slot(&table, &ctx(&sab, &act, &[]), &mut rng).unwrap();
            counts[slot as usize / 16] += 1;
        }
        assert_eq!(counts[0], 0, "first superframe must stay untouched");
        for sf in 1..4 {
            assert!((800..1200).contains(&counts[sf]), "{counts:?}");
        }
    }

    #[test]
    fn conversion_pending_blocks_position() {
        let mut table = ConversionTable::new(2);
        table.mark_pending(24, 5);
        let mut rng = node_rng(7, 3, 1);
        assert_eq!(table.select_cap_slot(&mut rng, 0).unwrap(), 23);
        // Expired pending marks stop blocking.
        assert_eq!(table.select_cap_slot(&mut rng, 5).unwrap(), 24);
    }

    #[test]
    fn conversion_activation_and_release_boundaries() {
        let mut table = ConversionTable::new(2);
        table.commit(24, 3, 4, 2, 10);
        assert!(table.active_for(24, 4, 10).is_none());
        assert!(table.active_for(24, 4, 11).is_some());
        assert!(table.active_for(24, 2, 11).is_some());
        assert!(table.active_for(24, 9, 11).is_none());
        table.begin_release(24, 12);
        assert!(table.active_for(24, 4, 12).is_some());
        assert!(table.active_for(24, 4, 13).is_none());
        table.prune_released(13);
        assert_eq!(table.converted_count(), 0);
    }

    #[test]
    fn sab_provisional_claims_expire() {
        let mut sab = SlotAllocationBitmap::new(2);
        sab.mark_provisional(9, 2, 4);
        assert!(!sab.is_free(9, 2, 3));
        assert!(sab.is_free(9, 2, 4));
        sab.mark_committed(9, 2);
        sab.mark_provisional(9, 2, 1);
        assert_eq!(sab.claim(9, 2, 100), SabClaim::Committed);
        sab.clear(9, 2, false);
        assert_eq!(sab.claim(9, 2, 100), SabClaim::Committed);
        sab.clear(9, 2, true);
        assert!(sab.is_free(9, 2, 0));
    }

    #[test]
    fn dealloc_order_prefers_cap_gts_lifo() {
        let mut table = ConversionTable::new(2);
        table.commit(24, 1, 1, 0, 0);
        table.commit(23, 1, 1, 0, 1);
        table.commit(22, 1, 1, 0, 2);
        let mut act = AllocationCounterTable::default();
        for (slot, idle) in [(24u16, 0u32), (23, 0), (22, 0)] {
            act.add(ActEntry {
                slot,
                channel: 1,
                direction: GtsDirection::Tx,
                peer: 0,
                kind: GtsKind::CapGts,
                state: EntryState::Valid,
                idle_msfs: idle,
                used_this_msf: false,
            });
        }
        act.add(ActEntry {
            slot: 9,
            channel: 0,
            direction: GtsDirection::Tx,
            peer: 0,
            kind: GtsKind::CfpGts,
            state: EntryState::Valid,
            idle_msfs: 3,
            used_this_msf: false,
        });
        let order = deallocation_order(&act, 0, Some(&table));
        let slots: Vec<MsfSlot> = order.iter().map(|(s, _, _)| *s).collect();
        // Conversions released newest-first (22 was converted last), the
        // plain CFP entry last of all.
        assert_eq!(slots, vec![22, 23, 24, 9]);
    }
}
