//! Frame-structure derivation: slot classification over one full period
//! of the beacon hierarchy, timing tables, and GTS capacities.
//!
//! Everything here is a pure function of `(SO, MO, BO, mode)`. Runtime
//! CAP-slot conversions in DCR mode are overlaid by the allocation layer;
//! this module only marks which slots are eligible.

use crate::config::{
    ConfigError, Mode, ProtocolConfig, BASE_SLOT_SYMBOLS, CAP_SLOTS_PER_SF, CFP_SLOTS_PER_SF,
    SLOTS_PER_SF, SYMBOL_DURATION_US,
};
use crate::rational::Ratio;

/// Classification of one time slot within the layout period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Beacon,
    Cap,
    Cfp,
    /// A CAP slot that dynamic reduction may convert into a GTS at run
    /// time. Carries the superframe index within the MSF and the
    /// slot index within the superframe.
    CapGtsEligible { sf_in_msf: u16, slot_in_sf: u8 },
}

impl SlotKind {
    /// Whether the slot carries CSMA/CA traffic before any runtime
    /// conversion is applied.
    pub fn is_cap_like(&self) -> bool {
        matches!(self, SlotKind::Cap | SlotKind::CapGtsEligible { .. })
    }
}

/// Per-beacon-interval-period slot classification plus derived counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayout {
    pub mode: Mode,
    pub so: u8,
    pub mo: u8,
    pub bo: u8,
    /// Superframes per multisuperframe.
    pub n_sf: u64,
    /// Multisuperframes per beacon interval.
    pub n_msf: u64,
    /// Superframes per beacon interval.
    pub n_sf_bi: u64,
    /// Time slots per multisuperframe.
    pub n_ts: u64,
    /// Beacon intervals per layout period (2 for ACR, 1 otherwise).
    pub period_bis: u64,
    /// One entry per slot across the whole period.
    pub slots: Vec<SlotKind>,
    /// Even-index beacon intervals use the CR structure in ACR mode.
    pub acr_cr_on_even: bool,
}

/// All slot/superframe/interval durations induced by the orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingTable {
    pub symbols_per_slot: u64,
    pub symbols_per_sf: u64,
    pub symbols_per_msf: u64,
    pub symbols_per_bi: u64,
    pub slot_duration_us: u64,
    pub sf_duration_us: u64,
    pub msf_duration_us: u64,
    pub bi_duration_us: u64,
}

impl TimingTable {
    pub fn from_config(cfg: &ProtocolConfig) -> TimingTable {
        let symbols_per_slot = BASE_SLOT_SYMBOLS << cfg.so;
        let symbols_per_sf = symbols_per_slot * SLOTS_PER_SF;
        let symbols_per_msf = symbols_per_sf * cfg.n_sf();
        let symbols_per_bi = symbols_per_sf * cfg.n_sf_bi();
        TimingTable {
            symbols_per_slot,
            symbols_per_sf,
            symbols_per_msf,
            symbols_per_bi,
            slot_duration_us: symbols_per_slot * SYMBOL_DURATION_US,
            sf_duration_us: symbols_per_sf * SYMBOL_DURATION_US,
            msf_duration_us: symbols_per_msf * SYMBOL_DURATION_US,
            bi_duration_us: symbols_per_bi * SYMBOL_DURATION_US,
        }
    }
}

/// Position of an instant within the frame hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotAddress {
    pub bi_index: u64,
    pub msf_in_bi: u64,
    pub sf_in_msf: u64,
    pub slot_in_sf: u64,
    pub kind: SlotKind,
}

/// Whether a beacon interval uses the CR frame structure.
///
/// NCR is never reduced, CR always is; ACR alternates with the configured
/// starting parity. DCR keeps the NCR structure and shrinks CAPs at run
/// time instead.
pub fn bi_uses_cr_structure(mode: Mode, bi_index: u64, acr_cr_on_even: bool) -> bool {
    match mode {
        Mode::Ncr | Mode::Dcr => false,
        Mode::Cr => true,
        Mode::Acr => bi_index.is_multiple_of(2) == acr_cr_on_even,
    }
}

/// Static classification of one slot, before runtime conversions.
pub fn classify_slot(mode: Mode, cr_structure: bool, sf_in_msf: u64, slot_in_sf: u64) -> SlotKind {
    if slot_in_sf == 0 {
        return SlotKind::Beacon;
    }
    let in_cap_range = slot_in_sf <= CAP_SLOTS_PER_SF;
    if !in_cap_range {
        return SlotKind::Cfp;
    }
    if cr_structure {
        // Reduced superframes donate their CAP range to the CFP.
        if sf_in_msf == 0 {
            SlotKind::Cap
        } else {
            SlotKind::Cfp
        }
    } else if mode == Mode::Dcr && sf_in_msf > 0 {
        SlotKind::CapGtsEligible {
            sf_in_msf: sf_in_msf as u16,
            slot_in_sf: slot_in_sf as u8,
        }
    } else {
        SlotKind::Cap
    }
}

/// Derive the full slot classification for one layout period.
pub fn derive_layout(cfg: &ProtocolConfig) -> Result<FrameLayout, ConfigError> {
    cfg.validate()?;
    let n_sf = cfg.n_sf();
    let n_msf = cfg.n_msf();
    let n_sf_bi = cfg.n_sf_bi();
    let period_bis = if cfg.mode == Mode::Acr { 2 } else { 1 };

    let mut slots = Vec::with_capacity((SLOTS_PER_SF * n_sf_bi * period_bis) as usize);
    for bi in 0..period_bis {
        let cr = bi_uses_cr_structure(cfg.mode, bi, cfg.acr_cr_on_even);
        for _msf in 0..n_msf {
            for sf in 0..n_sf {
                for slot in 0..SLOTS_PER_SF {
                    slots.push(classify_slot(cfg.mode, cr, sf, slot));
                }
            }
        }
    }

    Ok(FrameLayout {
        mode: cfg.mode,
        so: cfg.so,
        mo: cfg.mo,
        bo: cfg.bo,
        n_sf,
        n_msf,
        n_sf_bi,
        n_ts: cfg.n_ts(),
        period_bis,
        slots,
        acr_cr_on_even: cfg.acr_cr_on_even,
    })
}

impl FrameLayout {
    pub fn period_slots(&self) -> u64 {
        SLOTS_PER_SF * self.n_sf_bi * self.period_bis
    }

    /// Count of slots with CSMA/CA access across the period (eligible
    /// DCR slots count as CAP until converted).
    pub fn cap_slot_count(&self) -> u64 {
        self.slots.iter().filter(|k| k.is_cap_like()).count() as u64
    }

    pub fn cfp_slot_count(&self) -> u64 {
        self.slots
            .iter()
            .filter(|k| matches!(k, SlotKind::Cfp))
            .count() as u64
    }
}

/// Locate the slot containing `time_us`. Total for all non-negative
/// times and periodic in `period_bis` beacon intervals; `bi_index`
/// counts absolute intervals since the epoch.
pub fn slot_at(layout: &FrameLayout, timing: &TimingTable, time_us: u64) -> SlotAddress {
    let slot_us = timing.slot_duration_us;
    let global_slot = time_us / slot_us;
    let slots_per_bi = SLOTS_PER_SF * layout.n_sf_bi;
    let bi_index = global_slot / slots_per_bi;
    let in_bi = global_slot % slots_per_bi;
    let slots_per_msf = SLOTS_PER_SF * layout.n_sf;
    let msf_in_bi = in_bi / slots_per_msf;
    let in_msf = in_bi % slots_per_msf;
    let sf_in_msf = in_msf / SLOTS_PER_SF;
    let slot_in_sf = in_msf % SLOTS_PER_SF;
    let period_slot = (global_slot % (slots_per_bi * layout.period_bis)) as usize;
    SlotAddress {
        bi_index,
        msf_in_bi,
        sf_in_msf,
        slot_in_sf,
        kind: layout.slots[period_slot],
    }
}

/// GTS capacity bounds for a configuration.
///
/// `per_msf_min`/`per_msf_max` bound the schedulable GTS count per
/// multisuperframe (they coincide except for DCR). `per_bi_avg` is the
/// long-run average per beacon interval, which for ACR is the mean of
/// the alternating structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtsCapacity {
    pub per_msf_min: u64,
    pub per_msf_max: u64,
    pub per_bi_min: u64,
    pub per_bi_max: u64,
    pub per_bi_avg: Ratio,
    /// CAP slots convertible to GTSs per MSF in DCR mode; zero otherwise.
    pub dcr_extra_per_msf: u64,
}

pub fn gts_capacity(cfg: &ProtocolConfig) -> Result<GtsCapacity, ConfigError> {
    cfg.validate()?;
    let n_sf = cfg.n_sf();
    let n_msf = cfg.n_msf();
    let ncr_msf = CFP_SLOTS_PER_SF * n_sf;
    let cr_msf = CFP_SLOTS_PER_SF + (SLOTS_PER_SF - 1) * (n_sf - 1);
    let extra = CAP_SLOTS_PER_SF * (n_sf - 1);
    debug_assert_eq!(ncr_msf + extra, cr_msf);

    let (msf_min, msf_max) = match cfg.mode {
        Mode::Ncr => (ncr_msf, ncr_msf),
        Mode::Cr => (cr_msf, cr_msf),
        // Alternating intervals are uniformly one structure or the other.
        Mode::Acr => (ncr_msf, cr_msf),
        Mode::Dcr => (ncr_msf, ncr_msf + extra),
    };
    let (bi_min, bi_max) = (msf_min * n_msf, msf_max * n_msf);
    let per_bi_avg = match cfg.mode {
        Mode::Ncr => Ratio::from_int((ncr_msf * n_msf) as i128),
        Mode::Cr => Ratio::from_int((cr_msf * n_msf) as i128),
        Mode::Acr | Mode::Dcr => {
            Ratio::new(((ncr_msf + cr_msf) * n_msf) as i128, 2)
        }
    };
    Ok(GtsCapacity {
        per_msf_min: msf_min,
        per_msf_max: msf_max,
        per_bi_min: bi_min,
        per_bi_max: bi_max,
        per_bi_avg,
        dcr_extra_per_msf: if cfg.mode == Mode::Dcr { extra } else { 0 },
    })
}
