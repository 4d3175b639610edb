//! Traffic-aware per-link GTS demand estimation and (de)allocation
//! planning: an exponentially weighted moving average of per-MSF demand,
//! a ceiling target, and a hysteresis band that suppresses management
//! churn, with an expiration timer that eventually releases idle links.

use crate::config::Mode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    /// EWMA smoothing parameter.
    pub alpha: f64,
    /// Slack, in slots, around the target before (de)allocating.
    pub hysteresis_margin: u32,
    /// MSFs a slot (or a whole link) may idle before release.
    pub expiration_msfs: u32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            alpha: 0.1,
            hysteresis_margin: 1,
            expiration_msfs: 7,
        }
    }
}

/// Smoothed demand state for one (node, parent) link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEstimate {
    /// Smoothed packets per MSF.
    pub ewma: f64,
    /// Usable TX slots currently allocated on the link.
    pub allocated_cfp: u32,
    pub allocated_cap: u32,
    /// MSFs since the link last saw offered traffic.
    pub idle_msfs: u32,
}

impl LinkEstimate {
    /// A fresh estimate seeded with the first observed demand sample,
    /// so a link does not spend the smoothing time constant crawling up
    /// from zero before its first allocation.
    pub fn seeded(first_sample: u32) -> LinkEstimate {
        LinkEstimate {
            ewma: first_sample as f64,
            allocated_cfp: 0,
            allocated_cap: 0,
            idle_msfs: 0,
        }
    }

    pub fn allocated(&self) -> u32 {
        self.allocated_cfp + self.allocated_cap
    }
}

/// One smoothing step: `ewma' = alpha * arrivals + (1 - alpha) * ewma`.
pub fn update_estimate(est: &LinkEstimate, arrivals_this_msf: u32, cfg: &SchedulerConfig) -> LinkEstimate {
    let mut next = *est;
    next.ewma = cfg.alpha * arrivals_this_msf as f64 + (1.0 - cfg.alpha) * est.ewma;
    if arrivals_this_msf > 0 {
        next.idle_msfs = 0;
    } else {
        next.idle_msfs = next.idle_msfs.saturating_add(1);
    }
    next
}

/// Slots the link wants allocated.
pub fn target_slots(est: &LinkEstimate) -> u32 {
    est.ewma.ceil().max(0.0) as u32
}

/// Planned change for one link at a schedule boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkPlan {
    NoChange,
    Allocate(u32),
    /// Release up to this many slots, drawn from those whose idle
    /// counters exceeded the expiration timer.
    Deallocate(u32),
    /// The link itself idled past expiration: release everything.
    Expire,
}

/// Hysteresis planning for one link.
///
/// Allocation fires when the target exceeds the allocation by more than
/// the margin (a bare link bootstraps without the margin); deallocation
/// fires when the target falls below the allocation by more than the
/// margin, and only ever releases slots that idled past expiration. A
/// link with no offered traffic for the expiration period releases its
/// slots entirely, including the last one.
pub fn plan_link(est: &LinkEstimate, cfg: &SchedulerConfig) -> LinkPlan {
    let target = target_slots(est);
    let allocated = est.allocated();
    if allocated == 0 {
        return if target > 0 {
            LinkPlan::Allocate(target)
        } else {
            LinkPlan::NoChange
        };
    }
    if est.idle_msfs > cfg.expiration_msfs {
        return LinkPlan::Expire;
    }
    if target > allocated + cfg.hysteresis_margin {
        LinkPlan::Allocate(target - allocated)
    } else if target + cfg.hysteresis_margin < allocated {
        LinkPlan::Deallocate(allocated - target)
    } else {
        LinkPlan::NoChange
    }
}

/// Which GTS kind a mode may fall back to once regular CFP proposals
/// are exhausted, and when.
///
/// The dynamic mode only carves CAP slots when the CFP is depleted for
/// the link; the alternating mode additionally requires the reduced
/// interval parity, because CAP-GTS positions only carry traffic there.
pub fn fallback_kind(mode: Mode, in_cr_interval: bool) -> Option<crate::alloc::GtsKind> {
    match mode {
        Mode::Dcr => Some(crate::alloc::GtsKind::CapGts),
        Mode::Acr if in_cr_interval => Some(crate::alloc::GtsKind::CapGts),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(ewma: f64, allocated: u32) -> LinkEstimate {
        LinkEstimate {
            ewma,
            allocated_cfp: allocated,
            allocated_cap: 0,
            idle_msfs: 0,
        }
    }

    #[test]
    fn ewma_step() {
        let cfg = SchedulerConfig::default();
        let next = update_estimate(&est(0.0, 0), 10, &cfg);
        assert!((next.ewma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ewma_fixed_point() {
        let cfg = SchedulerConfig::default();
        let next = update_estimate(&est(4.0, 0), 4, &cfg);
        assert!((next.ewma - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ewma_converges_geometrically() {
        let cfg = SchedulerConfig::default();
        let mut e = est(0.0, 0);
        for k in 1..=60 {
            e = update_estimate(&e, 5, &cfg);
            let expect = 5.0 * (1.0 - 0.9f64.powi(k));
            assert!((e.ewma - expect).abs() < 1e-9, "step {k}");
        }
        assert!((e.ewma - 5.0).abs() < 0.02);
    }

    #[test]
    fn hysteresis_band_examples() {
        let cfg = SchedulerConfig::default();
        assert_eq!(plan_link(&est(2.3, 2), &cfg), LinkPlan::NoChange);
        assert_eq!(plan_link(&est(4.0, 2), &cfg), LinkPlan::Allocate(2));
        // A bare link bootstraps its first slot without the margin.
        assert_eq!(plan_link(&est(0.4, 0), &cfg), LinkPlan::Allocate(1));
    }

    #[test]
    fn keeps_last_slot_until_expiration() {
        let cfg = SchedulerConfig::default();
        let mut e = est(0.0, 1);
        for _ in 0..cfg.expiration_msfs {
            e = update_estimate(&e, 0, &cfg);
            assert_eq!(plan_link(&e, &cfg), LinkPlan::NoChange);
        }
        e = update_estimate(&e, 0, &cfg);
        assert_eq!(plan_link(&e, &cfg), LinkPlan::Expire);
    }

    #[test]
    fn deallocates_surplus_beyond_band() {
        let cfg = SchedulerConfig::default();
        assert_eq!(plan_link(&est(1.2, 4), &cfg), LinkPlan::Deallocate(2));
        assert_eq!(plan_link(&est(3.0, 4), &cfg), LinkPlan::NoChange);
    }

    #[test]
    fn stable_under_constant_arrivals() {
        // Constant demand and ample capacity settle into a fixed
        // allocation with no alloc/dealloc oscillation.
        let cfg = SchedulerConfig::default();
        let mut e = LinkEstimate::seeded(6);
        let mut allocated = 0u32;
        let mut changes = Vec::new();
        for _ in 0..200 {
            match plan_link(&e, &cfg) {
                LinkPlan::Allocate(n) => {
                    allocated += n;
                    e.allocated_cfp = allocated;
                    changes.push(allocated);
                }
                LinkPlan::Deallocate(_) | LinkPlan::Expire => {
                    panic!("must not oscillate under constant demand")
                }
                LinkPlan::NoChange => {}
            }
            e = update_estimate(&e, 6, &cfg);
        }
        assert_eq!(allocated, 6);
        assert_eq!(changes, vec![6]);
    }

    #[test]
    fn fallback_kinds() {
        use crate::alloc::GtsKind;
        assert_eq!(fallback_kind(Mode::Ncr, true), None);
        assert_eq!(fallback_kind(Mode::Cr, true), None);
        assert_eq!(fallback_kind(Mode::Acr, false), None);
        assert_eq!(fallback_kind(Mode::Acr, true), Some(GtsKind::CapGts));
        assert_eq!(fallback_kind(Mode::Dcr, false), Some(GtsKind::CapGts));
    }
}
