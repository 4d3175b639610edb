//! Property tests over the frame derivations and the closed-form
//! metrics against their enumeration oracle.

use dsme_capr::analytic::{
    brute_force_wait_slots, expected_cap_wait_slots, fraction_tau, tau_from_profile, CapProfile,
};
use dsme_capr::config::{Mode, ProtocolConfig};
use dsme_capr::frame::{derive_layout, gts_capacity, slot_at, SlotKind, TimingTable};
use dsme_capr::rational::Ratio;
use proptest::prelude::*;

fn mode_strategy() -> impl Strategy<Value = Mode> {
    prop_oneof![
        Just(Mode::Ncr),
        Just(Mode::Cr),
        Just(Mode::Acr),
        Just(Mode::Dcr)
    ]
}

proptest! {
    #[test]
    fn wait_closed_form_matches_enumeration(
        so in 0u8..=5,
        diff in 0u8..=6,
        mode in mode_strategy(),
    ) {
        let mo = so + diff;
        let cfg = ProtocolConfig::new(so, mo, mo, mode).unwrap();
        let layout = derive_layout(&cfg).unwrap();
        let brute = brute_force_wait_slots(&layout).unwrap();
        match expected_cap_wait_slots(mode, so, mo).unwrap() {
            dsme_capr::analytic::ModeMetric::Point(v) => prop_assert_eq!(brute, v),
            dsme_capr::analytic::ModeMetric::Interval { lo, .. } => {
                // Dynamic reduction's layout starts unconverted.
                prop_assert_eq!(brute, lo);
            }
        }
    }

    #[test]
    fn acr_tau_is_the_mean_of_the_static_modes(so in 0u8..=6, diff in 0u8..=6) {
        let mo = so + diff;
        let ncr = fraction_tau(Mode::Ncr, so, mo).unwrap().point().unwrap();
        let cr = fraction_tau(Mode::Cr, so, mo).unwrap().point().unwrap();
        let acr = fraction_tau(Mode::Acr, so, mo).unwrap().point().unwrap();
        prop_assert_eq!(acr, (ncr + cr) / Ratio::from_int(2));
    }

    #[test]
    fn tau_matches_profile_for_every_mode(so in 0u8..=6, diff in 0u8..=6, mode in mode_strategy()) {
        let mo = so + diff;
        if mode == Mode::Dcr {
            return Ok(());
        }
        let n_sf = 1u64 << diff;
        let profile = CapProfile::for_mode(mode, n_sf);
        prop_assert_eq!(
            fraction_tau(mode, so, mo).unwrap().point().unwrap(),
            tau_from_profile(&profile, n_sf)
        );
    }

    #[test]
    fn capacity_cross_checks_layout_counts(so in 0u8..=4, diff in 0u8..=5, bo_extra in 0u8..=2) {
        let mo = so + diff;
        for mode in [Mode::Ncr, Mode::Cr] {
            let cfg = ProtocolConfig::new(so, mo, mo + bo_extra, mode).unwrap();
            let layout = derive_layout(&cfg).unwrap();
            let cap = gts_capacity(&cfg).unwrap();
            prop_assert_eq!(layout.cfp_slot_count(), cap.per_msf_max * layout.n_msf);
        }
    }

    #[test]
    fn slot_lookup_is_total_and_periodic(
        so in 0u8..=4,
        diff in 0u8..=3,
        bo_extra in 0u8..=2,
        mode in mode_strategy(),
        t in 0u64..50_000_000,
    ) {
        let cfg = ProtocolConfig::new(so, so + diff, so + diff + bo_extra, mode).unwrap();
        let layout = derive_layout(&cfg).unwrap();
        let timing = TimingTable::from_config(&cfg);
        let a = slot_at(&layout, &timing, t);
        prop_assert!(a.slot_in_sf < 16);
        prop_assert!(a.sf_in_msf < layout.n_sf);
        let period = timing.bi_duration_us * layout.period_bis;
        let b = slot_at(&layout, &timing, t + period);
        prop_assert_eq!(a.kind, b.kind);
        prop_assert_eq!(a.slot_in_sf, b.slot_in_sf);
        prop_assert_eq!(b.bi_index, a.bi_index + layout.period_bis);
        // Beacon slots sit exactly at superframe starts.
        prop_assert_eq!(a.kind == SlotKind::Beacon, a.slot_in_sf == 0);
    }

    #[test]
    fn brute_force_wait_is_bounded(so in 0u8..=4, diff in 0u8..=5, mode in mode_strategy()) {
        let mo = so + diff;
        let cfg = ProtocolConfig::new(so, mo, mo, mode).unwrap();
        let layout = derive_layout(&cfg).unwrap();
        let w = brute_force_wait_slots(&layout).unwrap();
        prop_assert!(w >= Ratio::ZERO);
        let bound = Ratio::from_int(
            (layout.n_ts - 8 /* one full CAP always survives per MSF */ + 1) as i128,
        );
        prop_assert!(w <= bound);
    }
}
