//! Closed-form channel metrics: CFP fraction, slot-level CAP waiting
//! time, and symbol-level channel-access time, together with a
//! brute-force enumeration oracle over derived frame layouts.
//!
//! All arithmetic is exact rational; callers convert to `f64` for
//! presentation only.

use crate::config::{
    Mode, BASE_SLOT_SYMBOLS, CAP_SLOTS_PER_SF, SLOTS_PER_SF, SYMBOL_DURATION_US,
    UNIT_BACKOFF_SYMBOLS,
};
use crate::frame::FrameLayout;
use crate::rational::Ratio;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticError {
    #[error("order constraint violated: need so <= mo")]
    BadOrders,
    #[error("profile has no CAP time")]
    NoCapTime,
    #[error("layout has no CAP slots to wait for")]
    NoCapSlots,
    #[error("waiting-time sum needs an integral per-CAP slot count, got {0:?}")]
    FractionalSlotCount(Ratio),
}

/// A metric that is a point value for the static modes and a closed
/// interval for DCR, whose runtime conversions sweep between the NCR
/// and CR structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeMetric {
    Point(Ratio),
    Interval { lo: Ratio, hi: Ratio },
}

impl ModeMetric {
    pub fn point(self) -> Option<Ratio> {
        match self {
            ModeMetric::Point(v) => Some(v),
            ModeMetric::Interval { .. } => None,
        }
    }

    pub fn lo(self) -> Ratio {
        match self {
            ModeMetric::Point(v) => v,
            ModeMetric::Interval { lo, .. } => lo,
        }
    }

    pub fn hi(self) -> Ratio {
        match self {
            ModeMetric::Point(v) => v,
            ModeMetric::Interval { hi, .. } => hi,
        }
    }

    /// Render as a decimal, `lo - hi` for intervals.
    pub fn render(self, digits: usize) -> String {
        match self {
            ModeMetric::Point(v) => format!("{:.*}", digits, v.to_f64()),
            ModeMetric::Interval { lo, hi } => {
                format!("{:.*} - {:.*}", digits, lo.to_f64(), digits, hi.to_f64())
            }
        }
    }
}

/// Average CAP count and CAP time slots per multisuperframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapProfile {
    pub n_cap: Ratio,
    pub s_cap: Ratio,
}

impl CapProfile {
    pub fn new(n_cap: Ratio, s_cap: Ratio) -> CapProfile {
        CapProfile { n_cap, s_cap }
    }

    /// The per-MSF profile of a static mode. ACR is averaged over its
    /// two-interval period.
    pub fn for_mode(mode: Mode, n_sf: u64) -> CapProfile {
        let n = Ratio::from_int(n_sf as i128);
        let eight = Ratio::from_int(CAP_SLOTS_PER_SF as i128);
        match mode {
            Mode::Ncr | Mode::Dcr => CapProfile::new(n, eight * n),
            Mode::Cr => CapProfile::new(Ratio::ONE, eight),
            Mode::Acr => CapProfile::new(
                (n + Ratio::ONE) / Ratio::from_int(2),
                (eight * n + eight) / Ratio::from_int(2),
            ),
        }
    }
}

fn check_orders(so: u8, mo: u8) -> Result<u32, AnalyticError> {
    if so > mo {
        return Err(AnalyticError::BadOrders);
    }
    Ok((mo - so) as u32)
}

// ---------------------------------------------------------------------------
// Fraction of CFP time slots
// ---------------------------------------------------------------------------

/// Fraction of CFP slots in the dataframe for an explicit CAP profile:
/// `(N_TS - S_CAP - N_SF) / N_TS`, the beacon slots being excluded from
/// the CFP along with the CAP.
pub fn tau_from_profile(profile: &CapProfile, n_sf: u64) -> Ratio {
    let n_ts = Ratio::from_int((SLOTS_PER_SF * n_sf) as i128);
    (n_ts - profile.s_cap - Ratio::from_int(n_sf as i128)) / n_ts
}

/// Closed-form CFP fraction per mode.
pub fn fraction_tau(mode: Mode, so: u8, mo: u8) -> Result<ModeMetric, AnalyticError> {
    let diff = check_orders(so, mo)? as i32;
    let ncr = Ratio::new(7, 16);
    let cr = Ratio::new(15, 16) - Ratio::pow2(-diff - 1);
    Ok(match mode {
        Mode::Ncr => ModeMetric::Point(ncr),
        Mode::Cr => ModeMetric::Point(cr),
        Mode::Acr => ModeMetric::Point(Ratio::new(11, 16) - Ratio::pow2(-diff - 2)),
        Mode::Dcr => ModeMetric::Interval { lo: ncr, hi: cr },
    })
}

// ---------------------------------------------------------------------------
// Slot-level waiting time
// ---------------------------------------------------------------------------

/// Expected slots to reach a CAP slot for one structure, normalized per
/// MSF: `N_CAP × Σ_{i=1..(N_TS−S_CAP)/N_CAP} i / N_TS`.
///
/// The per-CAP slot count must be integral, which holds for the NCR and
/// CR structures; the averaged ACR profile is evaluated per interval
/// parity and averaged by the caller.
pub fn wait_slots_from_profile(profile: &CapProfile, n_sf: u64) -> Result<Ratio, AnalyticError> {
    let n_ts = Ratio::from_int((SLOTS_PER_SF * n_sf) as i128);
    if profile.s_cap <= Ratio::ZERO {
        return Err(AnalyticError::NoCapTime);
    }
    let limit = (n_ts - profile.s_cap) / profile.n_cap;
    if !limit.is_integer() {
        return Err(AnalyticError::FractionalSlotCount(limit));
    }
    let l = limit.numer();
    let series = Ratio::new(l * (l + 1), 2);
    Ok(profile.n_cap * series / n_ts)
}

/// Closed-form expected slots to send a CAP message.
pub fn expected_cap_wait_slots(mode: Mode, so: u8, mo: u8) -> Result<ModeMetric, AnalyticError> {
    let diff = check_orders(so, mo)? as i32;
    let ncr = Ratio::new(9, 4);
    let cr = Ratio::pow2(diff + 3) + Ratio::new(7, 4) * Ratio::pow2(-diff) - Ratio::new(15, 2);
    Ok(match mode {
        Mode::Ncr => ModeMetric::Point(ncr),
        Mode::Cr => ModeMetric::Point(cr),
        Mode::Acr => ModeMetric::Point((ncr + cr) / Ratio::from_int(2)),
        Mode::Dcr => ModeMetric::Interval { lo: ncr, hi: cr },
    })
}

/// Per-MSF waiting-time sum evaluated like the closed forms but from
/// first principles, averaging the two parities for ACR.
pub fn wait_slots_per_structure(mode: Mode, so: u8, mo: u8) -> Result<ModeMetric, AnalyticError> {
    let diff = check_orders(so, mo)?;
    let n_sf = 1u64 << diff;
    let ncr = wait_slots_from_profile(&CapProfile::for_mode(Mode::Ncr, n_sf), n_sf)?;
    let cr = wait_slots_from_profile(&CapProfile::for_mode(Mode::Cr, n_sf), n_sf)?;
    Ok(match mode {
        Mode::Ncr => ModeMetric::Point(ncr),
        Mode::Cr => ModeMetric::Point(cr),
        Mode::Acr => ModeMetric::Point((ncr + cr) / Ratio::from_int(2)),
        Mode::Dcr => ModeMetric::Interval { lo: ncr, hi: cr },
    })
}

/// Enumeration oracle: walk every slot of the layout period and count
/// the slots until the next CAP slot (zero inside a CAP), then average.
pub fn brute_force_wait_slots(layout: &FrameLayout) -> Result<Ratio, AnalyticError> {
    let len = layout.slots.len();
    if layout.cap_slot_count() == 0 {
        return Err(AnalyticError::NoCapSlots);
    }
    // Backward sweep over two periods resolves the wrap-around once.
    let mut dist = vec![0u64; len];
    let mut next: Option<u64> = None;
    for idx in (0..2 * len).rev() {
        let i = idx % len;
        if layout.slots[i].is_cap_like() {
            next = Some(0);
            dist[i] = 0;
        } else if let Some(d) = next {
            dist[i] = d + 1;
            next = Some(d + 1);
        }
        if idx < len && next.is_none() {
            unreachable!("cap slot count checked above");
        }
    }
    // The sweep leaves each slot with its distance by the second pass.
    let total: u64 = dist.iter().sum();
    Ok(Ratio::new(total as i128, len as i128))
}

// ---------------------------------------------------------------------------
// Symbol-level channel access time
// ---------------------------------------------------------------------------

/// How the backoff average divides the sum over the `2^BE` candidate
/// values. `SampleCount` is the true uniform mean; `SampleCountMinusOne`
/// is kept as a sensitivity switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackoffMeanDenominator {
    #[default]
    SampleCount,
    SampleCountMinusOne,
}

/// Inputs to the symbol-level access model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessTimeParams {
    pub be: u8,
    /// Backoff period in symbols.
    pub d_ub: u64,
    /// Symbols per superframe.
    pub s_sf: u64,
    /// Symbols per CAP.
    pub s_c: Ratio,
    /// CAP spacing stretch factor when fewer CAPs than superframes.
    pub omega: Ratio,
    /// Probability that a packet is generated during a CAP.
    pub p_cap: Ratio,
    pub denominator: BackoffMeanDenominator,
}

impl AccessTimeParams {
    pub fn from_profile(
        profile: &CapProfile,
        so: u8,
        mo: u8,
        be: u8,
        denominator: BackoffMeanDenominator,
    ) -> Result<AccessTimeParams, AnalyticError> {
        check_orders(so, mo)?;
        if profile.s_cap <= Ratio::ZERO || profile.n_cap <= Ratio::ZERO {
            return Err(AnalyticError::NoCapTime);
        }
        let n_sf = 1u64 << (mo - so);
        let symbols_per_slot = Ratio::from_int((BASE_SLOT_SYMBOLS << so) as i128);
        let n_ts = Ratio::from_int((SLOTS_PER_SF * n_sf) as i128);
        Ok(AccessTimeParams {
            be,
            d_ub: UNIT_BACKOFF_SYMBOLS,
            s_sf: (BASE_SLOT_SYMBOLS << so) * SLOTS_PER_SF,
            s_c: profile.s_cap / profile.n_cap * symbols_per_slot,
            omega: Ratio::from_int(n_sf as i128) / profile.n_cap,
            p_cap: profile.s_cap / n_ts,
            denominator,
        })
    }

    /// Number of whole backoff slots per CAP.
    pub fn backoff_slots_per_cap(&self) -> i128 {
        (self.s_c / Ratio::from_int(self.d_ub as i128)).ceil()
    }
}

/// Backoff completion time in symbols for a packet in backoff slot `s`
/// drawing `i` backoff periods: the plain backoff when it fits in the
/// CAP, otherwise the wait to the next CAP plus the leftover backoff,
/// plus whole CAP-to-CAP spans when the draw covers several CAPs.
fn backoff_term(s: i128, i: i128, p: &AccessTimeParams) -> Ratio {
    let d = Ratio::from_int(p.d_ub as i128);
    let used = d * Ratio::from_int(s + i);
    if used < p.s_c {
        return d * Ratio::from_int(i);
    }
    let omega_ssf = p.omega * Ratio::from_int(p.s_sf as i128);
    let wraps = (used / p.s_c).floor();
    let leftover = used - p.s_c * Ratio::from_int(wraps);
    omega_ssf - d * Ratio::from_int(s) + leftover + omega_ssf * Ratio::from_int(wraps)
}

/// Expected CSMA/CA backoff duration in symbols for backoff slot `s`.
pub fn csma_backoff_expectation(s: i128, p: &AccessTimeParams) -> Ratio {
    let count = 1i128 << p.be;
    let mut sum = Ratio::ZERO;
    for i in 0..count {
        sum = sum + backoff_term(s, i, p);
    }
    let denom = match p.denominator {
        BackoffMeanDenominator::SampleCount => count,
        BackoffMeanDenominator::SampleCountMinusOne => (count - 1).max(1),
    };
    sum / Ratio::from_int(denom)
}

/// The symbol- and slot-level channel access expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelAccess {
    pub t_cap: Ratio,
    pub t_cfp: Ratio,
    pub t_c: Ratio,
    pub total_symbols: Ratio,
    pub total_slots: Ratio,
}

/// Expected channel access time for a CAP profile: the CAP-generation
/// branch averages the per-slot backoff expectation; the CFP branch
/// adds the expected wait to the next CAP to a fresh backoff.
pub fn expected_channel_access(
    profile: &CapProfile,
    so: u8,
    mo: u8,
    be: u8,
    denominator: BackoffMeanDenominator,
) -> Result<ChannelAccess, AnalyticError> {
    let p = AccessTimeParams::from_profile(profile, so, mo, be, denominator)?;
    let slots = p.backoff_slots_per_cap();
    let mut sum = Ratio::ZERO;
    for s in 0..slots {
        sum = sum + csma_backoff_expectation(s, &p);
    }
    let t_cap = sum / Ratio::from_int(slots);
    let omega_ssf = p.omega * Ratio::from_int(p.s_sf as i128);
    let t_c = (Ratio::ONE + omega_ssf - p.s_c) / Ratio::from_int(2);
    let t_cfp = t_c + csma_backoff_expectation(0, &p);
    let total = p.p_cap * t_cap + (Ratio::ONE - p.p_cap) * t_cfp;
    let symbols_per_slot = Ratio::from_int((BASE_SLOT_SYMBOLS << so) as i128);
    Ok(ChannelAccess {
        t_cap,
        t_cfp,
        t_c,
        total_symbols: total,
        total_slots: total / symbols_per_slot,
    })
}

/// One grid point of the access-time surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub n_cap: Ratio,
    pub slots_per_cap: Ratio,
    pub access_time_slots: Ratio,
}

/// Evaluate the access-time surface over a grid of CAP frequencies and
/// CAP lengths.
pub fn access_time_surface(
    so: u8,
    mo: u8,
    be: u8,
    denominator: BackoffMeanDenominator,
    n_cap_grid: &[Ratio],
    slots_per_cap_grid: &[Ratio],
) -> Result<Vec<SurfacePoint>, AnalyticError> {
    let mut rows = Vec::with_capacity(n_cap_grid.len() * slots_per_cap_grid.len());
    for &n_cap in n_cap_grid {
        for &slots in slots_per_cap_grid {
            let profile = CapProfile::new(n_cap, n_cap * slots);
            let access = expected_channel_access(&profile, so, mo, be, denominator)?;
            rows.push(SurfacePoint {
                n_cap,
                slots_per_cap: slots,
                access_time_slots: access.total_slots,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Dwell time
// ---------------------------------------------------------------------------

/// Slot duration in milliseconds as an exact ratio.
pub fn slot_duration_ms(so: u8) -> Ratio {
    Ratio::new(
        ((BASE_SLOT_SYMBOLS << so) * SYMBOL_DURATION_US) as i128,
        1000,
    )
}

/// Slot-level waiting time converted to milliseconds.
pub fn theoretical_dwell_ms(mode: Mode, so: u8, mo: u8) -> Result<ModeMetric, AnalyticError> {
    let wait = expected_cap_wait_slots(mode, so, mo)?;
    let ms = slot_duration_ms(so);
    Ok(match wait {
        ModeMetric::Point(v) => ModeMetric::Point(v * ms),
        ModeMetric::Interval { lo, hi } => ModeMetric::Interval {
            lo: lo * ms,
            hi: hi * ms,
        },
    })
}

/// Channel access expectation for a mode's own profile, as used by the
/// analytics report.
pub fn mode_channel_access(
    mode: Mode,
    so: u8,
    mo: u8,
    be: u8,
    denominator: BackoffMeanDenominator,
) -> Result<ModeMetric, AnalyticError> {
    let diff = check_orders(so, mo)?;
    let n_sf = 1u64 << diff;
    let eval = |m: Mode| -> Result<Ratio, AnalyticError> {
        let profile = CapProfile::for_mode(m, n_sf);
        Ok(expected_channel_access(&profile, so, mo, be, denominator)?.total_slots)
    };
    Ok(match mode {
        Mode::Ncr | Mode::Cr | Mode::Acr => ModeMetric::Point(eval(mode)?),
        Mode::Dcr => ModeMetric::Interval {
            lo: eval(Mode::Ncr)?,
            hi: eval(Mode::Cr)?,
        },
    })
}

/// Divergences between the closed forms and the figures commonly quoted
/// for them, kept alongside the numeric output.
pub fn analytics_notes() -> Vec<String> {
    vec![
        "tau for CR at MO-SO=4 is 0.90625 by the CFP-fraction formula; 90.06% is \
         sometimes quoted instead."
            .to_string(),
        "waiting time for ACR at MO-SO=2 is 13.59375 slots by the two-interval \
         average; 14.10 is sometimes quoted instead."
            .to_string(),
        "channel-access surface values are expressed in time slots.".to_string(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProtocolConfig;
    use crate::frame::derive_layout;

    fn tau_f(mode: Mode, mo: u8) -> f64 {
        fraction_tau(mode, 3, mo).unwrap().point().unwrap().to_f64()
    }

    fn wait_f(mode: Mode, mo: u8) -> f64 {
        expected_cap_wait_slots(mode, 3, mo)
            .unwrap()
            .point()
            .unwrap()
            .to_f64()
    }

    #[test]
    fn tau_table() {
        for mo in [4, 5, 6, 7] {
            assert_eq!(tau_f(Mode::Ncr, mo), 0.4375);
        }
        assert_eq!(tau_f(Mode::Cr, 4), 0.6875);
        assert_eq!(tau_f(Mode::Cr, 5), 0.8125);
        assert_eq!(tau_f(Mode::Cr, 6), 0.875);
        assert_eq!(tau_f(Mode::Cr, 7), 0.90625);
        assert_eq!(tau_f(Mode::Acr, 4), 0.5625);
        assert_eq!(tau_f(Mode::Acr, 5), 0.625);
        assert_eq!(tau_f(Mode::Acr, 6), 0.65625);
        assert_eq!(tau_f(Mode::Acr, 7), 0.671875);
        let dcr = fraction_tau(Mode::Dcr, 3, 5).unwrap();
        assert_eq!(dcr.lo(), Ratio::new(7, 16));
        assert_eq!(dcr.hi(), Ratio::new(13, 16));
    }

    #[test]
    fn tau_degenerate_cr() {
        assert_eq!(tau_f(Mode::Cr, 3), 0.4375);
    }

    #[test]
    fn tau_matches_profile_formula() {
        for mode in [Mode::Ncr, Mode::Cr, Mode::Acr] {
            for diff in 0..=6u8 {
                let n_sf = 1u64 << diff;
                let profile = CapProfile::for_mode(mode, n_sf);
                assert_eq!(
                    fraction_tau(mode, 3, 3 + diff).unwrap().point().unwrap(),
                    tau_from_profile(&profile, n_sf),
                    "mode {mode} diff {diff}"
                );
            }
        }
    }

    #[test]
    fn wait_table() {
        for mo in [4, 5, 6, 7] {
            assert_eq!(wait_f(Mode::Ncr, mo), 2.25);
        }
        assert_eq!(wait_f(Mode::Cr, 4), 9.375);
        assert_eq!(wait_f(Mode::Cr, 5), 24.9375);
        assert_eq!(wait_f(Mode::Cr, 6), 56.71875);
        assert_eq!(wait_f(Mode::Cr, 7), 120.609375);
        assert_eq!(wait_f(Mode::Acr, 4), 5.8125);
        assert_eq!(wait_f(Mode::Acr, 5), 13.59375);
        assert_eq!(wait_f(Mode::Acr, 6), 29.484375);
        assert_eq!(wait_f(Mode::Acr, 7), 61.4296875);
    }

    #[test]
    fn wait_closed_form_equals_sum_rule() {
        for mode in [Mode::Ncr, Mode::Cr, Mode::Acr] {
            for diff in 0..=6u8 {
                assert_eq!(
                    expected_cap_wait_slots(mode, 3, 3 + diff).unwrap(),
                    wait_slots_per_structure(mode, 3, 3 + diff).unwrap(),
                    "mode {mode} diff {diff}"
                );
            }
        }
    }

    #[test]
    fn brute_force_small_cases() {
        let ncr = ProtocolConfig::new(3, 4, 4, Mode::Ncr).unwrap();
        let layout = derive_layout(&ncr).unwrap();
        assert_eq!(brute_force_wait_slots(&layout).unwrap(), Ratio::new(72, 32));

        let cr = ProtocolConfig::new(3, 4, 4, Mode::Cr).unwrap();
        let layout = derive_layout(&cr).unwrap();
        assert_eq!(brute_force_wait_slots(&layout).unwrap(), Ratio::new(300, 32));

        let degenerate = ProtocolConfig::new(5, 5, 5, Mode::Cr).unwrap();
        let layout = derive_layout(&degenerate).unwrap();
        assert_eq!(brute_force_wait_slots(&layout).unwrap(), Ratio::new(9, 4));
    }

    #[test]
    fn brute_force_matches_closed_forms() {
        for mode in [Mode::Ncr, Mode::Cr, Mode::Acr] {
            for diff in 0..=6u8 {
                let cfg = ProtocolConfig::new(2, 2 + diff, 2 + diff, mode).unwrap();
                let layout = derive_layout(&cfg).unwrap();
                assert_eq!(
                    brute_force_wait_slots(&layout).unwrap(),
                    expected_cap_wait_slots(mode, 2, 2 + diff).unwrap().point().unwrap(),
                    "mode {mode} diff {diff}"
                );
            }
        }
    }

    #[test]
    fn brute_force_independent_of_bo() {
        for mode in [Mode::Ncr, Mode::Cr, Mode::Acr] {
            let tight = derive_layout(&ProtocolConfig::new(3, 5, 5, mode).unwrap()).unwrap();
            let wide = derive_layout(&ProtocolConfig::new(3, 5, 7, mode).unwrap()).unwrap();
            assert_eq!(
                brute_force_wait_slots(&tight).unwrap(),
                brute_force_wait_slots(&wide).unwrap()
            );
        }
    }

    #[test]
    fn backoff_expectation_base_cases() {
        let profile = CapProfile::for_mode(Mode::Cr, 16);
        let mut p = AccessTimeParams::from_profile(
            &profile,
            3,
            7,
            0,
            BackoffMeanDenominator::SampleCount,
        )
        .unwrap();
        assert_eq!(csma_backoff_expectation(0, &p), Ratio::ZERO);
        p.be = 3;
        assert_eq!(csma_backoff_expectation(0, &p), Ratio::from_int(70));
    }

    #[test]
    fn backoff_expectation_wraps_at_cap_end() {
        let profile = CapProfile::for_mode(Mode::Cr, 16);
        let p = AccessTimeParams::from_profile(
            &profile,
            3,
            7,
            3,
            BackoffMeanDenominator::SampleCount,
        )
        .unwrap();
        let last = p.backoff_slots_per_cap() - 1;
        assert_eq!(last, 191);
        // Hand enumeration at the last backoff slot: i=0 fits (3820 < 3840
        // symbols used), every i in 1..=7 spills into the next CAP one
        // whole CAP-to-CAP span away, giving 241920 + 20i symbols each.
        // Mean over the 8 draws: (0 + Σ(241920 + 20i)) / 8 = 211750.
        assert_eq!(
            csma_backoff_expectation(last, &p),
            Ratio::from_int(211_750)
        );
    }

    #[test]
    fn channel_access_anchor_points() {
        let d = BackoffMeanDenominator::SampleCount;
        let cr = expected_channel_access(&CapProfile::for_mode(Mode::Cr, 16), 3, 7, 3, d).unwrap();
        assert!((cr.total_slots.to_f64() - 120.5589518229).abs() < 1e-9);
        let ncr =
            expected_channel_access(&CapProfile::for_mode(Mode::Ncr, 16), 3, 7, 3, d).unwrap();
        assert!((ncr.total_slots.to_f64() - 2.3651041667).abs() < 1e-9);
        let acr =
            expected_channel_access(&CapProfile::for_mode(Mode::Acr, 16), 3, 7, 3, d).unwrap();
        assert!((acr.total_slots.to_f64() - 8.5208515).abs() < 1e-6);
    }

    #[test]
    fn channel_access_sensitivity_switch() {
        // The alternate denominator reproduces the commonly quoted CR and
        // NCR anchor values almost exactly.
        let d = BackoffMeanDenominator::SampleCountMinusOne;
        let cr = expected_channel_access(&CapProfile::for_mode(Mode::Cr, 16), 3, 7, 3, d).unwrap();
        assert!((cr.total_slots.to_f64() - 120.62).abs() < 0.01);
        let ncr =
            expected_channel_access(&CapProfile::for_mode(Mode::Ncr, 16), 3, 7, 3, d).unwrap();
        assert!((ncr.total_slots.to_f64() - 2.4166).abs() < 0.01);
    }

    #[test]
    fn channel_access_rejects_empty_cap() {
        let profile = CapProfile::new(Ratio::ONE, Ratio::ZERO);
        assert_eq!(
            expected_channel_access(&profile, 3, 7, 3, BackoffMeanDenominator::SampleCount),
            Err(AnalyticError::NoCapTime)
        );
    }

    #[test]
    fn channel_access_is_convex_combination() {
        for mode in [Mode::Ncr, Mode::Cr, Mode::Acr] {
            let a = expected_channel_access(
                &CapProfile::for_mode(mode, 16),
                3,
                7,
                3,
                BackoffMeanDenominator::SampleCount,
            )
            .unwrap();
            let lo = a.t_cap.min(a.t_cfp);
            let hi = a.t_cap.max(a.t_cfp);
            assert!(a.total_symbols >= lo && a.total_symbols <= hi);
        }
    }

    #[test]
    fn ncr_access_independent_of_mo() {
        let d = BackoffMeanDenominator::SampleCount;
        let mut values = Vec::new();
        for mo in [3u8, 4, 5, 6, 7] {
            let n_sf = 1u64 << (mo - 3);
            let profile = CapProfile::for_mode(Mode::Ncr, n_sf);
            values.push(
                expected_channel_access(&profile, 3, mo, 3, d)
                    .unwrap()
                    .total_slots,
            );
        }
        assert!(values.windows(2).all(|w| w[0] == w[1]), "{values:?}");
    }

    #[test]
    fn surface_single_point_consistency() {
        let d = BackoffMeanDenominator::SampleCount;
        let rows = access_time_surface(
            3,
            7,
            3,
            d,
            &[Ratio::ONE],
            &[Ratio::from_int(8)],
        )
        .unwrap();
        let direct = expected_channel_access(&CapProfile::for_mode(Mode::Cr, 16), 3, 7, 3, d)
            .unwrap()
            .total_slots;
        assert_eq!(rows[0].access_time_slots, direct);
    }

    #[test]
    fn surface_monotone_and_minimized_at_corner() {
        let d = BackoffMeanDenominator::SampleCount;
        let n_cap: Vec<Ratio> = (1..=16).map(Ratio::from_int).collect();
        let slots: Vec<Ratio> = (1..=8).map(Ratio::from_int).collect();
        let rows = access_time_surface(3, 7, 3, d, &n_cap, &slots).unwrap();
        // Monotone non-increasing in n_cap at fixed slots-per-CAP.
        for si in 0..slots.len() {
            for ni in 1..n_cap.len() {
                let prev = rows[(ni - 1) * slots.len() + si].access_time_slots;
                let cur = rows[ni * slots.len() + si].access_time_slots;
                assert!(cur <= prev, "n_cap {} slots {}", ni + 1, si + 1);
            }
        }
        let min = rows
            .iter()
            .min_by(|a, b| a.access_time_slots.cmp(&b.access_time_slots))
            .unwrap();
        assert_eq!(min.n_cap, Ratio::from_int(16));
        assert_eq!(min.slots_per_cap, Ratio::from_int(8));
    }

    #[test]
    fn dwell_values() {
        let acr = theoretical_dwell_ms(Mode::Acr, 3, 4).unwrap().point().unwrap();
        assert_eq!(acr, Ratio::new(4464, 100));
        let ncr = theoretical_dwell_ms(Mode::Ncr, 3, 6).unwrap().point().unwrap();
        assert_eq!(ncr, Ratio::new(1728, 100));
        let cr = theoretical_dwell_ms(Mode::Cr, 3, 4).unwrap().point().unwrap();
        assert_eq!(cr, Ratio::from_int(72));
    }
}
