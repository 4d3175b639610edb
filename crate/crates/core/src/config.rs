//! Protocol configuration: superframe orders, operating mode, CSMA/CA
//! parameters, and the timing constants they induce.

use thiserror::Error;

/// Microseconds per O-QPSK symbol in the 2.4 GHz band.
pub const SYMBOL_DURATION_US: u64 = 16;
/// Symbols per superframe slot at superframe order zero (aBaseSlotDuration).
pub const BASE_SLOT_SYMBOLS: u64 = 60;
/// Slots per superframe (aNumSuperframeSlots).
pub const SLOTS_PER_SF: u64 = 16;
/// CAP slots per unreduced superframe (slot indices 1..=8).
pub const CAP_SLOTS_PER_SF: u64 = 8;
/// CFP slots per unreduced superframe (slot indices 9..=15).
pub const CFP_SLOTS_PER_SF: u64 = 7;
/// Symbols per CSMA/CA unit backoff period (aUnitBackoffPeriod).
pub const UNIT_BACKOFF_SYMBOLS: u64 = 20;
/// Number of selectable channels.
pub const NUM_CHANNELS: u16 = 16;

/// CAP reduction operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// No CAP reduction: every superframe keeps its 8-slot CAP.
    Ncr,
    /// CAP reduction: only the first superframe of each multisuperframe
    /// keeps a CAP; all other CAPs become CFP slots.
    Cr,
    /// Alternating CAP reduction: switch between the NCR and CR frame
    /// structures every beacon interval.
    Acr,
    /// Dynamic CAP reduction: start as NCR and convert individual CAP
    /// slots to GTSs on demand once the regular CFP is depleted.
    Dcr,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Ncr, Mode::Cr, Mode::Acr, Mode::Dcr];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Ncr => "ncr",
            Mode::Cr => "cr",
            Mode::Acr => "acr",
            Mode::Dcr => "dcr",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "ncr" => Some(Mode::Ncr),
            "cr" => Some(Mode::Cr),
            "acr" => Some(Mode::Acr),
            "dcr" => Some(Mode::Dcr),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Slotted CSMA/CA parameters. Defaults follow the standard MAC PIB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsmaParams {
    /// macMinBE.
    pub min_be: u8,
    /// macMaxBE.
    pub max_be: u8,
    /// macMaxCSMABackoffs: CCA failures tolerated per attempt.
    pub max_csma_backoffs: u8,
    /// MAC retries after a failed attempt (collision or channel access
    /// failure) before the frame is dropped.
    pub max_retries: u8,
    /// CCA detection time in symbols.
    pub cca_symbols: u64,
}

impl Default for CsmaParams {
    fn default() -> Self {
        CsmaParams {
            min_be: 3,
            max_be: 5,
            max_csma_backoffs: 4,
            max_retries: 3,
            cca_symbols: 8,
        }
    }
}

/// Root protocol configuration; every timing and layout fact derives
/// from this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolConfig {
    /// Superframe order.
    pub so: u8,
    /// Multisuperframe order.
    pub mo: u8,
    /// Beacon order.
    pub bo: u8,
    pub mode: Mode,
    /// Backoff exponent used by the analytic channel-access model.
    pub be: u8,
    /// Symbols per backoff period.
    pub unit_backoff: u64,
    pub csma: CsmaParams,
    /// When true (default) the beacon interval with even index uses the
    /// CR frame structure in ACR mode; flipping starts on NCR instead.
    pub acr_cr_on_even: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("order constraint violated: need so <= mo <= bo, got so={so} mo={mo} bo={bo}")]
    BadOrders { so: u8, mo: u8, bo: u8 },
    #[error("unit backoff period must be positive")]
    ZeroUnitBackoff,
    #[error("orders above 14 overflow the 802.15.4 field width")]
    OrderTooLarge,
}

impl ProtocolConfig {
    pub fn new(so: u8, mo: u8, bo: u8, mode: Mode) -> Result<ProtocolConfig, ConfigError> {
        let cfg = ProtocolConfig {
            so,
            mo,
            bo,
            mode,
            be: 3,
            unit_backoff: UNIT_BACKOFF_SYMBOLS,
            csma: CsmaParams::default(),
            acr_cr_on_even: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.so <= self.mo && self.mo <= self.bo) {
            return Err(ConfigError::BadOrders {
                so: self.so,
                mo: self.mo,
                bo: self.bo,
            });
        }
        if self.bo > 14 {
            return Err(ConfigError::OrderTooLarge);
        }
        if self.unit_backoff == 0 {
            return Err(ConfigError::ZeroUnitBackoff);
        }
        Ok(())
    }

    /// Superframes per multisuperframe.
    pub fn n_sf(&self) -> u64 {
        1 << (self.mo - self.so)
    }

    /// Multisuperframes per beacon interval.
    pub fn n_msf(&self) -> u64 {
        1 << (self.bo - self.mo)
    }

    /// Superframes per beacon interval.
    pub fn n_sf_bi(&self) -> u64 {
        1 << (self.bo - self.so)
    }

    /// Time slots per multisuperframe.
    pub fn n_ts(&self) -> u64 {
        SLOTS_PER_SF * self.n_sf()
    }
}
