//! Desk-scale simulator and analytic toolkit for the IEEE 802.15.4 DSME
//! MAC layer with four CAP-reduction operating modes: the standard NCR
//! and CR structures plus alternating (ACR) and dynamic (DCR) reduction.
//!
//! The crate splits into:
//! - [`frame`]: pure frame-structure derivation (slot classification,
//!   timing tables, GTS capacities);
//! - [`analytic`]: exact closed-form channel metrics with a brute-force
//!   enumeration oracle;
//! - [`alloc`]: SAB/ACT bookkeeping and the distributed three-way GTS
//!   handshake;
//! - [`scheduler`]: traffic-aware per-link GTS demand estimation;
//! - [`traffic`]: convergecast topologies and seeded packet generators;
//! - [`sim`]: the deterministic discrete-event engine at symbol
//!   resolution;
//! - [`metrics`]: trace reduction and multi-run aggregation.

pub mod alloc;
pub mod analytic;
pub mod config;
pub mod frame;
pub mod metrics;
pub mod rational;
pub mod scheduler;
pub mod sim;
pub mod traffic;

pub use config::{Mode, ProtocolConfig};
pub use rational::Ratio;
