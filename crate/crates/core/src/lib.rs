//! Multi-cell massive-MIMO downlink simulator: contaminated TDD channel
//! estimation, MF/ZF precoding, large-antenna SINR and BER limits, pilot
//! allocation across cells and downlink power control.

pub mod asymptotics;
pub mod channel;
pub mod error;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod pilot_allocation;
pub mod power_control;
pub mod precoding;
pub mod scenario;

pub use error::{Error, Result};
