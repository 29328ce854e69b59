//! Power talk: in-band signaling among the voltage-source converters of a
//! single-bus DC microgrid.
//!
//! Converters exchange bits by nudging their droop-control parameters
//! `(v, r_d)`. Every other converter sees the resulting shift of the bus
//! voltage and of its own output current, and demodulates from that.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: closed-form steady state of the bus, measurement noise and the
//!   random load process.
//! - [`signaling`]: operating-constraint feasibility, relative power
//!   deviation, and fixed-`r_d` constellation design against a budget.
//! - [`detection`]: detection spaces, MAP decisions for TDMA and full-duplex
//!   operation, and analytic error probabilities.
//! - [`coding`]: uniquely decodable codes for the binary-input adder channel
//!   seen by full-duplex receivers.
//! - [`protocol`]: training-phase accounting and closed-form net rates of the
//!   periodic-training and change-tracker protocols.
//! - [`simulator`]: slot-level simulation tying everything together.
//! - [`figures`]: tabular data behind the standard evaluation plots.
//! - [`config`]: the flat key-value run configuration and named presets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coding;
pub mod config;
pub mod detection;
pub mod figures;
pub mod grid;
pub mod numeric;
pub mod protocol;
pub mod signaling;
pub mod simulator;

mod error;

pub use error::{Error, Result};

/// Multiple-access strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One converter signals per slot; the others hold nominal parameters.
    Tdma,
    /// All converters signal and demodulate in every slot.
    #[serde(rename = "fd")]
    FullDuplex,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Tdma, Mode::FullDuplex];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Tdma => "tdma",
            Mode::FullDuplex => "fd",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tdma" => Ok(Mode::Tdma),
            "fd" | "full-duplex" | "fullduplex" => Ok(Mode::FullDuplex),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}
