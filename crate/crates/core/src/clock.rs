//! Virtual time for the discrete-event runtime.
//!
//! All latencies, timestamps and busy intervals are nanoseconds on a single
//! virtual timeline so that every run is deterministic and replayable. The
//! `serve` command maps this timeline onto the wall clock; benchmarks and
//! tests advance it directly.

use std::fmt;

use serde::{Deserialize, Serialize};

/// An instant on the virtual timeline, in nanoseconds since runtime start.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub fn from_ms(ms: f64) -> Self {
        VirtualTime((ms * 1_000_000.0).round() as u64)
    }

    pub fn from_secs(secs: f64) -> Self {
        VirtualTime((secs * 1_000_000_000.0).round() as u64)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000_000.0
    }

    pub fn saturating_sub(self, earlier: VirtualTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl std::ops::Add<u64> for VirtualTime {
    type Output = VirtualTime;
    fn add(self, ns: u64) -> VirtualTime {
        VirtualTime(self.0 + ns)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// Milliseconds to a nanosecond duration, rounding to the nearest nanosecond.
pub fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1_000_000.0).round() as u64
}

/// Nanosecond duration to fractional milliseconds.
pub fn ns_to_ms(ns: u64) -> f64 {
    ns as f64 / 1_000_000.0
}

/// Tick period for a rate in Hz, rounded to the nearest nanosecond.
pub fn period_ns(rate_hz: f64) -> u64 {
    (1_000_000_000.0 / rate_hz).round().max(1.0) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(VirtualTime::from_ms(110.0).as_nanos(), 110_000_000);
        assert_eq!(VirtualTime::from_secs(2.0).as_ms(), 2000.0);
        assert_eq!(ms_to_ns(0.5), 500_000);
    }

    #[test]
    fn period_is_exact_for_anchor_rates() {
        // 1000/110 Hz has an exact 110ms period.
        assert_eq!(period_ns(1000.0 / 110.0), 110_000_000);
        assert_eq!(period_ns(1000.0 / 37.5), 37_500_000);
    }
}
