//! Microsecond-resolution simulation clock.
//!
//! Packet airtimes are sub-millisecond while experiments span minutes, so the
//! clock counts integer microseconds to avoid float drift. A `u64` tick count
//! holds far more than the longest supported horizon (24 simulated hours).

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

/// A point on the simulation clock (also used for durations between points).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime {
    ticks: u64,
}

impl SimTime {
    pub const ZERO: SimTime = SimTime { ticks: 0 };

    pub const fn from_micros(us: u64) -> Self {
        SimTime { ticks: us }
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime { ticks: ms * 1_000 }
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime { ticks: s * 1_000_000 }
    }

    /// Rounds to the nearest microsecond.
    pub fn from_secs_f64(s: f64) -> Self {
        assert!(s >= 0.0 && s.is_finite(), "time must be finite and >= 0");
        SimTime { ticks: (s * 1e6).round() as u64 }
    }

    pub const fn as_micros(self) -> u64 {
        self.ticks
    }

    pub fn as_secs_f64(self) -> f64 {
        self.ticks as f64 / 1e6
    }

    pub const fn is_zero(self) -> bool {
        self.ticks == 0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime { ticks: self.ticks.saturating_sub(rhs.ticks) }
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime { ticks: self.ticks.checked_add(rhs.ticks).expect("simulation clock overflow") }
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime {
            ticks: self.ticks.checked_sub(rhs.ticks).expect("simulation time went backwards"),
        }
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;

    fn mul(self, rhs: u64) -> SimTime {
        SimTime { ticks: self.ticks.checked_mul(rhs).expect("simulation clock overflow") }
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(SimTime::from_secs(60).as_micros(), 60_000_000);
        assert_eq!(SimTime::from_millis(20).as_micros(), 20_000);
        assert_eq!(SimTime::from_secs_f64(0.000384).as_micros(), 384);
        assert_eq!(SimTime::from_secs(1).as_secs_f64(), 1.0);
    }

    #[test]
    fn arithmetic() {
        let t = SimTime::from_secs(5) + SimTime::from_millis(500);
        assert_eq!(t.as_micros(), 5_500_000);
        assert_eq!((t - SimTime::from_millis(500)).as_micros(), 5_000_000);
        assert_eq!((SimTime::from_millis(100) * 8).as_micros(), 800_000);
        assert_eq!(SimTime::ZERO.saturating_sub(SimTime::from_secs(1)), SimTime::ZERO);
    }

    #[test]
    fn a_full_day_fits() {
        let day = SimTime::from_secs(24 * 3600);
        assert_eq!(day.as_micros(), 86_400_000_000);
    }
}
