//! Time sources for expiry.
//!
//! Cache time counts whole seconds from an arbitrary origin. Expiry
//! timestamps stored in items are cache time; `0` means the item never
//! expires, so every clock starts at 2 to leave room for "already expired"
//! values without colliding with that sentinel.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// First value returned by a fresh clock.
pub const CLOCK_ORIGIN: u64 = 2;

pub trait Clock: Send + Sync {
    /// Current cache time in seconds.
    fn now(&self) -> u64;

    /// Wall-clock seconds since the Unix epoch matching [`Clock::now`].
    fn unix_now(&self) -> u64;

    /// Converts a Unix timestamp into cache time, saturating at the origin.
    fn from_unix(&self, unix: u64) -> u64 {
        let now = self.now();
        let unix_now = self.unix_now();
        if unix >= unix_now {
            now + (unix - unix_now)
        } else {
            now.saturating_sub(unix_now - unix).max(1)
        }
    }
}

/// Monotonic seconds since construction, immune to wall-clock jumps.
#[derive(Debug)]
pub struct MonotonicClock {
    start: Instant,
    unix_at_start: u64,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock {
            start: Instant::now(),
            unix_at_start: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> u64 {
        CLOCK_ORIGIN + self.start.elapsed().as_secs()
    }

    fn unix_now(&self) -> u64 {
        self.unix_at_start + self.start.elapsed().as_secs()
    }
}

/// A clock that only moves when told to. For tests.
#[derive(Debug)]
pub struct ManualClock {
    now: AtomicU64,
    unix_base: u64,
}

impl ManualClock {
    pub fn new() -> Self {
        ManualClock {
            now: AtomicU64::new(CLOCK_ORIGIN),
            unix_base: 1_700_000_000,
        }
    }

    pub fn advance(&self, secs: u64) {
        self.now.fetch_add(secs, Ordering::SeqCst);
    }

    pub fn set(&self, now: u64) {
        self.now.store(now, Ordering::SeqCst);
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn unix_now(&self) -> u64 {
        self.unix_base + self.now() - CLOCK_ORIGIN
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotonic_starts_at_origin() {
        let c = MonotonicClock::new();
        assert!(c.now() >= CLOCK_ORIGIN);
        assert!(c.unix_now() > 1_600_000_000);
    }

    #[test]
    fn unix_conversion_round_trips() {
        let c = ManualClock::new();
        c.advance(100);
        let u = c.unix_now();
        assert_eq!(c.from_unix(u + 50), c.now() + 50);
        assert_eq!(c.from_unix(u - 10), c.now() - 10);
        assert_eq!(c.from_unix(0), 1);
    }
}
