//! Injectable time source so rate limiting and backoff are testable without
//! real waiting.

use std::sync::Mutex;
use std::time::Instant;

pub trait Clock: Send + Sync {
    /// Milliseconds since an arbitrary fixed origin.
    fn now_millis(&self) -> u64;
    fn sleep_millis(&self, millis: u64);
}

/// Wall-clock time relative to construction.
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_millis(&self, millis: u64) {
        std::thread::sleep(std::time::Duration::from_millis(millis));
    }
}

/// Virtual clock: sleeping advances time instantly. Records each sleep.
pub struct ManualClock {
    now: Mutex<u64>,
    sleeps: Mutex<Vec<u64>>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self {
            now: Mutex::new(0),
            sleeps: Mutex::new(Vec::new()),
        }
    }

    pub fn advance(&self, millis: u64) {
        *self.now.lock().unwrap() += millis;
    }

    pub fn sleeps(&self) -> Vec<u64> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now_millis(&self) -> u64 {
        *self.now.lock().unwrap()
    }

    fn sleep_millis(&self, millis: u64) {
        self.sleeps.lock().unwrap().push(millis);
        *self.now.lock().unwrap() += millis;
    }
}
