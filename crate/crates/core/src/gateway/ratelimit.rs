//! Sliding-window rate limiter: at most `capacity` dispatches in any
//! 60-second window, per backend.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::clock::Clock;

const WINDOW_MILLIS: u64 = 60_000;

pub struct RateLimiter {
    capacity: u32,
    recent: Mutex<VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(capacity: u32) -> Self {
        Self {
            capacity: capacity.max(1),
            recent: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks (via the clock) until a dispatch slot is free, then claims it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let now = clock.now_millis();
                let mut recent = self.recent.lock().unwrap();
                while recent
                    .front()
                    .is_some_and(|&t| now.saturating_sub(t) >= WINDOW_MILLIS)
                {
                    recent.pop_front();
                }
                if (recent.len() as u32) < self.capacity {
                    recent.push_back(now);
                    return;
                }
                recent.front().expect("queue is full") + WINDOW_MILLIS - now
            };
            clock.sleep_millis(wait.max(1));
        }
    }
}
