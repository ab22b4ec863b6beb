//! Token-bucket rate limiter, one bucket per provider.

use std::time::{Duration, Instant};

/// Classic token bucket: capacity equals the per-minute budget, refilled
/// continuously. A full bucket allows an initial burst; sustained traffic
/// settles at the configured rate.
pub struct TokenBucket {
    capacity: f64,
    tokens: f64,
    refill_per_sec: f64,
    last_refill: Instant,
}

impl TokenBucket {
    pub fn new(requests_per_minute: u32) -> Self {
        let capacity = f64::from(requests_per_minute.max(1));
        TokenBucket {
            capacity,
            tokens: capacity,
            refill_per_sec: capacity / 60.0,
            last_refill: Instant::now(),
        }
    }

    /// Attempts to take one token at time `now`. Returns `None` on success,
    /// or the duration to wait before one token will be available. Callers
    /// sleep and retry; time is passed in so tests can drive a virtual clock.
    pub fn try_take(&mut self, now: Instant) -> Option<Duration> {
        self.refill(now);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            return None;
        }
        let deficit = 1.0 - self.tokens;
        let wait_secs = deficit / self.refill_per_sec;
        Some(Duration::from_secs_f64(wait_secs))
    }

    fn refill(&mut self, now: Instant) {
        let elapsed = now.saturating_duration_since(self.last_refill);
        self.last_refill = now;
        self.tokens = (self.tokens + elapsed.as_secs_f64() * self.refill_per_sec).min(self.capacity);
    }
}
