use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: u32,
    pub max_delay_ms: u64,
    pub jitter_seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 1_000,
            factor: 2,
            max_delay_ms: 60_000,
            jitter_seed: 0,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the jitter window after `attempt` failed attempts (1-based).
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1).min(30);
        let ms = self
            .base_delay_ms
            .saturating_mul(u64::from(self.factor).saturating_pow(exp))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

pub(crate) struct Jitter {
    rng: Mutex<ChaCha8Rng>,
}

impl Jitter {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub(crate) fn delay(&self, policy: &RetryPolicy, attempt: u32) -> Duration {
        let ceiling = policy.ceiling(attempt).as_millis() as u64;
        let ms = if ceiling == 0 {
            0
        } else {
            self.rng.lock().expect("jitter lock").gen_range(0..=ceiling)
        };
        Duration::from_millis(ms)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested delays without waiting.
#[derive(Default)]
pub struct NoSleep {
    pub slept: Mutex<Vec<Duration>>,
}

impl Sleeper for NoSleep {
    fn sleep(&self, d: Duration) {
        self.slept.lock().expect("sleep log").push(d);
    }
}
