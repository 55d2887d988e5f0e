//! Sliding-window request rate limiter.
//!
//! At most `max` admissions are allowed in any trailing `window`. Admission
//! times are recorded when a slot is granted; callers block until a slot
//! frees up.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

pub struct RateLimiter {
    max: usize,
    window: Duration,
    stamps: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(max: usize, window: Duration) -> Self {
        Self {
            max: max.max(1),
            window,
            stamps: Mutex::new(VecDeque::new()),
        }
    }

    /// Block until a slot is free, then take it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut stamps = self.stamps.lock().expect("limiter lock poisoned");
                match admit(&mut stamps, Instant::now(), self.max, self.window) {
                    None => return,
                    Some(wait) => wait,
                }
            };
            std::thread::sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

/// Core admission rule, separated so it can be driven with a synthetic
/// clock: prune stamps older than the window; admit (recording `now`) if a
/// slot is free, otherwise return how long until the oldest stamp expires.
fn admit(
    stamps: &mut VecDeque<Instant>,
    now: Instant,
    max: usize,
    window: Duration,
) -> Option<Duration> {
    while let Some(&front) = stamps.front() {
        if now.duration_since(front) >= window {
            stamps.pop_front();
        } else {
            break;
        }
    }
    if stamps.len() < max {
        stamps.push_back(now);
        None
    } else {
        let oldest = *stamps.front().expect("non-empty by len check");
        Some((oldest + window).saturating_duration_since(now))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sliding_minute_window_admits_at_most_max() {
        // Synthetic clock over a 60s window with a budget of 3: drive a
        // request pattern and verify no 60s span ever admits more than 3.
        let window = Duration::from_secs(60);
        let max = 3;
        let start = Instant::now();
        let mut stamps = VecDeque::new();
        let mut admitted: Vec<Duration> = Vec::new();
        let mut clock = Duration::ZERO;
        let mut pending = 10usize;
        while pending > 0 {
            match admit(&mut stamps, start + clock, max, window) {
                None => {
                    admitted.push(clock);
                    pending -= 1;
                    clock += Duration::from_secs(1);
                }
                Some(wait) => {
                    assert!(wait <= window);
                    clock += wait;
                }
            }
        }
        for (i, &t) in admitted.iter().enumerate() {
            let in_window = admitted[..=i]
                .iter()
                .filter(|&&u| t < u + window && u <= t)
                .count();
            assert!(in_window <= max, "admission {i} saw {in_window} in window");
        }
        // Budget of 3 per minute means the 10th admission waits ≥ 3 minutes'
        // worth of expiries: admissions 0..2 at once, then one per expiry.
        assert!(*admitted.last().unwrap() >= Duration::from_secs(120));
    }

    #[test]
    fn admission_resumes_after_expiry() {
        let window = Duration::from_secs(60);
        let start = Instant::now();
        let mut stamps = VecDeque::new();
        assert!(admit(&mut stamps, start, 1, window).is_none());
        let wait = admit(&mut stamps, start + Duration::from_secs(1), 1, window).unwrap();
        assert_eq!(wait, Duration::from_secs(59));
        assert!(admit(&mut stamps, start + Duration::from_secs(60), 1, window).is_none());
    }

    #[test]
    fn concurrent_acquire_respects_budget() {
        use std::sync::Arc;
        let limiter = Arc::new(RateLimiter::new(5, Duration::from_millis(200)));
        let t0 = Instant::now();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let l = Arc::clone(&limiter);
                std::thread::spawn(move || {
                    let mut times = Vec::new();
                    for _ in 0..5 {
                        l.acquire();
                        times.push(t0.elapsed());
                    }
                    times
                })
            })
            .collect();
        let mut all: Vec<Duration> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        all.sort();
        // 20 admissions at 5 per 200ms: every run of 6 consecutive
        // admissions must span more than the window.
        for w in all.windows(6) {
            assert!(w[5] - w[0] >= Duration::from_millis(195), "burst too dense: {w:?}");
        }
    }
}
