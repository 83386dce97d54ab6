use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

/// Spaces calls at least `1 / rate` apart, across every thread holding it.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive");
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / rate),
            next_slot: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until this caller's slot comes up.
    pub fn acquire(&self) {
        let slot = {
            let mut next = self.next_slot.lock().expect("limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// Process-wide limiter for `host`. The first caller fixes the rate.
pub fn shared_limiter(host: &str, rate: f64) -> Arc<RateLimiter> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, Arc<RateLimiter>>>> = OnceLock::new();
    let mut map = REGISTRY
        .get_or_init(Default::default)
        .lock()
        .expect("limiter registry poisoned");
    map.entry(host.to_string())
        .or_insert_with(|| Arc::new(RateLimiter::per_second(rate)))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_respected_across_threads() {
        let limiter = Arc::new(RateLimiter::per_second(20.0));
        let stamps = Arc::new(Mutex::new(Vec::new()));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let (l, st) = (limiter.clone(), stamps.clone());
                s.spawn(move || {
                    for _ in 0..3 {
                        l.acquire();
                        st.lock().unwrap().push(Instant::now());
                    }
                });
            }
        });
        let mut stamps = stamps.lock().unwrap().clone();
        stamps.sort();
        // 10 ms of wake-up jitter allowed on a 50 ms interval
        for w in stamps.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_millis(40), "{:?}", w[1] - w[0]);
        }
    }

    #[test]
    fn shared_per_host() {
        let a = shared_limiter("limiter-test.local", 5.0);
        let b = shared_limiter("limiter-test.local", 50.0);
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(b.interval(), Duration::from_millis(200));
    }
}
