//! Per-host request spacing.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use snapforge_stream::Clock;

/// Last-request clocks keyed by host. A request to a host starts only once
/// `delay_ms` has passed since the previous request to that host finished,
/// so start-to-start gaps are at least the delay whatever the latency.
///
/// The per-host lock is held across the request, so callers sharing one
/// `HostClocks` (fetcher tasks, seed fetches, image fetches) never overlap
/// on a host. A host also remembers the largest delay any caller asked for
/// and applies it to every later request, so image downloads with no delay
/// of their own still honour the crawled site's setting.
#[derive(Default)]
pub struct HostClocks {
    hosts: Mutex<HashMap<String, Arc<Mutex<HostSlot>>>>,
}

#[derive(Default)]
struct HostSlot {
    last_end: Option<u64>,
    floor_ms: u64,
}

impl HostClocks {
    pub fn new() -> Self {
        Self::default()
    }

    /// Waits for the host's turn, then runs `request`.
    pub fn run<T>(&self, host: &str, delay_ms: u64, clock: &dyn Clock, request: impl FnOnce() -> T) -> T {
        let slot = self.hosts.lock().entry(host.to_string()).or_default().clone();
        let mut slot = slot.lock();
        slot.floor_ms = slot.floor_ms.max(delay_ms);
        if let Some(prev) = slot.last_end {
            loop {
                let now = clock.now_ms();
                let due = prev.saturating_add(slot.floor_ms);
                if now >= due {
                    break;
                }
                clock.sleep_ms(due - now);
            }
        }
        let out = request();
        slot.last_end = Some(clock.now_ms());
        out
    }

    /// Delay currently enforced for `host`.
    pub fn delay_ms(&self, host: &str) -> u64 {
        self.hosts.lock().get(host).map_or(0, |s| s.lock().floor_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use snapforge_stream::ManualClock;

    #[test]
    fn first_request_is_immediate_then_spaced() {
        let clock = ManualClock::new(1_000);
        let hosts = HostClocks::new();
        let mut starts = Vec::new();
        for _ in 0..3 {
            hosts.run("a.com", 200, &clock, || starts.push(clock.now_ms()));
        }
        // the manual clock advances by exactly what is slept
        assert_eq!(starts, vec![1_000, 1_200, 1_400]);
        hosts.run("b.com", 200, &clock, || starts.push(clock.now_ms()));
        assert_eq!(starts[3], 1_400);
    }

    #[test]
    fn largest_delay_sticks_to_the_host() {
        let clock = ManualClock::new(0);
        let hosts = HostClocks::new();
        let mut starts = Vec::new();
        hosts.run("a.com", 300, &clock, || starts.push(clock.now_ms()));
        hosts.run("a.com", 0, &clock, || starts.push(clock.now_ms()));
        hosts.run("a.com", 100, &clock, || starts.push(clock.now_ms()));
        assert_eq!(starts, vec![0, 300, 600]);
        assert_eq!(hosts.delay_ms("a.com"), 300);
        assert_eq!(hosts.delay_ms("b.com"), 0);
    }
}
