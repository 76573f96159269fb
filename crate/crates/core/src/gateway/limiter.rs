use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    started: VecDeque<Instant>,
}

#[derive(Debug)]
struct Shared {
    per_window: Option<usize>,
    window: Duration,
    max_concurrent: Option<usize>,
    state: Mutex<State>,
    freed: Condvar,
}

/// Sliding-window request limiter with a concurrency cap, shared by every
/// worker of a run. Cloning shares the same limits.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    shared: Arc<Shared>,
}

/// Holds one concurrency slot until dropped.
#[must_use]
pub struct Permit {
    shared: Arc<Shared>,
}

impl Drop for Permit {
    fn drop(&mut self) {
        let mut state = self.shared.state.lock().expect("limiter lock");
        state.in_flight -= 1;
        self.shared.freed.notify_all();
    }
}

impl RateLimiter {
    pub fn new(per_window: Option<usize>, window: Duration, max_concurrent: Option<usize>) -> Self {
        Self {
            shared: Arc::new(Shared {
                per_window,
                window,
                max_concurrent,
                state: Mutex::new(State::default()),
                freed: Condvar::new(),
            }),
        }
    }

    pub fn per_minute(requests: Option<usize>, max_concurrent: Option<usize>) -> Self {
        Self::new(requests, Duration::from_secs(60), max_concurrent)
    }

    pub fn unlimited() -> Self {
        Self::new(None, Duration::from_secs(60), None)
    }

    /// Blocks until a request may start.
    pub fn acquire(&self) -> Permit {
        let shared = &self.shared;
        let mut state = shared.state.lock().expect("limiter lock");
        loop {
            let now = Instant::now();
            while state
                .started
                .front()
                .is_some_and(|t| now.duration_since(*t) >= shared.window)
            {
                state.started.pop_front();
            }
            let slot_free = shared.max_concurrent.is_none_or(|m| state.in_flight < m);
            let window_wait = match shared.per_window {
                Some(limit) if state.started.len() >= limit => {
                    let oldest = *state.started.front().expect("non-empty window");
                    Some(shared.window.saturating_sub(now.duration_since(oldest)))
                }
                _ => None,
            };
            if slot_free && window_wait.is_none() {
                state.in_flight += 1;
                state.started.push_back(now);
                return Permit {
                    shared: Arc::clone(shared),
                };
            }
            state = match window_wait {
                Some(wait) => shared.freed.wait_timeout(state, wait).expect("limiter lock").0,
                None => shared.freed.wait(state).expect("limiter lock"),
            };
        }
    }

    pub fn in_flight(&self) -> usize {
        self.shared.state.lock().expect("limiter lock").in_flight
    }
}
