//! Cycle machinery: the clock, registered FIFOs, the deterministic RNG, and
//! the event log. No component talks to another except through these.

use std::collections::VecDeque;
use std::fmt;

/// Monotone cycle counter. One tick of the world advances it by exactly one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Clock {
    pub cycle: u64,
}

/// Fatal simulation error: an internal invariant was broken. Carries enough
/// context to point at the component and cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimAbort {
    pub cycle: u64,
    pub component: String,
    pub message: String,
}

impl fmt::Display for SimAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cycle {}: [{}] {}",
            self.cycle, self.component, self.message
        )
    }
}

impl std::error::Error for SimAbort {}

/// A bounded queue with registered (clocked) semantics: an element enqueued
/// during cycle `t` becomes visible to dequeuers no earlier than `t+1`.
///
/// Enqueues go to a staging area that [`Fifo::commit`] folds into the visible
/// queue at the end of the cycle. Capacity is checked against visible plus
/// staged occupancy, so dequeue-then-enqueue within one cycle works on a full
/// queue (the dequeue frees the slot first in component order), while
/// enqueue-then-dequeue on a full queue is refused.
#[derive(Debug, Clone)]
pub struct Fifo<T> {
    capacity: usize,
    visible: VecDeque<T>,
    staged: Vec<T>,
}

impl<T> Fifo<T> {
    pub fn new(capacity: usize) -> Self {
        Fifo {
            capacity,
            visible: VecDeque::with_capacity(capacity),
            staged: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Visible occupancy (what a dequeuer can see this cycle).
    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    /// True when the queue is drained and nothing is staged either.
    pub fn is_quiet(&self) -> bool {
        self.visible.is_empty() && self.staged.is_empty()
    }

    /// Free slots a producer may still claim this cycle.
    pub fn space(&self) -> usize {
        self.capacity - self.visible.len() - self.staged.len()
    }

    /// Stage an element for visibility next cycle. Returns `false` (and drops
    /// nothing; the element is given back via the caller not observing any
    /// effect) when no slot is available.
    #[must_use]
    pub fn try_push(&mut self, item: T) -> bool {
        if self.space() == 0 {
            return false;
        }
        self.staged.push(item);
        true
    }

    /// Peek the head visible this cycle.
    pub fn peek(&self) -> Option<&T> {
        self.visible.front()
    }

    /// Dequeue the head visible this cycle. Elements staged this cycle are
    /// never returned.
    pub fn pop(&mut self) -> Option<T> {
        self.visible.pop_front()
    }

    /// End-of-cycle: make staged elements visible.
    pub fn commit(&mut self) {
        self.visible.extend(self.staged.drain(..));
        debug_assert!(self.visible.len() <= self.capacity);
    }
}

/// SplitMix64 finalizer. This is the only mixing primitive in the simulator;
/// every pseudo-random decision reduces to it.
///
/// Bit-exact definition:
/// ```text
/// x ^= x >> 30;  x *= 0xBF58476D1CE4E5B9;
/// x ^= x >> 27;  x *= 0x94D049BB133111EB;
/// x ^= x >> 31;
/// ```
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

/// Hash three words into one: `mix64(a ^ mix64(b ^ mix64(c)))`. Used for
/// stateless per-decision randomness (e.g. replacement way picks keyed on
/// stream, cycle, and set) so no component carries hidden RNG state that one
/// security domain could advance for another.
pub fn hash3(a: u64, b: u64, c: u64) -> u64 {
    mix64(a ^ mix64(b ^ mix64(c)))
}

/// Splittable deterministic RNG built on SplitMix64.
///
/// `next_u64` steps the classic SplitMix64 sequence: the state advances by
/// the golden-ratio increment `0x9E3779B97F4A7C15` and the output is
/// [`mix64`] of the new state. `split` derives an independent child stream as
/// `mix64(state ^ mix64(label))` without advancing the parent, so adding a
/// consumer with a fresh label never perturbs existing streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn from_seed(seed: u64) -> Self {
        DetRng { state: seed }
    }

    /// Derive an independent labeled child stream; the parent is unchanged.
    pub fn split(&self, label: u64) -> DetRng {
        DetRng {
            state: mix64(self.state ^ mix64(label)),
        }
    }

    /// Raw state, for use as a key in stateless [`hash3`] decisions.
    pub fn key(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform value in `[0, n)`. `n` must be nonzero.
    pub fn next_below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    pub fn next_bool(&mut self, num: u32, den: u32) -> bool {
        (self.next_u64() % den as u64) < num as u64
    }
}

/// Stream labels for [`DetRng::split`]. Fixed constants so streams stay
/// stable as components are added.
pub mod streams {
    pub const L1_REPLACEMENT: u64 = 0x11;
    pub const LLC_REPLACEMENT: u64 = 0x12;
    pub const TRACE_GEN: u64 = 0x21;
    pub const HARNESS: u64 = 0x31;
}

/// Append-only textual event log. One line per event:
/// `cycle,component,event,detail`. Logging can be disabled wholesale for hot
/// paths; the record of a run's events is itself a deterministic artifact.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub enabled: bool,
    pub lines: Vec<String>,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        EventLog {
            enabled,
            lines: Vec::new(),
        }
    }

    pub fn record(
        &mut self,
        cycle: u64,
        component: impl fmt::Display,
        event: &str,
        detail: impl fmt::Display,
    ) {
        if self.enabled {
            self.lines
                .push(format!("{cycle},{component},{event},{detail}"));
        }
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
