//! Constant-latency DRAM controller with a hard in-flight cap.
//!
//! Every accepted request completes exactly `dram_latency` cycles after
//! submission. The controller answers reads only; writebacks occupy an
//! in-flight slot until completion but never produce a response. Responses
//! are delivered the cycle they complete — the controller is provisioned
//! with enough banks and return bandwidth that finished reads never queue
//! behind one another. The only contended resource is the in-flight window
//! itself, which refuses submissions when full.

use std::collections::{BTreeMap, VecDeque};

use crate::config::LineAddress;
use crate::proto::{LineData, ZERO_LINE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DramReqKind {
    Read,
    Writeback,
}

#[derive(Debug, Clone, Copy)]
pub struct DramRequest {
    pub kind: DramReqKind,
    pub line: LineAddress,
    /// LLC MSHR entry the response (if any) is delivered to.
    pub mshr: usize,
    /// Payload for writebacks.
    pub data: Option<LineData>,
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    complete_at: u64,
    req: DramRequest,
}

/// A read response addressed to an LLC MSHR entry.
#[derive(Debug, Clone, Copy)]
pub struct DramResp {
    pub mshr: usize,
    pub line: LineAddress,
    pub data: LineData,
}

/// Sparse backing store: untouched lines read as zero. Zeroing a region is a
/// range delete.
#[derive(Debug, Clone, Default)]
pub struct BackingStore {
    lines: BTreeMap<u64, LineData>,
}

impl BackingStore {
    pub fn read_line(&self, line: LineAddress) -> LineData {
        self.lines.get(&line.0).copied().unwrap_or(ZERO_LINE)
    }

    pub fn write_line(&mut self, line: LineAddress, data: LineData) {
        self.lines.insert(line.0, data);
    }

    /// Zero every line in `[first, first + count)`.
    pub fn zero_line_range(&mut self, first: u64, count: u64) {
        let keys: Vec<u64> = self
            .lines
            .range(first..first + count)
            .map(|(k, _)| *k)
            .collect();
        for k in keys {
            self.lines.remove(&k);
        }
    }
}

#[derive(Debug, Clone)]
pub struct DramState {
    latency: u64,
    max_inflight: usize,
    inflight: VecDeque<InFlight>,
    /// Submissions refused because the in-flight window was full.
    pub backpressure_events: u64,
    /// Peak in-flight occupancy seen.
    pub peak_inflight: usize,
}

impl DramState {
    pub fn new(latency: u64, max_inflight: usize) -> Self {
        DramState {
            latency,
            max_inflight,
            inflight: VecDeque::new(),
            backpressure_events: 0,
            peak_inflight: 0,
        }
    }

    pub fn inflight_len(&self) -> usize {
        self.inflight.len()
    }

    pub fn is_quiet(&self) -> bool {
        self.inflight.is_empty()
    }

    /// Submit a request. Returns `false` (backpressure) when the in-flight
    /// window is full; the caller must hold the request and retry.
    #[must_use]
    pub fn submit(&mut self, now: u64, req: DramRequest) -> bool {
        if self.inflight.len() >= self.max_inflight {
            self.backpressure_events += 1;
            return false;
        }
        self.inflight.push_back(InFlight {
            complete_at: now + self.latency,
            req,
        });
        self.peak_inflight = self.peak_inflight.max(self.inflight.len());
        true
    }

    /// Advance one cycle: retire everything due now, applying writebacks to
    /// the backing store and returning every read response that completed.
    pub fn step(&mut self, now: u64, store: &mut BackingStore) -> Vec<DramResp> {
        let mut out = Vec::new();
        // submission order implies completion order, so due entries are a prefix
        while let Some(head) = self.inflight.front() {
            if head.complete_at > now {
                break;
            }
            let done = self.inflight.pop_front().unwrap();
            match done.req.kind {
                DramReqKind::Writeback => {
                    store.write_line(done.req.line, done.req.data.expect("writeback data"));
                }
                DramReqKind::Read => {
                    out.push(DramResp {
                        mshr: done.req.mshr,
                        line: done.req.line,
                        data: store.read_line(done.req.line),
                    });
                }
            }
        }
        out
    }
}
