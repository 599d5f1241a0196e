//! Trace-driven core: an abstract out-of-order window in front of a private
//! L1 with MSHRs, permission-caching TLBs, and a purge engine.
//!
//! The core never models wrong-path execution; traces are straight-line. What
//! it does model carefully is timing: when ops enter the window, when the
//! single memory stage probes the L1, how misses overlap, and how a purge
//! stalls everything for a content-independent number of cycles.

use std::collections::VecDeque;

use crate::config::{LineAddress, SimConfig, VariantFlags};
use crate::engine::{hash3, streams, DetRng, EventLog, Fifo, SimAbort};
use crate::proto::{CacheState, DownMsg, DowngradeResp, LineData, UpgradeReq};
use crate::stats::CoreStats;
use crate::trace::TraceOp;

/// Region permission check: may a core whose mask is `bv` touch `byte_addr`?
/// Pure function of the mask and the address's region bit.
pub fn check_access(cfg: &SimConfig, bv: u64, byte_addr: u64) -> bool {
    bv & (1u64 << cfg.region_of(byte_addr).0) != 0
}

/// Deterministic store payload for trace op `op_idx` on `core`. Keeping the
/// value a pure function of (core, op) lets an external checker replay
/// architectural effects without carrying data in trace files.
pub fn store_value(core: usize, op_idx: usize) -> u64 {
    hash3(0x57_0BE, core as u64, op_idx as u64) | 1
}

/// What one completed memory op looked like from the outside: when it entered
/// the window, when it completed, whether it faulted, and the value moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpObservable {
    pub op_idx: usize,
    pub issue: u64,
    pub complete: u64,
    pub fault: bool,
    pub value: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpState {
    /// Compute op executing until the given cycle; no observable recorded.
    WaitExec {
        done_at: u64,
    },
    /// Memory op whose value is already determined (L1 hit); completes and
    /// records at the given cycle.
    WaitValue {
        done_at: u64,
        value: u64,
    },
    /// Memory op waiting for its turn in the memory stage.
    NeedTlb,
    /// Permission found in the L2 TLB; retry the memory stage at the cycle.
    WaitTlb {
        ready_at: u64,
    },
    /// Page walk in flight for this op.
    WaitWalk,
    /// Permission resolved; waiting for an L1 probe slot.
    NeedProbe,
    /// Missed, but every L1 MSHR was busy.
    MshrBlocked,
    /// Miss outstanding in an L1 MSHR.
    WaitFill,
    Done,
}

#[derive(Debug, Clone, Copy)]
struct WinEntry {
    op_idx: usize,
    op: TraceOp,
    issue: u64,
    state: OpState,
}

#[derive(Debug, Clone, Copy)]
struct L1Line {
    state: CacheState,
    tag: u64,
    data: LineData,
}

const INVALID_LINE: L1Line = L1Line {
    state: CacheState::I,
    tag: 0,
    data: [0; 64],
};

#[derive(Debug, Clone)]
struct L1Mshr {
    line: LineAddress,
    want: CacheState,
    /// Op whose miss allocated the entry; it completes directly off the fill.
    primary: usize,
    /// Ops that merged into the entry; they re-probe after the fill.
    waiters: Vec<usize>,
    /// Upgrade request already pushed onto the link.
    sent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TlbEntry {
    page: u64,
    last_use: u64,
}

#[derive(Debug, Clone, Copy)]
struct Walk {
    op_idx: usize,
    page: u64,
    done_at: u64,
}

/// Stall phases a core passes through before resuming (or parking). Queued
/// by monitor actions and scripted context switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Wait for the window, MSHRs, and walker to empty.
    Drain,
    /// Fixed stall (monitor call charge, copy duration).
    Hold(u64),
    /// Content-independent purge of core-private state.
    Purge,
}

/// The per-core link FIFOs. `req` and `resp` flow toward the shared cache,
/// `down` carries both fills and downgrade requests back.
#[derive(Debug, Clone)]
pub struct CoreLinks {
    pub req: Fifo<UpgradeReq>,
    pub resp: Fifo<DowngradeResp>,
    pub down: Fifo<DownMsg>,
}

impl CoreLinks {
    pub fn new(depth: usize) -> Self {
        CoreLinks {
            req: Fifo::new(depth),
            resp: Fifo::new(depth),
            down: Fifo::new(depth),
        }
    }

    pub fn is_quiet(&self) -> bool {
        self.req.is_quiet() && self.resp.is_quiet() && self.down.is_quiet()
    }

    pub fn commit(&mut self) {
        self.req.commit();
        self.resp.commit();
        self.down.commit();
    }
}

#[derive(Debug, Clone)]
pub struct CoreState {
    pub id: usize,
    trace: Vec<TraceOp>,
    next_op: usize,
    window: VecDeque<WinEntry>,
    phases: VecDeque<Phase>,
    /// Resume running after the phase queue empties (false = park idle).
    resume_after_phases: bool,
    phase_entered: bool,
    held_until: u64,
    purge_done_at: u64,
    purge_scan: u64,
    /// Applied when the current purge completes (descheduling hands the core
    /// back to the host domain's regions).
    pending_bv: Option<u64>,
    /// Next scripted context-switch cycle when periodic flushing is on.
    next_switch: Option<u64>,
    run_done: bool,
    /// Region permission mask: bit r set = region r accessible.
    pub region_bv: u64,
    l1: Vec<L1Line>,
    l1_mshrs: Vec<Option<L1Mshr>>,
    tlb1: Vec<TlbEntry>,
    tlb2: Vec<Option<TlbEntry>>,
    walk: Option<Walk>,
    /// Elastic staging for outbound downgrade responses and eviction
    /// notices; drains onto the resp link at link rate.
    out_queue: VecDeque<DowngradeResp>,
    pub observables: Vec<OpObservable>,
    pub stats: CoreStats,
    rng_key: u64,
    /// Downgrade requests that arrived for lines already given up (legal
    /// races with in-flight eviction notices).
    pub stale_downgrades: u64,
}

impl CoreState {
    pub fn new(id: usize, cfg: &SimConfig, region_bv: u64) -> Self {
        let rng_key = DetRng::from_seed(cfg.seed)
            .split(streams::L1_REPLACEMENT)
            .split(id as u64)
            .key();
        CoreState {
            id,
            trace: Vec::new(),
            next_op: 0,
            window: VecDeque::new(),
            phases: VecDeque::new(),
            resume_after_phases: false,
            phase_entered: false,
            held_until: 0,
            purge_done_at: 0,
            purge_scan: 0,
            pending_bv: None,
            next_switch: None,
            run_done: false,
            region_bv,
            l1: vec![INVALID_LINE; (cfg.l1_sets as usize) * cfg.l1_ways],
            l1_mshrs: vec![None; cfg.l1_mshrs],
            tlb1: Vec::new(),
            tlb2: vec![None; (cfg.l2_tlb_sets as usize) * cfg.l2_tlb_ways],
            walk: None,
            out_queue: VecDeque::new(),
            observables: Vec::new(),
            stats: CoreStats::default(),
            rng_key,
            stale_downgrades: 0,
        }
    }

    /// Hand the core a trace and start it running immediately (flat mode, no
    /// monitor involvement).
    pub fn start_flat(
        &mut self,
        trace: Vec<TraceOp>,
        cfg: &SimConfig,
        flags: VariantFlags,
        now: u64,
    ) {
        self.trace = trace;
        self.next_op = 0;
        self.run_done = false;
        self.resume_after_phases = true;
        self.arm_switch_timer(cfg, flags, now);
    }

    /// Monitor schedule: charge the call, purge, then run the trace.
    pub fn begin_scheduled_run(&mut self, trace: Vec<TraceOp>, bv: u64, hold: u64) {
        self.trace = trace;
        self.next_op = 0;
        self.run_done = false;
        self.region_bv = bv;
        self.phases = VecDeque::from([Phase::Hold(hold), Phase::Purge]);
        self.phase_entered = false;
        self.resume_after_phases = true;
    }

    /// Monitor deschedule: charge, drain, purge, park idle with the host
    /// domain's regions.
    pub fn begin_deschedule(&mut self, hold: u64, host_bv: u64) {
        self.phases = VecDeque::from([Phase::Hold(hold), Phase::Drain, Phase::Purge]);
        self.phase_entered = false;
        self.pending_bv = Some(host_bv);
        self.resume_after_phases = false;
        // abandon unissued trace ops
        self.next_op = self.trace.len();
    }

    /// Monitor copy: drain, then stall for the copy's full data-independent
    /// duration (a stricter stand-in for non-speculative execution), then
    /// resume the same trace.
    pub fn begin_copy_hold(&mut self, hold: u64) {
        self.phases = VecDeque::from([Phase::Drain, Phase::Hold(hold)]);
        self.phase_entered = false;
        self.resume_after_phases = true;
    }

    /// A plain fixed-length monitor charge: pause issue for `hold` cycles
    /// (in-flight work keeps completing), then resume the trace. Callers
    /// must not interrupt a core that is already mid-transition.
    pub fn begin_hold(&mut self, hold: u64) {
        debug_assert!(self.phases.is_empty());
        self.phases = VecDeque::from([Phase::Hold(hold)]);
        self.phase_entered = false;
        self.resume_after_phases = true;
    }

    fn arm_switch_timer(&mut self, cfg: &SimConfig, flags: VariantFlags, now: u64) {
        if flags.contains(VariantFlags::FLUSH) && cfg.flush_switch_period > 0 {
            self.next_switch = Some(now + cfg.flush_switch_period);
        } else {
            self.next_switch = None;
        }
    }

    pub fn is_running(&self) -> bool {
        self.phases.is_empty() && self.resume_after_phases
    }

    pub fn in_purge(&self) -> bool {
        matches!(self.phases.front(), Some(Phase::Purge))
    }

    fn drained(&self) -> bool {
        self.window.is_empty() && self.walk.is_none() && self.l1_mshrs.iter().all(Option::is_none)
    }

    /// Fully finished: nothing in flight, nothing left to issue, no pending
    /// phases, outbound queue flushed.
    pub fn is_quiet(&self) -> bool {
        self.drained()
            && self.phases.is_empty()
            && self.out_queue.is_empty()
            && self.next_op >= self.trace.len()
    }

    pub fn clear_tlbs(&mut self) {
        self.tlb1.clear();
        for e in self.tlb2.iter_mut() {
            *e = None;
        }
    }

    /// Serialize the state a purge is responsible for clearing: the window,
    /// MSHRs, walker, L1 array, and both TLBs. Deliberately excludes
    /// observables, stats, the trace cursor, the region mask, and link
    /// contents: those are measurement artifacts or monitor-owned
    /// architectural state, not residue a purge must scrub.
    pub fn purgeable_state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend((self.window.len() as u64).to_le_bytes());
        out.push(self.walk.is_some() as u8);
        for m in &self.l1_mshrs {
            out.push(m.is_some() as u8);
        }
        for line in &self.l1 {
            out.push(match line.state {
                CacheState::I => 0,
                CacheState::S => 1,
                CacheState::M => 2,
            });
            if line.state != CacheState::I {
                out.extend(line.tag.to_le_bytes());
                out.extend(line.data);
            }
        }
        out.extend((self.tlb1.len() as u64).to_le_bytes());
        for e in &self.tlb1 {
            out.extend(e.page.to_le_bytes());
        }
        for e in &self.tlb2 {
            match e {
                None => out.push(0),
                Some(t) => {
                    out.push(1);
                    out.extend(t.page.to_le_bytes());
                }
            }
        }
        out
    }

    fn l1_lookup(&self, cfg: &SimConfig, line: LineAddress) -> Option<usize> {
        let set = cfg.l1_index(line) as usize;
        let base = set * cfg.l1_ways;
        (base..base + cfg.l1_ways)
            .find(|&i| self.l1[i].state != CacheState::I && self.l1[i].tag == line.0)
    }

    /// Architectural peek for monitor copies: this core's view of a line.
    pub fn line_value(&self, cfg: &SimConfig, line: LineAddress) -> Option<(CacheState, LineData)> {
        self.l1_lookup(cfg, line)
            .map(|i| (self.l1[i].state, self.l1[i].data))
    }

    /// Monitor-mediated invalidation without an eviction notice; used when a
    /// region changes hands and its directory entries are being dropped too.
    pub fn drop_line_silently(&mut self, cfg: &SimConfig, line: LineAddress) {
        if let Some(i) = self.l1_lookup(cfg, line) {
            self.l1[i] = INVALID_LINE;
        }
    }

    /// Region-scrub companion to `drop_line_silently`: silently invalidate
    /// every cached line whose address falls inside the span.
    pub fn drop_lines_in_range(&mut self, first_line: u64, line_count: u64) {
        for l in self.l1.iter_mut() {
            if l.state != CacheState::I && l.tag >= first_line && l.tag < first_line + line_count {
                *l = INVALID_LINE;
            }
        }
    }

    fn mshr_for(&self, line: LineAddress) -> Option<usize> {
        self.l1_mshrs
            .iter()
            .position(|m| m.as_ref().is_some_and(|m| m.line == line))
    }

    fn record(&mut self, op_idx: usize, issue: u64, complete: u64, fault: bool, value: u64) {
        self.observables.push(OpObservable {
            op_idx,
            issue,
            complete,
            fault,
            value,
        });
        self.stats.memops += 1;
        if fault {
            self.stats.faults += 1;
        }
        self.stats.completion_cycle = self.stats.completion_cycle.max(complete);
    }

    /// Mark an op complete: record its observable and free it for retire.
    fn finish_op(&mut self, op_idx: usize, now: u64, fault: bool, value: u64) {
        let mut issue = 0;
        for e in self.window.iter_mut() {
            if e.op_idx == op_idx {
                issue = e.issue;
                e.state = OpState::Done;
                break;
            }
        }
        self.record(op_idx, issue, now, fault, value);
    }
}

fn word_offset(cfg: &SimConfig, addr: u64) -> usize {
    (addr & (cfg.line_bytes - 1)) as usize & !7
}

fn read_word(data: &LineData, off: usize) -> u64 {
    u64::from_le_bytes(data[off..off + 8].try_into().unwrap())
}

fn write_word(data: &mut LineData, off: usize, v: u64) {
    data[off..off + 8].copy_from_slice(&v.to_le_bytes());
}

/// One cycle of one core. Internal order, fixed: phase bookkeeping, purge
/// scan, one incoming link message, timers, the memory stage, issue, retire,
/// outbound sends. All FIFO pushes land next cycle (registered semantics).
pub fn core_step(
    core: &mut CoreState,
    links: &mut CoreLinks,
    cfg: &SimConfig,
    flags: VariantFlags,
    now: u64,
    log: &mut EventLog,
) -> Result<(), SimAbort> {
    advance_phases(core, cfg, now, log)?;
    if core.in_purge() {
        purge_scan_step(core, cfg);
    }
    process_down_message(core, links, cfg, now, log)?;
    timer_transitions(core, cfg, now);
    let probing_allowed = match core.phases.front() {
        None => core.resume_after_phases,
        Some(Phase::Drain) | Some(Phase::Hold(_)) => true,
        Some(Phase::Purge) => false,
    };
    if probing_allowed {
        memory_stage(core, cfg, now);
    }
    if core.is_running() {
        maybe_context_switch(core, cfg, now, log);
    }
    if core.is_running() {
        issue_stage(core, cfg, flags, now);
    }
    retire_stage(core, now);
    send_stage(core, links);
    Ok(())
}

fn advance_phases(
    core: &mut CoreState,
    cfg: &SimConfig,
    now: u64,
    log: &mut EventLog,
) -> Result<(), SimAbort> {
    loop {
        let Some(phase) = core.phases.front().copied() else {
            return Ok(());
        };
        if !core.phase_entered {
            core.phase_entered = true;
            match phase {
                Phase::Hold(n) => core.held_until = now + n,
                Phase::Purge => {
                    if !core.drained() {
                        return Err(SimAbort {
                            cycle: now,
                            component: format!("core{}", core.id),
                            message: "purge started with work in flight".into(),
                        });
                    }
                    let stall = cfg.purge_stall_cycles();
                    core.purge_done_at = now + stall;
                    core.purge_scan = 0;
                    core.stats.purge_stalls += stall;
                    log.record(now, format!("core{}", core.id), "purge_begin", stall);
                }
                Phase::Drain => {}
            }
        }
        let done = match phase {
            Phase::Hold(_) => now >= core.held_until,
            Phase::Drain => core.drained(),
            Phase::Purge => now >= core.purge_done_at,
        };
        if !done {
            return Ok(());
        }
        if let Phase::Purge = phase {
            // the scan always finishes inside the stall, by construction
            debug_assert!(core.purge_scan >= cfg.l1_sets * cfg.l1_ways as u64);
            core.clear_tlbs();
            if let Some(bv) = core.pending_bv.take() {
                core.region_bv = bv;
            }
            log.record(now, format!("core{}", core.id), "purge_end", "");
        }
        core.phases.pop_front();
        core.phase_entered = false;
        if core.phases.is_empty() && core.resume_after_phases && core.next_switch.is_some() {
            // restart the scripted-switch timer relative to resumption
            core.next_switch = Some(now + cfg.flush_switch_period);
        }
    }
}

fn purge_scan_step(core: &mut CoreState, cfg: &SimConfig) {
    let total = cfg.l1_sets * cfg.l1_ways as u64;
    for _ in 0..cfg.l1_flush_rate {
        if core.purge_scan >= total {
            break;
        }
        let idx = core.purge_scan as usize;
        core.purge_scan += 1;
        let line = core.l1[idx];
        if line.state == CacheState::I {
            continue;
        }
        // dirty lines ride out with their data; clean evictions still notify
        core.out_queue.push_back(DowngradeResp {
            core: core.id,
            line: LineAddress(line.tag),
            to: CacheState::I,
            data: (line.state == CacheState::M).then_some(line.data),
        });
        core.l1[idx] = INVALID_LINE;
    }
}

fn process_down_message(
    core: &mut CoreState,
    links: &mut CoreLinks,
    cfg: &SimConfig,
    now: u64,
    log: &mut EventLog,
) -> Result<(), SimAbort> {
    let Some(msg) = links.down.pop() else {
        return Ok(());
    };
    match msg {
        DownMsg::Resp(resp) => {
            let Some(mshr_idx) = core.mshr_for(resp.line) else {
                return Err(SimAbort {
                    cycle: now,
                    component: format!("core{}", core.id),
                    message: format!("fill for line 0x{:X} with no MSHR", resp.line.0),
                });
            };
            let entry = core.l1_mshrs[mshr_idx].take().unwrap();
            install_line(core, cfg, now, resp.line, resp.grant, resp.data);
            // the initiating op completes straight off the fill
            let op = core.trace[entry.primary];
            let addr = op.addr().expect("memory op");
            let off = word_offset(cfg, addr);
            let way = core.l1_lookup(cfg, resp.line).expect("just installed");
            let value = if matches!(op, TraceOp::Store { .. }) {
                let v = store_value(core.id, entry.primary);
                write_word(&mut core.l1[way].data, off, v);
                v
            } else {
                read_word(&core.l1[way].data, off)
            };
            core.finish_op(entry.primary, now, false, value);
            log.record(
                now,
                format!("core{}", core.id),
                "fill",
                format!("line=0x{:X} op={}", resp.line.0, entry.primary),
            );
            // merged ops re-probe; anything blocked on MSHR exhaustion may retry
            for w in entry.waiters {
                set_op_state(core, w, OpState::NeedProbe);
            }
            unblock_mshr_waiters(core);
        }
        DownMsg::Downgrade(req) => {
            match core.l1_lookup(cfg, req.line) {
                Some(way) if core.l1[way].state > req.to => {
                    let data = (core.l1[way].state == CacheState::M).then_some(core.l1[way].data);
                    core.out_queue.push_back(DowngradeResp {
                        core: core.id,
                        line: req.line,
                        to: req.to,
                        data,
                    });
                    if req.to == CacheState::I {
                        core.l1[way] = INVALID_LINE;
                    } else {
                        core.l1[way].state = req.to;
                    }
                    log.record(
                        now,
                        format!("core{}", core.id),
                        "downgrade",
                        format!("line=0x{:X} to={:?}", req.line.0, req.to),
                    );
                }
                _ => {
                    // already at or below the requested state, or gone: a
                    // voluntary eviction notice is in flight and answers it
                    core.stale_downgrades += 1;
                }
            }
        }
    }
    Ok(())
}

fn set_op_state(core: &mut CoreState, op_idx: usize, st: OpState) {
    for e in core.window.iter_mut() {
        if e.op_idx == op_idx {
            e.state = st;
            return;
        }
    }
}

fn unblock_mshr_waiters(core: &mut CoreState) {
    for e in core.window.iter_mut() {
        if e.state == OpState::MshrBlocked {
            e.state = OpState::NeedProbe;
        }
    }
}

fn install_line(
    core: &mut CoreState,
    cfg: &SimConfig,
    now: u64,
    line: LineAddress,
    grant: CacheState,
    data: LineData,
) {
    if let Some(way) = core.l1_lookup(cfg, line) {
        // upgrade of a resident line
        core.l1[way].state = grant;
        core.l1[way].data = data;
        return;
    }
    let set = cfg.l1_index(line) as usize;
    let base = set * cfg.l1_ways;
    // prefer an invalid way; otherwise a stateless hash picks the victim, so
    // no replacement history survives for anyone else to train
    let way = (0..cfg.l1_ways)
        .find(|&w| core.l1[base + w].state == CacheState::I)
        .unwrap_or_else(|| (hash3(core.rng_key, now, set as u64) % cfg.l1_ways as u64) as usize);
    let victim = core.l1[base + way];
    if victim.state != CacheState::I {
        core.out_queue.push_back(DowngradeResp {
            core: core.id,
            line: LineAddress(victim.tag),
            to: CacheState::I,
            data: (victim.state == CacheState::M).then_some(victim.data),
        });
    }
    core.l1[base + way] = L1Line {
        state: grant,
        tag: line.0,
        data,
    };
}

fn timer_transitions(core: &mut CoreState, cfg: &SimConfig, now: u64) {
    // page walk completion: check against the *current* region mask, so a
    // shootdown or deschedule between walk start and end is honored
    if let Some(w) = core.walk {
        if now >= w.done_at {
            core.walk = None;
            let addr = w.page << 12;
            if check_access(cfg, core.region_bv, addr) {
                tlb_install(core, cfg, w.page, now);
                set_op_state(core, w.op_idx, OpState::NeedProbe);
            } else {
                core.finish_op(w.op_idx, now, true, 0);
            }
        }
    }
    let mut fired: Vec<(usize, u64, u64)> = Vec::new();
    for e in core.window.iter_mut() {
        match e.state {
            OpState::WaitExec { done_at } if now >= done_at => e.state = OpState::Done,
            OpState::WaitValue { done_at, value } if now >= done_at => {
                e.state = OpState::Done;
                fired.push((e.op_idx, e.issue, value));
            }
            OpState::WaitTlb { ready_at } if now >= ready_at => e.state = OpState::NeedProbe,
            _ => {}
        }
    }
    for (op_idx, issue, value) in fired {
        core.record(op_idx, issue, now, false, value);
    }
}

fn tlb_l1_hit(core: &mut CoreState, page: u64, now: u64) -> bool {
    for e in core.tlb1.iter_mut() {
        if e.page == page {
            e.last_use = now;
            return true;
        }
    }
    false
}

fn tlb_l2_hit(core: &mut CoreState, cfg: &SimConfig, page: u64, now: u64) -> bool {
    let set = (page & (cfg.l2_tlb_sets - 1)) as usize;
    let base = set * cfg.l2_tlb_ways;
    for i in base..base + cfg.l2_tlb_ways {
        if let Some(e) = &mut core.tlb2[i] {
            if e.page == page {
                e.last_use = now;
                return true;
            }
        }
    }
    false
}

fn tlb_install(core: &mut CoreState, cfg: &SimConfig, page: u64, now: u64) {
    tlb_install_l1(core, cfg, page, now);
    let set = (page & (cfg.l2_tlb_sets - 1)) as usize;
    let base = set * cfg.l2_tlb_ways;
    let slot = (base..base + cfg.l2_tlb_ways)
        .find(|&i| core.tlb2[i].is_none())
        .unwrap_or_else(|| {
            // least recently used way; ties broken by page for determinism
            (base..base + cfg.l2_tlb_ways)
                .min_by_key(|&i| {
                    let e = core.tlb2[i].as_ref().unwrap();
                    (e.last_use, e.page)
                })
                .unwrap()
        });
    core.tlb2[slot] = Some(TlbEntry {
        page,
        last_use: now,
    });
}

fn tlb_install_l1(core: &mut CoreState, cfg: &SimConfig, page: u64, now: u64) {
    if core.tlb1.iter().any(|e| e.page == page) {
        return;
    }
    if core.tlb1.len() >= cfg.l1_tlb_entries {
        let evict = core
            .tlb1
            .iter()
            .enumerate()
            .min_by_key(|(_, e)| (e.last_use, e.page))
            .map(|(i, _)| i)
            .unwrap();
        core.tlb1.swap_remove(evict);
    }
    core.tlb1.push(TlbEntry {
        page,
        last_use: now,
    });
}

/// The single memory stage: at most one op per cycle gets to consult the
/// TLBs and probe the L1. Oldest eligible op first.
fn memory_stage(core: &mut CoreState, cfg: &SimConfig, now: u64) {
    let Some(pos) = (0..core.window.len()).find(|&i| {
        let e = &core.window[i];
        if !matches!(e.state, OpState::NeedTlb | OpState::NeedProbe) {
            return false;
        }
        // same-word accesses leave the window in program order: a younger
        // one waits until the older has fully completed
        let a = e.op.addr();
        core.window
            .iter()
            .take(i)
            .all(|o| o.state == OpState::Done || o.op.addr() != a)
    }) else {
        return;
    };
    let entry = core.window[pos];
    let addr = entry.op.addr().expect("memory op");
    if entry.state == OpState::NeedTlb {
        let page = addr >> 12;
        if tlb_l1_hit(core, page, now) {
            // permission cached at full speed; fall through to the probe
        } else if tlb_l2_hit(core, cfg, page, now) {
            tlb_install_l1(core, cfg, page, now);
            core.window[pos].state = OpState::WaitTlb {
                ready_at: now + cfg.l2_tlb_latency,
            };
            return;
        } else if core.walk.is_none() {
            core.walk = Some(Walk {
                op_idx: entry.op_idx,
                page,
                done_at: now + cfg.page_walk_latency,
            });
            core.window[pos].state = OpState::WaitWalk;
            return;
        } else {
            // walker busy; retry next cycle
            return;
        }
    }
    probe_l1(core, cfg, pos, now);
}

fn probe_l1(core: &mut CoreState, cfg: &SimConfig, pos: usize, now: u64) {
    let entry = core.window[pos];
    let addr = entry.op.addr().unwrap();
    let line = cfg.line_of(addr);
    let is_store = matches!(entry.op, TraceOp::Store { .. });
    let needed = if is_store {
        CacheState::M
    } else {
        CacheState::S
    };
    if let Some(way) = core.l1_lookup(cfg, line) {
        if core.l1[way].state >= needed {
            let off = word_offset(cfg, addr);
            // stores take effect at the probe; the completion timer is the
            // observable's timestamp
            let value = if is_store {
                let v = store_value(core.id, entry.op_idx);
                write_word(&mut core.l1[way].data, off, v);
                v
            } else {
                read_word(&core.l1[way].data, off)
            };
            core.window[pos].state = OpState::WaitValue {
                done_at: now + cfg.l1_hit_latency,
                value,
            };
            return;
        }
    }
    // miss (or store upgrade): merge into an existing entry for the line
    if let Some(m) = core.mshr_for(line) {
        core.l1_mshrs[m]
            .as_mut()
            .unwrap()
            .waiters
            .push(entry.op_idx);
        core.window[pos].state = OpState::WaitFill;
        return;
    }
    let Some(free) = core.l1_mshrs.iter().position(Option::is_none) else {
        core.window[pos].state = OpState::MshrBlocked;
        return;
    };
    core.l1_mshrs[free] = Some(L1Mshr {
        line,
        want: needed,
        primary: entry.op_idx,
        waiters: Vec::new(),
        sent: false,
    });
    core.stats.l1_misses += 1;
    core.window[pos].state = OpState::WaitFill;
}

fn maybe_context_switch(core: &mut CoreState, cfg: &SimConfig, now: u64, log: &mut EventLog) {
    if let Some(at) = core.next_switch {
        if now >= at && core.next_op < core.trace.len() {
            log.record(now, format!("core{}", core.id), "context_switch", "");
            core.phases = VecDeque::from([Phase::Drain, Phase::Purge]);
            core.phase_entered = false;
            core.next_switch = Some(now + cfg.flush_switch_period);
        }
    }
}

fn issue_stage(core: &mut CoreState, cfg: &SimConfig, flags: VariantFlags, now: u64) {
    for _ in 0..cfg.issue_width {
        if core.window.len() >= cfg.issue_window || core.next_op >= core.trace.len() {
            break;
        }
        let op = core.trace[core.next_op];
        if flags.contains(VariantFlags::NONSPEC) && op.is_mem() && !core.window.is_empty() {
            break; // memory ops only enter an otherwise empty window
        }
        let op_idx = core.next_op;
        core.next_op += 1;
        let state = match op {
            TraceOp::Compute { cycles } => OpState::WaitExec {
                done_at: now + cycles,
            },
            _ => OpState::NeedTlb,
        };
        core.window.push_back(WinEntry {
            op_idx,
            op,
            issue: now,
            state,
        });
    }
}

fn retire_stage(core: &mut CoreState, now: u64) {
    while let Some(front) = core.window.front() {
        if front.state == OpState::Done {
            core.window.pop_front();
        } else {
            break;
        }
    }
    if !core.run_done
        && core.is_running()
        && core.next_op >= core.trace.len()
        && core.window.is_empty()
        && !core.trace.is_empty()
    {
        core.run_done = true;
        core.stats.completion_cycle = core.stats.completion_cycle.max(now);
    }
}

fn send_stage(core: &mut CoreState, links: &mut CoreLinks) {
    if !core.out_queue.is_empty() && links.resp.space() > 0 {
        let msg = core.out_queue.pop_front().unwrap();
        let ok = links.resp.try_push(msg);
        debug_assert!(ok);
    }
    if links.req.space() > 0 {
        if let Some(i) = core
            .l1_mshrs
            .iter()
            .position(|m| m.as_ref().is_some_and(|m| !m.sent))
        {
            let m = core.l1_mshrs[i].as_mut().unwrap();
            let ok = links.req.try_push(UpgradeReq {
                core: core.id,
                line: m.line,
                want: m.want,
            });
            debug_assert!(ok);
            m.sent = true;
        }
    }
}
