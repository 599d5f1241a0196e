//! Shared last-level cache with an inclusive directory, a fixed-latency
//! no-backpressure pipeline, and miss-status registers that walk an explicit
//! phase machine.
//!
//! Every structure where two cores' requests could rub against each other
//! exists in two shapes, chosen by variant flags:
//!
//! * entry port: round-robin slots per core, or a global priority mux
//! * MSHR pool: partitioned per core, banked by address, or first-free
//! * upgrade queue: one per core, or one shared FIFO with head-of-line blocking
//! * DRAM queue: one-cycle dequeues with a retry pass, or a head that holds
//!   the port two cycles for writeback-then-read
//! * downgrade scan: one engine per MSHR partition, or a single shared engine
//!
//! The request pipeline itself never backpressures: at most one item enters
//! and one leaves per cycle, and anything that cannot make progress at exit
//! parks in its MSHR and retries through the entry port.

use std::collections::VecDeque;

use crate::config::{LineAddress, SimConfig, VariantFlags};
use crate::core::CoreLinks;
use crate::dram::{DramReqKind, DramRequest, DramResp, DramState};
use crate::engine::{hash3, streams, DetRng, EventLog, SimAbort};
use crate::proto::{
    CacheState, DownMsg, DowngradeReq, DowngradeResp, LineData, UpgradeReq, UpgradeResp,
};

#[derive(Debug, Clone, Copy)]
struct LlcLine {
    tag: u64,
    /// Valid data and directory state.
    present: bool,
    /// Slot reserved for `tag`; data still on its way from memory.
    fetching: bool,
    /// An MSHR is operating on this slot; nobody else may touch it.
    locked: bool,
    dirty: bool,
    sharers: u64,
    owner: Option<usize>,
    data: LineData,
}

const EMPTY_LINE: LlcLine = LlcLine {
    tag: 0,
    present: false,
    fetching: false,
    locked: false,
    dirty: false,
    sharers: 0,
    owner: None,
    data: [0; 64],
};

impl LlcLine {
    fn holders(&self) -> u64 {
        self.sharers | self.owner.map_or(0, |o| 1u64 << o)
    }
    fn in_use(&self) -> bool {
        self.present || self.fetching
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MshrPhase {
    /// Slot claimed; the lookup is still in the pipeline.
    Reserved,
    /// Waiting for holders of the requested line to answer downgrades.
    AwaitOwnDowngrades,
    /// Waiting for holders of the victim line to answer downgrades.
    AwaitVictimDowngrades,
    /// In the DRAM queue for a read.
    QueuedRead,
    /// In the DRAM queue for a victim writeback.
    QueuedWriteback,
    /// Read submitted; waiting for memory.
    AwaitDram,
    /// Memory answered; waiting for an install pass through the pipeline.
    DramReady,
    /// Needs another lookup pass (conflict spin or post-writeback re-entry).
    RetryReady,
    /// A retry or install pass is in the pipeline right now.
    InPipe,
    /// Grant computed; waiting for space on the requester's down link.
    RespondReady,
}

#[derive(Debug, Clone)]
struct MshrEntry {
    core: usize,
    line: LineAddress,
    want: CacheState,
    phase: MshrPhase,
    /// Way (global index into `lines`) this entry is filling.
    slot: usize,
    /// Victim being evicted from `slot`; blocks other requests to that
    /// address until its writeback is ordered at the memory port.
    victim_line: Option<LineAddress>,
    victim_data: LineData,
    pending_own: u64,
    sent_own: u64,
    pending_victim: u64,
    sent_victim: u64,
    fill_data: LineData,
    resp: Option<UpgradeResp>,
}

impl MshrEntry {
    fn new(core: usize, line: LineAddress, want: CacheState) -> Self {
        MshrEntry {
            core,
            line,
            want,
            phase: MshrPhase::Reserved,
            slot: usize::MAX,
            victim_line: None,
            victim_data: [0; 64],
            pending_own: 0,
            sent_own: 0,
            pending_victim: 0,
            sent_victim: 0,
            fill_data: [0; 64],
            resp: None,
        }
    }
}

#[derive(Debug, Clone)]
enum PipeItem {
    /// Fresh request for the reserved MSHR.
    Lookup { mshr: usize },
    /// Re-run the lookup for a parked entry.
    Retry { mshr: usize },
    /// Install the fill that memory delivered.
    Install { mshr: usize },
    /// A downgrade response or voluntary eviction notice from a core.
    Holder { resp: DowngradeResp },
}

#[derive(Debug, Default, Clone, Copy)]
pub struct LlcCoreStats {
    pub llc_misses: u64,
    pub mshr_stall_cycles: u64,
    pub arbiter_wait_cycles: u64,
    pub arbiter_idle_grants: u64,
    pub dq_retries: u64,
}

#[derive(Debug, Clone)]
pub struct LlcState {
    lines: Vec<LlcLine>,
    mshrs: Vec<Option<MshrEntry>>,
    pipeline: VecDeque<(u64, PipeItem)>,
    uq_shared: VecDeque<(usize, UpgradeReq)>,
    uq_split: Vec<VecDeque<UpgradeReq>>,
    dq: VecDeque<usize>,
    /// Insecure DRAM queue head mid two-cycle writeback+read occupancy.
    dq_wb_pending_read: Option<usize>,
    rng_key: u64,
    pub core_stats: Vec<LlcCoreStats>,
    /// Eviction notices for lines the cache no longer tracks (legal races
    /// with scrubs).
    pub stale_notices: u64,
}

impl LlcState {
    pub fn new(cfg: &SimConfig) -> Self {
        let rng_key = DetRng::from_seed(cfg.seed)
            .split(streams::LLC_REPLACEMENT)
            .key();
        LlcState {
            lines: vec![EMPTY_LINE; (cfg.llc_sets as usize) * cfg.llc_ways],
            mshrs: vec![None; cfg.llc_mshrs_total],
            pipeline: VecDeque::new(),
            uq_shared: VecDeque::new(),
            uq_split: (0..cfg.n_cores).map(|_| VecDeque::new()).collect(),
            dq: VecDeque::new(),
            dq_wb_pending_read: None,
            rng_key,
            core_stats: vec![LlcCoreStats::default(); cfg.n_cores],
            stale_notices: 0,
        }
    }

    pub fn is_quiet(&self) -> bool {
        self.mshrs.iter().all(Option::is_none)
            && self.pipeline.is_empty()
            && self.uq_shared.is_empty()
            && self.uq_split.iter().all(VecDeque::is_empty)
            && self.dq.is_empty()
            && self.dq_wb_pending_read.is_none()
    }

    pub fn mshrs_in_use(&self) -> usize {
        self.mshrs.iter().filter(|m| m.is_some()).count()
    }

    fn pipeline_latency(&self, cfg: &SimConfig, flags: VariantFlags) -> u64 {
        cfg.llc_pipeline_latency
            + if flags.contains(VariantFlags::ARB) {
                8
            } else {
                0
            }
    }

    /// Memory answered an outstanding read.
    pub fn on_dram_resp(&mut self, resp: DramResp) {
        let entry = self.mshrs[resp.mshr]
            .as_mut()
            .expect("response for a live MSHR");
        debug_assert_eq!(entry.phase, MshrPhase::AwaitDram);
        debug_assert_eq!(entry.line, resp.line);
        entry.fill_data = resp.data;
        entry.phase = MshrPhase::DramReady;
    }

    /// The slot range core `c` may allocate from.
    fn mshr_range(
        &self,
        cfg: &SimConfig,
        flags: VariantFlags,
        core: usize,
        line: LineAddress,
    ) -> (usize, usize) {
        if flags.contains(VariantFlags::MSHR_PARTITION) {
            let per = cfg.llc_mshrs_total / cfg.n_cores;
            (core * per, core * per + per)
        } else if flags.contains(VariantFlags::MISS) {
            let per = cfg.llc_mshrs_total / cfg.miss_banks;
            let bank = (line.0 & (cfg.miss_banks as u64 - 1)) as usize;
            (bank * per, bank * per + per)
        } else {
            (0, cfg.llc_mshrs_total)
        }
    }

    fn free_mshr(
        &self,
        cfg: &SimConfig,
        flags: VariantFlags,
        core: usize,
        line: LineAddress,
    ) -> Option<usize> {
        let (lo, hi) = self.mshr_range(cfg, flags, core, line);
        (lo..hi).find(|&i| self.mshrs[i].is_none())
    }

    fn find_slot(&self, cfg: &SimConfig, flags: VariantFlags, line: LineAddress) -> Option<usize> {
        let set = cfg.llc_index(line, flags) as usize;
        let base = set * cfg.llc_ways;
        (base..base + cfg.llc_ways).find(|&i| self.lines[i].in_use() && self.lines[i].tag == line.0)
    }

    /// Architectural peek for monitor copies: the current value of a line as
    /// this cache knows it, if present.
    pub fn line_value(
        &self,
        cfg: &SimConfig,
        flags: VariantFlags,
        line: LineAddress,
    ) -> Option<LineData> {
        self.find_slot(cfg, flags, line)
            .filter(|&i| self.lines[i].present)
            .map(|i| self.lines[i].data)
    }

    /// Monitor-mediated invalidation (scrub / copy destination). The caller
    /// guarantees no request for the line is in flight.
    pub fn drop_line(
        &mut self,
        cfg: &SimConfig,
        flags: VariantFlags,
        line: LineAddress,
        now: u64,
    ) -> Result<(), SimAbort> {
        if let Some(i) = self.find_slot(cfg, flags, line) {
            if self.lines[i].locked {
                return Err(SimAbort {
                    cycle: now,
                    component: "llc".into(),
                    message: format!("scrub of line 0x{:X} while an MSHR holds it", line.0),
                });
            }
            self.lines[i] = EMPTY_LINE;
        }
        Ok(())
    }

    /// Invalidate every cached line of a region span. Used when a region
    /// changes hands; the span's DRAM content is being zeroed by the caller.
    pub fn scrub_range(
        &mut self,
        first_line: u64,
        line_count: u64,
        now: u64,
    ) -> Result<(), SimAbort> {
        for slot in self.lines.iter_mut() {
            if slot.in_use() && slot.tag >= first_line && slot.tag < first_line + line_count {
                if slot.locked {
                    return Err(SimAbort {
                        cycle: now,
                        component: "llc".into(),
                        message: format!("scrub of line 0x{:X} while an MSHR holds it", slot.tag),
                    });
                }
                *slot = EMPTY_LINE;
            }
        }
        Ok(())
    }
}

/// One cycle of the shared cache. Fixed internal order: pipeline exit, DRAM
/// queue service, downgrade scan, response ports, link intake, entry arbiter.
pub fn llc_step(
    llc: &mut LlcState,
    links: &mut [CoreLinks],
    dram: &mut DramState,
    cfg: &SimConfig,
    flags: VariantFlags,
    now: u64,
    log: &mut EventLog,
) -> Result<(), SimAbort> {
    pipeline_exit(llc, cfg, flags, now, log)?;
    dq_service(llc, dram, cfg, flags, now);
    // one message per down link per cycle, downgrade requests first
    let mut down_sent = vec![false; cfg.n_cores];
    scan_downgrades(llc, links, cfg, flags, &mut down_sent);
    respond(llc, links, cfg, flags, &mut down_sent, now, log);
    intake_upgrades(llc, links, cfg, flags);
    entry_arbiter(llc, links, cfg, flags, now);
    Ok(())
}

fn pipeline_exit(
    llc: &mut LlcState,
    cfg: &SimConfig,
    flags: VariantFlags,
    now: u64,
    log: &mut EventLog,
) -> Result<(), SimAbort> {
    let due = matches!(llc.pipeline.front(), Some((ready, _)) if *ready <= now);
    if !due {
        return Ok(());
    }
    let (_, item) = llc.pipeline.pop_front().unwrap();
    match item {
        PipeItem::Lookup { mshr } | PipeItem::Retry { mshr } => {
            lookup_exit(llc, cfg, flags, mshr, now, log);
        }
        PipeItem::Install { mshr } => {
            install_exit(llc, cfg, flags, mshr);
        }
        PipeItem::Holder { resp } => {
            holder_exit(llc, cfg, flags, resp, now)?;
        }
    }
    Ok(())
}

fn lookup_exit(
    llc: &mut LlcState,
    cfg: &SimConfig,
    flags: VariantFlags,
    mshr: usize,
    now: u64,
    log: &mut EventLog,
) {
    let (core, line, want) = {
        let e = llc.mshrs[mshr].as_ref().expect("live entry");
        (e.core, e.line, e.want)
    };
    // conflict spin: somebody else is fetching this line or evicting it.
    // Only entries that have actually acquired something count — an entry
    // still spinning in lookup owns nothing, and treating two simultaneous
    // requests as mutual conflicts would spin both forever.  Lookup exits
    // are serialized (one per cycle), so exactly one request can claim a
    // line; later arrivals spin until the owner's entry is freed.
    let conflicted = llc.mshrs.iter().enumerate().any(|(i, m)| {
        i != mshr
            && m.as_ref().is_some_and(|m| {
                (m.line == line || m.victim_line == Some(line))
                    && (m.slot != usize::MAX
                        || !matches!(
                            m.phase,
                            MshrPhase::Reserved | MshrPhase::InPipe | MshrPhase::RetryReady
                        ))
            })
    });
    if conflicted {
        llc.mshrs[mshr].as_mut().unwrap().phase = MshrPhase::RetryReady;
        return;
    }
    if let Some(slot) = llc.find_slot(cfg, flags, line) {
        if llc.lines[slot].fetching {
            // no other entry owns this address (checked above), so the
            // reservation is ours: the post-writeback re-entry proceeds as a
            // plain read
            let e = llc.mshrs[mshr].as_mut().unwrap();
            debug_assert_eq!(e.slot, slot);
            e.phase = MshrPhase::QueuedRead;
            llc.dq.push_back(mshr);
            return;
        }
        if llc.lines[slot].locked {
            llc.mshrs[mshr].as_mut().unwrap().phase = MshrPhase::RetryReady;
            return;
        }
        hit_exit(llc, core, want, mshr, slot);
        return;
    }
    // miss
    llc.core_stats[core].llc_misses += 1;
    log.record(
        now,
        "llc",
        "miss",
        format!("core={core} line=0x{:X}", line.0),
    );
    let set = cfg.llc_index(line, flags) as usize;
    let base = set * cfg.llc_ways;
    let slot = (0..cfg.llc_ways)
        .map(|w| base + w)
        .find(|&i| !llc.lines[i].in_use())
        .or_else(|| {
            // stateless victim pick: nothing about past traffic survives in
            // the replacement decision
            let start = (hash3(llc.rng_key, now, set as u64) % cfg.llc_ways as u64) as usize;
            (0..cfg.llc_ways)
                .map(|k| base + (start + k) % cfg.llc_ways)
                .find(|&i| !llc.lines[i].locked)
        });
    let Some(slot) = slot else {
        // every way is pinned by some other request; spin
        llc.mshrs[mshr].as_mut().unwrap().phase = MshrPhase::RetryReady;
        return;
    };
    let victim = llc.lines[slot];
    let e = llc.mshrs[mshr].as_mut().unwrap();
    e.slot = slot;
    if !victim.in_use() {
        reserve_slot(&mut llc.lines[slot], line);
        e.phase = MshrPhase::QueuedRead;
        llc.dq.push_back(mshr);
        return;
    }
    let holders = victim.holders();
    if holders != 0 {
        e.victim_line = Some(LineAddress(victim.tag));
        e.pending_victim = holders;
        e.sent_victim = 0;
        e.phase = MshrPhase::AwaitVictimDowngrades;
        llc.lines[slot].locked = true;
        return;
    }
    if victim.dirty {
        e.victim_line = Some(LineAddress(victim.tag));
        e.victim_data = victim.data;
        e.phase = MshrPhase::QueuedWriteback;
        reserve_slot(&mut llc.lines[slot], line);
        llc.dq.push_back(mshr);
        return;
    }
    // clean and unshared: drop it on the floor
    reserve_slot(&mut llc.lines[slot], line);
    e.phase = MshrPhase::QueuedRead;
    llc.dq.push_back(mshr);
}

fn reserve_slot(slot: &mut LlcLine, line: LineAddress) {
    *slot = LlcLine {
        tag: line.0,
        present: false,
        fetching: true,
        locked: true,
        dirty: false,
        sharers: 0,
        owner: None,
        data: [0; 64],
    };
}

fn hit_exit(llc: &mut LlcState, core: usize, want: CacheState, mshr: usize, slot: usize) {
    let holders = llc.lines[slot].holders() & !(1u64 << core);
    let needs_downgrades = match want {
        CacheState::M => holders != 0,
        _ => llc.lines[slot].owner.is_some_and(|o| o != core),
    };
    llc.lines[slot].locked = true;
    let e = llc.mshrs[mshr].as_mut().unwrap();
    e.slot = slot;
    if needs_downgrades {
        e.pending_own = if want == CacheState::M {
            holders
        } else {
            llc.lines[slot].owner.map_or(0, |o| 1u64 << o)
        };
        e.sent_own = 0;
        e.phase = MshrPhase::AwaitOwnDowngrades;
        return;
    }
    finish_grant(llc, mshr);
}

/// Directory update + response snapshot once nothing stands in the way.
/// The line stays locked until the fill actually leaves on the link.
fn finish_grant(llc: &mut LlcState, mshr: usize) {
    let (core, want, slot) = {
        let e = llc.mshrs[mshr].as_ref().unwrap();
        (e.core, e.want, e.slot)
    };
    let line = &mut llc.lines[slot];
    debug_assert!(line.present);
    match want {
        CacheState::M => {
            debug_assert_eq!(line.holders() & !(1u64 << core), 0);
            line.owner = Some(core);
            line.sharers = 0;
        }
        _ => {
            debug_assert!(line.owner.is_none_or(|o| o == core));
            line.owner = None;
            line.sharers |= 1u64 << core;
        }
    }
    let resp = UpgradeResp {
        line: LineAddress(line.tag),
        grant: want,
        data: line.data,
    };
    let e = llc.mshrs[mshr].as_mut().unwrap();
    e.resp = Some(resp);
    e.phase = MshrPhase::RespondReady;
}

fn install_exit(llc: &mut LlcState, cfg: &SimConfig, flags: VariantFlags, mshr: usize) {
    let (line, slot) = {
        let e = llc.mshrs[mshr].as_ref().unwrap();
        (e.line, e.slot)
    };
    debug_assert_eq!(llc.find_slot(cfg, flags, line), Some(slot));
    let s = &mut llc.lines[slot];
    debug_assert!(s.fetching && s.tag == line.0);
    s.present = true;
    s.fetching = false;
    s.dirty = false;
    s.data = llc.mshrs[mshr].as_ref().unwrap().fill_data;
    finish_grant(llc, mshr);
}

fn holder_exit(
    llc: &mut LlcState,
    cfg: &SimConfig,
    flags: VariantFlags,
    resp: DowngradeResp,
    now: u64,
) -> Result<(), SimAbort> {
    let from = 1u64 << resp.core;
    // a solicited response clears the matching wait, whether it arrived as
    // an answer or as a voluntary eviction notice that crossed the request
    for i in 0..llc.mshrs.len() {
        let Some(m) = llc.mshrs[i].as_ref() else {
            continue;
        };
        if m.line == resp.line && m.pending_own & from != 0 {
            let slot = m.slot;
            apply_holder_to_line(&mut llc.lines[slot], &resp);
            let m = llc.mshrs[i].as_mut().unwrap();
            m.pending_own &= !from;
            if m.pending_own == 0 {
                finish_grant(llc, i);
            }
            return Ok(());
        }
        if m.victim_line == Some(resp.line) && m.pending_victim & from != 0 {
            let slot = m.slot;
            apply_holder_to_line(&mut llc.lines[slot], &resp);
            let m = llc.mshrs[i].as_mut().unwrap();
            m.pending_victim &= !from;
            if m.pending_victim == 0 {
                // victim fully recalled: capture it for writeback (or drop it
                // clean) and hand the slot to the requested line
                let line = m.line;
                let slot = m.slot;
                let victim_dirty = llc.lines[slot].dirty;
                let victim_data = llc.lines[slot].data;
                let m = llc.mshrs[i].as_mut().unwrap();
                if victim_dirty {
                    m.victim_data = victim_data;
                    m.phase = MshrPhase::QueuedWriteback;
                } else {
                    m.victim_line = None;
                    m.phase = MshrPhase::QueuedRead;
                }
                reserve_slot(&mut llc.lines[slot], line);
                llc.dq.push_back(i);
            }
            return Ok(());
        }
    }
    // voluntary notice with no waiter attached
    match llc.find_slot(cfg, flags, resp.line) {
        Some(slot) if llc.lines[slot].present => {
            apply_holder_to_line(&mut llc.lines[slot], &resp);
            Ok(())
        }
        _ => {
            // line already scrubbed or replaced; the notice outlived it
            llc.stale_notices += 1;
            let _ = now;
            Ok(())
        }
    }
}

fn apply_holder_to_line(line: &mut LlcLine, resp: &DowngradeResp) {
    let from = 1u64 << resp.core;
    if let Some(data) = resp.data {
        line.data = data;
        line.dirty = true;
    }
    match resp.to {
        CacheState::I => {
            line.sharers &= !from;
            if line.owner == Some(resp.core) {
                line.owner = None;
            }
        }
        _ => {
            if line.owner == Some(resp.core) {
                line.owner = None;
                line.sharers |= from;
            }
        }
    }
}

fn dq_service(
    llc: &mut LlcState,
    dram: &mut DramState,
    cfg: &SimConfig,
    flags: VariantFlags,
    now: u64,
) {
    let _ = cfg;
    // second half of an insecure two-cycle writeback+read occupancy
    if let Some(mshr) = llc.dq_wb_pending_read {
        let line = llc.mshrs[mshr].as_ref().unwrap().line;
        if dram.submit(
            now,
            DramRequest {
                kind: DramReqKind::Read,
                line,
                mshr,
                data: None,
            },
        ) {
            llc.mshrs[mshr].as_mut().unwrap().phase = MshrPhase::AwaitDram;
            llc.dq_wb_pending_read = None;
        }
        return;
    }
    let Some(&mshr) = llc.dq.front() else { return };
    let entry = llc.mshrs[mshr].as_ref().expect("queued entry is live");
    match entry.phase {
        MshrPhase::QueuedRead => {
            let line = entry.line;
            if dram.submit(
                now,
                DramRequest {
                    kind: DramReqKind::Read,
                    line,
                    mshr,
                    data: None,
                },
            ) {
                llc.mshrs[mshr].as_mut().unwrap().phase = MshrPhase::AwaitDram;
                llc.dq.pop_front();
            }
        }
        MshrPhase::QueuedWriteback => {
            let victim = entry.victim_line.expect("writeback has a victim");
            let data = entry.victim_data;
            if dram.submit(
                now,
                DramRequest {
                    kind: DramReqKind::Writeback,
                    line: victim,
                    mshr,
                    data: Some(data),
                },
            ) {
                llc.dq.pop_front();
                let core = entry.core;
                let e = llc.mshrs[mshr].as_mut().unwrap();
                // ordered at the memory port: a later read of the victim
                // address can no longer pass the writeback
                e.victim_line = None;
                if flags.contains(VariantFlags::DQ_RETRY) {
                    // one-cycle dequeue: the read half re-enters through the
                    // requester's own entry slot
                    e.phase = MshrPhase::RetryReady;
                    llc.core_stats[core].dq_retries += 1;
                } else {
                    llc.dq_wb_pending_read = Some(mshr);
                }
            }
        }
        other => unreachable!("DRAM queue holds only queued entries, found {other:?}"),
    }
}

fn scan_downgrades(
    llc: &mut LlcState,
    links: &mut [CoreLinks],
    cfg: &SimConfig,
    flags: VariantFlags,
    down_sent: &mut [bool],
) {
    let duplicated = flags.contains(VariantFlags::DUP_DOWNGRADE);
    let scanners: Vec<(usize, usize)> = if duplicated {
        let per = cfg.llc_mshrs_total / cfg.n_cores;
        (0..cfg.n_cores).map(|c| (c * per, c * per + per)).collect()
    } else {
        vec![(0, cfg.llc_mshrs_total)]
    };
    for (lo, hi) in scanners {
        // each engine issues at most one request per cycle
        'engine: for i in lo..hi {
            let Some(m) = llc.mshrs[i].as_ref() else {
                continue;
            };
            let jobs = [
                (
                    m.pending_own & !m.sent_own,
                    m.line,
                    if m.want == CacheState::M {
                        CacheState::I
                    } else {
                        CacheState::S
                    },
                    true,
                ),
                (
                    m.pending_victim & !m.sent_victim,
                    m.victim_line.unwrap_or(LineAddress(0)),
                    CacheState::I,
                    false,
                ),
            ];
            for (unsent, line, to, own) in jobs {
                if unsent == 0 {
                    continue;
                }
                let target = unsent.trailing_zeros() as usize;
                if down_sent[target] {
                    continue;
                }
                if links[target].down.space() == 0 {
                    continue;
                }
                let ok = links[target]
                    .down
                    .try_push(DownMsg::Downgrade(DowngradeReq { line, to }));
                debug_assert!(ok);
                down_sent[target] = true;
                let m = llc.mshrs[i].as_mut().unwrap();
                if own {
                    m.sent_own |= 1u64 << target;
                } else {
                    m.sent_victim |= 1u64 << target;
                }
                break 'engine;
            }
        }
    }
}

fn respond(
    llc: &mut LlcState,
    links: &mut [CoreLinks],
    cfg: &SimConfig,
    flags: VariantFlags,
    down_sent: &mut [bool],
    now: u64,
    log: &mut EventLog,
) {
    for c in 0..cfg.n_cores {
        if down_sent[c] || links[c].down.space() == 0 {
            continue;
        }
        let Some(i) = llc.mshrs.iter().position(|m| {
            m.as_ref()
                .is_some_and(|m| m.core == c && m.phase == MshrPhase::RespondReady)
        }) else {
            continue;
        };
        let entry = llc.mshrs[i].take().unwrap();
        let resp = entry.resp.expect("grant prepared");
        let ok = links[c].down.try_push(DownMsg::Resp(resp));
        debug_assert!(ok);
        down_sent[c] = true;
        let slot = llc
            .find_slot(cfg, flags, entry.line)
            .expect("granted line is resident");
        llc.lines[slot].locked = false;
        log.record(
            now,
            "llc",
            "grant",
            format!("core={c} line=0x{:X} {:?}", entry.line.0, resp.grant),
        );
    }
}

fn intake_upgrades(
    llc: &mut LlcState,
    links: &mut [CoreLinks],
    cfg: &SimConfig,
    flags: VariantFlags,
) {
    for c in 0..cfg.n_cores {
        let space = if flags.contains(VariantFlags::SPLIT_UQ) {
            llc.uq_split[c].len() < 2
        } else {
            llc.uq_shared.len() < 2 * cfg.n_cores
        };
        if !space {
            continue;
        }
        if let Some(req) = links[c].req.pop() {
            if flags.contains(VariantFlags::SPLIT_UQ) {
                llc.uq_split[c].push_back(req);
            } else {
                llc.uq_shared.push_back((c, req));
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Candidate {
    DramReady(usize),
    Holder,
    Retry(usize),
    Upgrade,
}

impl Candidate {
    fn class(&self) -> u8 {
        match self {
            Candidate::DramReady(_) => 0,
            Candidate::Holder => 1,
            Candidate::Retry(_) => 2,
            Candidate::Upgrade => 3,
        }
    }
}

fn entry_arbiter(
    llc: &mut LlcState,
    links: &mut [CoreLinks],
    cfg: &SimConfig,
    flags: VariantFlags,
    now: u64,
) {
    // best candidate per core, fixed priority within a core
    let mut candidates: Vec<Option<Candidate>> = Vec::with_capacity(cfg.n_cores);
    for c in 0..cfg.n_cores {
        let dram_ready = llc.mshrs.iter().position(|m| {
            m.as_ref()
                .is_some_and(|m| m.core == c && m.phase == MshrPhase::DramReady)
        });
        let cand = if let Some(i) = dram_ready {
            Some(Candidate::DramReady(i))
        } else if links[c].resp.peek().is_some() {
            Some(Candidate::Holder)
        } else if let Some(i) = llc.mshrs.iter().position(|m| {
            m.as_ref()
                .is_some_and(|m| m.core == c && m.phase == MshrPhase::RetryReady)
        }) {
            Some(Candidate::Retry(i))
        } else {
            let head = if flags.contains(VariantFlags::SPLIT_UQ) {
                llc.uq_split[c].front().map(|r| r.line)
            } else {
                llc.uq_shared
                    .front()
                    .filter(|(hc, _)| *hc == c)
                    .map(|(_, r)| r.line)
            };
            match head {
                Some(line) => {
                    if llc.free_mshr(cfg, flags, c, line).is_some() {
                        Some(Candidate::Upgrade)
                    } else {
                        llc.core_stats[c].mshr_stall_cycles += 1;
                        None
                    }
                }
                None => None,
            }
        };
        candidates.push(cand);
    }
    let granted: Option<usize> = if flags.contains(VariantFlags::RR_ARBITER) {
        // fixed time slots: this cycle belongs to one core, full stop
        let slot_core = (now % cfg.n_cores as u64) as usize;
        if candidates[slot_core].is_none() {
            llc.core_stats[slot_core].arbiter_idle_grants += 1;
        }
        candidates[slot_core].map(|_| slot_core)
    } else {
        // global mux: responses beat retries beat new requests, ties to the
        // lowest core id
        (0..cfg.n_cores)
            .filter(|&c| candidates[c].is_some())
            .min_by_key(|&c| (candidates[c].unwrap().class(), c))
    };
    for c in 0..cfg.n_cores {
        if candidates[c].is_some() && granted != Some(c) {
            llc.core_stats[c].arbiter_wait_cycles += 1;
        }
    }
    let Some(c) = granted else { return };
    let ready = now + llc.pipeline_latency(cfg, flags);
    match candidates[c].unwrap() {
        Candidate::DramReady(i) => {
            llc.mshrs[i].as_mut().unwrap().phase = MshrPhase::InPipe;
            llc.pipeline
                .push_back((ready, PipeItem::Install { mshr: i }));
        }
        Candidate::Holder => {
            let resp = links[c].resp.pop().unwrap();
            llc.pipeline.push_back((ready, PipeItem::Holder { resp }));
        }
        Candidate::Retry(i) => {
            llc.mshrs[i].as_mut().unwrap().phase = MshrPhase::InPipe;
            llc.pipeline.push_back((ready, PipeItem::Retry { mshr: i }));
        }
        Candidate::Upgrade => {
            let req = if flags.contains(VariantFlags::SPLIT_UQ) {
                llc.uq_split[c].pop_front().unwrap()
            } else {
                llc.uq_shared.pop_front().unwrap().1
            };
            let slot = llc
                .free_mshr(cfg, flags, c, req.line)
                .expect("checked before candidacy");
            llc.mshrs[slot] = Some(MshrEntry::new(c, req.line, req.want));
            llc.pipeline
                .push_back((ready, PipeItem::Lookup { mshr: slot }));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::BackingStore;

    fn cfg2() -> SimConfig {
        SimConfig {
            n_cores: 2,
            llc_sets: 16,
            llc_ways: 2,
            llc_mshrs_total: 4,
            dram_bytes: 1 << 24,
            n_regions: 4,
            dram_latency: 10,
            ..SimConfig::default()
        }
    }

    struct Rig {
        llc: LlcState,
        links: Vec<CoreLinks>,
        dram: DramState,
        store: BackingStore,
        cfg: SimConfig,
        flags: VariantFlags,
        log: EventLog,
        now: u64,
        fills: Vec<VecDeque<UpgradeResp>>,
        downs: Vec<VecDeque<DowngradeReq>>,
        /// Acknowledge downgrade requests automatically, like clean L1s.
        auto_answer: bool,
    }

    impl Rig {
        fn new(cfg: SimConfig, flags: VariantFlags) -> Self {
            Rig {
                llc: LlcState::new(&cfg),
                links: (0..cfg.n_cores)
                    .map(|_| CoreLinks::new(cfg.link_fifo_depth))
                    .collect(),
                dram: DramState::new(cfg.dram_latency, cfg.dram_max_inflight),
                store: BackingStore::default(),
                fills: (0..cfg.n_cores).map(|_| VecDeque::new()).collect(),
                downs: (0..cfg.n_cores).map(|_| VecDeque::new()).collect(),
                auto_answer: true,
                cfg,
                flags,
                log: EventLog::new(false),
                now: 0,
            }
        }

        fn tick(&mut self) {
            llc_step(
                &mut self.llc,
                &mut self.links,
                &mut self.dram,
                &self.cfg,
                self.flags,
                self.now,
                &mut self.log,
            )
            .unwrap();
            for resp in self.dram.step(self.now, &mut self.store) {
                self.llc.on_dram_resp(resp);
            }
            for c in 0..self.cfg.n_cores {
                if let Some(msg) = self.links[c].down.pop() {
                    match msg {
                        DownMsg::Resp(r) => self.fills[c].push_back(r),
                        DownMsg::Downgrade(req) if self.auto_answer => {
                            let ok = self.links[c].resp.try_push(DowngradeResp {
                                core: c,
                                line: req.line,
                                to: req.to,
                                data: None,
                            });
                            assert!(ok);
                        }
                        DownMsg::Downgrade(req) => self.downs[c].push_back(req),
                    }
                }
            }
            for l in &mut self.links {
                l.commit();
            }
            self.now += 1;
        }

        fn request(&mut self, core: usize, line: u64, want: CacheState) {
            let ok = self.links[core].req.try_push(UpgradeReq {
                core,
                line: LineAddress(line),
                want,
            });
            assert!(ok);
        }

        fn wait_fill(&mut self, core: usize, max: u64) -> UpgradeResp {
            for _ in 0..max {
                if let Some(r) = self.fills[core].pop_front() {
                    return r;
                }
                self.tick();
            }
            panic!("no fill after {max} cycles");
        }
    }

    #[test]
    fn cold_read_fetches_from_memory_and_grants_shared() {
        let mut rig = Rig::new(cfg2(), VariantFlags::BASE);
        rig.store.write_line(LineAddress(1), [9; 64]);
        rig.request(0, 1, CacheState::S);
        let fill = rig.wait_fill(0, 100);
        assert_eq!(fill.grant, CacheState::S);
        assert_eq!(fill.data, [9; 64]);
        assert_eq!(rig.llc.core_stats[0].llc_misses, 1);
        assert!(rig.llc.is_quiet());
    }

    #[test]
    fn second_reader_hits_without_memory_traffic() {
        let mut rig = Rig::new(cfg2(), VariantFlags::BASE);
        rig.request(0, 1, CacheState::S);
        rig.wait_fill(0, 100);
        let submitted_before = rig.dram.peak_inflight;
        rig.request(1, 1, CacheState::S);
        let fill = rig.wait_fill(1, 100);
        assert_eq!(fill.grant, CacheState::S);
        assert_eq!(rig.llc.core_stats[1].llc_misses, 0);
        assert_eq!(rig.dram.peak_inflight, submitted_before);
    }

    #[test]
    fn writer_triggers_invalidation_of_the_reader() {
        let mut rig = Rig::new(cfg2(), VariantFlags::BASE);
        rig.auto_answer = false;
        rig.request(0, 1, CacheState::S);
        rig.wait_fill(0, 100);
        rig.request(1, 1, CacheState::M);
        // the exclusive grant must not arrive before the old copy is recalled
        let mut answered = false;
        for _ in 0..200 {
            rig.tick();
            if let Some(req) = rig.downs[0].pop_front() {
                assert_eq!(req.line.0, 1);
                assert_eq!(req.to, CacheState::I);
                let ok = rig.links[0].resp.try_push(DowngradeResp {
                    core: 0,
                    line: req.line,
                    to: CacheState::I,
                    data: None,
                });
                assert!(ok);
                answered = true;
            }
            if let Some(r) = rig.fills[1].pop_front() {
                assert!(answered, "grant before the old copy was recalled");
                assert_eq!(r.grant, CacheState::M);
                return;
            }
        }
        panic!("no exclusive grant");
    }

    #[test]
    fn dirty_victim_is_written_back_before_its_line_rereads() {
        let mut rig = Rig::new(cfg2(), VariantFlags::BASE);
        // a dirty line arrives via a voluntary eviction notice carrying data
        rig.request(0, 1, CacheState::S);
        rig.wait_fill(0, 100);
        let ok = rig.links[0].resp.try_push(DowngradeResp {
            core: 0,
            line: LineAddress(1),
            to: CacheState::I,
            data: Some([0xAB; 64]),
        });
        assert!(ok);
        for _ in 0..20 {
            rig.tick();
        }
        // force eviction: same set, different tags (set = line % 16)
        // line 1 sits in set 1; lines 17 and 33 collide with it
        rig.request(0, 17, CacheState::S);
        rig.wait_fill(0, 100);
        rig.request(0, 33, CacheState::S);
        rig.wait_fill(0, 100);
        for _ in 0..60 {
            rig.tick();
        }
        // whichever got evicted, the dirty data of line 1 must be in memory
        // if line 1 was the victim; re-read it and check the value round-trips
        rig.request(1, 1, CacheState::S);
        let fill = rig.wait_fill(1, 200);
        assert_eq!(fill.data, [0xAB; 64]);
        assert!(rig.llc.is_quiet());
    }

    #[test]
    fn mshr_partitioning_confines_a_flood() {
        let mut cfg = cfg2();
        cfg.llc_mshrs_total = 4;
        let flags = VariantFlags::MSHR_PARTITION;
        let mut rig = Rig::new(cfg, flags);
        // core 0 floods four misses: only its own two slots may fill
        for i in 0..4 {
            rig.request(0, 100 + i * 16, CacheState::S);
        }
        for _ in 0..8 {
            rig.tick();
        }
        assert!(rig.llc.mshrs_in_use() <= 2);
        // core 1 still allocates instantly
        rig.request(1, 333, CacheState::S);
        let fill = rig.wait_fill(1, 100);
        assert_eq!(fill.grant, CacheState::S);
    }

    #[test]
    fn scrub_forgets_lines_and_tolerates_late_notices() {
        let mut rig = Rig::new(cfg2(), VariantFlags::BASE);
        rig.request(0, 1, CacheState::S);
        rig.wait_fill(0, 100);
        for _ in 0..8 {
            rig.tick();
        }
        rig.llc.scrub_range(0, 64, rig.now).unwrap();
        assert!(rig
            .llc
            .line_value(&rig.cfg, rig.flags, LineAddress(1))
            .is_none());
        // the core's own eviction notice arrives after the scrub: no-op
        let ok = rig.links[0].resp.try_push(DowngradeResp {
            core: 0,
            line: LineAddress(1),
            to: CacheState::I,
            data: None,
        });
        assert!(ok);
        for _ in 0..20 {
            rig.tick();
        }
        assert_eq!(rig.llc.stale_notices, 1);
        assert!(rig.llc.is_quiet());
    }
}
