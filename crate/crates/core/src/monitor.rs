//! The privileged policy layer: it hands out memory regions, schedules
//! cores, scrubs state when ownership changes, and mediates every byte that
//! crosses a domain boundary. It is modeled as a scripted event source, not
//! as code on a simulated core — each event fires at its cycle, between the
//! component step and the queue commit, so the machine never sees a
//! half-applied action.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use crate::config::{ConfigError, SimConfig, VariantFlags};
use crate::engine::SimAbort;
use crate::sim::World;
use crate::trace::{parse_trace, TraceOp};

/// Domain 0 is the monitor itself; it permanently owns region 0.
pub const MONITOR_DOMAIN: u32 = 0;
/// Domain 1 is the untrusted host OS; idle cores park on its regions.
pub const OS_DOMAIN: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainState {
    Created,
    Running,
    Descheduled,
    Destroyed,
}

/// A registered pair of equal-size buffers for privileged copies: one in
/// the domain's own memory, one in the OS's.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoBuffers {
    pub enclave_buf: u64,
    pub os_buf: u64,
    pub size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyDir {
    /// OS buffer into the domain's buffer.
    ReadOs,
    /// Domain's buffer out to the OS buffer.
    WriteOs,
}

pub type Payload = [u8; 64];

#[derive(Debug, Clone)]
pub struct ProtectionDomain {
    pub id: u32,
    /// One bit per owned region.
    pub regions: u64,
    /// Cores currently scheduled into the domain, ascending.
    pub cores: Vec<usize>,
    pub state: DomainState,
    pub mailbox: VecDeque<Payload>,
    pub io_buffers: Option<IoBuffers>,
}

impl ProtectionDomain {
    fn new(id: u32, regions: u64) -> Self {
        ProtectionDomain {
            id,
            regions,
            cores: Vec::new(),
            state: DomainState::Created,
            mailbox: VecDeque::new(),
            io_buffers: None,
        }
    }

    pub fn live(&self) -> bool {
        self.state != DomainState::Destroyed
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonitorError {
    UnknownDomain(u32),
    DomainExists(u32),
    DeadDomain(u32),
    ReservedDomain(u32),
    NoRegions,
    RegionOutOfRange(u32),
    RegionOverlap { region: u32, holder: u32 },
    BadCore(usize),
    BusyCore(usize),
    CoreIdle(usize),
    StillScheduled(u32),
    StillDraining(u32),
    MailboxFull { to: u32 },
    NoIoBuffers(u32),
    BadIoBuffers(String),
}

impl fmt::Display for MonitorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorError::UnknownDomain(d) => write!(f, "no such domain {d}"),
            MonitorError::DomainExists(d) => write!(f, "domain {d} already exists"),
            MonitorError::DeadDomain(d) => write!(f, "domain {d} is destroyed"),
            MonitorError::ReservedDomain(d) => write!(f, "domain {d} is reserved"),
            MonitorError::NoRegions => write!(f, "a domain needs at least one region"),
            MonitorError::RegionOutOfRange(r) => write!(f, "region {r} out of range"),
            MonitorError::RegionOverlap { region, holder } => {
                write!(f, "region {region} already owned by domain {holder}")
            }
            MonitorError::BadCore(c) => write!(f, "no such core {c}"),
            MonitorError::BusyCore(c) => write!(f, "core {c} is busy"),
            MonitorError::CoreIdle(c) => write!(f, "core {c} is not scheduled"),
            MonitorError::StillScheduled(d) => {
                write!(f, "domain {d} still has scheduled cores")
            }
            MonitorError::StillDraining(d) => {
                write!(f, "domain {d} has a core still draining")
            }
            MonitorError::MailboxFull { to } => write!(f, "domain {to} mailbox full"),
            MonitorError::NoIoBuffers(d) => write!(f, "domain {d} has no io buffers"),
            MonitorError::BadIoBuffers(why) => write!(f, "bad io buffers: {why}"),
        }
    }
}

impl std::error::Error for MonitorError {}

/// Why a monitored run stopped early: either the machine tripped an
/// internal invariant, or a scripted event was illegal at its cycle.
#[derive(Debug)]
pub enum MonitorHalt {
    Abort(SimAbort),
    Script { cycle: u64, message: String },
}

impl fmt::Display for MonitorHalt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorHalt::Abort(a) => write!(f, "{a}"),
            MonitorHalt::Script { cycle, message } => {
                write!(f, "schedule event failed at cycle {cycle}: {message}")
            }
        }
    }
}

impl std::error::Error for MonitorHalt {}

impl From<SimAbort> for MonitorHalt {
    fn from(a: SimAbort) -> Self {
        MonitorHalt::Abort(a)
    }
}

#[derive(Debug, Clone)]
pub enum MonitorOp {
    Create {
        id: u32,
        regions: Vec<u32>,
        io: Option<IoBuffers>,
    },
    Schedule {
        id: u32,
        core: usize,
        trace: Vec<TraceOp>,
    },
    Deschedule {
        core: usize,
    },
    Destroy {
        id: u32,
    },
    Mbox {
        from: u32,
        to: u32,
        payload: Payload,
    },
    Memcopy {
        id: u32,
        dir: CopyDir,
    },
}

#[derive(Debug, Clone)]
pub struct ScheduleEvent {
    pub cycle: u64,
    pub op: MonitorOp,
}

/// Book-keeping half of the monitor: who owns what. The machine-facing half
/// lives in [`MonitoredWorld`], which pairs this with a [`World`].
#[derive(Debug, Clone)]
pub struct SecurityMonitor {
    pub domains: BTreeMap<u32, ProtectionDomain>,
}

impl SecurityMonitor {
    pub fn new() -> Self {
        let mut domains = BTreeMap::new();
        domains.insert(
            MONITOR_DOMAIN,
            ProtectionDomain::new(MONITOR_DOMAIN, 1 << 0),
        );
        domains.insert(OS_DOMAIN, ProtectionDomain::new(OS_DOMAIN, 1 << 1));
        SecurityMonitor { domains }
    }

    pub fn domain(&self, id: u32) -> Option<&ProtectionDomain> {
        self.domains.get(&id)
    }

    fn live(&self, id: u32) -> Result<&ProtectionDomain, MonitorError> {
        let d = self
            .domains
            .get(&id)
            .ok_or(MonitorError::UnknownDomain(id))?;
        if !d.live() {
            return Err(MonitorError::DeadDomain(id));
        }
        Ok(d)
    }

    pub fn owner_of_core(&self, core: usize) -> Option<u32> {
        self.domains
            .values()
            .find(|d| d.live() && d.cores.contains(&core))
            .map(|d| d.id)
    }

    pub fn region_holder(&self, region: u32) -> Option<u32> {
        self.domains
            .values()
            .find(|d| d.live() && d.regions & (1 << region) != 0)
            .map(|d| d.id)
    }

    /// The global ownership invariant: every region belongs to at most one
    /// live domain, and every scheduled core to exactly one.
    pub fn check_disjoint(&self) -> bool {
        let mut seen_regions = 0u64;
        let mut seen_cores = Vec::new();
        for d in self.domains.values().filter(|d| d.live()) {
            if seen_regions & d.regions != 0 {
                return false;
            }
            seen_regions |= d.regions;
            for &c in &d.cores {
                if seen_cores.contains(&c) {
                    return false;
                }
                seen_cores.push(c);
            }
        }
        true
    }
}

impl Default for SecurityMonitor {
    fn default() -> Self {
        Self::new()
    }
}

/// A machine together with its monitor and a queue of scripted events.
#[derive(Debug, Clone)]
pub struct MonitoredWorld {
    pub world: World,
    pub monitor: SecurityMonitor,
    events: VecDeque<ScheduleEvent>,
}

impl MonitoredWorld {
    pub fn new(cfg: SimConfig, flags: VariantFlags) -> Result<Self, ConfigError> {
        if cfg.n_regions < 2 {
            return Err(ConfigError {
                problems: vec![format!(
                    "monitored runs need at least 2 regions (monitor + OS), n_regions = {}",
                    cfg.n_regions
                )],
            });
        }
        let mut world = World::new(cfg, flags)?;
        let monitor = SecurityMonitor::new();
        let os_mask = monitor.domains[&OS_DOMAIN].regions;
        for core in &mut world.cores {
            core.region_bv = os_mask;
        }
        Ok(MonitoredWorld {
            world,
            monitor,
            events: VecDeque::new(),
        })
    }

    /// Queue a parsed schedule. Events fire in cycle order; events sharing
    /// a cycle fire in file order.
    pub fn load_script(&mut self, mut events: Vec<ScheduleEvent>) {
        events.sort_by_key(|e| e.cycle);
        self.events = events.into();
    }

    fn region_span(&self, region: u32) -> (u64, u64) {
        let lines = self.world.cfg.region_bytes() / self.world.cfg.line_bytes;
        (region as u64 * lines, lines)
    }

    /// Return a region's memory to all-zero and forget every cached copy of
    /// it, everywhere. The caller guarantees quiescence over the span.
    fn scrub_region(&mut self, region: u32) -> Result<(), SimAbort> {
        let (first, count) = self.region_span(region);
        self.world.store.zero_line_range(first, count);
        self.world.llc.scrub_range(first, count, self.world.clock)?;
        for core in &mut self.world.cores {
            core.drop_lines_in_range(first, count);
        }
        Ok(())
    }

    /// Clear every core's cached translations so permission changes can
    /// never be served from stale entries.
    pub fn tlb_shootdown(&mut self) {
        for core in &mut self.world.cores {
            core.clear_tlbs();
        }
        let now = self.world.clock;
        self.world
            .log
            .record(now, "monitor", "shootdown", "all cores");
    }

    pub fn create_domain(
        &mut self,
        id: u32,
        regions: &[u32],
        io: Option<IoBuffers>,
    ) -> Result<(), MonitorError> {
        if self.monitor.domains.get(&id).is_some_and(|d| d.live()) {
            return Err(MonitorError::DomainExists(id));
        }
        if regions.is_empty() {
            return Err(MonitorError::NoRegions);
        }
        let mut mask = 0u64;
        for &r in regions {
            if u64::from(r) >= self.world.cfg.n_regions {
                return Err(MonitorError::RegionOutOfRange(r));
            }
            if let Some(holder) = self.monitor.region_holder(r) {
                return Err(MonitorError::RegionOverlap { region: r, holder });
            }
            mask |= 1 << r;
        }
        if let Some(io) = &io {
            self.validate_io(io, mask)?;
        }
        for &r in regions {
            self.scrub_region(r)
                .map_err(|a| MonitorError::BadIoBuffers(format!("scrub failed: {a}")))?;
        }
        self.tlb_shootdown();
        let mut d = ProtectionDomain::new(id, mask);
        d.io_buffers = io;
        self.monitor.domains.insert(id, d);
        let now = self.world.clock;
        self.world.log.record(
            now,
            "monitor",
            "create",
            format!("domain={id} regions={mask:#x}"),
        );
        Ok(())
    }

    fn validate_io(&self, io: &IoBuffers, domain_mask: u64) -> Result<(), MonitorError> {
        let lb = self.world.cfg.line_bytes;
        if io.size == 0 || io.size % lb != 0 {
            return Err(MonitorError::BadIoBuffers(format!(
                "size {} is not a positive multiple of {lb}",
                io.size
            )));
        }
        if io.enclave_buf % lb != 0 || io.os_buf % lb != 0 {
            return Err(MonitorError::BadIoBuffers(
                "buffers must be line-aligned".into(),
            ));
        }
        let os_mask = self.monitor.domains[&OS_DOMAIN].regions;
        for off in (0..io.size).step_by(lb as usize) {
            let enc_region = self.world.cfg.region_of(io.enclave_buf + off).0;
            if domain_mask & (1 << enc_region) == 0 {
                return Err(MonitorError::BadIoBuffers(format!(
                    "enclave buffer leaves the domain's regions at +{off:#x}"
                )));
            }
            let os_region = self.world.cfg.region_of(io.os_buf + off).0;
            if os_mask & (1 << os_region) == 0 {
                return Err(MonitorError::BadIoBuffers(format!(
                    "os buffer leaves the OS regions at +{off:#x}"
                )));
            }
        }
        Ok(())
    }

    pub fn schedule(
        &mut self,
        id: u32,
        core: usize,
        trace: Vec<TraceOp>,
    ) -> Result<(), MonitorError> {
        if core >= self.world.cfg.n_cores {
            return Err(MonitorError::BadCore(core));
        }
        self.monitor.live(id)?;
        if self.monitor.owner_of_core(core).is_some() || !self.world.cores[core].is_quiet() {
            return Err(MonitorError::BusyCore(core));
        }
        let hold = self.world.cfg.monitor_call_cycles;
        let d = self.monitor.domains.get_mut(&id).unwrap();
        d.cores.push(core);
        d.cores.sort_unstable();
        d.state = DomainState::Running;
        let mask = d.regions;
        self.world.cores[core].begin_scheduled_run(trace, mask, hold);
        let now = self.world.clock;
        self.world.log.record(
            now,
            "monitor",
            "schedule",
            format!("domain={id} core={core}"),
        );
        Ok(())
    }

    pub fn deschedule(&mut self, core: usize) -> Result<(), MonitorError> {
        if core >= self.world.cfg.n_cores {
            return Err(MonitorError::BadCore(core));
        }
        let owner = self
            .monitor
            .owner_of_core(core)
            .ok_or(MonitorError::CoreIdle(core))?;
        let hold = self.world.cfg.monitor_call_cycles;
        let os_mask = self.monitor.domains[&OS_DOMAIN].regions;
        let d = self.monitor.domains.get_mut(&owner).unwrap();
        d.cores.retain(|&c| c != core);
        if d.cores.is_empty() && d.state == DomainState::Running {
            d.state = DomainState::Descheduled;
        }
        self.world.cores[core].begin_deschedule(hold, os_mask);
        let now = self.world.clock;
        self.world.log.record(
            now,
            "monitor",
            "deschedule",
            format!("domain={owner} core={core}"),
        );
        Ok(())
    }

    pub fn destroy_domain(&mut self, id: u32) -> Result<(), MonitorError> {
        if id == MONITOR_DOMAIN || id == OS_DOMAIN {
            return Err(MonitorError::ReservedDomain(id));
        }
        let d = self
            .monitor
            .domains
            .get(&id)
            .ok_or(MonitorError::UnknownDomain(id))?;
        if !d.live() {
            return Err(MonitorError::DeadDomain(id));
        }
        if !d.cores.is_empty() {
            return Err(MonitorError::StillScheduled(id));
        }
        let mask = d.regions;
        // a descheduled core keeps the domain's regions until its purge
        // finishes; scrubbing under it would race the drain
        for core in &self.world.cores {
            if !core.is_quiet() && core.region_bv & mask != 0 {
                return Err(MonitorError::StillDraining(id));
            }
        }
        for r in 0..self.world.cfg.n_regions as u32 {
            if mask & (1 << r) != 0 {
                self.scrub_region(r)
                    .map_err(|a| MonitorError::BadIoBuffers(format!("scrub failed: {a}")))?;
            }
        }
        self.tlb_shootdown();
        self.monitor.domains.get_mut(&id).unwrap().state = DomainState::Destroyed;
        let now = self.world.clock;
        self.world
            .log
            .record(now, "monitor", "destroy", format!("domain={id}"));
        Ok(())
    }

    /// Deliver a fixed-size record into the receiver's inbox. The cost
    /// charged to the sender is a constant — it depends on neither the
    /// payload bytes nor whether the inbox had room.
    pub fn mailbox_send(
        &mut self,
        from: u32,
        to: u32,
        payload: Payload,
    ) -> Result<(), MonitorError> {
        self.monitor.live(from)?;
        self.monitor.live(to)?;
        let hold = self.world.cfg.monitor_call_cycles;
        if let Some(&caller) = self
            .monitor
            .domains
            .get(&from)
            .and_then(|d| d.cores.first())
        {
            if self.world.cores[caller].is_running() {
                self.world.cores[caller].begin_hold(hold);
            }
        }
        let depth = self.world.cfg.mailbox_depth;
        let inbox = &mut self.monitor.domains.get_mut(&to).unwrap().mailbox;
        if inbox.len() >= depth {
            return Err(MonitorError::MailboxFull { to });
        }
        inbox.push_back(payload);
        let now = self.world.clock;
        self.world
            .log
            .record(now, "monitor", "mbox", format!("from={from} to={to}"));
        Ok(())
    }

    /// Privileged copy between a domain's registered buffer and the OS's.
    /// The bytes move architecturally (through the monitor's own access
    /// path, not the caller's cache); the caller core drains and stalls for
    /// a duration set only by the size.
    pub fn memcopy(&mut self, id: u32, dir: CopyDir) -> Result<(), MonitorError> {
        self.monitor.live(id)?;
        let io = self.monitor.domains[&id]
            .io_buffers
            .ok_or(MonitorError::NoIoBuffers(id))?;
        let lb = self.world.cfg.line_bytes;
        let (src, dst) = match dir {
            CopyDir::ReadOs => (io.os_buf, io.enclave_buf),
            CopyDir::WriteOs => (io.enclave_buf, io.os_buf),
        };
        for off in (0..io.size).step_by(lb as usize) {
            let src_line = self.world.cfg.line_of(src + off);
            let dst_line = self.world.cfg.line_of(dst + off);
            let data = self.world.architectural_line(src_line);
            self.world
                .drop_line_everywhere(dst_line)
                .map_err(|a| MonitorError::BadIoBuffers(format!("copy target busy: {a}")))?;
            self.world.store.write_line(dst_line, data);
        }
        let hold = self.world.cfg.monitor_call_cycles + io.size / 8;
        if let Some(&caller) = self.monitor.domains[&id].cores.first() {
            if self.world.cores[caller].is_running() {
                self.world.cores[caller].begin_copy_hold(hold);
            }
        }
        let now = self.world.clock;
        self.world.log.record(
            now,
            "monitor",
            "memcopy",
            format!("domain={id} dir={dir:?} bytes={}", io.size),
        );
        Ok(())
    }

    fn apply(&mut self, ev: ScheduleEvent) -> Result<(), MonitorHalt> {
        let cycle = ev.cycle;
        let result = match ev.op {
            MonitorOp::Create { id, regions, io } => self.create_domain(id, &regions, io),
            MonitorOp::Schedule { id, core, trace } => self.schedule(id, core, trace),
            MonitorOp::Deschedule { core } => self.deschedule(core),
            MonitorOp::Destroy { id } => self.destroy_domain(id),
            MonitorOp::Mbox { from, to, payload } => {
                match self.mailbox_send(from, to, payload) {
                    // a full inbox is an outcome reported to the caller,
                    // not a malformed script
                    Err(MonitorError::MailboxFull { to }) => {
                        let now = self.world.clock;
                        self.world
                            .log
                            .record(now, "monitor", "mbox_full", format!("to={to}"));
                        Ok(())
                    }
                    other => other,
                }
            }
            MonitorOp::Memcopy { id, dir } => self.memcopy(id, dir),
        };
        result.map_err(|e| MonitorHalt::Script {
            cycle,
            message: e.to_string(),
        })
    }

    /// One clock edge with the event queue consulted mid-tick.
    pub fn tick(&mut self) -> Result<(), MonitorHalt> {
        self.world.step_components()?;
        while self
            .events
            .front()
            .is_some_and(|e| e.cycle <= self.world.clock)
        {
            let ev = self.events.pop_front().unwrap();
            self.apply(ev)?;
        }
        self.world.finish_tick();
        Ok(())
    }

    pub fn done(&self) -> bool {
        self.events.is_empty() && self.world.is_quiet()
    }

    /// Run until both the machine and the script are exhausted.
    pub fn run(&mut self, max_cycles: u64) -> Result<u64, MonitorHalt> {
        while !self.done() {
            if self.world.clock >= max_cycles {
                return Err(MonitorHalt::Abort(SimAbort {
                    cycle: self.world.clock,
                    component: "world".into(),
                    message: format!("no quiesce within {max_cycles} cycles"),
                }));
            }
            self.tick()?;
        }
        Ok(self.world.clock)
    }
}

#[derive(Debug)]
pub struct ScheduleParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ScheduleParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "schedule line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ScheduleParseError {}

fn parse_u64(s: &str) -> Option<u64> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

fn parse_payload(s: &str) -> Option<Payload> {
    if s.len() > 128 || s.is_empty() {
        return None;
    }
    // right-align so short strings read as numbers: "ff" is a record whose
    // final byte is 0xff
    let mut padded = String::new();
    if s.len() % 2 == 1 {
        padded.push('0');
    }
    padded.push_str(s);
    let mut out = [0u8; 64];
    let n = padded.len() / 2;
    for i in 0..n {
        let byte = u8::from_str_radix(&padded[2 * i..2 * i + 2], 16).ok()?;
        out[64 - n + i] = byte;
    }
    Some(out)
}

/// Parse a schedule script. One event per line:
///
/// ```text
/// @<cycle> create <id> regions=<r,r,...> [iobuf=<enclave>:<os>:<size>]
/// @<cycle> schedule <id> core=<n> trace=<file>
/// @<cycle> deschedule core=<n>
/// @<cycle> destroy <id>
/// @<cycle> mbox <from> <to> <hex-payload>
/// @<cycle> memcopy <id> read|write
/// ```
///
/// Trace paths resolve relative to `base_dir`. Blank lines and `#` comments
/// are skipped.
pub fn parse_schedule(
    text: &str,
    cfg: &SimConfig,
    base_dir: &Path,
) -> Result<Vec<ScheduleEvent>, ScheduleParseError> {
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let err = |message: String| ScheduleParseError {
            line: lineno,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let cycle = toks[0]
            .strip_prefix('@')
            .and_then(parse_u64)
            .ok_or_else(|| err(format!("expected @<cycle>, got {:?}", toks[0])))?;
        let op = toks.get(1).copied().unwrap_or("");
        let arg = |i: usize| -> Result<&str, ScheduleParseError> {
            toks.get(i)
                .copied()
                .ok_or_else(|| err(format!("{op}: missing argument {i}")))
        };
        let num = |i: usize| -> Result<u64, ScheduleParseError> {
            let s = arg(i)?;
            parse_u64(s).ok_or_else(|| err(format!("{op}: bad number {s:?}")))
        };
        let keyed = |key: &str| -> Option<&str> {
            toks.iter()
                .filter_map(|t| t.strip_prefix(key))
                .find_map(|t| t.strip_prefix('='))
        };
        let op = match op {
            "create" => {
                let id = num(2)? as u32;
                let regions_s =
                    keyed("regions").ok_or_else(|| err("create: missing regions=".into()))?;
                let mut regions = Vec::new();
                for part in regions_s.split(',') {
                    let r = parse_u64(part)
                        .ok_or_else(|| err(format!("create: bad region {part:?}")))?;
                    regions.push(r as u32);
                }
                let io = match keyed("iobuf") {
                    None => None,
                    Some(spec) => {
                        let parts: Vec<&str> = spec.split(':').collect();
                        let nums: Option<Vec<u64>> = parts.iter().map(|p| parse_u64(p)).collect();
                        match nums.as_deref() {
                            Some([enclave_buf, os_buf, size]) => Some(IoBuffers {
                                enclave_buf: *enclave_buf,
                                os_buf: *os_buf,
                                size: *size,
                            }),
                            _ => {
                                return Err(err(format!(
                                    "create: iobuf wants <enclave>:<os>:<size>, got {spec:?}"
                                )))
                            }
                        }
                    }
                };
                MonitorOp::Create { id, regions, io }
            }
            "schedule" => {
                let id = num(2)? as u32;
                let core = keyed("core")
                    .and_then(parse_u64)
                    .ok_or_else(|| err("schedule: missing core=".into()))?
                    as usize;
                let path = keyed("trace").ok_or_else(|| err("schedule: missing trace=".into()))?;
                let full = base_dir.join(path);
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| err(format!("trace {}: {e}", full.display())))?;
                let trace = parse_trace(&text, cfg.dram_bytes)
                    .map_err(|e| err(format!("trace {}: {e}", full.display())))?;
                MonitorOp::Schedule { id, core, trace }
            }
            "deschedule" => {
                let core = keyed("core")
                    .and_then(parse_u64)
                    .ok_or_else(|| err("deschedule: missing core=".into()))?
                    as usize;
                MonitorOp::Deschedule { core }
            }
            "destroy" => MonitorOp::Destroy { id: num(2)? as u32 },
            "mbox" => {
                let from = num(2)? as u32;
                let to = num(3)? as u32;
                let payload = parse_payload(arg(4)?)
                    .ok_or_else(|| err("mbox: payload must be 1..=128 hex digits".into()))?;
                MonitorOp::Mbox { from, to, payload }
            }
            "memcopy" => {
                let id = num(2)? as u32;
                let dir = match arg(3)? {
                    "read" => CopyDir::ReadOs,
                    "write" => CopyDir::WriteOs,
                    other => return Err(err(format!("memcopy: read|write, got {other:?}"))),
                };
                MonitorOp::Memcopy { id, dir }
            }
            other => return Err(err(format!("unknown op {other:?}"))),
        };
        events.push(ScheduleEvent { cycle, op });
    }
    events.sort_by_key(|e| e.cycle);
    Ok(events)
}
