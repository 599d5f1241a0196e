//! The verification payload: differential runs that check a victim's
//! observables are untouched by attacker behavior, a minimal witness per
//! known leak channel, a prime+probe demonstration, the coherence oracle,
//! and directional overhead measurements.
//!
//! Everything here builds complete machines and runs them to quiescence;
//! nothing reaches into component internals. A "victim" and an "attacker"
//! are just cores with disjoint region masks.

use std::collections::HashMap;

use crate::config::{SimConfig, VariantFlags};
use crate::core::store_value;
use crate::engine::{streams, DetRng, SimAbort};
use crate::sim::{RunObservables, World};
use crate::trace::TraceOp;

/// Region the victim owns in two-party scenarios. Regions 0 and 1 stay
/// clear of the reserved monitor/OS pair, and 2 vs 3 land in different
/// partition slices of the set-colored cache.
pub const VICTIM_REGION: u32 = 2;
pub const ATTACKER_REGION: u32 = 3;

/// A machine description plus per-core placement: who runs what, with
/// which region mask. Scenario constructors fill this in.
#[derive(Debug, Clone)]
pub struct DiffScenario {
    pub cfg: SimConfig,
    pub flags: VariantFlags,
    /// Build without validation, for deliberately mis-sized machines.
    pub unchecked: bool,
    /// (core, region mask, trace) for each victim core.
    pub victim: Vec<(usize, u64, Vec<TraceOp>)>,
    /// (core, region mask) for each attacker core.
    pub attacker_cores: Vec<(usize, u64)>,
    /// One entry per attacker variant; each entry gives a trace per
    /// attacker core. The first variant is the baseline.
    pub attacker_variants: Vec<Vec<Vec<TraceOp>>>,
    pub max_cycles: u64,
}

/// First point where two runs' victim observables disagree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Divergence {
    pub op_idx: usize,
    pub cycles_a: u64,
    pub cycles_b: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferenceReport {
    pub equal: bool,
    pub first_divergence: Option<Divergence>,
    pub channel_label: Option<String>,
}

impl DifferenceReport {
    fn equal_report() -> Self {
        DifferenceReport {
            equal: true,
            first_divergence: None,
            channel_label: None,
        }
    }
}

/// Compare two victim observable sets op by op. Timing, values, and fault
/// flags all count; the report cites completion cycles at the first
/// mismatch, which is what an attacker-visible clock would show.
pub fn compare_observables(a: &[RunObservables], b: &[RunObservables]) -> DifferenceReport {
    for (ca, cb) in a.iter().zip(b) {
        let n = ca.per_op.len().min(cb.per_op.len());
        for i in 0..n {
            if ca.per_op[i] != cb.per_op[i] {
                return DifferenceReport {
                    equal: false,
                    first_divergence: Some(Divergence {
                        op_idx: i,
                        cycles_a: ca.per_op[i].complete,
                        cycles_b: cb.per_op[i].complete,
                    }),
                    channel_label: None,
                };
            }
        }
        if ca.per_op.len() != cb.per_op.len() || ca.completion_cycle != cb.completion_cycle {
            return DifferenceReport {
                equal: false,
                first_divergence: Some(Divergence {
                    op_idx: n,
                    cycles_a: ca.completion_cycle,
                    cycles_b: cb.completion_cycle,
                }),
                channel_label: None,
            };
        }
    }
    DifferenceReport::equal_report()
}

impl DiffScenario {
    fn build_world(&self) -> World {
        if self.unchecked {
            World::new_unchecked(self.cfg.clone(), self.flags)
        } else {
            World::new(self.cfg.clone(), self.flags).expect("scenario config must validate")
        }
    }

    /// Run the scenario against one attacker variant to quiescence and hand
    /// back the whole machine for inspection.
    pub fn run_variant_world(&self, variant: usize) -> Result<World, SimAbort> {
        let mut world = self.build_world();
        let mut traces: Vec<Vec<TraceOp>> = vec![Vec::new(); self.cfg.n_cores];
        for (core, bv, trace) in &self.victim {
            world.cores[*core].region_bv = *bv;
            traces[*core] = trace.clone();
        }
        for ((core, bv), trace) in self
            .attacker_cores
            .iter()
            .zip(&self.attacker_variants[variant])
        {
            world.cores[*core].region_bv = *bv;
            traces[*core] = trace.clone();
        }
        world.start_flat(traces);
        world.run(self.max_cycles)?;
        Ok(world)
    }

    /// Run the scenario against one attacker variant and return the victim
    /// cores' observables, in victim order.
    pub fn run_variant(&self, variant: usize) -> Result<Vec<RunObservables>, SimAbort> {
        let world = self.run_variant_world(variant)?;
        Ok(self
            .victim
            .iter()
            .map(|(c, _, _)| world.observables(*c))
            .collect())
    }

    /// Run every attacker variant and compare each one's victim view
    /// against the first.
    pub fn differential(&self) -> Result<DifferenceReport, SimAbort> {
        let baseline = self.run_variant(0)?;
        for v in 1..self.attacker_variants.len() {
            let other = self.run_variant(v)?;
            let report = compare_observables(&baseline, &other);
            if !report.equal {
                return Ok(report);
            }
        }
        Ok(DifferenceReport::equal_report())
    }
}

/// A config sized for the flag set: machines that claim isolation get the
/// miss-register budget that keeps the memory window from ever refusing.
pub fn sized_config(flags: VariantFlags, n_cores: usize) -> SimConfig {
    let mut cfg = SimConfig {
        n_cores,
        ..SimConfig::default()
    };
    if flags.claims_isolation() {
        cfg.llc_mshrs_total = SimConfig::mshr_budget(cfg.dram_max_inflight, n_cores).0;
    }
    cfg
}

pub fn region_base(cfg: &SimConfig, region: u32) -> u64 {
    u64::from(region) * cfg.region_bytes()
}

/// A line address (as a byte address) inside `region` built from cache
/// geometry pieces: `tag` picks among aliases (kept below 512 so the
/// address stays in-region), `set_bits` lands the line on a chosen
/// low-index pattern.
pub fn region_line(cfg: &SimConfig, region: u32, tag: u64, set_bits: u64) -> u64 {
    debug_assert!(tag < 512 && set_bits < 1024);
    let line = (region_base(cfg, region) / cfg.line_bytes) | (tag << 10) | set_bits;
    line * cfg.line_bytes
}

/// Ops that hold everything after them back for roughly `cycles`. The
/// issue window runs memory ops eagerly, so a lone compute does not delay
/// later accesses; jamming the window with one long compute plus a window
/// of one-cycle fillers does, because retirement is in order.
pub fn fence_ops(cfg: &SimConfig, cycles: u64) -> Vec<TraceOp> {
    let mut ops = vec![TraceOp::Compute { cycles }];
    ops.extend((0..cfg.issue_window).map(|_| TraceOp::Compute { cycles: 1 }));
    ops
}

/// A victim-style trace: one load per beat, fenced apart so the accesses
/// spread across the run instead of bursting at the start.
fn paced_loads(
    cfg: &SimConfig,
    region: u32,
    tags: std::ops::Range<u64>,
    set_bits: u64,
    gap: u64,
) -> Vec<TraceOp> {
    let mut ops = Vec::new();
    for t in tags {
        ops.push(TraceOp::Load {
            addr: region_line(cfg, region, t, set_bits),
        });
        ops.extend(fence_ops(cfg, gap));
    }
    ops
}

// ---------------------------------------------------------------------------
// trace generators

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackerClass {
    Idle,
    Streaming,
    Thrashing,
    Random,
}

impl AttackerClass {
    pub const ALL: [AttackerClass; 4] = [
        AttackerClass::Idle,
        AttackerClass::Streaming,
        AttackerClass::Thrashing,
        AttackerClass::Random,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttackerClass::Idle => "idle",
            AttackerClass::Streaming => "streaming",
            AttackerClass::Thrashing => "thrashing",
            AttackerClass::Random => "random",
        }
    }

    /// A trace of roughly `ops` operations in `region` matching the class.
    pub fn trace(self, rng: &mut DetRng, cfg: &SimConfig, region: u32, ops: usize) -> Vec<TraceOp> {
        match self {
            AttackerClass::Idle => Vec::new(),
            AttackerClass::Streaming => {
                let base = region_base(cfg, region);
                (0..ops)
                    .map(|i| TraceOp::Load {
                        addr: base + (i as u64 % 4096) * cfg.line_bytes,
                    })
                    .collect()
            }
            AttackerClass::Thrashing => thrash_trace(rng, cfg, region, ops),
            AttackerClass::Random => random_trace(rng, cfg, region, ops),
        }
    }
}

/// Loads and stores hammering one set-alias group so nearly every access
/// misses and evicts, with stores making the evictions dirty.
pub fn thrash_trace(rng: &mut DetRng, cfg: &SimConfig, region: u32, ops: usize) -> Vec<TraceOp> {
    let set_bits = rng.next_below(256);
    let tags = (cfg.llc_ways as u64) * 2;
    (0..ops)
        .map(|_| {
            let addr = region_line(cfg, region, rng.next_below(tags), set_bits);
            if rng.next_bool(1, 2) {
                TraceOp::Store { addr }
            } else {
                TraceOp::Load { addr }
            }
        })
        .collect()
}

/// A mix of loads, stores, and short computes over a modest pool of lines
/// in `region`, with enough reuse to exercise hits and misses both.
pub fn random_trace(rng: &mut DetRng, cfg: &SimConfig, region: u32, ops: usize) -> Vec<TraceOp> {
    let base = region_base(cfg, region);
    let pool: Vec<u64> = (0..64)
        .map(|_| base + rng.next_below(16384) * cfg.line_bytes + rng.next_below(8) * 8)
        .collect();
    (0..ops)
        .map(|_| {
            let addr = pool[rng.next_below(pool.len() as u64) as usize];
            match rng.next_below(10) {
                0..=4 => TraceOp::Load { addr },
                5..=8 => TraceOp::Store { addr },
                _ => TraceOp::Compute {
                    cycles: 1 + rng.next_below(12),
                },
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// non-interference sweep

/// One randomized victim-vs-attacker-classes instance under the given
/// build. Most pairs use 2 cores; every fourth uses 4 cores with three
/// attacker cores so arbiter slotting gets exercised too.
pub fn noninterference_pair(
    flags: VariantFlags,
    pair_seed: u64,
) -> Result<DifferenceReport, SimAbort> {
    let n_cores = if pair_seed % 4 == 3 { 4 } else { 2 };
    let cfg = sized_config(flags, n_cores);
    let root = DetRng::from_seed(pair_seed).split(streams::HARNESS);
    let mut vrng = root.split(1);
    let victim_trace = random_trace(&mut vrng, &cfg, VICTIM_REGION, 120);
    let victim_bv = 1u64 << VICTIM_REGION;
    let attacker_bv = 1u64 << ATTACKER_REGION;
    let attacker_cores: Vec<(usize, u64)> = (1..n_cores).map(|c| (c, attacker_bv)).collect();
    let attacker_variants = AttackerClass::ALL
        .iter()
        .map(|class| {
            (1..n_cores)
                .map(|c| {
                    let mut arng = root.split(100 + c as u64);
                    class.trace(&mut arng, &cfg, ATTACKER_REGION, 160)
                })
                .collect()
        })
        .collect();
    let scenario = DiffScenario {
        cfg,
        flags,
        unchecked: false,
        victim: vec![(0, victim_bv, victim_trace)],
        attacker_cores,
        attacker_variants,
        max_cycles: 1_000_000,
    };
    scenario.differential()
}

// ---------------------------------------------------------------------------
// channel witnesses

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    CacheSet,
    MshrExhaust,
    DramBackpressure,
    EntryPort,
    DowngradeLogic,
    UqHeadline,
    DqTwoCycle,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::CacheSet,
        Channel::MshrExhaust,
        Channel::DramBackpressure,
        Channel::EntryPort,
        Channel::DowngradeLogic,
        Channel::UqHeadline,
        Channel::DqTwoCycle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Channel::CacheSet => "CACHE_SET",
            Channel::MshrExhaust => "MSHR_EXHAUST",
            Channel::DramBackpressure => "DRAM_BACKPRESSURE",
            Channel::EntryPort => "ENTRY_PORT",
            Channel::DowngradeLogic => "DOWNGRADE_LOGIC",
            Channel::UqHeadline => "UQ_HEADLINE",
            Channel::DqTwoCycle => "DQ_TWO_CYCLE",
        }
    }
}

/// The build claimed to close every channel. The witness driver compares
/// it against a per-channel weakened build; mutation tests pass a weakened
/// build here to show the matrix catches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecureBuild {
    pub flags: VariantFlags,
    /// Override the scenario's miss-register count (the sizing mutation);
    /// `None` keeps the scenario's own value.
    pub llc_mshrs_total: Option<usize>,
}

impl SecureBuild {
    pub fn reference() -> Self {
        SecureBuild {
            flags: VariantFlags::SECURE,
            llc_mshrs_total: None,
        }
    }

    /// The reference build with one protection removed.
    pub fn without(flag: VariantFlags) -> Self {
        SecureBuild {
            flags: VariantFlags::SECURE.difference(flag),
            llc_mshrs_total: None,
        }
    }

    /// The reference build with as many miss registers as the memory
    /// window has slots — the sizing rule violated.
    pub fn oversized() -> Self {
        SecureBuild {
            flags: VariantFlags::SECURE,
            llc_mshrs_total: Some(SimConfig::default().dram_max_inflight),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessRow {
    pub channel: Channel,
    pub insecure_diverges: bool,
    pub secure_diverges: bool,
    /// Divergence detail from the insecure run, for reporting.
    pub insecure_divergence: Option<Divergence>,
}

impl WitnessRow {
    pub fn passes(&self) -> bool {
        self.insecure_diverges && !self.secure_diverges
    }
}

/// The scenario for one channel, built against the weakened flag set that
/// exposes it. `channel_witness` reruns the same placement under the
/// claimed-secure build.
fn witness_scenario(ch: Channel) -> DiffScenario {
    let n_cores = match ch {
        Channel::DowngradeLogic => 6,
        Channel::DramBackpressure | Channel::DqTwoCycle => 4,
        _ => 2,
    };
    let cfg = sized_config(VariantFlags::SECURE, n_cores);
    let rng = DetRng::from_seed(0xC0DE)
        .split(streams::HARNESS)
        .split(ch as u64);
    let victim_bv = 1u64 << VICTIM_REGION;
    let attacker_bv = 1u64 << ATTACKER_REGION;

    match ch {
        Channel::CacheSet => {
            // victim leans on one line; the attacker rotates 17 aliases of
            // its unpartitioned set so reuse decays into misses
            let v_addr = region_line(&cfg, VICTIM_REGION, 3, 0x40);
            let mut victim = Vec::new();
            for _ in 0..12 {
                victim.push(TraceOp::Load { addr: v_addr });
                victim.extend(fence_ops(&cfg, 700));
            }
            let storm: Vec<TraceOp> = (0..1400)
                .map(|i| TraceOp::Load {
                    addr: region_line(&cfg, ATTACKER_REGION, i % 17, 0x40),
                })
                .collect();
            DiffScenario {
                cfg: cfg.clone(),
                flags: VariantFlags::SECURE.difference(VariantFlags::PART),
                unchecked: false,
                victim: vec![(0, victim_bv, victim)],
                attacker_cores: vec![(1, attacker_bv)],
                attacker_variants: vec![vec![Vec::new()], vec![storm]],
                max_cycles: 1_000_000,
            }
        }
        Channel::MshrExhaust => {
            // a small shared pool: the attacker keeps it full with parallel
            // misses while the victim needs one entry now and then
            let mut cfg = cfg.clone();
            cfg.llc_mshrs_total = 4;
            let victim = paced_loads(&cfg, VICTIM_REGION, 40..50, 0x80, 300);
            let storm: Vec<TraceOp> = (0..1200)
                .map(|i| TraceOp::Load {
                    addr: region_line(&cfg, ATTACKER_REGION, i % 250, (i * 3) % 256),
                })
                .collect();
            DiffScenario {
                cfg,
                flags: VariantFlags::SECURE.difference(VariantFlags::MSHR_PARTITION),
                unchecked: false,
                victim: vec![(0, victim_bv, victim)],
                attacker_cores: vec![(1, attacker_bv)],
                attacker_variants: vec![vec![Vec::new()], vec![storm]],
                max_cycles: 1_000_000,
            }
        }
        Channel::DramBackpressure => {
            // every fix on, but as many miss registers as window slots:
            // three thrashing cores' reads+writebacks overrun the window
            // and the victim's queue service starts getting refused
            let mut cfg = cfg.clone();
            cfg.llc_mshrs_total = cfg.dram_max_inflight;
            let victim = paced_loads(&cfg, VICTIM_REGION, 100..110, 0x10, 250);
            let storms: Vec<Vec<TraceOp>> = (1..4)
                .map(|c| thrash_trace(&mut rng.split(c), &cfg, ATTACKER_REGION, 700))
                .collect();
            DiffScenario {
                cfg,
                flags: VariantFlags::SECURE,
                unchecked: true,
                victim: vec![(0, victim_bv, victim)],
                attacker_cores: vec![(1, attacker_bv), (2, attacker_bv), (3, attacker_bv)],
                attacker_variants: vec![vec![Vec::new(); 3], storms],
                max_cycles: 1_000_000,
            }
        }
        Channel::EntryPort => {
            // without round-robin slots the mux prefers the lowest core, so
            // the victim sits on core 1 and the attacker streams from core 0
            let victim = paced_loads(&cfg, VICTIM_REGION, 60..70, 0x20, 120);
            let storm: Vec<TraceOp> = (0..1200)
                .map(|i| TraceOp::Load {
                    addr: region_line(&cfg, ATTACKER_REGION, i % 250, (i * 7) % 256),
                })
                .collect();
            DiffScenario {
                cfg: cfg.clone(),
                flags: VariantFlags::SECURE.difference(VariantFlags::RR_ARBITER),
                unchecked: false,
                victim: vec![(1, victim_bv, victim)],
                attacker_cores: vec![(0, attacker_bv)],
                attacker_variants: vec![vec![Vec::new()], vec![storm]],
                max_cycles: 1_000_000,
            }
        }
        Channel::DowngradeLogic => {
            // one shared relinquish engine sends a single request per cycle,
            // walking entries lowest-first. Three reader cores turn every
            // shared line into a four-holder line, so each conflict eviction
            // becomes a multi-target job that occupies the engine for
            // several consecutive cycles and runs over the victim pair's
            // handoff turns on the two high cores.
            let v_line = region_line(&cfg, VICTIM_REGION, 1, 0);
            let mut v_writer = Vec::new();
            let mut v_reader = fence_ops(&cfg, 25);
            for _ in 0..120 {
                v_writer.push(TraceOp::Store { addr: v_line });
                v_writer.extend(fence_ops(&cfg, 50));
                v_reader.push(TraceOp::Load { addr: v_line });
                v_reader.extend(fence_ops(&cfg, 50));
            }
            let shared =
                |j: u64| region_line(&cfg, ATTACKER_REGION, 1 + (j / 2) % 40, (j % 2) * 64);
            let producer: Vec<TraceOp> = (0..400)
                .map(|j| TraceOp::Store { addr: shared(j) })
                .collect();
            let consumer = |c: u64| -> Vec<TraceOp> {
                (0..400)
                    .map(|j| TraceOp::Load {
                        addr: if j % 2 == 0 {
                            shared(j / 2)
                        } else {
                            region_line(
                                &cfg,
                                ATTACKER_REGION,
                                100 + c * 60 + (j / 4) % 40,
                                (j % 4 / 2) * 64,
                            )
                        },
                    })
                    .collect()
            };
            DiffScenario {
                cfg: cfg.clone(),
                flags: VariantFlags::SECURE.difference(VariantFlags::DUP_DOWNGRADE),
                unchecked: false,
                victim: vec![(4, victim_bv, v_writer), (5, victim_bv, v_reader)],
                attacker_cores: vec![
                    (0, attacker_bv),
                    (1, attacker_bv),
                    (2, attacker_bv),
                    (3, attacker_bv),
                ],
                attacker_variants: vec![
                    vec![Vec::new(); 4],
                    vec![producer, consumer(1), consumer(2), consumer(3)],
                ],
                max_cycles: 1_000_000,
            }
        }
        Channel::UqHeadline => {
            // single shared request queue: the attacker's inadmissible head
            // (its slice is full) blocks the victim's request behind it
            let mut cfg = cfg.clone();
            cfg.llc_mshrs_total = 4;
            let victim = paced_loads(&cfg, VICTIM_REGION, 20..30, 0x30, 220);
            let storm: Vec<TraceOp> = (0..1200)
                .map(|i| TraceOp::Load {
                    addr: region_line(&cfg, ATTACKER_REGION, i % 250, (i * 5) % 256),
                })
                .collect();
            DiffScenario {
                cfg,
                flags: VariantFlags::SECURE.difference(VariantFlags::SPLIT_UQ),
                unchecked: false,
                victim: vec![(0, victim_bv, victim)],
                attacker_cores: vec![(1, attacker_bv)],
                attacker_variants: vec![vec![Vec::new()], vec![storm]],
                max_cycles: 1_000_000,
            }
        }
        Channel::DqTwoCycle => {
            // dropping the retry path drops the isolation claim, so this
            // build also keeps the convenience register count instead of
            // the claimed budget. Each parked writeback then holds the
            // queue port an extra cycle, and three stores-only cores build
            // enough paired writeback+read traffic to overrun the memory
            // window; the victim's queue service slips by whole refusal
            // streaks instead of single absorbable cycles.
            let mut cfg = cfg.clone();
            cfg.llc_mshrs_total = 16;
            let victim = paced_loads(&cfg, VICTIM_REGION, 100..160, 0x50, 80);
            let storms: Vec<Vec<TraceOp>> = (0..3u64)
                .map(|c| {
                    (0..700u64)
                        .map(|i| TraceOp::Store {
                            addr: region_line(
                                &cfg,
                                ATTACKER_REGION,
                                c * 64 + (i / 8) % 64,
                                (i % 8) * 32 + c * 4,
                            ),
                        })
                        .collect()
                })
                .collect();
            DiffScenario {
                cfg: cfg.clone(),
                flags: VariantFlags::SECURE.difference(VariantFlags::DQ_RETRY),
                unchecked: false,
                victim: vec![(0, victim_bv, victim)],
                attacker_cores: vec![(1, attacker_bv), (2, attacker_bv), (3, attacker_bv)],
                attacker_variants: vec![vec![Vec::new(); 3], storms],
                max_cycles: 1_000_000,
            }
        }
    }
}

/// Run one channel's witness scenario on its weakened machine and on the
/// given claimed-secure build. A correct build yields `(true, false)`.
pub fn channel_witness(ch: Channel, secure: SecureBuild) -> Result<WitnessRow, SimAbort> {
    let scenario = witness_scenario(ch);
    let insecure_report = scenario.differential()?;

    let mut secure_scenario = scenario;
    secure_scenario.flags = secure.flags;
    let budget = SimConfig::mshr_budget(
        secure_scenario.cfg.dram_max_inflight,
        secure_scenario.cfg.n_cores,
    )
    .0;
    if let Some(total) = secure.llc_mshrs_total {
        secure_scenario.cfg.llc_mshrs_total = total;
        secure_scenario.unchecked = true;
    } else if secure.flags.claims_isolation() && secure_scenario.cfg.llc_mshrs_total > budget {
        // a build that claims isolation is obliged to size against the
        // budget; one that does not keeps the scenario's register count
        secure_scenario.cfg.llc_mshrs_total = budget;
        secure_scenario.unchecked = false;
    }
    let secure_report = secure_scenario.differential()?;

    Ok(WitnessRow {
        channel: ch,
        insecure_diverges: !insecure_report.equal,
        secure_diverges: !secure_report.equal,
        insecure_divergence: insecure_report.first_divergence,
    })
}

/// The full matrix against one build.
pub fn witness_matrix(secure: SecureBuild) -> Result<Vec<WitnessRow>, SimAbort> {
    Channel::ALL
        .iter()
        .map(|&ch| channel_witness(ch, secure))
        .collect()
}

// ---------------------------------------------------------------------------
// prime + probe

/// One seeded prime+probe instance: the attacker fills a set group, waits,
/// and probes; the victim either touches a conflicting line in the gap or
/// sits out. Returns whether the probe latencies distinguish the two.
pub fn prime_probe(flags: VariantFlags, seed: u64) -> Result<bool, SimAbort> {
    let cfg = sized_config(flags, 2);
    let mut rng = DetRng::from_seed(seed).split(streams::HARNESS);
    let set_bits = rng.next_below(256);
    let victim_tag = rng.next_below(64);
    let jitter = rng.next_below(64);
    let ways = cfg.llc_ways as u64;

    let mut attacker = Vec::new();
    for t in 0..ways {
        attacker.push(TraceOp::Load {
            addr: region_line(&cfg, ATTACKER_REGION, t, set_bits),
        });
    }
    attacker.extend(fence_ops(&cfg, 6000));
    // observables only cover memory ops, so the probe section starts right
    // after the prime loads
    let probe_start = attacker.iter().filter(|o| o.is_mem()).count();
    for t in 0..ways {
        attacker.push(TraceOp::Load {
            addr: region_line(&cfg, ATTACKER_REGION, t, set_bits),
        });
    }

    let run = |touch: bool| -> Result<Vec<u64>, SimAbort> {
        let mut victim = fence_ops(&cfg, 3000 + jitter);
        if touch {
            victim.push(TraceOp::Load {
                addr: region_line(&cfg, VICTIM_REGION, victim_tag, set_bits),
            });
        }
        let mut world = World::new(cfg.clone(), flags).expect("valid prime+probe config");
        world.cores[0].region_bv = 1 << VICTIM_REGION;
        world.cores[1].region_bv = 1 << ATTACKER_REGION;
        world.start_flat(vec![victim, attacker.clone()]);
        world.run(1_000_000)?;
        let obs = world.observables(1);
        Ok(obs.per_op[probe_start..]
            .iter()
            .map(|o| o.complete - o.issue)
            .collect())
    };

    // anything at memory latency is a probe miss; hits stay far below
    let miss_threshold = cfg.dram_latency / 2;
    let slow = |lats: &[u64]| lats.iter().any(|&l| l >= miss_threshold);
    let touched = run(true)?;
    let skipped = run(false)?;
    Ok(slow(&touched) && !slow(&skipped))
}

// ---------------------------------------------------------------------------
// coherence oracle

/// Random shared-memory traffic replayed against a flat memory model. Ops
/// are serialized by completion cycle (ties by core then op index; the
/// protocol's write exclusivity keeps conflicting accesses off the same
/// cycle). Returns the number of value mismatches — always expected 0.
pub fn coherence_check(
    flags: VariantFlags,
    n_cores: usize,
    ops_per_core: usize,
    seed: u64,
) -> Result<u64, SimAbort> {
    let cfg = sized_config(flags, n_cores);
    let root = DetRng::from_seed(seed).split(streams::TRACE_GEN);
    // one heavily shared pool: 24 lines, 2 words each
    let mut prng = root.split(0xBEEF);
    let pool: Vec<u64> = (0..24)
        .map(|_| prng.next_below(65536) * cfg.line_bytes + prng.next_below(2) * 8)
        .collect();
    let traces: Vec<Vec<TraceOp>> = (0..n_cores)
        .map(|c| {
            let mut rng = root.split(c as u64);
            (0..ops_per_core)
                .map(|_| {
                    let addr = pool[rng.next_below(pool.len() as u64) as usize];
                    match rng.next_below(20) {
                        0..=8 => TraceOp::Load { addr },
                        9..=17 => TraceOp::Store { addr },
                        _ => TraceOp::Compute {
                            cycles: 1 + rng.next_below(8),
                        },
                    }
                })
                .collect()
        })
        .collect();

    let mut world = World::new(cfg, flags).expect("valid coherence config");
    world.start_flat(traces.clone());
    world.run(60_000_000)?;

    // gather completed memory ops and replay them in completion order
    let mut events: Vec<(u64, usize, usize, u64)> = Vec::new();
    for c in 0..n_cores {
        for o in &world.observables(c).per_op {
            events.push((o.complete, c, o.op_idx, o.value));
        }
    }
    events.sort_unstable();
    let mut flat: HashMap<u64, u64> = HashMap::new();
    let mut mismatches = 0;
    for (_, core, op_idx, value) in events {
        match traces[core][op_idx] {
            TraceOp::Store { addr } => {
                flat.insert(addr, store_value(core, op_idx));
            }
            TraceOp::Load { addr } => {
                if value != flat.get(&addr).copied().unwrap_or(0) {
                    mismatches += 1;
                }
            }
            TraceOp::Compute { .. } => {}
        }
    }
    Ok(mismatches)
}

// ---------------------------------------------------------------------------
// overheads

#[derive(Debug, Clone)]
pub struct OverheadRow {
    pub variant: String,
    pub cycles: u64,
    pub memops: u64,
    pub l1_misses: u64,
    pub llc_misses: u64,
    pub mshr_stall_cycles: u64,
    pub arbiter_wait_cycles: u64,
    pub arbiter_idle_grants: u64,
    pub dq_retries: u64,
    pub purge_stalls: u64,
    pub faults: u64,
    /// Cycles relative to the first variant in the request.
    pub ratio_to_first: f64,
}

/// Run the same per-core traces under each variant and tabulate. Stats are
/// summed across cores; cycles are the full-machine quiesce time.
pub fn overhead_report(
    variants: &[VariantFlags],
    traces: &[Vec<TraceOp>],
    flush_switch_period: u64,
) -> Result<Vec<OverheadRow>, SimAbort> {
    let mut rows: Vec<OverheadRow> = Vec::new();
    let mut first_cycles = 0u64;
    for &flags in variants {
        let mut cfg = sized_config(flags, traces.len().max(1));
        cfg.flush_switch_period = flush_switch_period;
        let mut world = World::new(cfg, flags).expect("valid sweep config");
        world.start_flat(traces.to_vec());
        let cycles = world.run(60_000_000)?;
        let mut sum = crate::stats::CoreStats::default();
        for c in 0..traces.len() {
            let s = world.core_report(c);
            sum.memops += s.memops;
            sum.l1_misses += s.l1_misses;
            sum.llc_misses += s.llc_misses;
            sum.mshr_stall_cycles += s.mshr_stall_cycles;
            sum.arbiter_wait_cycles += s.arbiter_wait_cycles;
            sum.arbiter_idle_grants += s.arbiter_idle_grants;
            sum.dq_retries += s.dq_retries;
            sum.purge_stalls += s.purge_stalls;
            sum.faults += s.faults;
        }
        if rows.is_empty() {
            first_cycles = cycles;
        }
        rows.push(OverheadRow {
            variant: flags.canonical_name(),
            cycles,
            memops: sum.memops,
            l1_misses: sum.l1_misses,
            llc_misses: sum.llc_misses,
            mshr_stall_cycles: sum.mshr_stall_cycles,
            arbiter_wait_cycles: sum.arbiter_wait_cycles,
            arbiter_idle_grants: sum.arbiter_idle_grants,
            dq_retries: sum.dq_retries,
            purge_stalls: sum.purge_stalls,
            faults: sum.faults,
            ratio_to_first: cycles as f64 / first_cycles as f64,
        });
    }
    Ok(rows)
}

/// A working set that fits comfortably under plain indexing but folds into
/// a single set once region coloring claims the top index bits: the same
/// lines, looped, so the partitioned variant pays conflict misses.
pub fn part_conflict_trace(cfg: &SimConfig, region: u32, passes: usize) -> Vec<TraceOp> {
    let fold = 1u64 << cfg.part_k; // index aliases that coloring collapses
    let span = cfg.llc_sets >> cfg.part_k;
    let mut ops = Vec::new();
    for _ in 0..passes {
        for tag in 0..cfg.llc_ways as u64 {
            for v in 0..fold {
                let set_bits = v * span; // differ only in the folded bits
                ops.push(TraceOp::Load {
                    addr: region_line(cfg, region, tag, set_bits),
                });
            }
        }
    }
    ops
}

/// Eight loads with nothing between them: a window that may overlap misses
/// finishes far ahead of one that must serialize them.
pub fn parallel_miss_trace(cfg: &SimConfig, region: u32) -> Vec<TraceOp> {
    (0..8)
        .map(|i| TraceOp::Load {
            addr: region_line(cfg, region, i, i * 11),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_attacker_traces_always_compare_equal() {
        // replay determinism: the differential harness against itself
        for flags in [VariantFlags::BASE, VariantFlags::SECURE] {
            let cfg = sized_config(flags, 2);
            let rng = DetRng::from_seed(7).split(streams::HARNESS);
            let victim = random_trace(&mut rng.split(1), &cfg, VICTIM_REGION, 40);
            let attack = random_trace(&mut rng.split(2), &cfg, ATTACKER_REGION, 40);
            let scenario = DiffScenario {
                cfg,
                flags,
                unchecked: false,
                victim: vec![(0, 1 << VICTIM_REGION, victim)],
                attacker_cores: vec![(1, 1 << ATTACKER_REGION)],
                attacker_variants: vec![vec![attack.clone()], vec![attack]],
                max_cycles: 1_000_000,
            };
            let report = scenario.differential().unwrap();
            assert!(report.equal, "{flags:?}: {report:?}");
        }
    }

    #[test]
    fn trace_generators_are_deterministic_and_in_region() {
        let cfg = SimConfig::default();
        let a = random_trace(&mut DetRng::from_seed(9).split(1), &cfg, 3, 200);
        let b = random_trace(&mut DetRng::from_seed(9).split(1), &cfg, 3, 200);
        assert_eq!(a, b);
        let lo = region_base(&cfg, 3);
        let hi = lo + cfg.region_bytes();
        for op in a
            .iter()
            .chain(thrash_trace(&mut DetRng::from_seed(4).split(2), &cfg, 3, 100).iter())
        {
            if let Some(addr) = op.addr() {
                assert!(addr >= lo && addr < hi, "{addr:#x} outside region 3");
            }
        }
    }

    #[test]
    fn conflict_trace_folds_four_sets_into_one() {
        let cfg = SimConfig::default();
        let ops = part_conflict_trace(&cfg, 2, 1);
        let mut base_sets = std::collections::BTreeSet::new();
        let mut part_sets = std::collections::BTreeSet::new();
        for op in &ops {
            let line = cfg.line_of(op.addr().unwrap());
            base_sets.insert(cfg.llc_index(line, VariantFlags::BASE));
            part_sets.insert(cfg.llc_index(line, VariantFlags::PART));
        }
        assert_eq!(base_sets.len(), 4);
        assert_eq!(part_sets.len(), 1);
    }

    #[test]
    fn cache_set_witness_distinguishes_builds() {
        let row = channel_witness(Channel::CacheSet, SecureBuild::reference()).unwrap();
        assert!(row.passes(), "{row:?}");
    }

    #[test]
    fn small_coherence_run_matches_flat_memory() {
        let mismatches = coherence_check(VariantFlags::BASE, 2, 400, 11).unwrap();
        assert_eq!(mismatches, 0);
    }

    #[test]
    fn prime_probe_reads_the_victim_only_without_coloring() {
        assert!(prime_probe(VariantFlags::BASE, 5).unwrap());
        assert!(!prime_probe(VariantFlags::PART, 5).unwrap());
    }
}
