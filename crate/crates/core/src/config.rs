//! Simulation parameters, variant flags, and the physical address arithmetic
//! shared by every component.
//!
//! Everything downstream (cores, LLC, DRAM, monitor) asks this module where an
//! address lives: which cache line, which LLC set, which DRAM region. Keeping
//! the bit slicing in one place means the partitioned and unpartitioned index
//! functions cannot drift apart.

use std::fmt;

bitflags::bitflags! {
    /// Hardware shape toggles. Each flag swaps one mechanism for its
    /// alternative; they are orthogonal except where [`validate`] says
    /// otherwise.
    ///
    /// [`validate`]: SimConfig::validate
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct VariantFlags: u16 {
        /// Purge core-private state on context/enclave switches.
        const FLUSH = 1 << 0;
        /// Fold DRAM-region bits into the LLC set index so regions get
        /// disjoint set ranges.
        const PART = 1 << 1;
        /// Bank the LLC MSHR file; a full target bank stalls the whole file.
        const MISS = 1 << 2;
        /// Add a fixed delay to the LLC pipeline (stand-in for message-path
        /// arbitration hardware).
        const ARB = 1 << 3;
        /// Cores issue a memory op only into an otherwise empty window.
        const NONSPEC = 1 << 4;
        /// Statically slice the LLC MSHR file per core.
        const MSHR_PARTITION = 1 << 5;
        /// One upgrade-response queue per core instead of a single shared one.
        const SPLIT_UQ = 1 << 6;
        /// One downgrade scanner per MSHR slice instead of a single shared one.
        const DUP_DOWNGRADE = 1 << 7;
        /// Replacement entries leave the dequeue port after one cycle and
        /// re-enter as pure read misses.
        const DQ_RETRY = 1 << 8;
        /// Time-sliced round-robin entry into the LLC pipeline.
        const RR_ARBITER = 1 << 9;
    }
}

impl VariantFlags {
    /// The unmodified insecure baseline: no flags set.
    pub const BASE: VariantFlags = VariantFlags::empty();

    /// The fixes that together give per-core timing isolation of the shared
    /// hierarchy (correct MSHR sizing is a config concern on top of these).
    pub const ISOLATION_FIXES: VariantFlags = VariantFlags::PART
        .union(VariantFlags::MSHR_PARTITION)
        .union(VariantFlags::RR_ARBITER)
        .union(VariantFlags::SPLIT_UQ)
        .union(VariantFlags::DUP_DOWNGRADE)
        .union(VariantFlags::DQ_RETRY);

    /// The full secure bundle: isolation fixes plus purge-on-switch.
    pub const SECURE: VariantFlags = VariantFlags::ISOLATION_FIXES.union(VariantFlags::FLUSH);

    /// Flush + partition + banked MSHRs + pipeline delay, the combined
    /// single-core overhead study.
    pub const FPMA: VariantFlags = VariantFlags::FLUSH
        .union(VariantFlags::PART)
        .union(VariantFlags::MISS)
        .union(VariantFlags::ARB);

    /// True when the flag set claims full timing isolation, which obliges the
    /// config to also size the LLC MSHR file against the DRAM in-flight cap.
    pub fn claims_isolation(self) -> bool {
        self.contains(VariantFlags::ISOLATION_FIXES)
    }

    /// Parse either a preset name (`base`, `flush`, `part`, `miss`, `arb`,
    /// `nonspec`, `secure`, `fpma`) or a `+`-joined list of flag names.
    /// Case-insensitive.
    pub fn parse(text: &str) -> Result<VariantFlags, String> {
        let lowered = text.trim().to_ascii_lowercase();
        match lowered.as_str() {
            "base" => return Ok(VariantFlags::empty()),
            "flush" => return Ok(VariantFlags::FLUSH),
            "part" => return Ok(VariantFlags::PART),
            "miss" => return Ok(VariantFlags::MISS),
            "arb" => return Ok(VariantFlags::ARB),
            "nonspec" => return Ok(VariantFlags::NONSPEC),
            "secure" => return Ok(VariantFlags::SECURE),
            "fpma" => return Ok(VariantFlags::FPMA),
            _ => {}
        }
        let mut flags = VariantFlags::empty();
        for part in lowered.split('+') {
            let flag = match part.trim() {
                "flush" => VariantFlags::FLUSH,
                "part" => VariantFlags::PART,
                "miss" => VariantFlags::MISS,
                "arb" => VariantFlags::ARB,
                "nonspec" => VariantFlags::NONSPEC,
                "mshr_partition" => VariantFlags::MSHR_PARTITION,
                "split_uq" => VariantFlags::SPLIT_UQ,
                "dup_downgrade" => VariantFlags::DUP_DOWNGRADE,
                "dq_retry" => VariantFlags::DQ_RETRY,
                "rr_arbiter" => VariantFlags::RR_ARBITER,
                other => return Err(format!("unknown variant or flag `{other}`")),
            };
            flags |= flag;
        }
        Ok(flags)
    }

    /// Canonical name: a preset name when the set matches one exactly,
    /// otherwise the `+`-joined flag list (`base` for the empty set).
    pub fn canonical_name(self) -> String {
        if self.is_empty() {
            return "base".to_string();
        }
        match self {
            VariantFlags::FLUSH => return "flush".into(),
            VariantFlags::PART => return "part".into(),
            VariantFlags::MISS => return "miss".into(),
            VariantFlags::ARB => return "arb".into(),
            VariantFlags::NONSPEC => return "nonspec".into(),
            VariantFlags::SECURE => return "secure".into(),
            VariantFlags::FPMA => return "fpma".into(),
            _ => {}
        }
        let mut names = Vec::new();
        for (name, flag) in [
            ("flush", VariantFlags::FLUSH),
            ("part", VariantFlags::PART),
            ("miss", VariantFlags::MISS),
            ("arb", VariantFlags::ARB),
            ("nonspec", VariantFlags::NONSPEC),
            ("mshr_partition", VariantFlags::MSHR_PARTITION),
            ("split_uq", VariantFlags::SPLIT_UQ),
            ("dup_downgrade", VariantFlags::DUP_DOWNGRADE),
            ("dq_retry", VariantFlags::DQ_RETRY),
            ("rr_arbiter", VariantFlags::RR_ARBITER),
        ] {
            if self.contains(flag) {
                names.push(name);
            }
        }
        names.join("+")
    }
}

impl fmt::Display for VariantFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name())
    }
}

/// A cache-line-granular physical address: the byte address shifted right by
/// `log2(line_bytes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineAddress(pub u64);

/// Index of a DRAM protection region. Regions are equal power-of-two slices
/// of physical memory, numbered from its top address bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId(pub u16);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Default values for every [`SimConfig`] field.
///
/// The cache geometry mirrors a 32 KiB 8-way L1 and a 1 MiB 16-way LLC over
/// 2 GiB of DRAM split into 64 regions, with a 120-cycle constant-latency
/// DRAM allowing 24 requests in flight.
pub mod defaults {
    pub const N_CORES: usize = 2;
    pub const LINE_BYTES: u64 = 64;
    pub const L1_SETS: u64 = 64;
    pub const L1_WAYS: usize = 8;
    pub const L1_MSHRS: usize = 8;
    pub const LLC_SETS: u64 = 1024;
    pub const LLC_WAYS: usize = 16;
    pub const LLC_MSHRS_TOTAL: usize = 16;
    pub const LLC_PIPELINE_LATENCY: u64 = 4;
    pub const DRAM_LATENCY: u64 = 120;
    pub const DRAM_MAX_INFLIGHT: usize = 24;
    pub const N_REGIONS: u64 = 64;
    pub const DRAM_BYTES: u64 = 2 * 1024 * 1024 * 1024;
    /// Region bits folded into the partitioned LLC index.
    pub const PART_K: u32 = 2;
    pub const L1_TLB_ENTRIES: usize = 32;
    pub const L2_TLB_SETS: u64 = 256;
    pub const L2_TLB_WAYS: usize = 4;
    /// Extra cycles for a permission check that hits only the L2 TLB.
    pub const L2_TLB_LATENCY: u64 = 2;
    /// Cycles for a full page walk (which ends in a region permission check).
    pub const PAGE_WALK_LATENCY: u64 = 20;
    /// Load-to-use latency of an L1 hit.
    pub const L1_HIT_LATENCY: u64 = 2;
    pub const BP_TABLE_ENTRIES: u64 = 4096;
    /// Branch predictor entries cleared per purge cycle.
    pub const BP_FLUSH_RATE: u64 = 8;
    /// L1 data lines scanned per purge cycle.
    pub const L1_FLUSH_RATE: u64 = 1;
    pub const ISSUE_WINDOW: usize = 80;
    pub const ISSUE_WIDTH: usize = 2;
    pub const MISS_BANKS: usize = 4;
    /// Depth of each per-core link FIFO between an L1 and the LLC.
    pub const LINK_FIFO_DEPTH: usize = 4;
    /// Fixed cycle charge for a monitor call, independent of its arguments.
    pub const MONITOR_CALL_CYCLES: u64 = 200;
    pub const MAILBOX_DEPTH: usize = 4;
    /// When nonzero and FLUSH is set, cores take a scripted context switch
    /// (window drain + purge) with this period.
    pub const FLUSH_SWITCH_PERIOD: u64 = 0;
    pub const SEED: u64 = 1;
}

/// Full description of a simulated machine. All fields are plain numbers so a
/// config file is a flat list of `key=value` lines using exactly these names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub n_cores: usize,
    pub line_bytes: u64,
    pub l1_sets: u64,
    pub l1_ways: usize,
    pub l1_mshrs: usize,
    pub llc_sets: u64,
    pub llc_ways: usize,
    pub llc_mshrs_total: usize,
    pub llc_pipeline_latency: u64,
    pub dram_latency: u64,
    pub dram_max_inflight: usize,
    pub n_regions: u64,
    pub dram_bytes: u64,
    pub part_k: u32,
    pub l1_tlb_entries: usize,
    pub l2_tlb_sets: u64,
    pub l2_tlb_ways: usize,
    pub l2_tlb_latency: u64,
    pub page_walk_latency: u64,
    pub l1_hit_latency: u64,
    pub bp_table_entries: u64,
    pub bp_flush_rate: u64,
    pub l1_flush_rate: u64,
    pub issue_window: usize,
    pub issue_width: usize,
    pub miss_banks: usize,
    pub link_fifo_depth: usize,
    pub monitor_call_cycles: u64,
    pub mailbox_depth: usize,
    pub flush_switch_period: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        use defaults::*;
        SimConfig {
            n_cores: N_CORES,
            line_bytes: LINE_BYTES,
            l1_sets: L1_SETS,
            l1_ways: L1_WAYS,
            l1_mshrs: L1_MSHRS,
            llc_sets: LLC_SETS,
            llc_ways: LLC_WAYS,
            llc_mshrs_total: LLC_MSHRS_TOTAL,
            llc_pipeline_latency: LLC_PIPELINE_LATENCY,
            dram_latency: DRAM_LATENCY,
            dram_max_inflight: DRAM_MAX_INFLIGHT,
            n_regions: N_REGIONS,
            dram_bytes: DRAM_BYTES,
            part_k: PART_K,
            l1_tlb_entries: L1_TLB_ENTRIES,
            l2_tlb_sets: L2_TLB_SETS,
            l2_tlb_ways: L2_TLB_WAYS,
            l2_tlb_latency: L2_TLB_LATENCY,
            page_walk_latency: PAGE_WALK_LATENCY,
            l1_hit_latency: L1_HIT_LATENCY,
            bp_table_entries: BP_TABLE_ENTRIES,
            bp_flush_rate: BP_FLUSH_RATE,
            l1_flush_rate: L1_FLUSH_RATE,
            issue_window: ISSUE_WINDOW,
            issue_width: ISSUE_WIDTH,
            miss_banks: MISS_BANKS,
            link_fifo_depth: LINK_FIFO_DEPTH,
            monitor_call_cycles: MONITOR_CALL_CYCLES,
            mailbox_depth: MAILBOX_DEPTH,
            flush_switch_period: FLUSH_SWITCH_PERIOD,
            seed: SEED,
        }
    }
}

fn log2(x: u64) -> u32 {
    debug_assert!(x.is_power_of_two());
    x.trailing_zeros()
}

impl SimConfig {
    /// Number of cache lines DRAM holds.
    pub fn line_count(&self) -> u64 {
        self.dram_bytes / self.line_bytes
    }

    /// Width in bits of a line address.
    pub fn line_addr_bits(&self) -> u32 {
        log2(self.line_count())
    }

    /// Bytes per protection region.
    pub fn region_bytes(&self) -> u64 {
        self.dram_bytes / self.n_regions
    }

    /// Mask with one bit set per existing region.
    pub fn all_regions_mask(&self) -> u64 {
        if self.n_regions >= 64 {
            u64::MAX
        } else {
            (1u64 << self.n_regions) - 1
        }
    }

    /// Convert a byte address to its line address.
    pub fn line_of(&self, byte_addr: u64) -> LineAddress {
        LineAddress(byte_addr >> log2(self.line_bytes))
    }

    /// The region an address belongs to: the top `log2(n_regions)` bits of
    /// its line address.
    pub fn region_of_line(&self, line: LineAddress) -> RegionId {
        let shift = self.line_addr_bits() - log2(self.n_regions);
        RegionId((line.0 >> shift) as u16)
    }

    /// Region of a byte address.
    pub fn region_of(&self, byte_addr: u64) -> RegionId {
        self.region_of_line(self.line_of(byte_addr))
    }

    /// L1 set index: the low `log2(l1_sets)` bits of the line address.
    pub fn l1_index(&self, line: LineAddress) -> u64 {
        line.0 & (self.l1_sets - 1)
    }

    /// LLC set index under the given flags.
    ///
    /// Without `PART` this is the low `log2(llc_sets)` bits of the line
    /// address. With `PART` the top `part_k` index bits are taken from the
    /// low `part_k` bits of the region number, and only the remaining
    /// `log2(llc_sets) - part_k` low address bits survive, so a region's
    /// lines are confined to a `1/2^part_k` slice of the sets.
    pub fn llc_index(&self, line: LineAddress, flags: VariantFlags) -> u64 {
        let set_bits = log2(self.llc_sets);
        if flags.contains(VariantFlags::PART) {
            let k = self.part_k;
            let region = self.region_of_line(line).0 as u64;
            let low = line.0 & ((1 << (set_bits - k)) - 1);
            let region_low = region & ((1 << k) - 1);
            (region_low << (set_bits - k)) | low
        } else {
            line.0 & (self.llc_sets - 1)
        }
    }

    /// Range of LLC sets a region maps to under `PART`, as `(first, count)`.
    pub fn part_set_range(&self, region: RegionId) -> (u64, u64) {
        let set_bits = log2(self.llc_sets);
        let k = self.part_k;
        let span = 1u64 << (set_bits - k);
        let region_low = (region.0 as u64) & ((1 << k) - 1);
        (region_low * span, span)
    }

    /// LLC MSHR sizing rule against a DRAM in-flight cap: a replacement can
    /// hold two DRAM requests live at once (writeback plus read), so the
    /// total that can never see backpressure is `dram_max_inflight / 2`, and
    /// each core's static slice is an equal share of that total.
    ///
    /// Returns `(total, per_core)`.
    pub fn mshr_budget(dram_max_inflight: usize, n_cores: usize) -> (usize, usize) {
        let total = dram_max_inflight / 2;
        (total, total / n_cores)
    }

    /// Cycles a purge stalls the core: four clearing engines run in parallel
    /// (L1 data scan, L1 TLB, L2 TLB set walk, branch-predictor table) and
    /// the stall is the slowest of them. Depends only on geometry, never on
    /// contents.
    pub fn purge_stall_cycles(&self) -> u64 {
        let l1_lines = self.l1_sets * self.l1_ways as u64;
        let l1 = l1_lines.div_ceil(self.l1_flush_rate);
        let l1_tlb = 1; // single-cycle clear of the small flat array
        let l2_tlb = self.l2_tlb_sets; // one set per cycle
        let bp = self.bp_table_entries.div_ceil(self.bp_flush_rate);
        l1.max(l1_tlb).max(l2_tlb).max(bp)
    }

    /// Check the whole config against the given flags, reporting every
    /// violation rather than stopping at the first.
    pub fn validate(&self, flags: VariantFlags) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        fn pow2(problems: &mut Vec<String>, name: &str, v: u64) -> bool {
            if v == 0 || !v.is_power_of_two() {
                problems.push(format!("{name} must be a nonzero power of two, got {v}"));
                false
            } else {
                true
            }
        }
        let line_ok = pow2(&mut problems, "line_bytes", self.line_bytes);
        if line_ok && !(8..=64).contains(&self.line_bytes) {
            problems.push(format!(
                "line_bytes must be between 8 and 64, got {}",
                self.line_bytes
            ));
        }
        pow2(&mut problems, "l1_sets", self.l1_sets);
        pow2(&mut problems, "llc_sets", self.llc_sets);
        pow2(&mut problems, "n_regions", self.n_regions);
        pow2(&mut problems, "dram_bytes", self.dram_bytes);
        pow2(&mut problems, "l2_tlb_sets", self.l2_tlb_sets);
        if self.n_regions > 64 {
            problems.push(format!(
                "n_regions must be at most 64 (region sets are 64-bit masks), got {}",
                self.n_regions
            ));
        }
        if self.n_regions < 2 {
            problems.push("n_regions must be at least 2".to_string());
        }
        if self.dram_bytes % self.n_regions.max(1) != 0 {
            problems.push("dram_bytes must divide evenly into n_regions".to_string());
        } else if self.n_regions.is_power_of_two()
            && self.dram_bytes.is_power_of_two()
            && self.region_bytes() < 4096
        {
            problems.push(format!(
                "regions must be at least one 4 KiB page, got {} bytes",
                self.region_bytes()
            ));
        }
        if self.n_cores == 0 {
            problems.push("n_cores must be at least 1".to_string());
        }
        for (name, v) in [
            ("l1_ways", self.l1_ways),
            ("llc_ways", self.llc_ways),
            ("l1_mshrs", self.l1_mshrs),
            ("llc_mshrs_total", self.llc_mshrs_total),
            ("issue_window", self.issue_window),
            ("issue_width", self.issue_width),
            ("l1_tlb_entries", self.l1_tlb_entries),
            ("l2_tlb_ways", self.l2_tlb_ways),
            ("link_fifo_depth", self.link_fifo_depth),
            ("mailbox_depth", self.mailbox_depth),
            ("dram_max_inflight", self.dram_max_inflight),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("llc_pipeline_latency", self.llc_pipeline_latency),
            ("dram_latency", self.dram_latency),
            ("l1_flush_rate", self.l1_flush_rate),
            ("bp_flush_rate", self.bp_flush_rate),
            ("l1_hit_latency", self.l1_hit_latency),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if self.llc_sets.is_power_of_two() && self.n_regions.is_power_of_two() {
            if self.part_k > log2(self.llc_sets) {
                problems.push(format!(
                    "part_k ({}) cannot exceed log2(llc_sets) ({})",
                    self.part_k,
                    log2(self.llc_sets)
                ));
            }
            if self.part_k > log2(self.n_regions) {
                problems.push(format!(
                    "part_k ({}) cannot exceed log2(n_regions) ({})",
                    self.part_k,
                    log2(self.n_regions)
                ));
            }
        }
        if self.line_bytes.is_power_of_two()
            && self.dram_bytes.is_power_of_two()
            && self.dram_bytes <= self.line_bytes
        {
            problems.push("dram_bytes must exceed line_bytes".to_string());
        }
        if flags.contains(VariantFlags::MISS) {
            if self.miss_banks == 0 || !self.miss_banks.is_power_of_two() {
                problems.push(format!(
                    "miss_banks must be a nonzero power of two, got {}",
                    self.miss_banks
                ));
            } else if self.llc_mshrs_total % self.miss_banks != 0 {
                problems.push(format!(
                    "llc_mshrs_total ({}) must divide evenly into miss_banks ({})",
                    self.llc_mshrs_total, self.miss_banks
                ));
            }
            if flags.contains(VariantFlags::MSHR_PARTITION) {
                problems.push("MISS and MSHR_PARTITION cannot be combined".to_string());
            }
        }
        if flags.claims_isolation() && self.n_cores > 0 {
            let (total, per_core) = Self::mshr_budget(self.dram_max_inflight, self.n_cores);
            if self.llc_mshrs_total > total {
                problems.push(format!(
                    "llc_mshrs_total ({}) exceeds the no-backpressure budget \
                     ({} = dram_max_inflight/2) required for timing isolation",
                    self.llc_mshrs_total, total
                ));
            }
            if per_core == 0 {
                problems.push(format!(
                    "per-core MSHR slice is zero ({} total across {} cores)",
                    total, self.n_cores
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems })
        }
    }

    /// Parse a flat `key=value` config file. Keys are exactly the field names
    /// of [`SimConfig`]; the extra key `variant=` selects flags by preset
    /// name or `+`-joined list. Blank lines and lines starting with `#` are
    /// skipped. Unknown keys are errors. The parsed config is not validated;
    /// call [`SimConfig::validate`] with the final flag set.
    pub fn parse_str(text: &str) -> Result<(SimConfig, VariantFlags), ConfigError> {
        let mut cfg = SimConfig::default();
        let mut flags = VariantFlags::empty();
        let mut problems = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {lineno}: expected key=value, got `{line}`"));
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            if key == "variant" {
                match VariantFlags::parse(value) {
                    Ok(f) => flags = f,
                    Err(e) => problems.push(format!("line {lineno}: {e}")),
                }
                continue;
            }
            let parsed: Result<u64, _> = if let Some(hex) = value.strip_prefix("0x") {
                u64::from_str_radix(hex, 16)
            } else {
                value.parse()
            };
            let num = match parsed {
                Ok(n) => n,
                Err(_) => {
                    problems.push(format!("line {lineno}: `{value}` is not a number"));
                    continue;
                }
            };
            if !cfg.set_field(key, num) {
                problems.push(format!("line {lineno}: unknown config key `{key}`"));
            }
        }
        if problems.is_empty() {
            Ok((cfg, flags))
        } else {
            Err(ConfigError { problems })
        }
    }

    fn set_field(&mut self, key: &str, v: u64) -> bool {
        match key {
            "n_cores" => self.n_cores = v as usize,
            "line_bytes" => self.line_bytes = v,
            "l1_sets" => self.l1_sets = v,
            "l1_ways" => self.l1_ways = v as usize,
            "l1_mshrs" => self.l1_mshrs = v as usize,
            "llc_sets" => self.llc_sets = v,
            "llc_ways" => self.llc_ways = v as usize,
            "llc_mshrs_total" => self.llc_mshrs_total = v as usize,
            "llc_pipeline_latency" => self.llc_pipeline_latency = v,
            "dram_latency" => self.dram_latency = v,
            "dram_max_inflight" => self.dram_max_inflight = v as usize,
            "n_regions" => self.n_regions = v,
            "dram_bytes" => self.dram_bytes = v,
            "part_k" => self.part_k = v as u32,
            "l1_tlb_entries" => self.l1_tlb_entries = v as usize,
            "l2_tlb_sets" => self.l2_tlb_sets = v,
            "l2_tlb_ways" => self.l2_tlb_ways = v as usize,
            "l2_tlb_latency" => self.l2_tlb_latency = v,
            "page_walk_latency" => self.page_walk_latency = v,
            "l1_hit_latency" => self.l1_hit_latency = v,
            "bp_table_entries" => self.bp_table_entries = v,
            "bp_flush_rate" => self.bp_flush_rate = v,
            "l1_flush_rate" => self.l1_flush_rate = v,
            "issue_window" => self.issue_window = v as usize,
            "issue_width" => self.issue_width = v as usize,
            "miss_banks" => self.miss_banks = v as usize,
            "link_fifo_depth" => self.link_fifo_depth = v as usize,
            "monitor_call_cycles" => self.monitor_call_cycles = v,
            "mailbox_depth" => self.mailbox_depth = v as usize,
            "flush_switch_period" => self.flush_switch_period = v,
            "seed" => self.seed = v,
            _ => return false,
        }
        true
    }
}

/// One or more config problems, each described on its own line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.problems.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[cfg(test)]
mod tests {
    use super::*;

    // Addresses here were reduced by hand: with 64-byte lines and 2 GiB of
    // DRAM there are 2^25 line addresses, and with 64 regions the region is
    // the top 6 bits, i.e. line >> 19.

    #[test]
    fn region_of_top_bits() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.line_of(0x0808_0000), LineAddress(0x202000));
        assert_eq!(cfg.region_of(0x0808_0000), RegionId(4));
        // last line of DRAM lands in the last region
        assert_eq!(cfg.region_of(0x7FFF_FFC0), RegionId(63));
        assert_eq!(cfg.region_of(0), RegionId(0));
        // one region is 32 MiB; the byte just below the region-5 boundary
        assert_eq!(cfg.region_of(5 * 32 * 1024 * 1024 - 1), RegionId(4));
        assert_eq!(cfg.region_of(5 * 32 * 1024 * 1024), RegionId(5));
    }

    #[test]
    fn llc_index_base_low_bits() {
        let cfg = SimConfig::default();
        assert_eq!(
            cfg.llc_index(LineAddress(0x12345), VariantFlags::empty()),
            0x345
        );
        assert_eq!(
            cfg.llc_index(LineAddress(0x400), VariantFlags::empty()),
            0x0
        );
    }

    #[test]
    fn llc_index_part_folds_region_bits() {
        let cfg = SimConfig::default();
        // line 0x202000 is region 4; low 2 region bits are 0b00, low 8
        // address bits are 0x00, so the partitioned index is set 0.
        assert_eq!(cfg.llc_index(LineAddress(0x202000), VariantFlags::PART), 0);
        // same line under the flat index uses the low 10 bits instead
        assert_eq!(
            cfg.llc_index(LineAddress(0x202000), VariantFlags::empty()),
            0x000
        );
        // region 5 (low bits 0b01) with address low byte 0x7F
        let line = LineAddress((5 << 19) | 0x7F);
        assert_eq!(cfg.llc_index(line, VariantFlags::PART), (1 << 8) | 0x7F);
        // regions 1 and 2 occupy disjoint quarters
        assert_eq!(cfg.part_set_range(RegionId(1)), (256, 256));
        assert_eq!(cfg.part_set_range(RegionId(2)), (512, 256));
    }

    #[test]
    fn part_ranges_disjoint_when_k_covers_regions() {
        // small geometry where part_k = log2(n_regions): every region gets
        // its own slice, exhaustively checkable
        let cfg = SimConfig {
            llc_sets: 64,
            n_regions: 4,
            part_k: 2,
            dram_bytes: 1 << 24,
            ..SimConfig::default()
        };
        let mut seen = vec![None; 64];
        for line in 0..cfg.line_count() {
            let region = cfg.region_of_line(LineAddress(line));
            let set = cfg.llc_index(LineAddress(line), VariantFlags::PART) as usize;
            match seen[set] {
                None => seen[set] = Some(region),
                Some(r) => assert_eq!(r, region, "set {set} shared between regions"),
            }
        }
    }

    #[test]
    fn mshr_budget_floor_halving() {
        assert_eq!(SimConfig::mshr_budget(24, 1), (12, 12));
        assert_eq!(SimConfig::mshr_budget(24, 4), (12, 3));
        assert_eq!(SimConfig::mshr_budget(16, 2), (8, 4));
        assert_eq!(SimConfig::mshr_budget(25, 2), (12, 6));
    }

    #[test]
    fn purge_stall_is_slowest_engine() {
        let cfg = SimConfig::default();
        // 512 L1 lines at 1/cycle vs 1 vs 256 TLB sets vs 4096/8
        assert_eq!(cfg.purge_stall_cycles(), 512);

        let small = SimConfig {
            l1_sets: 64,
            l1_ways: 4, // 256 lines
            l2_tlb_sets: 128,
            bp_table_entries: 1024, // 1024/8 = 128
            ..SimConfig::default()
        };
        assert_eq!(small.purge_stall_cycles(), 256);
    }

    #[test]
    fn validate_accepts_defaults_and_reports_all_problems() {
        let cfg = SimConfig::default();
        assert!(cfg.validate(VariantFlags::empty()).is_ok());
        assert!(cfg.validate(VariantFlags::FPMA).is_ok());

        let bad = SimConfig {
            line_bytes: 48,
            n_regions: 3,
            issue_width: 0,
            ..SimConfig::default()
        };
        let err = bad.validate(VariantFlags::empty()).unwrap_err();
        assert!(err.problems.len() >= 3, "want all violations: {err}");
    }

    #[test]
    fn validate_rejects_oversized_mshrs_under_isolation() {
        // 16 MSHR entries can hold 32 DRAM requests, over a 24-deep DRAM;
        // fine for a plain machine, rejected when claiming isolation
        let cfg = SimConfig::default();
        assert_eq!(cfg.llc_mshrs_total, 16);
        assert!(cfg.validate(VariantFlags::empty()).is_ok());
        let err = cfg.validate(VariantFlags::SECURE).unwrap_err();
        assert!(err.to_string().contains("no-backpressure budget"), "{err}");

        let sized = SimConfig {
            llc_mshrs_total: 12,
            ..SimConfig::default()
        };
        assert!(sized.validate(VariantFlags::SECURE).is_ok());
    }

    #[test]
    fn variant_parsing_round_trips() {
        assert_eq!(VariantFlags::parse("base").unwrap(), VariantFlags::empty());
        assert_eq!(VariantFlags::parse("SECURE").unwrap(), VariantFlags::SECURE);
        assert_eq!(
            VariantFlags::parse("flush+part").unwrap(),
            VariantFlags::FLUSH | VariantFlags::PART
        );
        assert_eq!(
            VariantFlags::parse("part+rr_arbiter").unwrap(),
            VariantFlags::PART | VariantFlags::RR_ARBITER
        );
        assert!(VariantFlags::parse("warp").is_err());
        assert_eq!(VariantFlags::SECURE.canonical_name(), "secure");
        assert_eq!(VariantFlags::empty().canonical_name(), "base");
        assert_eq!(
            (VariantFlags::FLUSH | VariantFlags::PART).canonical_name(),
            "flush+part"
        );
    }

    #[test]
    fn config_file_round_trip_and_unknown_keys() {
        let text = "\
# test machine
n_cores = 4
llc_sets=256
variant = secure
seed = 0xDEAD
";
        let (cfg, flags) = SimConfig::parse_str(text).unwrap();
        assert_eq!(cfg.n_cores, 4);
        assert_eq!(cfg.llc_sets, 256);
        assert_eq!(cfg.seed, 0xDEAD);
        assert_eq!(flags, VariantFlags::SECURE);

        let err = SimConfig::parse_str("frobnicate=1\nn_cores=2\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");
        let err = SimConfig::parse_str("n_cores=two").unwrap_err();
        assert!(err.to_string().contains("not a number"), "{err}");
    }

    #[test]
    fn secure_preset_contents() {
        let s = VariantFlags::SECURE;
        for f in [
            VariantFlags::FLUSH,
            VariantFlags::PART,
            VariantFlags::MSHR_PARTITION,
            VariantFlags::RR_ARBITER,
            VariantFlags::SPLIT_UQ,
            VariantFlags::DUP_DOWNGRADE,
            VariantFlags::DQ_RETRY,
        ] {
            assert!(s.contains(f));
        }
        assert!(!s.contains(VariantFlags::MISS));
        assert!(!s.contains(VariantFlags::ARB));
        assert!(!s.contains(VariantFlags::NONSPEC));
        assert!(!VariantFlags::FPMA.claims_isolation());
        assert!(s.claims_isolation());
    }
}
