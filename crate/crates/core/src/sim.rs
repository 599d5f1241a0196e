//! The assembled machine: cores, link FIFOs, shared cache, memory, one
//! clock. A tick advances every component once in a fixed order and then
//! commits all registered queues, so cross-component messages always take
//! effect the next cycle and no ordering depends on anything but the code
//! here.

use crate::config::{ConfigError, LineAddress, SimConfig, VariantFlags};
use crate::core::{core_step, CoreLinks, CoreState, OpObservable};
use crate::dram::{BackingStore, DramState};
use crate::engine::{EventLog, SimAbort};
use crate::llc::{llc_step, LlcState};
use crate::proto::{CacheState, LineData};
use crate::stats::CoreStats;
use crate::trace::TraceOp;

#[derive(Debug, Clone)]
pub struct World {
    pub cfg: SimConfig,
    pub flags: VariantFlags,
    pub clock: u64,
    pub cores: Vec<CoreState>,
    pub links: Vec<CoreLinks>,
    pub llc: LlcState,
    pub dram: DramState,
    pub store: BackingStore,
    pub log: EventLog,
}

/// Everything a program can observe about its own execution: per-op timing,
/// values, faults, and when the whole trace finished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunObservables {
    pub per_op: Vec<OpObservable>,
    pub completion_cycle: u64,
    pub faults: u64,
}

impl World {
    pub fn new(cfg: SimConfig, flags: VariantFlags) -> Result<Self, ConfigError> {
        cfg.validate(flags)?;
        Ok(Self::new_unchecked(cfg, flags))
    }

    /// Build without validation. Exists so experiments can deliberately
    /// construct mis-sized machines (for example more miss registers than
    /// the memory window supports) and watch them misbehave.
    pub fn new_unchecked(cfg: SimConfig, flags: VariantFlags) -> Self {
        let all = cfg.all_regions_mask();
        World {
            cores: (0..cfg.n_cores)
                .map(|i| CoreState::new(i, &cfg, all))
                .collect(),
            links: (0..cfg.n_cores)
                .map(|_| CoreLinks::new(cfg.link_fifo_depth))
                .collect(),
            llc: LlcState::new(&cfg),
            dram: DramState::new(cfg.dram_latency, cfg.dram_max_inflight),
            store: BackingStore::default(),
            log: EventLog::new(false),
            clock: 0,
            cfg,
            flags,
        }
    }

    /// Start every core on its trace right away, with every region open to
    /// everyone. This is the mode for microarchitectural experiments that
    /// don't involve the monitor.
    pub fn start_flat(&mut self, traces: Vec<Vec<TraceOp>>) {
        assert!(traces.len() <= self.cores.len());
        for (core, trace) in self.cores.iter_mut().zip(traces) {
            core.start_flat(trace, &self.cfg, self.flags, self.clock);
        }
    }

    /// One clock edge: cores in id order, then the shared cache, then
    /// memory, then every queue commits.
    pub fn tick(&mut self) -> Result<(), SimAbort> {
        self.step_components()?;
        self.finish_tick();
        Ok(())
    }

    /// First half of a tick: advance every component at the current cycle.
    /// Callers that inject privileged events (the monitor) do so between
    /// this and `finish_tick`.
    pub fn step_components(&mut self) -> Result<(), SimAbort> {
        for i in 0..self.cores.len() {
            core_step(
                &mut self.cores[i],
                &mut self.links[i],
                &self.cfg,
                self.flags,
                self.clock,
                &mut self.log,
            )?;
        }
        llc_step(
            &mut self.llc,
            &mut self.links,
            &mut self.dram,
            &self.cfg,
            self.flags,
            self.clock,
            &mut self.log,
        )?;
        for resp in self.dram.step(self.clock, &mut self.store) {
            self.llc.on_dram_resp(resp);
        }
        Ok(())
    }

    /// Second half of a tick: make this cycle's queue pushes visible and
    /// advance the clock.
    pub fn finish_tick(&mut self) {
        for l in &mut self.links {
            l.commit();
        }
        self.clock += 1;
    }

    pub fn is_quiet(&self) -> bool {
        self.cores.iter().all(CoreState::is_quiet)
            && self.links.iter().all(CoreLinks::is_quiet)
            && self.llc.is_quiet()
            && self.dram.is_quiet()
    }

    /// Run until the whole machine has nothing left to do, or give up after
    /// `max_cycles` with an abort.
    pub fn run(&mut self, max_cycles: u64) -> Result<u64, SimAbort> {
        while !self.is_quiet() {
            if self.clock >= max_cycles {
                return Err(SimAbort {
                    cycle: self.clock,
                    component: "world".into(),
                    message: format!("no quiesce within {max_cycles} cycles"),
                });
            }
            self.tick()?;
        }
        Ok(self.clock)
    }

    /// Per-core stats with the shared-cache counters folded in.
    pub fn core_report(&self, id: usize) -> CoreStats {
        let mut s = self.cores[id].stats;
        let l = &self.llc.core_stats[id];
        s.llc_misses = l.llc_misses;
        s.mshr_stall_cycles = l.mshr_stall_cycles;
        s.arbiter_wait_cycles = l.arbiter_wait_cycles;
        s.arbiter_idle_grants = l.arbiter_idle_grants;
        s.dq_retries = l.dq_retries;
        s
    }

    pub fn observables(&self, id: usize) -> RunObservables {
        RunObservables {
            per_op: self.cores[id].observables.clone(),
            completion_cycle: self.cores[id].stats.completion_cycle,
            faults: self.cores[id].stats.faults,
        }
    }

    /// The current architectural value of a line: a modified L1 copy wins,
    /// then the shared cache, then memory.
    pub fn architectural_line(&self, line: LineAddress) -> LineData {
        for core in &self.cores {
            if let Some((CacheState::M, data)) = core.line_value(&self.cfg, line) {
                return data;
            }
        }
        if let Some(data) = self.llc.line_value(&self.cfg, self.flags, line) {
            return data;
        }
        self.store.read_line(line)
    }

    /// Forget a line everywhere without writeback. Monitor-only: the caller
    /// is rewriting or zeroing the address anyway.
    pub fn drop_line_everywhere(&mut self, line: LineAddress) -> Result<(), SimAbort> {
        for core in &mut self.cores {
            core.drop_line_silently(&self.cfg, line);
        }
        self.llc.drop_line(&self.cfg, self.flags, line, self.clock)
    }
}
