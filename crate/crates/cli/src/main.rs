//! Batch front end for the simulator: run traces (optionally under a
//! scripted monitor schedule) and emit stats, drive the verification
//! suites, or sweep variants across traces for overhead tables.
//!
//! Exit codes are part of the interface: 0 success, 1 bad configuration,
//! 2 bad trace or schedule input, 3 the machine aborted mid-run (the
//! message carries the cycle).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use isosim::config::{SimConfig, VariantFlags};
use isosim::harness::{
    coherence_check, noninterference_pair, overhead_report, region_line, sized_config,
    witness_matrix, SecureBuild,
};
use isosim::monitor::{parse_schedule, MonitorHalt, MonitoredWorld};
use isosim::sim::World;
use isosim::stats;
use isosim::trace::{parse_trace, TraceOp};

const EXIT_CONFIG: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_ABORT: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

#[derive(Parser)]
#[command(
    name = "isosim",
    version,
    about = "Deterministic multicore timing-isolation simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run traces to completion and write a stats table.
    Simulate(SimulateArgs),
    /// Run one of the built-in checking suites.
    Verify(VerifyArgs),
    /// Run the same traces under several variants and tabulate overheads.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat key=value config file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variant preset (base, flush, part, miss, arb, nonspec, secure,
    /// fpma) or a `+`-joined flag list; overrides the file's `variant=`.
    #[arg(long)]
    variant: Option<String>,
    /// Per-core trace assignment `core<N>=<file>`; repeatable. Cores
    /// without a trace stay idle.
    #[arg(long = "trace")]
    traces: Vec<String>,
    /// Monitor schedule script; its trace paths resolve next to the file.
    /// Mutually exclusive with --trace.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Abort if the machine has not quiesced by this cycle.
    #[arg(long, default_value_t = 10_000_000)]
    max_cycles: u64,
    /// Write the stats table here instead of stdout.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Stream the component event log to stderr.
    #[arg(long)]
    events: bool,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    /// Victim observables must not depend on attacker behavior.
    Noninterference,
    /// One divergence witness per contention channel, closed when fixed.
    Witnesses,
    /// Randomized sharing replayed against a flat memory model.
    Coherence,
    /// Deschedule purge: fixed stall, state byte-identical to reset.
    Purge,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Build under test, as a preset name or `+`-joined flag list.
    #[arg(long, default_value = "secure")]
    variant: String,
    /// Randomized victim/attacker pairs (noninterference).
    #[arg(long, default_value_t = 20)]
    pairs: u64,
    /// Total randomized shared memory ops (coherence).
    #[arg(long, default_value_t = 10_000)]
    ops: usize,
    /// Base seed for the randomized suites.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated variant names or `+`-joined flag lists. The first
    /// entry is the normalization baseline for the ratio column.
    #[arg(long, value_delimiter = ',', required = true)]
    variants: Vec<String>,
    /// Trace files, assigned to cores in order and reused per variant.
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
    /// Context-switch period for purging variants (0 = never switch).
    #[arg(long, default_value_t = 0)]
    flush_period: u64,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(&a),
        Cmd::Verify(a) => cmd_verify(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("isosim: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Config file (or defaults), then command-line overrides, then validation.
fn load_config(
    config: Option<&Path>,
    variant: Option<&str>,
    seed: Option<u64>,
) -> Result<(SimConfig, VariantFlags), Failure> {
    let (mut cfg, mut flags) = match config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| fail(EXIT_CONFIG, format!("config {}: {e}", p.display())))?;
            SimConfig::parse_str(&text)
                .map_err(|e| fail(EXIT_CONFIG, format!("config {}: {e}", p.display())))?
        }
        None => (SimConfig::default(), VariantFlags::empty()),
    };
    if let Some(v) = variant {
        flags = VariantFlags::parse(v).map_err(|e| fail(EXIT_CONFIG, e))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate(flags)
        .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    Ok((cfg, flags))
}

fn parse_core_assignment(spec: &str) -> Result<(usize, &str), Failure> {
    let bad = || {
        fail(
            EXIT_INPUT,
            format!("trace assignment `{spec}` must look like core0=file.tr"),
        )
    };
    let (core, path) = spec.split_once('=').ok_or_else(bad)?;
    let idx = core.strip_prefix("core").ok_or_else(bad)?;
    let idx: usize = idx.parse().map_err(|_| bad())?;
    if path.is_empty() {
        return Err(bad());
    }
    Ok((idx, path))
}

fn read_trace(path: &Path, dram_bytes: u64) -> Result<Vec<TraceOp>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(EXIT_INPUT, format!("trace {}: {e}", path.display())))?;
    parse_trace(&text, dram_bytes)
        .map_err(|e| fail(EXIT_INPUT, format!("trace {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, content)
            .map_err(|e| fail(EXIT_CONFIG, format!("writing {}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let (cfg, flags) = load_config(args.config.as_deref(), args.variant.as_deref(), args.seed)?;
    if args.schedule.is_some() && !args.traces.is_empty() {
        return Err(fail(
            EXIT_INPUT,
            "--schedule and --trace are mutually exclusive; schedule scripts name their own traces",
        ));
    }

    let (per_core, log, variant_name) = if let Some(sched) = &args.schedule {
        let text = fs::read_to_string(sched)
            .map_err(|e| fail(EXIT_INPUT, format!("schedule {}: {e}", sched.display())))?;
        let base = sched.parent().unwrap_or_else(|| Path::new("."));
        let events = parse_schedule(&text, &cfg, base)
            .map_err(|e| fail(EXIT_INPUT, format!("schedule {}: {e}", sched.display())))?;
        let mut m = MonitoredWorld::new(cfg.clone(), flags)
            .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
        m.world.log.enabled = args.events;
        m.load_script(events);
        m.run(args.max_cycles).map_err(|e| match e {
            MonitorHalt::Script { .. } => fail(EXIT_INPUT, e.to_string()),
            MonitorHalt::Abort(_) => fail(EXIT_ABORT, e.to_string()),
        })?;
        let per_core: Vec<_> = (0..cfg.n_cores).map(|c| m.world.core_report(c)).collect();
        (per_core, m.world.log.dump(), flags.canonical_name())
    } else {
        let mut traces: Vec<Vec<TraceOp>> = vec![Vec::new(); cfg.n_cores];
        for spec in &args.traces {
            let (core, path) = parse_core_assignment(spec)?;
            if core >= cfg.n_cores {
                return Err(fail(
                    EXIT_INPUT,
                    format!(
                        "trace names core{core} but the machine has {} cores",
                        cfg.n_cores
                    ),
                ));
            }
            traces[core] = read_trace(Path::new(path), cfg.dram_bytes)?;
        }
        let mut world =
            World::new(cfg.clone(), flags).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
        world.log.enabled = args.events;
        world.start_flat(traces);
        world
            .run(args.max_cycles)
            .map_err(|e| fail(EXIT_ABORT, e.to_string()))?;
        let per_core: Vec<_> = (0..cfg.n_cores).map(|c| world.core_report(c)).collect();
        (per_core, world.log.dump(), flags.canonical_name())
    };

    write_output(
        args.stats.as_deref(),
        &stats::csv_report(&variant_name, &per_core),
    )?;
    if args.events {
        eprint!("{log}");
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let flags = VariantFlags::parse(&args.variant).map_err(|e| fail(EXIT_CONFIG, e))?;
    match args.suite {
        Suite::Noninterference => {
            for p in 0..args.pairs {
                let pair_seed = args.seed.wrapping_add(p);
                let report = noninterference_pair(flags, pair_seed)
                    .map_err(|e| fail(EXIT_ABORT, e.to_string()))?;
                if !report.equal {
                    let d = report.first_divergence.unwrap();
                    return Err(fail(
                        EXIT_CONFIG,
                        format!(
                            "pair seed {pair_seed}: victim op {} completed at {} vs {} \
                             depending on the attacker",
                            d.op_idx, d.cycles_a, d.cycles_b
                        ),
                    ));
                }
            }
            println!(
                "{} randomized pairs bit-exact under `{}` across four attacker profiles",
                args.pairs,
                flags.canonical_name()
            );
        }
        Suite::Witnesses => {
            let build = SecureBuild {
                flags,
                llc_mshrs_total: None,
            };
            let rows = witness_matrix(build).map_err(|e| fail(EXIT_ABORT, e.to_string()))?;
            for r in &rows {
                println!(
                    "{:<18} weakened_diverges={:<5} this_build_diverges={}",
                    r.channel.label(),
                    r.insecure_diverges,
                    r.secure_diverges
                );
            }
            if let Some(r) = rows.iter().find(|r| !r.passes()) {
                return Err(fail(
                    EXIT_CONFIG,
                    format!(
                        "channel {} not closed by `{}`",
                        r.channel.label(),
                        flags.canonical_name()
                    ),
                ));
            }
        }
        Suite::Coherence => {
            let mut total = 0usize;
            for (i, n_cores) in [2usize, 3, 4].into_iter().enumerate() {
                let per_core = (args.ops / 3 / n_cores).max(1);
                total += per_core * n_cores;
                let mismatches = coherence_check(flags, n_cores, per_core, args.seed + i as u64)
                    .map_err(|e| fail(EXIT_ABORT, e.to_string()))?;
                if mismatches > 0 {
                    return Err(fail(
                        EXIT_CONFIG,
                        format!(
                            "{n_cores}-core run: {mismatches} values diverged from the flat model"
                        ),
                    ));
                }
            }
            println!(
                "{total} shared ops across 2-4 cores match the flat model under `{}`",
                flags.canonical_name()
            );
        }
        Suite::Purge => {
            let cfg = sized_config(flags, 2);
            let expected = cfg.purge_stall_cycles();
            let mut m = MonitoredWorld::new(cfg.clone(), flags)
                .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
            m.create_domain(2, &[4], None)
                .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
            let mut trace = Vec::new();
            for i in 0..32u64 {
                trace.push(TraceOp::Store {
                    addr: region_line(&cfg, 4, i % 8, (i * 41) % 256),
                });
                trace.push(TraceOp::Load {
                    addr: region_line(&cfg, 4, (i + 5) % 8, (i * 29) % 256),
                });
            }
            m.schedule(2, 0, trace)
                .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
            m.run(1_000_000)
                .map_err(|e| fail(EXIT_ABORT, e.to_string()))?;
            let before = m.world.cores[0].stats.purge_stalls;
            m.deschedule(0)
                .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
            m.run(1_000_000)
                .map_err(|e| fail(EXIT_ABORT, e.to_string()))?;
            let stall = m.world.cores[0].stats.purge_stalls - before;
            let fresh = isosim::core::CoreState::new(0, &cfg, u64::MAX).purgeable_state_bytes();
            let reset = m.world.cores[0].purgeable_state_bytes() == fresh;
            println!(
                "deschedule purge stalled {stall} cycles (geometry says {expected}); \
                 state reset: {}",
                if reset { "byte-identical" } else { "DIRTY" }
            );
            if stall != expected || !reset {
                return Err(fail(EXIT_CONFIG, "purge did not meet its contract"));
            }
        }
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    if args.traces.is_empty() {
        return Err(fail(EXIT_INPUT, "sweep needs at least one --trace"));
    }
    let mut variants = Vec::new();
    for name in &args.variants {
        variants.push(VariantFlags::parse(name).map_err(|e| fail(EXIT_CONFIG, e))?);
    }
    let dram_bytes = SimConfig::default().dram_bytes;
    let mut traces = Vec::new();
    for path in &args.traces {
        traces.push(read_trace(path, dram_bytes)?);
    }
    let rows = overhead_report(&variants, &traces, args.flush_period)
        .map_err(|e| fail(EXIT_ABORT, e.to_string()))?;

    let mut out = String::from(
        "# schema=1\nvariant,cycles,memops,l1_misses,llc_misses,mshr_stall_cycles,\
         arbiter_wait_cycles,arbiter_idle_grants,dq_retries,purge_stalls,faults,ratio_to_first\n",
    );
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.4}\n",
            r.variant,
            r.cycles,
            r.memops,
            r.l1_misses,
            r.llc_misses,
            r.mshr_stall_cycles,
            r.arbiter_wait_cycles,
            r.arbiter_idle_grants,
            r.dq_retries,
            r.purge_stalls,
            r.faults,
            r.ratio_to_first
        ));
    }
    write_output(args.out.as_deref(), &out)
}
