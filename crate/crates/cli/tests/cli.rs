//! End-to-end runs of the installed binary: the documented exit codes, the
//! stats table, schedule scripts, the verification suites, and sweep
//! tables, all through the real argv surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isosim"))
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn simulate_writes_a_stats_table_and_is_byte_stable() {
    let dir = TempDir::new().unwrap();
    write(
        &dir,
        "a.tr",
        "L 0x8000000\nC 20\nS 0x8000040\nL 0x8000080\n",
    );
    write(&dir, "b.tr", "L 0xC000000\nC 5\nL 0xC000040\n");
    write(
        &dir,
        "m.cfg",
        "# two-core hardened machine\nn_cores=2\nllc_mshrs_total=12\nvariant=secure\n",
    );
    let args = [
        "simulate",
        "--config",
        "m.cfg",
        "--trace",
        "core0=a.tr",
        "--trace",
        "core1=b.tr",
    ];
    let first = run(&args, dir.path());
    assert!(first.status.success(), "stderr: {}", stderr(&first));
    let table = stdout(&first);
    assert!(table.starts_with("# schema=1\n"));
    assert!(table.contains("variant,core,cycles"));
    assert!(table.contains("secure,0,"));
    assert!(table.contains("secure,1,"));
    // same inputs, same bytes
    let second = run(&args, dir.path());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn variant_flag_overrides_the_config_file() {
    let dir = TempDir::new().unwrap();
    write(&dir, "t.tr", "L 0x0\n");
    write(&dir, "m.cfg", "variant=secure\nllc_mshrs_total=12\n");
    let out = run(
        &[
            "simulate",
            "--config",
            "m.cfg",
            "--variant",
            "base",
            "--trace",
            "core0=t.tr",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("base,0,"));
}

#[test]
fn config_problems_exit_1() {
    let dir = TempDir::new().unwrap();
    write(&dir, "t.tr", "L 0x0\n");

    let out = run(&["simulate", "--config", "nope.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    write(&dir, "bad.cfg", "weird_knob=3\n");
    let out = run(&["simulate", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown config key"));

    // the hardened presets must meet the sizing rule
    write(&dir, "fat.cfg", "variant=secure\nllc_mshrs_total=16\n");
    let out = run(&["simulate", "--config", "fat.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("budget"));

    let out = run(
        &["simulate", "--variant", "bogus", "--trace", "core0=t.tr"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn trace_and_schedule_problems_exit_2() {
    let dir = TempDir::new().unwrap();

    let out = run(&["simulate", "--trace", "core0=missing.tr"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    write(&dir, "unaligned.tr", "L 0x9\n");
    let out = run(&["simulate", "--trace", "core0=unaligned.tr"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("aligned"));

    write(&dir, "far.tr", "L 0x80000000\n"); // one byte past 2 GiB
    let out = run(&["simulate", "--trace", "core0=far.tr"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("outside DRAM"));

    write(&dir, "ok.tr", "C 1\n");
    let out = run(&["simulate", "--trace", "core7=ok.tr"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("core7"));

    let out = run(&["simulate", "--trace", "0=ok.tr"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    write(&dir, "odd.sched", "@5 frobnicate 1\n");
    let out = run(&["simulate", "--schedule", "odd.sched"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = run(
        &[
            "simulate",
            "--schedule",
            "odd.sched",
            "--trace",
            "core0=ok.tr",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mutually exclusive"));
}

#[test]
fn a_run_that_cannot_finish_exits_3_with_the_cycle() {
    let dir = TempDir::new().unwrap();
    write(&dir, "t.tr", "L 0x8000000\n");
    let out = run(
        &["simulate", "--trace", "core0=t.tr", "--max-cycles", "10"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("cycle 10"));
}

#[test]
fn schedule_scripts_run_domains_and_land_purge_stalls_in_the_stats() {
    let dir = TempDir::new().unwrap();
    write(&dir, "w.tr", "S 0x8000000\nC 40\nL 0x8000100\n");
    // the hardened preset insists on budgeted miss registers
    write(&dir, "m.cfg", "variant=secure\nllc_mshrs_total=12\n");
    write(
        &dir,
        "run.sched",
        "@0 create 2 regions=4\n\
         @10 schedule 2 core=0 trace=w.tr\n\
         @8000 deschedule core=0\n\
         @20000 destroy 2\n",
    );
    let out = run(
        &[
            "simulate",
            "--config",
            "m.cfg",
            "--schedule",
            "run.sched",
            "--events",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let table = stdout(&out);
    // one purge when the domain gets the core, one when it is taken away
    let row = table
        .lines()
        .find(|l| l.starts_with("secure,0,"))
        .expect("core 0 row");
    assert!(row.ends_with(",1024,0"), "row: {row}");
    // the event log stream carries the monitor's actions
    let log = stderr(&out);
    assert!(log.contains("monitor,create"));
    assert!(log.contains("monitor,deschedule"));

    // a script that breaks the ownership rules is a schedule error
    write(&dir, "bad.sched", "@0 schedule 9 core=0 trace=w.tr\n");
    let out = run(&["simulate", "--schedule", "bad.sched"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no such domain"));
}

#[test]
fn stats_file_flag_writes_instead_of_printing() {
    let dir = TempDir::new().unwrap();
    write(&dir, "t.tr", "L 0x0\nS 0x40\n");
    let out = run(
        &["simulate", "--trace", "core0=t.tr", "--stats", "stats.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    let table = std::fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    assert!(table.contains("base,0,"));
}

#[test]
fn verify_purge_reports_the_fixed_stall() {
    let dir = TempDir::new().unwrap();
    let out = run(&["verify", "--suite", "purge"], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("512"));
    assert!(text.contains("byte-identical"));
}

#[test]
fn verify_coherence_accepts_a_small_budget() {
    let dir = TempDir::new().unwrap();
    let out = run(
        &[
            "verify",
            "--suite",
            "coherence",
            "--ops",
            "900",
            "--seed",
            "7",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("match the flat model"));
}

#[test]
fn verify_noninterference_runs_a_pair() {
    let dir = TempDir::new().unwrap();
    let out = run(
        &[
            "verify",
            "--suite",
            "noninterference",
            "--pairs",
            "2",
            "--seed",
            "11",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("bit-exact"));
}

#[test]
fn sweep_tabulates_variants_with_a_ratio_column() {
    let dir = TempDir::new().unwrap();
    // eight independent loads: the overlap-refusing variant must be slower
    let mut t = String::new();
    for i in 0..8u64 {
        t.push_str(&format!("L 0x{:X}\n", 0x8000000u64 + i * 0x40000));
    }
    write(&dir, "burst.tr", &t);
    let out = run(
        &[
            "sweep",
            "--variants",
            "base,nonspec",
            "--trace",
            "burst.tr",
            "--out",
            "sweep.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("base,"));
    assert!(rows[0].ends_with(",1.0000"));
    let ratio: f64 = rows[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!(ratio > 1.0, "nonspec ratio {ratio}");

    let out = run(&["sweep", "--variants", "base"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = run(
        &["sweep", "--variants", "fpma", "--trace", "burst.tr"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("fpma,"));
}
