//! Per-core counters and the stats CSV schema.

/// Counters kept per core. `completion_cycle` is the cycle the core's last
/// trace op completed (0 when it never ran one).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreStats {
    pub completion_cycle: u64,
    pub memops: u64,
    pub l1_misses: u64,
    pub llc_misses: u64,
    pub mshr_stall_cycles: u64,
    pub arbiter_wait_cycles: u64,
    pub arbiter_idle_grants: u64,
    pub dq_retries: u64,
    pub purge_stalls: u64,
    pub faults: u64,
}

pub const STATS_SCHEMA: u32 = 1;

/// CSV header, preceded by a schema comment so consumers can hard-fail on
/// format drift.
pub fn csv_header() -> String {
    format!(
        "# schema={STATS_SCHEMA}\nvariant,core,cycles,memops,llc_misses,l1_misses,\
         mshr_stall_cycles,arbiter_wait_cycles,dq_retries,purge_stalls,faults\n"
    )
}

pub fn csv_row(variant: &str, core: usize, s: &CoreStats) -> String {
    format!(
        "{variant},{core},{},{},{},{},{},{},{},{},{}\n",
        s.completion_cycle,
        s.memops,
        s.llc_misses,
        s.l1_misses,
        s.mshr_stall_cycles,
        s.arbiter_wait_cycles,
        s.dq_retries,
        s.purge_stalls,
        s.faults
    )
}

/// Full stats CSV for a run.
pub fn csv_report(variant: &str, per_core: &[CoreStats]) -> String {
    let mut out = csv_header();
    for (i, s) in per_core.iter().enumerate() {
        out.push_str(&csv_row(variant, i, s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let header = csv_header();
        assert!(header.starts_with("# schema=1\n"));
        let cols = header.lines().nth(1).unwrap().split(',').count();
        assert_eq!(cols, 11);
        let row = csv_row("base", 0, &CoreStats::default());
        assert_eq!(row.trim_end().split(',').count(), cols);
    }
}
