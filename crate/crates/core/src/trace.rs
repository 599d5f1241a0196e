//! Trace file format: one op per line.
//!
//! ```text
//! # comment
//! C 12        # execute for 12 cycles
//! L 0x1F40    # load the 8-byte word at byte address 0x1F40
//! S 0x2000    # store to the 8-byte word at byte address 0x2000
//! ```
//!
//! Addresses are physical byte addresses; accesses are 8-byte words and must
//! be 8-byte aligned and inside DRAM.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOp {
    Compute { cycles: u64 },
    Load { addr: u64 },
    Store { addr: u64 },
}

impl TraceOp {
    pub fn is_mem(&self) -> bool {
        matches!(self, TraceOp::Load { .. } | TraceOp::Store { .. })
    }

    pub fn addr(&self) -> Option<u64> {
        match self {
            TraceOp::Load { addr } | TraceOp::Store { addr } => Some(*addr),
            TraceOp::Compute { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trace line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for TraceError {}

/// Parse a trace. `dram_bytes` bounds the address space; every address is
/// range- and alignment-checked here so the simulator never has to.
pub fn parse_trace(text: &str, dram_bytes: u64) -> Result<Vec<TraceOp>, TraceError> {
    let mut ops = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| TraceError {
            line: lineno,
            message,
        };
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap();
        let arg = parts
            .next()
            .ok_or_else(|| err(format!("`{kind}` needs an argument")))?;
        if parts.next().is_some() {
            return Err(err(format!("trailing text after `{kind} {arg}`")));
        }
        let op = match kind {
            "C" => {
                let cycles: u64 = arg
                    .parse()
                    .map_err(|_| err(format!("`{arg}` is not a decimal cycle count")))?;
                if cycles == 0 {
                    return Err(err("compute cycles must be at least 1".into()));
                }
                TraceOp::Compute { cycles }
            }
            "L" | "S" => {
                let hex = arg
                    .strip_prefix("0x")
                    .ok_or_else(|| err(format!("address `{arg}` must start with 0x")))?;
                let addr = u64::from_str_radix(hex, 16)
                    .map_err(|_| err(format!("`{arg}` is not a hex address")))?;
                if addr % 8 != 0 {
                    return Err(err(format!("address {arg} is not 8-byte aligned")));
                }
                if addr >= dram_bytes {
                    return Err(err(format!(
                        "address {arg} is outside DRAM ({dram_bytes} bytes)"
                    )));
                }
                if kind == "L" {
                    TraceOp::Load { addr }
                } else {
                    TraceOp::Store { addr }
                }
            }
            other => return Err(err(format!("unknown op `{other}`"))),
        };
        ops.push(op);
    }
    Ok(ops)
}

/// Render ops back into the file format (used by the sweep and test tooling
/// to materialize generated traces).
pub fn format_trace(ops: &[TraceOp]) -> String {
    let mut out = String::new();
    for op in ops {
        match op {
            TraceOp::Compute { cycles } => out.push_str(&format!("C {cycles}\n")),
            TraceOp::Load { addr } => out.push_str(&format!("L 0x{addr:X}\n")),
            TraceOp::Store { addr } => out.push_str(&format!("S 0x{addr:X}\n")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_three_ops() {
        let ops = parse_trace("# warmup\nC 12\nL 0x1F40\nS 0x2000\n", 1 << 31).unwrap();
        assert_eq!(
            ops,
            vec![
                TraceOp::Compute { cycles: 12 },
                TraceOp::Load { addr: 0x1F40 },
                TraceOp::Store { addr: 0x2000 },
            ]
        );
    }

    #[test]
    fn rejects_bad_lines_with_line_numbers() {
        let e = parse_trace("C 1\nL 12345\n", 1 << 31).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("0x"));

        let e = parse_trace("X 0x0\n", 1 << 31).unwrap_err();
        assert!(e.message.contains("unknown op"));

        let e = parse_trace("L 0x4\n", 1 << 31).unwrap_err();
        assert!(e.message.contains("aligned"));

        let e = parse_trace("L 0x80000000\n", 1 << 31).unwrap_err();
        assert!(e.message.contains("outside DRAM"));

        let e = parse_trace("C 0\n", 1 << 31).unwrap_err();
        assert!(e.message.contains("at least 1"));
    }

    #[test]
    fn round_trips_through_format() {
        let ops = vec![
            TraceOp::Load { addr: 0x8000 },
            TraceOp::Compute { cycles: 3 },
            TraceOp::Store { addr: 0x8008 },
        ];
        assert_eq!(parse_trace(&format_trace(&ops), 1 << 31).unwrap(), ops);
    }
}
