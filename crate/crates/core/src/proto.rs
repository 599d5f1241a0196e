//! Coherence message vocabulary between the private L1s and the shared LLC.
//!
//! Three FIFOs per core link: upgrade requests up, downgrade responses up,
//! and a single down channel carrying both upgrade responses and downgrade
//! requests (so a downgrade request can overtake nothing once queued behind a
//! fill).

use crate::config::LineAddress;

/// Fixed-size line payload. Lines narrower than 64 bytes use a prefix.
pub type LineData = [u8; 64];

pub const ZERO_LINE: LineData = [0; 64];

/// MSI stable states, ordered so `>=` means "at least as permissive".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CacheState {
    I,
    S,
    M,
}

/// L1 -> LLC: request a line in S (load) or M (store/upgrade).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpgradeReq {
    pub core: usize,
    pub line: LineAddress,
    pub want: CacheState,
}

/// LLC -> L1: grant of a previously requested line, with data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpgradeResp {
    pub line: LineAddress,
    pub grant: CacheState,
    pub data: LineData,
}

/// LLC -> L1: demand the line be dropped to `to` (S keeps a readable copy,
/// I gives it up entirely).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DowngradeReq {
    pub line: LineAddress,
    pub to: CacheState,
}

/// L1 -> LLC: acknowledgment of a downgrade, or an unsolicited notice that
/// the L1 evicted the line on its own. Dirty lines carry their data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DowngradeResp {
    pub core: usize,
    pub line: LineAddress,
    pub to: CacheState,
    pub data: Option<LineData>,
}

/// Messages on the shared LLC -> L1 channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownMsg {
    Resp(UpgradeResp),
    Downgrade(DowngradeReq),
}
